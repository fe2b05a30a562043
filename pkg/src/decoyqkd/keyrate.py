"""Asymptotic secret-key rates from statistics to a certified number.

The pipeline per evaluation point:

1. condition the source on photon number (Bayes, works with per-signal
   intensities),
2. bound the single-photon yields by the LP or the Choi-constrained SDP,
3. for flag-state protocols, bound the receiver-subspace weight (the
   tighter of the direct conditioned bound and the decoy-derived
   multi-click-yield bound, per signal),
4. minimize the key-map relative entropy over the single-photon feasible
   set by Frank-Wolfe with a certified lower bound,
5. subtract the error-correction leakage measured on the sifted signal
   statistics.

The reported rate always uses the certified Frank-Wolfe lower bound
(never the primal) and is clamped below at zero.  The optional vacuum
contribution is added only when its own certified bound is positive.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import channel as channel_mod
from . import decoy as decoy_mod
from . import squasher
from .decoy import IntensityPlan, ObservedStats, YieldBounds
from .kernel import ConicProblem, RelativeEntropyObjective, minimize_relative_entropy, solve
from .protocols import ProtocolSpec

__all__ = ["KeyRateOptions", "KeyRateReport", "InfeasibleSetError", "keyrate", "scan"]


class InfeasibleSetError(RuntimeError):
    """Single-photon feasible set is empty; carries the binding constraints."""

    def __init__(self, message, binding=None):
        super().__init__(message)
        self.binding = binding or []


@dataclass(frozen=True)
class KeyRateOptions:
    use_sdp_decoy: bool = True
    n_ph: int = 10
    choi_orders: tuple = (0, 1)
    vacuum_term: bool = False
    f_ec: float = 1.0
    fw_max_iter: int = 300
    fw_gap_tol: float = 1e-6
    decoy_tol: float = 1e-9
    use_decoy_multi_click_bound: bool = True


@dataclass
class KeyRateReport:
    rate: float
    pr_n: dict
    fw_primal: float
    fw_bound: float
    fw_gap: float
    fw_iterations: int
    p_pass: float
    delta_leak: float
    y1_gap_max: float
    p_l_used: float | None
    yield_bounds: YieldBounds
    vacuum_rate: float | None
    config: dict
    distance_km: float | None = None
    error: str | None = None

    def to_record(self) -> dict:
        rec = {
            "rate": self.rate,
            "pr_n": {str(k): v for k, v in self.pr_n.items()},
            "fw": {
                "primal": self.fw_primal,
                "bound": self.fw_bound,
                "gap": self.fw_gap,
                "iterations": self.fw_iterations,
            },
            "p_pass": self.p_pass,
            "delta_leak": self.delta_leak,
            "y1_gap_max": self.y1_gap_max,
            "p_l_used": self.p_l_used,
            "vacuum_rate": self.vacuum_rate,
            "config": self.config,
            "yield_bounds": self.yield_bounds.to_record(),
        }
        if self.distance_km is not None:
            rec["distance_km"] = self.distance_km
        if self.error is not None:
            rec["error"] = self.error
        return rec


def _subspace_lower_bounds(protocol, stats, cond, c_geq, orders):
    """Direct conditioned subspace bounds p_L(x, m) for the decoy SDP."""
    out = {}
    for x in protocol.signals:
        for m in orders:
            out[(x, m)] = squasher.subspace_bound_conditioned(
                stats.m_mult[x], cond.pr_n_given_x[x][m], c_geq
            )
    return out


def _single_photon_set(protocol, alice, bounds, q1, p_l):
    """Conic description of the single-photon feasible set."""
    prob = ConicProblem()
    d = alice.dim * protocol.d_b
    rho = prob.add_psd_block(d, trace_bound=1.0, name="rho")
    for name, h, _ in decoy_mod._hermitian_basis_rows(alice.dim):
        coeff = np.kron(h, np.eye(protocol.d_b))
        prob.add_eq(
            f"ptrace:{name}",
            psd_terms=[(rho, coeff)],
            rhs=float(np.trace(h @ alice.sigma).real),
        )
    gammas = protocol.gamma_ops(alice)
    for x in protocol.signals:
        for y in protocol.outcomes:
            op = gammas[(x, y)]
            lo = q1[x] * bounds.lower[(x, y, 1)]
            hi = q1[x] * bounds.upper[(x, y, 1)]
            prob.add_ge(f"yield:{x}:{y}:lo", psd_terms=[(rho, op)], rhs=lo)
            prob.add_le(f"yield:{x}:{y}:hi", psd_terms=[(rho, op)], rhs=hi)
    if p_l is not None and protocol.subspace_projector is not None:
        op = np.kron(np.eye(alice.dim), protocol.subspace_projector)
        prob.add_ge("subspace", psd_terms=[(rho, op)], rhs=p_l)
    return prob, rho


def _diagnose_infeasible_set(protocol, alice, bounds, q1, p_l):
    """Phase-1 with violation slacks on the yield rows; returns binding rows."""
    prob = ConicProblem()
    d = alice.dim * protocol.d_b
    rho = prob.add_psd_block(d, trace_bound=1.0)
    for name, h, _ in decoy_mod._hermitian_basis_rows(alice.dim):
        coeff = np.kron(h, np.eye(protocol.d_b))
        prob.add_eq(
            f"ptrace:{name}",
            psd_terms=[(rho, coeff)],
            rhs=float(np.trace(h @ alice.sigma).real),
        )
    gammas = protocol.gamma_ops(alice)
    viols = []
    names = []
    for x in protocol.signals:
        for y in protocol.outcomes:
            op = gammas[(x, y)]
            v = prob.add_scalars(2)
            prob.add_ge(
                f"yield:{x}:{y}:lo", [(v[0], 1.0)], [(rho, op)],
                rhs=q1[x] * bounds.lower[(x, y, 1)],
            )
            prob.add_le(
                f"yield:{x}:{y}:hi", [(v[1], -1.0)], [(rho, op)],
                rhs=q1[x] * bounds.upper[(x, y, 1)],
            )
            viols.extend(v)
            names.extend([f"yield:{x}:{y}:lo", f"yield:{x}:{y}:hi"])
    if p_l is not None and protocol.subspace_projector is not None:
        op = np.kron(np.eye(alice.dim), protocol.subspace_projector)
        v = prob.add_scalars(1)
        prob.add_ge("subspace", [(v[0], 1.0)], [(rho, op)], rhs=p_l)
        viols.extend(v)
        names.append("subspace")
    prob.set_objective({i: 1.0 for i in viols})
    sol = solve(prob, tol_gap=1e-8)
    out = [
        (names[k], float(sol.scalars[viols[k]]))
        for k in range(len(names))
        if sol.scalars[viols[k]] > 1e-9
    ]
    return sorted(out, key=lambda t: -t[1])


def _vacuum_contribution(protocol, stats, cond, bounds, options):
    """Certified vacuum term Pr(0) * min f over the vacuum feasible set."""
    q0 = cond.pr_x_given_n[0]
    if q0 is None:
        return None
    alice = protocol.alice_objects(q0, 0)
    # the set builder reads its bounds from the (x, y, 1) slot; relabel the
    # vacuum bounds into it
    vac_bounds = YieldBounds(method=bounds.method)
    for x in protocol.signals:
        for y in protocol.outcomes:
            vac_bounds.lower[(x, y, 1)] = bounds.lower[(x, y, 0)]
            vac_bounds.upper[(x, y, 1)] = bounds.upper[(x, y, 0)]
    prob, rho = _single_photon_set(protocol, alice, vac_bounds, q0, None)
    kraus, pinch = protocol.kraus_and_pinching(alice)
    obj = RelativeEntropyObjective(kraus, pinch, alice.dim * protocol.d_b)
    fw = minimize_relative_entropy(
        prob, rho, obj, max_iter=options.fw_max_iter, gap_tol=options.fw_gap_tol
    )
    return cond.pr_n[0] * fw.bound if fw.bound > 0 else 0.0


def keyrate(
    protocol: ProtocolSpec,
    plan: IntensityPlan,
    channel: channel_mod.ChannelModel | None = None,
    stats: ObservedStats | None = None,
    options: KeyRateOptions = KeyRateOptions(),
) -> KeyRateReport:
    """Certified asymptotic key rate for one configuration.

    Provide either a channel model (statistics are simulated) or replayed
    statistics.  Raises :class:`InfeasibleSetError` when the feasible set
    of single-photon states is empty, listing the binding constraints.
    """
    if stats is None:
        if channel is None:
            raise ValueError("need either a channel model or replayed statistics")
        stats = channel_mod.simulate_stats(protocol, plan, channel)
    if protocol.detector_matrix is not None and channel is not None:
        if channel.detector_efficiencies is not None:
            raise NotImplementedError(
                "per-detector efficiencies for flag-state protocols require a "
                "lossy-receiver decomposition; characterize the detector and "
                "use the squasher tools directly"
            )

    cond = decoy_mod.condition_source(plan, protocol, options.n_ph)
    q1 = cond.pr_x_given_n[1]
    if q1 is None or cond.pr_n[1] <= 0:
        raise ValueError("vanishing single-photon probability; no key possible")

    flagged = protocol.subspace_projector is not None
    c_geq = None
    subspace = None
    if flagged:
        rep = squasher.c_constants(protocol.detector_matrix, protocol.n_b + 1)
        c_geq = rep.with_cutoff(protocol.n_b).c_geq
        subspace = _subspace_lower_bounds(
            protocol, stats, cond, c_geq, options.choi_orders
        )

    targets = [(x, y, 1) for x in protocol.signals for y in protocol.outcomes]
    if options.vacuum_term:
        targets += [(x, y, 0) for x in protocol.signals for y in protocol.outcomes]
    mult_orders = [1] if (flagged and options.use_decoy_multi_click_bound
                          and options.use_sdp_decoy) else []
    if options.use_sdp_decoy:
        bounds = decoy_mod.sdp_yield_bounds(
            stats,
            plan,
            options.n_ph,
            protocol,
            choi_orders=options.choi_orders,
            subspace=subspace,
            targets=targets,
            tol_gap=options.decoy_tol,
            multi_click_upper_for=mult_orders,
        )
    else:
        bounds = decoy_mod.lp_yield_table(
            stats, plan, options.n_ph, targets=targets, tol_gap=options.decoy_tol
        )

    p_l_used = None
    if flagged:
        total = 0.0
        for x in protocol.signals:
            direct = squasher.subspace_bound_conditioned(
                stats.m_mult[x], cond.pr_n_given_x[x][1], c_geq
            )
            per_x = direct
            key = (x, "mult", 1)
            if key in bounds.upper:
                per_x = max(
                    per_x, squasher.subspace_bound_from_yield(bounds.upper[key], c_geq)
                )
            total += q1[x] * per_x
        p_l_used = min(1.0, max(0.0, total))

    alice = protocol.alice_objects(q1, 1)
    prob, rho = _single_photon_set(protocol, alice, bounds, q1, p_l_used)
    kraus, pinch = protocol.kraus_and_pinching(alice)
    obj = RelativeEntropyObjective(kraus, pinch, alice.dim * protocol.d_b)
    try:
        fw = minimize_relative_entropy(
            prob, rho, obj, max_iter=options.fw_max_iter, gap_tol=options.fw_gap_tol
        )
    except ValueError:
        binding = _diagnose_infeasible_set(protocol, alice, bounds, q1, p_l_used)
        raise InfeasibleSetError(
            "single-photon feasible set is empty (over-tight bounds); "
            f"binding constraints: {binding[:6]}",
            binding=binding,
        )

    leak = channel_mod.leak_from_stats(protocol, plan, stats, options.f_ec)
    vacuum_rate = None
    if options.vacuum_term:
        vacuum_rate = _vacuum_contribution(protocol, stats, cond, bounds, options)

    rate = cond.pr_n[1] * fw.bound - leak.delta_leak
    if vacuum_rate:
        rate += vacuum_rate
    rate = max(0.0, rate)

    y1_gaps = [
        bounds.upper[t] - bounds.lower[t] for t in targets if t[2] == 1 and t[1] != "mult"
    ]
    config = {
        "protocol": protocol.name,
        "signal": dict(plan.signal),
        "decoys": [dict(d) for d in plan.decoys],
        "signal_probs": dict(plan.signal_probs),
        "p_gen": plan.p_gen,
        "n_ph": options.n_ph,
        "n_b": protocol.n_b,
        "use_sdp_decoy": options.use_sdp_decoy,
        "f_ec": options.f_ec,
        "basis_probs": dict(protocol.basis_probs),
    }
    return KeyRateReport(
        rate=rate,
        pr_n=dict(cond.pr_n),
        fw_primal=fw.primal,
        fw_bound=fw.bound,
        fw_gap=fw.gap,
        fw_iterations=fw.iterations,
        p_pass=leak.p_pass,
        delta_leak=leak.delta_leak,
        y1_gap_max=max(y1_gaps) if y1_gaps else 0.0,
        p_l_used=p_l_used,
        yield_bounds=bounds,
        vacuum_rate=vacuum_rate,
        config=config,
    )


def scan(
    protocol: ProtocolSpec,
    plan: IntensityPlan,
    channel_template: channel_mod.ChannelModel,
    distances,
    intensity_grid: dict | None = None,
    options: KeyRateOptions = KeyRateOptions(),
) -> list:
    """Key rates over a list of distances, optionally optimizing intensities.

    ``intensity_grid`` may supply lists under "signal" and "decoy" that are
    searched exhaustively (coarse grid; the best reported rate wins).  Solver
    failures are recorded per point and the scan continues.
    """
    reports = []
    for d in distances:
        ch = replace(channel_template, distance_km=float(d))
        candidates = [plan]
        if intensity_grid:
            candidates = []
            sig_list = intensity_grid.get("signal", [None])
            dec_list = intensity_grid.get("decoy", [None])
            for s in sig_list:
                for dec in dec_list:
                    cand = plan
                    if s is not None:
                        cand = cand.replace(signal={x: float(s) for x in cand.signal})
                    if dec is not None and cand.decoys:
                        cand = cand.replace(
                            decoys=[{x: float(dec) for x in cand.decoys[0]}]
                            + [dict(dd) for dd in cand.decoys[1:]]
                        )
                    candidates.append(cand)
        best = None
        err = None
        for cand in candidates:
            try:
                rep = keyrate(protocol, cand, channel=ch, options=options)
            except Exception as exc:  # continue the scan, record the failure
                err = f"{type(exc).__name__}: {exc}"
                continue
            if best is None or rep.rate > best.rate:
                best = rep
        if best is None:
            best = KeyRateReport(
                rate=float("nan"), pr_n={}, fw_primal=float("nan"),
                fw_bound=float("nan"), fw_gap=float("nan"), fw_iterations=0,
                p_pass=float("nan"), delta_leak=float("nan"),
                y1_gap_max=float("nan"), p_l_used=None,
                yield_bounds=YieldBounds(), vacuum_rate=None,
                config={"protocol": protocol.name}, error=err,
            )
        best.distance_km = float(d)
        reports.append(best)
    return reports
