"""Yield estimation from multi-intensity click statistics.

Two estimators bound the n-photon yields Y_n^{x,y} = Pr(y | x, n photons)
from the observed conditional statistics gamma^mu_{y|x}:

* a per-observation linear program in the truncated yield vector (the
  previous state of the art), and
* a semidefinite program that additionally requires the selected photon
  numbers to be produced by one common channel, represented by Choi
  matrices.  The Choi coupling transfers correlations between different
  observables into every individual bound, which is what recovers
  single-intensity key rates.

Both estimators return certified bounds: the reported lower (upper) bound
is the repaired dual value of the minimization (maximization), so it is
valid even at finite solver accuracy.  All probabilities are conditional
on the signal choice, which keeps the same programs valid when the signal
intensity differs per signal state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fock
from .kernel import ConicProblem, solve
from .protocols import ProtocolSpec

__all__ = [
    "IntensityPlan",
    "ObservedStats",
    "YieldBounds",
    "ConditionedSource",
    "InfeasibleStatisticsError",
    "make_plan",
    "lp_yield_bounds",
    "lp_yield_table",
    "sdp_yield_bounds",
    "condition_source",
    "effective_intensity",
    "bias_compensation",
]


# Lower constraint rows are relaxed by flooring the Poisson tail: for small
# intensities the true tail underflows toward 0 and the paired <=/>= rows
# become numerically identical, which degrades the interior-point endgame.
# Enlarging the feasible set keeps every certificate valid and costs ~1e-12
# in bound tightness.
TAIL_FLOOR = 1e-12


class InfeasibleStatisticsError(RuntimeError):
    """Raised when no yield assignment reproduces the observed statistics."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = violations or []


@dataclass
class IntensityPlan:
    """Signal and test intensities with their sampling distributions.

    ``signal`` and each decoy entry map every signal label to its mean
    photon number; differing per-signal intensities are allowed anywhere.
    """

    signal: dict
    decoys: list
    signal_probs: dict
    p_gen: float = 0.5
    p_test_intensity: list | None = None

    def __post_init__(self):
        for d in [self.signal, *self.decoys]:
            for x, mu in d.items():
                if mu < 0:
                    raise ValueError(f"negative intensity {mu} for signal {x}")
        tot = sum(self.signal_probs.values())
        if abs(tot - 1.0) > 1e-9:
            raise ValueError(f"signal probabilities sum to {tot}, expected 1")
        if not 0 <= self.p_gen <= 1:
            raise ValueError("p_gen must be a probability")
        if self.p_test_intensity is not None:
            if len(self.p_test_intensity) != len(self.decoys):
                raise ValueError("one test probability per decoy intensity required")
            if abs(sum(self.p_test_intensity) - 1.0) > 1e-9:
                raise ValueError("test-intensity probabilities must sum to 1")

    def settings(self) -> list:
        out = [("signal", self.signal)]
        out.extend((f"decoy{i + 1}", d) for i, d in enumerate(self.decoys))
        return out

    def intensity(self, setting: str, x) -> float:
        for name, d in self.settings():
            if name == setting:
                return d[x]
        raise KeyError(setting)

    def replace(self, **kw) -> "IntensityPlan":
        data = {
            "signal": self.signal,
            "decoys": self.decoys,
            "signal_probs": self.signal_probs,
            "p_gen": self.p_gen,
            "p_test_intensity": self.p_test_intensity,
        }
        data.update(kw)
        return IntensityPlan(**data)


def make_plan(
    protocol: ProtocolSpec,
    signal,
    decoys=(),
    signal_probs=None,
    p_gen: float = 0.5,
    p_test_intensity=None,
) -> IntensityPlan:
    """Build a plan for a protocol, broadcasting scalar intensities to all signals."""

    def broadcast(v):
        if np.isscalar(v):
            return {x: float(v) for x in protocol.signals}
        return {x: float(v[x]) for x in protocol.signals}

    probs = signal_probs or dict(protocol.signal_probs)
    return IntensityPlan(
        signal=broadcast(signal),
        decoys=[broadcast(d) for d in decoys],
        signal_probs={x: float(probs[x]) for x in protocol.signals},
        p_gen=p_gen,
        p_test_intensity=list(p_test_intensity) if p_test_intensity else None,
    )


@dataclass
class ObservedStats:
    """Conditional click statistics per intensity setting.

    ``gamma[(setting, x, y)]`` = Pr(outcome y | signal x, setting), and
    ``m_mult[x]`` is the total multi-click probability under the signal
    setting (the flag-state squasher's observable).
    """

    gamma: dict
    m_mult: dict
    settings: list
    signals: list
    outcomes: list

    def __post_init__(self):
        for s in self.settings:
            for x in self.signals:
                tot = 0.0
                for y in self.outcomes:
                    v = self.gamma[(s, x, y)]
                    if not -1e-12 <= v <= 1 + 1e-12:
                        raise ValueError(f"gamma[{s},{x},{y}] = {v} not a probability")
                    tot += v
                if abs(tot - 1.0) > 1e-9:
                    raise ValueError(
                        f"outcome distribution for ({s}, {x}) sums to {tot}"
                    )

    def to_record(self) -> dict:
        return {
            "settings": self.settings,
            "signals": self.signals,
            "outcomes": self.outcomes,
            "gamma": {f"{s}|{x}|{y}": v for (s, x, y), v in self.gamma.items()},
            "m_mult": dict(self.m_mult),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ObservedStats":
        gamma = {}
        for key, v in rec["gamma"].items():
            s, x, y = key.split("|")
            gamma[(s, x, y)] = float(v)
        return cls(
            gamma=gamma,
            m_mult={k: float(v) for k, v in rec["m_mult"].items()},
            settings=list(rec["settings"]),
            signals=list(rec["signals"]),
            outcomes=list(rec["outcomes"]),
        )


@dataclass
class YieldBounds:
    """Certified bounds on selected yields, keyed by (x, y, n)."""

    lower: dict = field(default_factory=dict)
    upper: dict = field(default_factory=dict)
    status: dict = field(default_factory=dict)  # (x, y, n, dir) -> (status, gap)
    method: str = ""

    def gap(self, key) -> float:
        return self.upper[key] - self.lower[key]

    def to_record(self) -> dict:
        def enc(d):
            return {f"{x}|{y}|{n}": v for (x, y, n), v in d.items()}

        return {
            "method": self.method,
            "lower": enc(self.lower),
            "upper": enc(self.upper),
            "status": {
                f"{x}|{y}|{n}|{d}": list(v) for (x, y, n, d), v in self.status.items()
            },
        }


# --------------------------------------------------------------------------
# photon-number conditioning
# --------------------------------------------------------------------------


@dataclass
class ConditionedSource:
    """Joint photon-number / signal-choice distribution of the source."""

    pr_n: dict  # n -> Pr(n), n <= n_ph
    pr_x_given_n: dict  # n -> {x: Pr(x|n)}
    pr_n_given_x: dict  # x -> {n: Pr(n|x)}
    equal_intensities: bool

    def sigma_a(self, protocol: ProtocolSpec, n: int = 1) -> np.ndarray:
        return protocol.alice_objects(self.pr_x_given_n[n], n).sigma


def condition_source(
    plan: IntensityPlan, protocol: ProtocolSpec, n_max: int = 10
) -> ConditionedSource:
    """Bayes-invert the signal-setting photon statistics.

    Pr(n) = sum_x p(x) p_{mu_x}(n) and Pr(x|n) by Bayes.  When all signal
    intensities coincide the Poisson factor cancels exactly, and the
    shortcut keeps Pr(x|n) = p(x) bit-for-bit equal to the input.
    """
    p_x = plan.signal_probs
    mus = [plan.signal[x] for x in protocol.signals]
    equal = all(m == mus[0] for m in mus)
    pr_n, pr_xn, pr_nx = {}, {}, {x: {} for x in protocol.signals}
    for n in range(n_max + 1):
        if equal:
            pn = fock.poisson_pmf(mus[0], n)
            pr_n[n] = pn
            pr_xn[n] = dict(p_x)
            for x in protocol.signals:
                pr_nx[x][n] = pn
        else:
            joint = {
                x: p_x[x] * fock.poisson_pmf(plan.signal[x], n)
                for x in protocol.signals
            }
            pn = sum(joint.values())
            pr_n[n] = pn
            if pn > 0:
                pr_xn[n] = {x: joint[x] / pn for x in protocol.signals}
            else:
                pr_xn[n] = None
            for x in protocol.signals:
                pr_nx[x][n] = fock.poisson_pmf(plan.signal[x], n)
    return ConditionedSource(
        pr_n=pr_n, pr_x_given_n=pr_xn, pr_n_given_x=pr_nx, equal_intensities=equal
    )


def effective_intensity(plan: IntensityPlan, tol: float = 1e-8) -> float:
    """Equivalent equal intensity with the same single-photon probability.

    Solves mu e^{-mu} = Pr(1) on the branch mu < 1 by bisection.
    """
    pr1 = sum(
        plan.signal_probs[x] * mu * math.exp(-mu) for x, mu in plan.signal.items()
    )
    if pr1 > math.exp(-1.0):
        # unreachable for true mixtures (each term caps at 1/e) but guards
        # hand-edited plans
        raise ValueError(
            f"Pr(1) = {pr1:.6f} exceeds 1/e; no equivalent intensity below 1"
        )
    if pr1 == 0.0:
        return 0.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid * math.exp(-mid) < pr1:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class BiasCompensation:
    plan: IntensityPlan
    pr1: float
    pr1_uncompensated: float


def bias_compensation(plan: IntensityPlan, protocol: ProtocolSpec) -> BiasCompensation:
    """Adjust p(x) so single-photon emissions are unbiased within each basis.

    Signals with higher single-photon emission probability are sent less
    often: p(x) proportional to 1 / (mu_x e^{-mu_x}) within each basis,
    preserving the basis-choice marginals.  The resulting overall Pr(1)
    can only decrease.
    """
    basis_groups = {}
    for x in protocol.signals:
        basis_groups.setdefault(protocol.basis_of_signal[x], []).append(x)
    weights = {}
    for x in protocol.signals:
        mu = plan.signal[x]
        if mu <= 0:
            raise ValueError(f"cannot compensate zero intensity for signal {x}")
        weights[x] = 1.0 / (mu * math.exp(-mu))
    new_p = {}
    for b, xs in basis_groups.items():
        marginal = sum(plan.signal_probs[x] for x in xs)
        wsum = sum(weights[x] for x in xs)
        for x in xs:
            new_p[x] = marginal * weights[x] / wsum
    pr1_old = sum(
        plan.signal_probs[x] * plan.signal[x] * math.exp(-plan.signal[x])
        for x in protocol.signals
    )
    pr1_new = sum(
        new_p[x] * plan.signal[x] * math.exp(-plan.signal[x])
        for x in protocol.signals
    )
    return BiasCompensation(
        plan=plan.replace(signal_probs=new_p), pr1=pr1_new, pr1_uncompensated=pr1_old
    )


# --------------------------------------------------------------------------
# linear-program estimator
# --------------------------------------------------------------------------


def _lp_problem(stats, plan, n_ph, x, y):
    p = ConicProblem()
    ys = p.add_scalars(n_ph + 1, upper=1.0, name=f"Y[{x},{y}]")
    for setting, intensities in plan.settings():
        mu = intensities[x]
        gamma = stats.gamma[(setting, x, y)]
        terms = [(ys[m], fock.poisson_pmf(mu, m)) for m in range(n_ph + 1)]
        tail = max(fock.tail_weight(mu, n_ph), TAIL_FLOOR)
        p.add_le(f"{setting}:{x}:{y}:le", terms, rhs=gamma)
        p.add_ge(f"{setting}:{x}:{y}:ge", terms, rhs=gamma - tail)
    return p, ys


def lp_yield_bounds(
    stats: ObservedStats,
    plan: IntensityPlan,
    n_ph: int,
    target,
    direction: str,
    tol_gap: float = 1e-10,
) -> float:
    """Certified bound on one yield from the per-observation linear program.

    ``target`` is (x, y, n); ``direction`` is "min" or "max".  The value
    returned is the repaired dual bound clamped to [0, 1], so it stays on
    the safe side of the true optimum.
    """
    x, y, n = target
    if direction not in ("min", "max"):
        raise ValueError("direction must be 'min' or 'max'")
    prob, ys = _lp_problem(stats, plan, n_ph, x, y)
    prob.set_objective({ys[n]: 1.0}, sense=direction)
    sol = solve(prob, tol_gap=tol_gap)
    if sol.certificate.status == "infeasible":
        raise InfeasibleStatisticsError(
            f"statistics for ({x}, {y}) admit no yield assignment",
            violations=_diagnose_lp(stats, plan, n_ph, x, y),
        )
    val = sol.certificate.dual
    return min(1.0, max(0.0, val))


def lp_yield_table(
    stats, plan, n_ph, targets=None, tol_gap: float = 1e-10
) -> YieldBounds:
    """LP bounds for a collection of (x, y, n) targets (default: all pairs, n=1)."""
    if targets is None:
        targets = [(x, y, 1) for x in stats.signals for y in stats.outcomes]
    out = YieldBounds(method="lp")
    for x, y, n in targets:
        out.lower[(x, y, n)] = lp_yield_bounds(stats, plan, n_ph, (x, y, n), "min", tol_gap)
        out.upper[(x, y, n)] = lp_yield_bounds(stats, plan, n_ph, (x, y, n), "max", tol_gap)
    return out


def _diagnose_lp(stats, plan, n_ph, x, y):
    """Phase-1 feasibility: minimize total violation, name the binding rows."""
    p = ConicProblem()
    ys = p.add_scalars(n_ph + 1, upper=1.0)
    names = []
    vio_idx = []
    for setting, intensities in plan.settings():
        mu = intensities[x]
        gamma = stats.gamma[(setting, x, y)]
        terms = [(ys[m], fock.poisson_pmf(mu, m)) for m in range(n_ph + 1)]
        v = p.add_scalars(2, name=f"viol:{setting}")
        tail = max(fock.tail_weight(mu, n_ph), TAIL_FLOOR)
        p.add_le(f"{setting}:le", terms + [(v[0], -1.0)], rhs=gamma)
        p.add_ge(f"{setting}:ge", terms + [(v[1], 1.0)], rhs=gamma - tail)
        names.extend([f"{setting}:{x}:{y}:le", f"{setting}:{x}:{y}:ge"])
        vio_idx.extend(v)
    p.set_objective({i: 1.0 for i in vio_idx})
    sol = solve(p)
    out = []
    for name, idx in zip(names, vio_idx):
        if sol.scalars[idx] > 1e-9:
            out.append((name, float(sol.scalars[idx])))
    return sorted(out, key=lambda t: -t[1])


# --------------------------------------------------------------------------
# Choi-constrained SDP estimator
# --------------------------------------------------------------------------


def _hermitian_basis_rows(dim):
    """Hermitian coefficient matrices pinning every entry of a dim x dim block."""
    rows = []
    for a in range(dim):
        e = np.zeros((dim, dim), dtype=complex)
        e[a, a] = 1.0
        rows.append((f"re[{a},{a}]", e, 1.0))
    for a in range(dim):
        for b in range(a + 1, dim):
            e = np.zeros((dim, dim), dtype=complex)
            e[a, b] = e[b, a] = 1.0
            rows.append((f"re[{a},{b}]", e, 0.0))
            e = np.zeros((dim, dim), dtype=complex)
            e[a, b] = 1.0j
            e[b, a] = -1.0j
            rows.append((f"im[{a},{b}]", e, 0.0))
    return rows


class _SdpYieldModel:
    """Shared constraint structure for all (x, y, n, direction) solves."""

    def __init__(self, stats, plan, n_ph, protocol, choi_orders, subspace):
        self.stats = stats
        self.plan = plan
        self.n_ph = n_ph
        self.protocol = protocol
        self.choi_orders = sorted(choi_orders)
        prob = ConicProblem()
        self.choi = {}
        self.signal_ops = {}
        for m in self.choi_orders:
            d_ap = m + 1
            self.choi[m] = prob.add_psd_block(
                protocol.d_b * d_ap, trace_bound=float(d_ap), name=f"J{m}"
            )
            for x in protocol.signals:
                psi = protocol.signal_state(x, m)
                rho_t = np.outer(psi, psi.conj()).T
                self.signal_ops[(m, x)] = rho_t
        self.scalar_idx = {}
        free_ms = [m for m in range(n_ph + 1) if m not in self.choi_orders]
        for x in protocol.signals:
            for y in protocol.outcomes:
                idx = prob.add_scalars(len(free_ms), upper=1.0, name=f"Y[{x},{y}]")
                for m, i in zip(free_ms, idx):
                    self.scalar_idx[(m, x, y)] = i

        for setting, intensities in plan.settings():
            for x in protocol.signals:
                mu = intensities[x]
                tail = max(fock.tail_weight(mu, n_ph), TAIL_FLOOR)
                pois = [fock.poisson_pmf(mu, m) for m in range(n_ph + 1)]
                for y in protocol.outcomes:
                    gamma = stats.gamma[(setting, x, y)]
                    sterms = [
                        (self.scalar_idx[(m, x, y)], pois[m]) for m in free_ms
                    ]
                    pterms = [
                        (
                            self.choi[m],
                            pois[m]
                            * np.kron(protocol.bob_povm[y], self.signal_ops[(m, x)]),
                        )
                        for m in self.choi_orders
                    ]
                    prob.add_le(f"{setting}:{x}:{y}:le", sterms, pterms, rhs=gamma)
                    prob.add_ge(f"{setting}:{x}:{y}:ge", sterms, pterms, rhs=gamma - tail)

        for m in self.choi_orders:
            d_ap = m + 1
            for name, h, rhs in _hermitian_basis_rows(d_ap):
                coeff = np.kron(np.eye(protocol.d_b), h)
                prob.add_eq(f"tp:J{m}:{name}", psd_terms=[(self.choi[m], coeff)], rhs=rhs)

        if subspace is not None:
            proj = protocol.subspace_projector
            if proj is None:
                raise ValueError("subspace constraints need a flag-state protocol")
            for m in self.choi_orders:
                if m == 0:
                    # all vacuum signal states coincide: one row, tightest bound
                    p_ls = [subspace.get((x, m), 0.0) for x in protocol.signals]
                    p_l = max(p_ls)
                    if p_l > 0:
                        op = np.kron(proj, self.signal_ops[(m, protocol.signals[0])])
                        prob.add_ge(f"sub:{m}:lo", psd_terms=[(self.choi[m], op)], rhs=p_l)
                        prob.add_le(f"sub:{m}:hi", psd_terms=[(self.choi[m], op)], rhs=1.0)
                    continue
                for x in protocol.signals:
                    p_l = subspace.get((x, m))
                    if p_l is None or p_l <= 0:
                        continue
                    op = np.kron(proj, self.signal_ops[(m, x)])
                    prob.add_ge(f"sub:{x}:{m}:lo", psd_terms=[(self.choi[m], op)], rhs=p_l)
                    prob.add_le(f"sub:{x}:{m}:hi", psd_terms=[(self.choi[m], op)], rhs=1.0)
        self.problem = prob

    def objective_terms(self, x, ys, n):
        """Objective for the yield (or summed yields) of outcomes ``ys``."""
        if n in self.choi_orders:
            op = sum(
                np.kron(self.protocol.bob_povm[y], self.signal_ops[(n, x)]) for y in ys
            )
            return None, {self.choi[n]: op}
        return {self.scalar_idx[(n, x, y)]: 1.0 for y in ys}, None

    def bound(self, x, ys, n, direction, tol_gap, max_iter=200):
        sterms, pterms = self.objective_terms(x, ys, n)
        prob = self.problem.with_objective(sterms, pterms, sense=direction)
        sol = solve(prob, tol_gap=tol_gap, max_iter=max_iter)
        cert = sol.certificate
        if cert.status == "infeasible":
            raise InfeasibleStatisticsError(
                f"no channel reproduces the statistics (target {x},{ys},{n})",
                violations=[],
            )
        val = min(1.0, max(0.0, cert.dual))
        return val, cert


def sdp_vacuum_structure(
    stats: ObservedStats,
    plan: IntensityPlan,
    n_ph: int,
    protocol: ProtocolSpec,
    choi_orders=(0, 1),
):
    """Vacuum outcome probabilities implied by a feasible channel.

    Solves a centering problem and reads the vacuum Choi block: the
    vacuum yields Y_0^{x,y} = Tr[J_0 F_y] carry no x dependence at all,
    and the induced key-basis error rate is exactly 1/2 because both
    error configurations weigh the same J_0 entries.
    """
    model = _SdpYieldModel(stats, plan, n_ph, protocol, sorted(choi_orders), None)
    sol = solve(model.problem.with_objective(), tol_gap=1e-8)
    j0 = sol.blocks[model.choi[0]]
    probs = {y: float(np.trace(j0 @ protocol.bob_povm[y]).real) for y in protocol.outcomes}
    return probs, sol.certificate


def sdp_yield_bounds(
    stats: ObservedStats,
    plan: IntensityPlan,
    n_ph: int,
    protocol: ProtocolSpec,
    choi_orders=(0, 1),
    subspace: dict | None = None,
    targets=None,
    tol_gap: float = 1e-9,
    multi_click_upper_for=None,
) -> YieldBounds:
    """Choi-constrained SDP bounds on the requested yields.

    Yields of photon numbers in ``choi_orders`` are generated by a common
    channel (Choi matrix per order, trace-preserving and PSD); the
    remaining orders stay free scalars in [0, 1].  ``subspace`` optionally
    maps (x, m) to a lower bound on the receiver-subspace weight, adding
    the flag-state constraints.  ``multi_click_upper_for`` requests, per
    photon number n in it, upper bounds on the aggregated multi-click
    yield (stored under (x, "mult", n)).
    """
    model = _SdpYieldModel(stats, plan, n_ph, protocol, choi_orders, subspace)
    if targets is None:
        targets = [(x, y, 1) for x in protocol.signals for y in protocol.outcomes]
    out = YieldBounds(method="sdp")
    # The per-observation LP relaxes the SDP (drop the Choi coupling), so
    # its certified bounds are always valid here too.  On degenerate
    # instances the interior-point endgame can leave a few 1e-6 on the
    # table; stacking the LP certificate keeps the reported bound the
    # tightest one actually proven.  The status string records when the
    # LP certificate was the binding one.
    for x, y, n in targets:
        lo, cert_lo = model.bound(x, [y], n, "min", tol_gap)
        hi, cert_hi = model.bound(x, [y], n, "max", tol_gap)
        lo_lp = lp_yield_bounds(stats, plan, n_ph, (x, y, n), "min")
        hi_lp = lp_yield_bounds(stats, plan, n_ph, (x, y, n), "max")
        out.lower[(x, y, n)] = max(lo, lo_lp)
        out.upper[(x, y, n)] = min(hi, hi_lp)
        out.status[(x, y, n, "min")] = (
            cert_lo.status if lo >= lo_lp else cert_lo.status + "+lp",
            cert_lo.gap,
        )
        out.status[(x, y, n, "max")] = (
            cert_hi.status if hi <= hi_lp else cert_hi.status + "+lp",
            cert_hi.gap,
        )
    for n in multi_click_upper_for or ():
        ys = protocol.multi_click_outcomes
        if not ys:
            continue
        for x in protocol.signals:
            hi, cert = model.bound(x, ys, n, "max", tol_gap)
            hi_lp = sum(
                lp_yield_bounds(stats, plan, n_ph, (x, y, n), "max") for y in ys
            )
            out.upper[(x, "mult", n)] = min(hi, hi_lp, 1.0)
            out.status[(x, "mult", n, "max")] = (cert.status, cert.gap)
    return out
