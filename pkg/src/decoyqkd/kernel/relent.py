"""Frank-Wolfe minimization of the key-rate relative entropy.

The objective is f(rho) = D(G(rho) || Z(G(rho))) in bits, where G is a
completely positive trace-nonincreasing map given by Kraus operators and
Z is a pinching given by a family of orthogonal projectors.  f is convex,
so every Frank-Wolfe linearization

    f(rho*) >= f(rho_k) + <grad f(rho_k), rho* - rho_k>

yields a valid lower bound on the minimum once the inner linear
minimization is itself lower-bounded by a certified dual value.  The
bound reported here therefore remains rigorous even though the iterates
are only approximately optimal.

Rank deficiencies are handled in two ways: the fixed structural kernel of
G (and of Z∘G) is removed once via support isometries, and the state is
mixed with eps * identity/d inside the logarithms.  The eps perturbation
is accounted for in the returned bound through the convexity inequality
f(rho) >= (f_eps(rho) - eps * f(id/d)) / (1 - eps), recorded in the
result as ``epsilon_correction``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ipm import solve_sdp
from .problem import ConicProblem

__all__ = ["RelativeEntropyObjective", "minimize_relative_entropy", "FrankWolfeResult"]

_LN2 = np.log(2.0)


def _support_isometry(mat: np.ndarray, rel_tol: float = 1e-12) -> np.ndarray:
    w, v = np.linalg.eigh(mat)
    keep = w > rel_tol * max(w.max(), 0.0)
    return v[:, keep]


def _clip_psd(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (mat + mat.conj().T))
    w = np.clip(w, 0.0, None)
    return (v * w) @ v.conj().T


class RelativeEntropyObjective:
    """f(rho) = D(G(rho) || Z(G(rho))) in bits, with eps regularization."""

    def __init__(self, kraus, pinching, dim_in: int, eps: float = 1e-12):
        self.kraus = [np.asarray(k, dtype=complex) for k in kraus]
        self.pinching = [np.asarray(z, dtype=complex) for z in pinching]
        self.dim_in = int(dim_in)
        self.eps = float(eps)
        for k in self.kraus:
            if k.shape[1] != self.dim_in:
                raise ValueError("Kraus operator input dimension mismatch")
        self.dim_out = self.kraus[0].shape[0]
        zsum = sum(self.pinching)
        if np.linalg.norm(zsum - np.eye(self.dim_out)) > 1e-10:
            raise ValueError("pinching projectors must resolve the identity")

        g_id = self.apply_map(np.eye(self.dim_in, dtype=complex))
        self._iso_v = _support_isometry(g_id)
        self._iso_vp = _support_isometry(self.apply_pinching(g_id))
        # supp(G(rho)) lies inside supp(Z(G(rho))) for full-rank rho
        proj = self._iso_vp @ self._iso_vp.conj().T
        if np.linalg.norm(self._iso_v - proj @ self._iso_v) > 1e-8:
            raise ValueError("pinched support does not contain the map support")
        self._g_id_over_d = g_id / self.dim_in

    def apply_map(self, rho: np.ndarray) -> np.ndarray:
        out = np.zeros((self.dim_out, self.dim_out), dtype=complex)
        for k in self.kraus:
            out += k @ rho @ k.conj().T
        return out

    def apply_adjoint(self, sigma: np.ndarray) -> np.ndarray:
        out = np.zeros((self.dim_in, self.dim_in), dtype=complex)
        for k in self.kraus:
            out += k.conj().T @ sigma @ k
        return out

    def apply_pinching(self, sigma: np.ndarray) -> np.ndarray:
        out = np.zeros_like(sigma)
        for z in self.pinching:
            out += z @ sigma @ z
        return out

    # ----- values ----------------------------------------------------------
    def _sigma_eps(self, rho: np.ndarray) -> np.ndarray:
        return (1 - self.eps) * self.apply_map(rho) + self.eps * self._g_id_over_d

    def value_from_output(self, sigma: np.ndarray) -> float:
        """D(sigma || Z(sigma)) in bits for an output-space matrix."""
        sv = self._iso_v.conj().T @ sigma @ self._iso_v
        w = np.linalg.eigvalsh(0.5 * (sv + sv.conj().T))
        w = np.clip(w, 1e-300, None)
        term1 = float(np.sum(w * np.log2(w)))
        tau = self.apply_pinching(sigma)
        tv = self._iso_vp.conj().T @ tau @ self._iso_vp
        wt, ut = np.linalg.eigh(0.5 * (tv + tv.conj().T))
        wt = np.clip(wt, 1e-300, None)
        log_tau = (ut * np.log2(wt)) @ ut.conj().T
        sp = self._iso_vp.conj().T @ sigma @ self._iso_vp
        term2 = float(np.trace(sp @ log_tau).real)
        return term1 - term2

    def value(self, rho: np.ndarray) -> float:
        """f_eps(rho) in bits."""
        return self.value_from_output(self._sigma_eps(rho))

    def gradient(self, rho: np.ndarray) -> np.ndarray:
        """Gradient of f_eps at rho, a Hermitian matrix (bits)."""
        sigma = self._sigma_eps(rho)
        sv = self._iso_v.conj().T @ sigma @ self._iso_v
        w, u = np.linalg.eigh(0.5 * (sv + sv.conj().T))
        w = np.clip(w, 1e-300, None)
        log_sigma = self._iso_v @ ((u * np.log(w)) @ u.conj().T) @ self._iso_v.conj().T
        tau = self.apply_pinching(sigma)
        tv = self._iso_vp.conj().T @ tau @ self._iso_vp
        wt, ut = np.linalg.eigh(0.5 * (tv + tv.conj().T))
        wt = np.clip(wt, 1e-300, None)
        log_tau = self._iso_vp @ ((ut * np.log(wt)) @ ut.conj().T) @ self._iso_vp.conj().T
        grad = self.apply_adjoint(log_sigma - log_tau) * ((1 - self.eps) / _LN2)
        return 0.5 * (grad + grad.conj().T)

    def mixed_state_value(self) -> float:
        """f at the maximally mixed state (used for the eps correction)."""
        return self.value(np.eye(self.dim_in, dtype=complex) / self.dim_in)


@dataclass
class FrankWolfeResult:
    primal: float
    bound: float
    gap: float
    iterations: int
    epsilon_correction: float
    status: str
    rho: np.ndarray


def _golden_section(fun, tol: float = 1e-10) -> float:
    """Minimize a convex scalar function on [0, 1]."""
    invphi = (np.sqrt(5.0) - 1) / 2
    a, b = 0.0, 1.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    return 0.5 * (a + b)


def minimize_relative_entropy(
    feasible: ConicProblem,
    rho_block: int,
    objective: RelativeEntropyObjective,
    max_iter: int = 300,
    gap_tol: float = 1e-6,
    improve_tol: float = 1e-8,
    subproblem_tol: float = 1e-9,
    subproblem_max_iter: int = 200,
) -> FrankWolfeResult:
    """Frank-Wolfe minimization of f over the feasible set.

    ``feasible`` describes the constraint set; its objective is ignored.
    Each direction subproblem is a certified SDP solve on the linearized
    objective, so the returned ``bound`` is a valid lower bound on the
    true minimum of f over the set (including the eps correction).
    """
    dim = feasible.block_dims[rho_block]
    center = solve_sdp(
        feasible.with_objective(),
        tol_gap=1e-8,
        max_iter=subproblem_max_iter,
    )
    cert = center.certificate
    if cert.status == "infeasible" or cert.primal_residual > 1e-6:
        raise ValueError(
            f"feasible set appears empty (centering status {cert.status}, "
            f"primal residual {cert.primal_residual:.2e})"
        )
    rho = _clip_psd(center.blocks[rho_block])
    if np.trace(rho).real < 1e-14:
        raise ValueError("feasible set appears empty (zero-trace centering point)")

    f_mixed = objective.mixed_state_value()
    eps = objective.eps

    best_lb = -np.inf
    f_cur = objective.value(rho)
    status = "max-iterations"
    it = 0
    for it in range(1, max_iter + 1):
        grad = objective.gradient(rho)
        sub = solve_sdp(
            feasible.with_objective(psd_costs={rho_block: grad}),
            tol_gap=subproblem_tol,
            max_iter=subproblem_max_iter,
        )
        delta = _clip_psd(sub.blocks[rho_block])
        lin_rho = float(np.trace(grad @ rho).real)
        best_lb = max(best_lb, f_cur + sub.certificate.dual - lin_rho)

        if f_cur - best_lb <= gap_tol:
            status = "converged"
            break

        sigma0 = objective._sigma_eps(rho)
        sigma_dir = (1 - eps) * (
            objective.apply_map(delta) - objective.apply_map(rho)
        )
        t_star = _golden_section(
            lambda t: objective.value_from_output(sigma0 + t * sigma_dir)
        )
        rho_next = rho + t_star * (delta - rho)
        f_next = objective.value_from_output(sigma0 + t_star * sigma_dir)
        if f_next > f_cur:
            # exact line search should never increase f; keep the old point
            status = "stalled"
            break
        improved = f_cur - f_next
        rho, f_cur = rho_next, f_next
        if improved < improve_tol * max(abs(f_cur), 1e-12):
            grad = objective.gradient(rho)
            sub = solve_sdp(
                feasible.with_objective(psd_costs={rho_block: grad}),
                tol_gap=subproblem_tol,
                max_iter=subproblem_max_iter,
            )
            lin_rho = float(np.trace(grad @ rho).real)
            best_lb = max(best_lb, f_cur + sub.certificate.dual - lin_rho)
            status = "converged" if f_cur - best_lb <= gap_tol else "stalled"
            break

    correction = (best_lb - eps * f_mixed) / (1 - eps) - best_lb
    bound = max(0.0, best_lb + correction)
    return FrankWolfeResult(
        primal=f_cur,
        bound=bound,
        gap=f_cur - bound,
        iterations=it,
        epsilon_correction=correction,
        status=status,
        rho=rho,
    )
