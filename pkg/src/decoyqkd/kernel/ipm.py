"""Primal-dual interior-point solver for small dense conic programs.

Nesterov-Todd scaled Mehrotra predictor-corrector over a product of the
nonnegative orthant and complex Hermitian PSD cones.  Complex blocks are
handled in direct complex arithmetic (no real embedding), which halves
the dimensions relative to the real symmetric encoding.

Every solve returns a :class:`~decoyqkd.kernel.problem.SolveCertificate`
whose ``dual`` field is a *rigorous* bound on the optimum: the final dual
point is repaired against the original (un-slacked) problem using sign
clipping on inequality multipliers, known upper bounds on scalars, and
known trace bounds on PSD blocks.  Residual-grade bounds (no trace bound
available, dual slightly infeasible) are flagged via ``rigorous=False``.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .problem import ConicProblem, Solution, SolveCertificate, hermitian_vectorize

__all__ = ["solve", "solve_lp", "solve_sdp"]

_STALL_LIMIT = 30


class _State:
    """Primal/dual iterate, blockwise."""

    def __init__(self, xs, xb, y, zs, zb):
        self.xs = xs  # scalars (n_s,)
        self.xb = xb  # list of Hermitian matrices
        self.y = y  # row multipliers (m,)
        self.zs = zs
        self.zb = zb


def _chol(mat, name):
    d = mat.shape[0]
    jitter = 0.0
    for _ in range(6):
        try:
            return np.linalg.cholesky(mat + jitter * np.eye(d))
        except np.linalg.LinAlgError:
            jitter = max(jitter * 100, 1e-14 * max(1.0, np.trace(mat).real / d))
    raise np.linalg.LinAlgError(f"cholesky failed for {name}")


def _nt_scaling(x, z):
    """NT scaling for one PSD block: returns R, R^{-dagger}, lambda (diag)."""
    lx = _chol(x, "X")
    lz = _chol(z, "Z")
    u, s, vh = np.linalg.svd(lz.conj().T @ lx)
    sq = np.sqrt(s)
    r = lx @ vh.conj().T / sq
    rhi = lz @ u / sq  # equals (R^{-1})^dagger
    return r, rhi, s


def _sym(m):
    return 0.5 * (m + m.conj().T)


def solve(
    problem: ConicProblem,
    tol_gap: float = 1e-9,
    tol_feas: float = 1e-10,
    max_iter: int = 200,
) -> Solution:
    """Solve a conic problem to the requested relative gap.

    Never raises on numerical trouble: the status field reports what was
    achieved ("optimal", "gap-reported", "infeasible", "unbounded").
    """
    comp = problem.compiled()
    c_s, c_b = comp.cost_vectors()
    m = comp.m
    A = comp.A_scalar
    b = comp.b
    dims = problem.block_dims
    nu = comp.nu
    sign = 1.0 if problem.sense == "min" else -1.0

    if nu == 0:
        raise ValueError("problem has no variables")

    def apply_A(xs, xb):
        out = A @ xs
        for k, d in enumerate(dims):
            rows = comp.block_rows[k]
            if len(rows):
                out[rows] += comp.block_vecs[k] @ hermitian_vectorize(xb[k])
        return out

    def apply_AT_blocks(y):
        out = []
        for k, d in enumerate(dims):
            rows = comp.block_rows[k]
            if len(rows):
                out.append(
                    np.einsum("r,rab->ab", y[rows], comp.block_coeffs[k], optimize=True)
                )
            else:
                out.append(np.zeros((d, d), dtype=complex))
        return out

    def schur(w2_scalar, w_blocks):
        """M = A W A^T for the current scaling."""
        mmat = (A.multiply(w2_scalar) @ A.T).toarray()
        for k, d in enumerate(dims):
            rows = comp.block_rows[k]
            if not len(rows):
                continue
            w = w_blocks[k]
            t = np.matmul(np.matmul(w, comp.block_coeffs[k]), w)
            mk = comp.block_vecs[k] @ hermitian_vectorize(t).T
            mmat[np.ix_(rows, rows)] += 0.5 * (mk + mk.T)
        return mmat

    def factor(mmat):
        if m == 0:
            return "empty"
        jitter = 0.0
        base = max(1.0, np.abs(np.diag(mmat)).max())
        for _ in range(8):
            try:
                return sla.cho_factor(
                    mmat + jitter * np.eye(m), lower=True, check_finite=False
                )
            except np.linalg.LinAlgError:
                jitter = max(jitter * 100, 1e-14 * base)
        return None

    def back_solve(fac, rhs, mmat=None):
        if fac == "empty":
            return np.zeros(0)
        sol = sla.cho_solve(fac, rhs, check_finite=False)
        if mmat is not None:
            # one step of iterative refinement for near-singular systems
            sol += sla.cho_solve(fac, rhs - mmat @ sol, check_finite=False)
        return sol

    # ----- initial point (least-norm heuristic with identity scaling) ----
    mmat0 = schur(np.ones(comp.n_scalars), [np.eye(d) for d in dims])
    f0 = factor(mmat0)
    if f0 is None:
        xs = np.ones(comp.n_scalars)
        xb = [np.eye(d, dtype=complex) for d in dims]
        y = np.zeros(m)
        zs = np.ones(comp.n_scalars)
        zb = [np.eye(d, dtype=complex) for d in dims]
    else:
        v = back_solve(f0, b)
        xs = A.T @ v
        xb = apply_AT_blocks(v)
        minl = min(
            [xs.min(initial=np.inf)]
            + [np.linalg.eigvalsh(x).min() for x in xb if x.size]
        )
        scale = max(np.abs(xs).max(initial=0.0), 1.0)
        dp = max(0.1, -1.5 * minl, 0.1 * scale)
        xs = xs + dp
        xb = [x + dp * np.eye(d) for x, d in zip(xb, dims)]
        rhs_y = A @ c_s
        for k in range(len(dims)):
            rows = comp.block_rows[k]
            if len(rows):
                rhs_y[rows] += comp.block_vecs[k] @ hermitian_vectorize(c_b[k])
        y = back_solve(f0, rhs_y)
        zs = c_s - A.T @ y
        zb = [c_b[k] - v for k, v in enumerate(apply_AT_blocks(y))]
        minl = min(
            [zs.min(initial=np.inf)]
            + [np.linalg.eigvalsh(z).min() for z in zb if z.size]
        )
        scale = max(np.abs(zs).max(initial=0.0), 1.0)
        dd = max(0.1, -1.5 * minl, 0.1 * scale)
        zs = zs + dd
        zb = [_sym(z) + dd * np.eye(d) for z, d in zip(zb, dims)]

    st = _State(xs, xb, y, zs, zb)

    norm_b = max(1.0, np.linalg.norm(b))
    norm_c = max(
        1.0,
        np.linalg.norm(c_s),
        max((np.linalg.norm(cb) for cb in c_b), default=0.0),
    )

    best = None
    best_score = np.inf
    best_bound = (-np.inf, np.inf, True)  # (repaired bound, slack, rigorous)
    stall = 0
    status = "gap-reported"
    iters = 0

    for it in range(max_iter):
        iters = it + 1
        # residuals
        rp = b - apply_A(st.xs, st.xb)
        at_y = apply_AT_blocks(st.y)
        rd_s = c_s - A.T @ st.y - st.zs
        rd_b = [_sym(c_b[k] - at_y[k] - st.zb[k]) for k in range(len(dims))]

        gap = float(st.xs @ st.zs) + sum(
            np.trace(st.xb[k] @ st.zb[k]).real for k in range(len(dims))
        )
        mu = gap / nu
        pobj = float(c_s @ st.xs) + sum(
            np.trace(c_b[k] @ st.xb[k]).real for k in range(len(dims))
        )
        dobj = float(b @ st.y)
        pres = np.linalg.norm(rp) / norm_b
        dres = np.sqrt(
            np.linalg.norm(rd_s) ** 2 + sum(np.linalg.norm(r) ** 2 for r in rd_b)
        ) / norm_c
        relgap = gap / (1.0 + abs(pobj) + abs(dobj))

        bnd, slack_i, rig_i = _certify(problem, comp, st.y, c_s, c_b, A)
        if bnd > best_bound[0]:
            best_bound = (bnd, slack_i, rig_i)

        score = max(pres, dres, relgap)
        if score < best_score * 0.999:
            best_score = score
            best = (st.xs.copy(), [x.copy() for x in st.xb], st.y.copy(),
                    st.zs.copy(), [z.copy() for z in st.zb], pobj, dobj, gap,
                    pres, dres)
            stall = 0
        else:
            stall += 1

        if pres <= tol_feas and dres <= tol_feas and relgap <= tol_gap:
            status = "optimal"
            break
        if stall > _STALL_LIMIT or mu < 1e-17:
            break
        # crude unboundedness / infeasibility screens
        if pobj < -1e14 * norm_c and pres <= 1e-6:
            status = "unbounded"
            break
        if np.linalg.norm(st.y) > 1e13:
            if dobj > 0:
                status = "infeasible"
            break

        # NT scalings
        w_s = np.sqrt(st.xs / st.zs)
        lam_s = np.sqrt(st.xs * st.zs)
        scal = [_nt_scaling(st.xb[k], st.zb[k]) for k in range(len(dims))]
        w_blocks = [r @ r.conj().T for r, _, _ in scal]

        mmat = schur(w_s**2, w_blocks)
        fac = factor(mmat)
        if fac is None:
            break

        def directions(d_s, d_blocks):
            """Solve the Newton system for given scaled-complementarity RHS."""
            rhs = rp.copy()
            # subtract A(R D R^dag - W Rd W), scalar part w*d - w^2*rd
            svec = w_s * d_s - (w_s**2) * rd_s
            rhs -= A @ svec
            for k in range(len(dims)):
                rows = comp.block_rows[k]
                if not len(rows):
                    continue
                r, rhi, lam = scal[k]
                e = r @ d_blocks[k] @ r.conj().T - w_blocks[k] @ rd_b[k] @ w_blocks[k]
                rhs[rows] -= comp.block_vecs[k] @ hermitian_vectorize(e)
            dy = back_solve(fac, rhs, mmat)
            dz_s = rd_s - A.T @ dy
            at_dy = apply_AT_blocks(dy)
            dz_b = [_sym(rd_b[k] - at_dy[k]) for k in range(len(dims))]
            dx_s = w_s * d_s - (w_s**2) * dz_s
            dx_b = [
                _sym(
                    scal[k][0] @ d_blocks[k] @ scal[k][0].conj().T
                    - w_blocks[k] @ dz_b[k] @ w_blocks[k]
                )
                for k in range(len(dims))
            ]
            return dx_s, dx_b, dy, dz_s, dz_b

        def scaled_dirs(dx_s, dx_b, dz_s, dz_b):
            sx_s = dx_s / w_s
            sz_s = w_s * dz_s
            sx_b, sz_b = [], []
            for k in range(len(dims)):
                r, rhi, lam = scal[k]
                sx_b.append(_sym(rhi.conj().T @ dx_b[k] @ rhi))
                sz_b.append(_sym(r.conj().T @ dz_b[k] @ r))
            return sx_s, sz_s, sx_b, sz_b

        def max_step(s_scalar, s_blocks, lam_blocks):
            alpha = np.inf
            neg = s_scalar / lam_s
            if (neg < 0).any():
                alpha = min(alpha, -1.0 / neg.min())
            for k in range(len(dims)):
                lam = lam_blocks[k]
                mtx = s_blocks[k] / np.sqrt(np.outer(lam, lam))
                emin = np.linalg.eigvalsh(mtx).min() if mtx.size else 0.0
                if emin < 0:
                    alpha = min(alpha, -1.0 / emin)
            return alpha

        lam_blocks = [scal[k][2] for k in range(len(dims))]

        # predictor
        d_s_aff = -lam_s
        d_b_aff = [np.diag(-lam_blocks[k]).astype(complex) for k in range(len(dims))]
        aff = directions(d_s_aff, d_b_aff)
        sx_s, sz_s, sx_b, sz_b = scaled_dirs(aff[0], aff[1], aff[3], aff[4])
        ap = max_step(sx_s, sx_b, lam_blocks)
        ad = max_step(sz_s, sz_b, lam_blocks)
        ap = min(1.0, ap)
        ad = min(1.0, ad)
        gap_aff = float(
            (st.xs + ap * aff[0]) @ (st.zs + ad * aff[3])
        ) + sum(
            np.trace((st.xb[k] + ap * aff[1][k]) @ (st.zb[k] + ad * aff[4][k])).real
            for k in range(len(dims))
        )
        sigma = min(1.0, max(0.0, gap_aff / gap)) ** 3

        # corrector (Mehrotra second-order term in the scaled space)
        d_s = (sigma * mu - lam_s**2 - sx_s * sz_s) / lam_s
        d_b = []
        for k in range(len(dims)):
            lam = lam_blocks[k]
            s_rhs = sigma * mu * np.eye(len(lam)) - np.diag(lam**2).astype(complex)
            s_rhs -= 0.5 * (sx_b[k] @ sz_b[k] + sz_b[k] @ sx_b[k])
            denom = 0.5 * np.add.outer(lam, lam)
            d_b.append(_sym(s_rhs) / denom)
        dx_s, dx_b, dy, dz_s, dz_b = directions(d_s, d_b)
        sx_s, sz_s, sx_b, sz_b = scaled_dirs(dx_s, dx_b, dz_s, dz_b)
        ap = min(1.0, 0.99 * max_step(sx_s, sx_b, lam_blocks))
        ad = min(1.0, 0.99 * max_step(sz_s, sz_b, lam_blocks))

        st.xs = st.xs + ap * dx_s
        st.xb = [_sym(st.xb[k] + ap * dx_b[k]) for k in range(len(dims))]
        st.y = st.y + ad * dy
        st.zs = st.zs + ad * dz_s
        st.zb = [_sym(st.zb[k] + ad * dz_b[k]) for k in range(len(dims))]

    if best is not None:
        xs_f, xb_f, y_f, zs_f, zb_f, pobj, dobj, gap, pres, dres = best
    else:
        xs_f, xb_f, y_f = st.xs, st.xb, st.y
        zs_f, zb_f = st.zs, st.zb
        pobj = dobj = gap = pres = dres = np.nan

    bound, slack, rigorous = _certify(problem, comp, y_f, c_s, c_b, A)
    if best_bound[0] > bound:
        bound, slack, rigorous = best_bound

    primal = sign * pobj
    dual = sign * bound
    cert = SolveCertificate(
        primal=primal,
        dual=dual,
        gap=abs(primal - dual),
        status=status,
        iterations=iters,
        primal_residual=float(pres),
        dual_residual=float(dres),
        bound_slack=float(slack),
        rigorous=rigorous,
    )
    return Solution(
        scalars=xs_f[: comp.n_orig_scalars],
        blocks=xb_f,
        row_duals=y_f[: len(problem.rows)],
        certificate=cert,
    )


def _certify(problem, comp, y, c_s, c_b, A):
    """Repair the dual point into a rigorous bound on the original problem.

    For any y with inequality multipliers clipped to the correct sign,

        bound = sum_i y_i rhs_i + sum_s min(0, z_s) u_s
                + sum_k min(0, lambda_min(Z_k)) tb_k

    with z = c - A^T y on the original columns is a valid lower bound for
    the (compiled, minimization-sense) problem, provided every scalar with
    z_s < 0 has a finite upper bound u_s and every block with
    lambda_min < 0 has a known trace bound tb_k.
    """
    n_rows = len(problem.rows)
    y_orig = y[:n_rows].copy()
    for i, r in enumerate(problem.rows):
        if r.kind == "le" and y_orig[i] > 0:
            y_orig[i] = 0.0
    bound = sum(y_orig[i] * r.rhs for i, r in enumerate(problem.rows))
    slack = 0.0
    rigorous = True

    z_s = c_s[: comp.n_orig_scalars].copy()
    at = A[:n_rows, : comp.n_orig_scalars].T @ y_orig
    z_s -= at
    for j in range(comp.n_orig_scalars):
        if z_s[j] < 0:
            u = problem.scalar_upper[j]
            if u is None:
                rigorous = False
            else:
                bound += z_s[j] * u
                slack += -z_s[j] * u
    for k, d in enumerate(problem.block_dims):
        rows = comp.block_rows[k]
        zk = c_b[k].copy()
        if len(rows):
            mask = rows < n_rows
            if mask.any():
                zk = zk - np.einsum(
                    "r,rab->ab", y_orig[rows[mask]], comp.block_coeffs[k][mask],
                    optimize=True,
                )
        emin = float(np.linalg.eigvalsh(_sym(zk)).min()) if d else 0.0
        if emin < 0:
            tb = problem.block_trace_bounds[k]
            if tb is None:
                rigorous = False
            else:
                bound += emin * tb
                slack += -emin * tb
    return bound, slack, rigorous


def solve_lp(problem: ConicProblem, tol_gap: float = 1e-9, **kw) -> Solution:
    """LP entry point (no PSD blocks allowed)."""
    if problem.block_dims:
        raise ValueError("solve_lp called on a problem with PSD blocks")
    return solve(problem, tol_gap=tol_gap, **kw)


def solve_sdp(problem: ConicProblem, tol_gap: float = 1e-9, **kw) -> Solution:
    """SDP entry point."""
    return solve(problem, tol_gap=tol_gap, **kw)
