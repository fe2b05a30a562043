"""Conic problem container for the dense LP/SDP solver.

Problems are stated over nonnegative (optionally box-bounded) scalar
variables and complex Hermitian PSD matrix blocks, with linear equality
and inequality constraints.  ``compile()`` lowers everything to the
standard primal form

    min  <c, x>   s.t.   A(x) = b,   x in K,

where K is a product of the nonnegative orthant and PSD cones
(inequalities and upper bounds become slack variables).  The original
rows and bounds are kept alongside the compiled data so that solutions
can be certified on the original problem (see ``ipm.solve``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

__all__ = ["ConicProblem", "SolveCertificate", "Solution"]


def hermitian_vectorize(stack: np.ndarray) -> np.ndarray:
    """Real encoding of Hermitian matrices with Tr[A B] = vec(A) . vec(B).

    Layout per matrix: the d diagonal entries, then sqrt(2) * real and
    sqrt(2) * imaginary parts of the strict upper triangle.
    """
    if stack.ndim == 2:
        stack = stack[None]
        squeeze = True
    else:
        squeeze = False
    r, d, _ = stack.shape
    iu = np.triu_indices(d, k=1)
    out = np.empty((r, d * d), dtype=float)
    out[:, :d] = stack[:, np.arange(d), np.arange(d)].real
    upper = stack[:, iu[0], iu[1]]
    rt2 = np.sqrt(2.0)
    out[:, d : d + len(iu[0])] = rt2 * upper.real
    out[:, d + len(iu[0]) :] = rt2 * upper.imag
    return out[0] if squeeze else out


@dataclass
class _Row:
    name: str
    kind: str  # "eq" or "le"
    scalar_terms: list
    psd_terms: list
    rhs: float


@dataclass
class SolveCertificate:
    """Outcome of one conic solve.

    ``dual`` is the certified bound: for a minimization it is a valid
    lower bound on the optimum obtained from a (repaired) dual-feasible
    point, so ``dual <= primal`` and reporting ``dual`` is always on the
    safe side.  ``bound_slack`` records how much repair was applied; it
    is 0.0 when the interior-point dual was already feasible.
    """

    primal: float
    dual: float
    gap: float
    status: str  # "optimal" | "gap-reported" | "infeasible" | "unbounded"
    iterations: int
    primal_residual: float
    dual_residual: float
    bound_slack: float = 0.0
    rigorous: bool = True


@dataclass
class Solution:
    scalars: np.ndarray
    blocks: list
    row_duals: np.ndarray
    certificate: SolveCertificate


class ConicProblem:
    """Builder for small dense conic programs."""

    def __init__(self):
        self.n_scalars = 0
        self.scalar_upper: list = []
        self.scalar_names: list = []
        self.block_dims: list = []
        self.block_trace_bounds: list = []
        self.block_names: list = []
        self.rows: list[_Row] = []
        self.c_scalar: dict[int, float] = {}
        self.c_psd: dict[int, np.ndarray] = {}
        self.sense = "min"
        self._compiled = None

    # ----- variables ---------------------------------------------------
    def add_scalars(self, n: int, upper=None, name: str = "x") -> np.ndarray:
        """Add ``n`` nonnegative scalars; ``upper`` may be a float or array."""
        idx = np.arange(self.n_scalars, self.n_scalars + n)
        self.n_scalars += n
        if upper is None:
            ups = [None] * n
        elif np.isscalar(upper):
            ups = [float(upper)] * n
        else:
            ups = [None if u is None else float(u) for u in upper]
        self.scalar_upper.extend(ups)
        self.scalar_names.extend(f"{name}[{k}]" for k in range(n))
        self._compiled = None
        return idx

    def add_psd_block(self, dim: int, trace_bound: float | None = None, name: str = "X") -> int:
        """Add a complex Hermitian PSD block.

        ``trace_bound`` is an upper bound on the trace known to hold for
        every feasible point (e.g. implied by a trace-preservation
        constraint); it is used only to repair slightly infeasible dual
        points into rigorous bounds.
        """
        self.block_dims.append(int(dim))
        self.block_trace_bounds.append(trace_bound)
        self.block_names.append(name)
        self._compiled = None
        return len(self.block_dims) - 1

    # ----- constraints --------------------------------------------------
    def _add_row(self, kind, name, scalar_terms, psd_terms, rhs):
        scalar_terms = [(int(i), float(v)) for i, v in (scalar_terms or [])]
        checked = []
        for bid, mat in psd_terms or []:
            m = np.asarray(mat, dtype=complex)
            d = self.block_dims[bid]
            if m.shape != (d, d):
                raise ValueError(f"row {name}: coefficient shape {m.shape} != block dim {d}")
            if np.linalg.norm(m - m.conj().T) > 1e-12 * max(1.0, np.linalg.norm(m)):
                raise ValueError(f"row {name}: coefficient matrix is not Hermitian")
            checked.append((bid, m))
        self.rows.append(_Row(name, kind, scalar_terms, checked, float(rhs)))
        self._compiled = None

    def add_eq(self, name, scalar_terms=None, psd_terms=None, rhs=0.0):
        self._add_row("eq", name, scalar_terms, psd_terms, rhs)

    def add_le(self, name, scalar_terms=None, psd_terms=None, rhs=0.0):
        self._add_row("le", name, scalar_terms, psd_terms, rhs)

    def add_ge(self, name, scalar_terms=None, psd_terms=None, rhs=0.0):
        neg_s = [(i, -v) for i, v in (scalar_terms or [])]
        neg_p = [(b, -np.asarray(m, dtype=complex)) for b, m in (psd_terms or [])]
        self._add_row("le", name, neg_s, neg_p, -float(rhs))

    # ----- objective ----------------------------------------------------
    def set_objective(self, scalar_costs=None, psd_costs=None, sense="min"):
        if sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")
        self.sense = sense
        self.c_scalar = {int(i): float(v) for i, v in (scalar_costs or {}).items()}
        self.c_psd = {}
        for bid, mat in (psd_costs or {}).items():
            m = np.asarray(mat, dtype=complex)
            self.c_psd[int(bid)] = 0.5 * (m + m.conj().T)
        self._compiled = None

    def with_objective(self, scalar_costs=None, psd_costs=None, sense="min") -> "ConicProblem":
        """Shallow copy sharing all constraint data, with a new objective.

        The compiled constraint structure is reused across copies, so
        repeated solves that differ only in the objective (as in
        Frank-Wolfe direction finding or batched yield bounds) skip
        re-assembly.
        """
        clone = ConicProblem.__new__(ConicProblem)
        clone.__dict__.update(self.__dict__)
        clone.c_scalar = {}
        clone.c_psd = {}
        clone._compiled = self._compiled
        clone.set_objective(scalar_costs, psd_costs, sense)
        if self._compiled is not None:
            clone._compiled = self._compiled
        return clone

    # ----- compilation ---------------------------------------------------
    def compiled(self):
        if self._compiled is None:
            self._compiled = _Compiled(self)
        return self._compiled


class _Compiled:
    """Slack-form data shared between solves (objective excluded)."""

    def __init__(self, p: ConicProblem):
        self.problem = p
        n_orig = p.n_scalars
        le_rows = [i for i, r in enumerate(p.rows) if r.kind == "le"]
        ub_idx = [i for i, u in enumerate(p.scalar_upper) if u is not None]

        self.n_orig_scalars = n_orig
        self.n_scalars = n_orig + len(le_rows) + len(ub_idx)
        self.slack_of_row = {}
        self.m = len(p.rows) + len(ub_idx)

        rows_i, cols_j, vals = [], [], []
        b = np.zeros(self.m)
        for i, r in enumerate(p.rows):
            for j, v in r.scalar_terms:
                rows_i.append(i)
                cols_j.append(j)
                vals.append(v)
            b[i] = r.rhs
        nxt = n_orig
        for i in le_rows:
            rows_i.append(i)
            cols_j.append(nxt)
            vals.append(1.0)
            self.slack_of_row[i] = nxt
            nxt += 1
        for k, j in enumerate(ub_idx):
            i = len(p.rows) + k
            rows_i.extend([i, i])
            cols_j.extend([j, nxt])
            vals.extend([1.0, 1.0])
            b[i] = p.scalar_upper[j]
            nxt += 1
        self.A_scalar = sp.csr_matrix(
            (vals, (rows_i, cols_j)), shape=(self.m, self.n_scalars)
        )
        self.A_scalar_T = self.A_scalar.T.tocsr()
        self.b = b

        # per-block stacked coefficients, restricted to rows that touch it
        self.block_rows = []
        self.block_coeffs = []
        self.block_vecs = []  # real encoding: Tr[A B] = vec(A) . vec(B)
        for bid, d in enumerate(p.block_dims):
            touching = []
            mats = []
            for i, r in enumerate(p.rows):
                for rb, m in r.psd_terms:
                    if rb == bid:
                        touching.append(i)
                        mats.append(m)
            stack = np.stack(mats) if mats else np.zeros((0, d, d), dtype=complex)
            self.block_rows.append(np.array(touching, dtype=int))
            self.block_coeffs.append(stack)
            self.block_vecs.append(hermitian_vectorize(stack))
        self.nu = self.n_scalars + sum(p.block_dims)

    def cost_vectors(self):
        p = self.problem
        sign = 1.0 if p.sense == "min" else -1.0
        c_s = np.zeros(self.n_scalars)
        for i, v in p.c_scalar.items():
            c_s[i] = sign * v
        c_b = []
        for bid, d in enumerate(p.block_dims):
            m = p.c_psd.get(bid)
            c_b.append(sign * m if m is not None else np.zeros((d, d), dtype=complex))
        return c_s, c_b
