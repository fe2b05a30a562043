"""Subspace-weight estimation for flag-state squashing.

Given the detector matrix of a passive linear-optical receiver, the
multi-click indicator expectation on the n-photon sector is bounded below
by partition constants built from block maximum singular values: partition
the detector rows into blocks of at most ``n_in`` rows; each block
contributes at most its largest singular value to the power ``2n`` to the
no-multi-click probability, and maximizing

    c_n = max over partitions ( 1 - sum_k lambda(block_k)^{2n} ),  c_0 = 0,

over admissible partitions gives a sound, monotone constant.  Receivers
with loss reduce to the lossless case through the detected part of the
``(V_d (+) V_l) W`` decomposition (:func:`decompose_lossy`).  Dark counts
only increase the observed multi-click rate, never the constants, so the
same bounds remain valid on statistics that include them
(:func:`dark_count_bound`).

The observed multi-click probability then caps the weight outside the
retained subspace:  p(<= N_B photons | x) >= 1 - m_obs / c_{>= N_B+1}.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import scipy.optimize

from .fock import ModeMatrix, semi_unitarity_residual

__all__ = [
    "Partition",
    "SubspaceBoundReport",
    "DetectorDecomposition",
    "CharacterizationResult",
    "IllPosedCharacterizationError",
    "partitions_for",
    "block_max_singular_value",
    "c_constants",
    "decompose_lossy",
    "pad_lossless",
    "subspace_bound",
    "subspace_bound_conditioned",
    "subspace_bound_from_yield",
    "dark_count_bound",
    "dark_count_bound_conditioned",
    "dark_count_bound_from_yield",
    "required_probe_count",
    "characterize_detector",
]

DECOMPOSITION_TOL = 1e-10


def _as_array(g) -> np.ndarray:
    if isinstance(g, ModeMatrix):
        return g.entries
    return np.asarray(g, dtype=complex)


@dataclass(frozen=True)
class Partition:
    """Disjoint row blocks covering 1..n_out with the prescribed sizes."""

    blocks: tuple[tuple[int, ...], ...]
    n_out: int
    n_in: int

    def __post_init__(self):
        seen = sorted(i for b in self.blocks for i in b)
        if seen != list(range(1, self.n_out + 1)):
            raise ValueError("blocks must cover {1..n_out} exactly once")
        k_max = self.n_out // self.n_in
        want = [self.n_in] * k_max
        if self.n_out % self.n_in:
            want.append(self.n_out % self.n_in)
        sizes = sorted(len(b) for b in self.blocks)
        if sizes != sorted(want):
            raise ValueError(f"block sizes {sizes} differ from prescribed {sorted(want)}")


def partitions_for(n_out: int, n_in: int):
    """All partitions of rows 1..n_out into k_max blocks of size n_in plus remainder.

    Blocks of equal size are unordered; each partition is produced once.
    """
    k_max = n_out // n_in
    rem = n_out - k_max * n_in

    def equal_blocks(items):
        if not items:
            yield ()
            return
        first, rest = items[0], items[1:]
        for mates in combinations(rest, n_in - 1):
            block = (first,) + mates
            remaining = [i for i in rest if i not in mates]
            for tail in equal_blocks(remaining):
                yield (block,) + tail

    all_rows = list(range(1, n_out + 1))
    if rem == 0:
        for blocks in equal_blocks(all_rows):
            yield Partition(blocks, n_out, n_in)
    else:
        for rem_block in combinations(all_rows, rem):
            remaining = [i for i in all_rows if i not in rem_block]
            for blocks in equal_blocks(remaining):
                yield Partition(blocks + (tuple(rem_block),), n_out, n_in)


def partition_count(n_out: int, n_in: int) -> int:
    k_max = n_out // n_in
    rem = n_out - k_max * n_in
    cnt = math.comb(n_out, rem) if rem else 1
    left = n_out - rem
    equal = math.factorial(left) // (math.factorial(n_in) ** k_max * math.factorial(k_max))
    return cnt * equal


def block_max_singular_value(g, rows) -> float:
    """Largest singular value of the row block of ``g`` selected by ``rows`` (1-based)."""
    g = _as_array(g)
    rows = sorted(set(int(r) for r in rows))
    if not rows:
        raise ValueError("empty row set")
    if rows[0] < 1 or rows[-1] > g.shape[0]:
        raise ValueError(f"row indices {rows} outside 1..{g.shape[0]}")
    block = g[[r - 1 for r in rows], :]
    return float(np.linalg.svd(block, compute_uv=False)[0])


@dataclass
class SubspaceBoundReport:
    """Partition constants c_n and the derived subspace-estimation data."""

    c: dict[int, float]
    best_partition: dict[int, Partition]
    n_max: int
    n_b: int | None = None
    c_geq: float | None = None

    def with_cutoff(self, n_b: int) -> "SubspaceBoundReport":
        """Attach the photon cut-off; c_geq = c(N_B + 1) by monotonicity."""
        if n_b < 1:
            raise ValueError("photon cut-off must be >= 1")
        if n_b + 1 > self.n_max:
            raise ValueError(
                f"report only covers n <= {self.n_max}, need c({n_b + 1})"
            )
        return SubspaceBoundReport(
            c=self.c,
            best_partition=self.best_partition,
            n_max=self.n_max,
            n_b=n_b,
            c_geq=self.c[n_b + 1],
        )


def _partition_value(g, partition: Partition, n_photons: int) -> float:
    return 1.0 - sum(
        block_max_singular_value(g, block) ** (2 * n_photons)
        for block in partition.blocks
    )


def _greedy_partition(g: np.ndarray) -> Partition:
    """Group rows by largest pairwise row-Gram overlap (seed for local search)."""
    n_out, n_in = g.shape
    gram = np.abs(g @ g.conj().T)
    np.fill_diagonal(gram, -1.0)
    unassigned = set(range(n_out))
    blocks = []
    k_max = n_out // n_in
    for _ in range(k_max):
        i = max(unassigned, key=lambda r: gram[r, list(unassigned - {r})].max()
                if len(unassigned) > 1 else 0.0)
        block = [i]
        unassigned.discard(i)
        while len(block) < n_in and unassigned:
            j = max(unassigned, key=lambda r: sum(gram[r, b] for b in block))
            block.append(j)
            unassigned.discard(j)
        blocks.append(tuple(sorted(r + 1 for r in block)))
    if unassigned:
        blocks.append(tuple(sorted(r + 1 for r in unassigned)))
    return Partition(tuple(blocks), n_out, n_in)


def _local_swap_search(g, partition: Partition, n_photons: int) -> Partition:
    best = partition
    best_val = _partition_value(g, best, n_photons)
    improved = True
    while improved:
        improved = False
        blocks = [list(b) for b in best.blocks]
        for a in range(len(blocks)):
            for b in range(a + 1, len(blocks)):
                for ia in range(len(blocks[a])):
                    for ib in range(len(blocks[b])):
                        cand = [list(x) for x in blocks]
                        cand[a][ia], cand[b][ib] = cand[b][ib], cand[a][ia]
                        p = Partition(
                            tuple(tuple(sorted(x)) for x in cand),
                            best.n_out,
                            best.n_in,
                        )
                        val = _partition_value(g, p, n_photons)
                        if val > best_val + 1e-15:
                            best, best_val = p, val
                            blocks = [list(x) for x in best.blocks]
                            improved = True
    return best


EXHAUSTIVE_LIMIT = 10_000


def c_constants(g, n_max: int, partition_strategy: str = "auto") -> SubspaceBoundReport:
    """Partition constants c_n for n = 0..n_max.

    ``g`` must have orthonormal columns: either the matrix of a lossless
    receiver or the detected part of a lossy decomposition.  Strategies:
    "exhaustive" enumerates all admissible partitions, "greedy" seeds by
    row-Gram overlap and refines by pairwise swaps, "auto" picks
    exhaustive when the partition count is at most 10000.  Any partition
    gives a sound constant, so the heuristic only affects tightness.
    """
    g = _as_array(g)
    if g.size == 0:
        raise ValueError("empty detector matrix")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    res = semi_unitarity_residual(g)
    if res > 1e-8:
        raise ValueError(
            f"columns are not orthonormal (residual {res:.2e}); "
            "decompose lossy receivers first and pass the detected part"
        )
    n_out, n_in = g.shape
    if partition_strategy == "auto":
        partition_strategy = (
            "exhaustive" if partition_count(n_out, n_in) <= EXHAUSTIVE_LIMIT else "greedy"
        )
    c = {0: 0.0}
    best_partition: dict[int, Partition] = {}
    # the multi-click operator is PSD, so 0 is always a sound constant:
    # clamp float negatives (and useless negative partitions) at 0
    if partition_strategy == "exhaustive":
        parts = list(partitions_for(n_out, n_in))
        # per-block singular values are shared across n: precompute
        svals = [
            [block_max_singular_value(g, blk) for blk in p.blocks] for p in parts
        ]
        for n in range(1, n_max + 1):
            vals = [1.0 - sum(s ** (2 * n) for s in sv) for sv in svals]
            k = int(np.argmax(vals))
            c[n] = max(0.0, vals[k])
            best_partition[n] = parts[k]
    elif partition_strategy == "greedy":
        seed = _greedy_partition(g)
        for n in range(1, n_max + 1):
            p = _local_swap_search(g, seed, n)
            c[n] = max(0.0, _partition_value(g, p, n))
            best_partition[n] = p
    else:
        raise ValueError(f"unknown partition strategy {partition_strategy!r}")
    return SubspaceBoundReport(c=c, best_partition=best_partition, n_max=n_max)


# --------------------------------------------------------------------------
# lossy receivers
# --------------------------------------------------------------------------


@dataclass
class DetectorDecomposition:
    """G = (V_d (+) V_l) W with semi-unitary factors, plus the extended unitary."""

    v_d: np.ndarray
    v_l: np.ndarray
    w: np.ndarray
    u_tilde: np.ndarray
    residual: float


def _polar_semiunitary(m: np.ndarray):
    """Polar factors of a tall matrix: M = Q P with Q semi-unitary, P PSD."""
    u, s, vh = np.linalg.svd(m, full_matrices=False)
    q = u @ vh
    p = (vh.conj().T * s) @ vh
    return q, p


def _complete_to_unitary(v: np.ndarray) -> np.ndarray:
    """Append an orthonormal basis of the cokernel to a semi-unitary."""
    n, k = v.shape
    if k == n:
        return v
    u, _, _ = np.linalg.svd(v, full_matrices=True)
    proj = v @ v.conj().T
    cand = u[:, k:] - proj @ u[:, k:]
    q, _ = np.linalg.qr(cand)
    return np.hstack([v, q])


def pad_lossless(g) -> np.ndarray:
    """Embed a lossless n_out x n_in matrix into 2 n_out rows with zero loss rows."""
    g = _as_array(g)
    return np.vstack([g, np.zeros_like(g)])


def decompose_lossy(u_or_g, n_in: int | None = None) -> DetectorDecomposition:
    """Split a lossy receiver into loss followed by a lossless detection part.

    Accepts either a full ``2 n_out x 2 n_out`` unitary (then ``n_in``
    selects its leading columns) or the ``2 n_out x n_in`` column block
    directly.  Executes the constructive proof: split into detected and
    loss halves, column-normalize, polar-decompose each half, assemble the
    inner semi-unitary from the polar factors and norm diagonals, and
    rebuild an extended unitary sharing the input columns.

    Degenerate (zero-norm) columns in either half are absorbed by the
    SVD-based polar step: the unitary factor supplies an arbitrary
    orthonormal column while the corresponding inner weight vanishes, so
    the reconstruction is unaffected.
    """
    mat = _as_array(u_or_g)
    if mat.shape[0] % 2:
        raise ValueError("expected an even number of rows (detected + loss modes)")
    if mat.shape[0] == mat.shape[1]:
        if n_in is None:
            raise ValueError("full unitary input requires n_in")
        res = np.linalg.norm(mat.conj().T @ mat - np.eye(mat.shape[1]))
        if res > DECOMPOSITION_TOL * mat.shape[1]:
            raise ValueError(f"input is not unitary (residual {res:.2e})")
        g = mat[:, :n_in]
    else:
        g = mat
        n_in = g.shape[1]
    res = semi_unitarity_residual(g)
    if res > 1e-8:
        raise ValueError(f"input columns are not orthonormal (residual {res:.2e})")

    n_out = g.shape[0] // 2
    if n_in > n_out:
        raise ValueError("need n_in <= n_out")
    b_half, c_half = g[:n_out], g[n_out:]
    beta = np.linalg.norm(b_half, axis=0)
    gamma = np.linalg.norm(c_half, axis=0)

    def normalized(m, norms):
        safe = np.where(norms > 0, norms, 1.0)
        return m / safe

    v_d, p_d = _polar_semiunitary(normalized(b_half, beta))
    v_l, p_l = _polar_semiunitary(normalized(c_half, gamma))
    w_d = p_d * beta  # P diag(beta)
    w_l = p_l * gamma
    w = np.vstack([w_d, w_l])

    q_d = _complete_to_unitary(v_d)
    q_l = _complete_to_unitary(v_l)
    pad = n_out - n_in
    w_ext = np.zeros((2 * n_out, n_out), dtype=complex)
    w_ext[:n_in, :n_in] = w_d
    w_ext[n_out : n_out + n_in, :n_in] = w_l
    if pad:
        w_ext[n_in:n_out, n_in:] = np.eye(pad) / np.sqrt(2)
        w_ext[n_out + n_in :, n_in:] = np.eye(pad) / np.sqrt(2)
    w_tot = _complete_to_unitary(w_ext)
    v_tot = np.zeros((2 * n_out, 2 * n_out), dtype=complex)
    v_tot[:n_out, :n_out] = q_d
    v_tot[n_out:, n_out:] = q_l
    u_tilde = v_tot @ w_tot

    recon = np.zeros_like(g)
    recon[:n_out] = v_d @ w_d
    recon[n_out:] = v_l @ w_l
    residual = max(
        float(np.linalg.norm(recon - g)),
        semi_unitarity_residual(v_d),
        semi_unitarity_residual(v_l),
        semi_unitarity_residual(w),
        float(np.linalg.norm(u_tilde.conj().T @ u_tilde - np.eye(2 * n_out))),
        float(np.linalg.norm(u_tilde[:, :n_in] - g)),
    )
    return DetectorDecomposition(v_d=v_d, v_l=v_l, w=w, u_tilde=u_tilde, residual=residual)


# --------------------------------------------------------------------------
# subspace bounds
# --------------------------------------------------------------------------


def _check_prob(x, name):
    if not -1e-12 <= x <= 1 + 1e-12:
        raise ValueError(f"{name} = {x} is not a probability")
    return min(1.0, max(0.0, x))


def subspace_bound(m_obs: float, c_report: SubspaceBoundReport, n_b: int) -> float:
    """Lower bound on the weight inside the <= N_B photon subspace.

    With c_0 = 0 the generic bound reduces to 1 - m_obs / c_{>= N_B+1},
    clamped to [0, 1].  A nonpositive denominator makes the bound vacuous;
    0 is returned and a warning is emitted.
    """
    m_obs = _check_prob(m_obs, "m_obs")
    rep = c_report if c_report.n_b == n_b else c_report.with_cutoff(n_b)
    c_geq = rep.c_geq
    c_le = min(rep.c[n] for n in range(0, n_b + 1) if n in rep.c)  # = c_0 = 0
    if c_geq is None or c_geq <= c_le:
        warnings.warn("vacuous subspace bound: c_{>=N_B+1} <= c_{<=N_B}")
        return 0.0
    val = 1.0 - (m_obs - c_le) / (c_geq - c_le)
    return min(1.0, max(0.0, val))


def subspace_bound_conditioned(
    m_mult_given_x: float, p_n_given_x: float, c_geq: float
) -> float:
    """Subspace bound conditioned on the source photon number.

    1 - m_mult|x / (p(n|x) * c_{>=N_B+1}), clamped to [0, 1].  The divisor
    uses c_{>=N_B+1} itself: unwinding the chain
    p_L(x) <= sum_m p(m|x) p(subspace | x, m) <= p(n|x) p(subspace|x,n) + (1 - p(n|x))
    around p_L(x) = 1 - m/c gives exactly this form (the same form the
    six-state instantiation prints), not a (1 - c) divisor.
    """
    m_mult_given_x = _check_prob(m_mult_given_x, "m_mult")
    if p_n_given_x <= 0:
        warnings.warn("conditioning on a zero-probability photon number")
        return 0.0
    if c_geq <= 0:
        warnings.warn("vacuous subspace bound: c_{>=N_B+1} <= 0")
        return 0.0
    return min(1.0, max(0.0, 1.0 - m_mult_given_x / (p_n_given_x * c_geq)))


def subspace_bound_from_yield(m_mult_xn_upper: float, c_geq: float) -> float:
    """Tighter variant using a decoy upper bound on the n-photon multi-click yield."""
    m_mult_xn_upper = _check_prob(m_mult_xn_upper, "multi-click yield upper bound")
    if c_geq <= 0:
        warnings.warn("vacuous subspace bound: c_{>=N_B+1} <= 0")
        return 0.0
    return min(1.0, max(0.0, 1.0 - m_mult_xn_upper / c_geq))


def dark_count_bound(m_obs: float, c_report: SubspaceBoundReport, n_b: int) -> float:
    """`subspace_bound` on statistics that include dark counts.

    The constants are computed for the dark-free receiver; dark counts
    only increase the observation, so the identical formula is still a
    valid (strictly weaker) bound.
    """
    return subspace_bound(m_obs, c_report, n_b)


def dark_count_bound_conditioned(m_mult_given_x, p_n_given_x, c_geq) -> float:
    """`subspace_bound_conditioned` on statistics that include dark counts."""
    return subspace_bound_conditioned(m_mult_given_x, p_n_given_x, c_geq)


def dark_count_bound_from_yield(m_mult_xn_upper, c_geq) -> float:
    """`subspace_bound_from_yield` on statistics that include dark counts."""
    return subspace_bound_from_yield(m_mult_xn_upper, c_geq)


# --------------------------------------------------------------------------
# detector characterization
# --------------------------------------------------------------------------


class IllPosedCharacterizationError(RuntimeError):
    pass


def required_probe_count(n_in: int, n_out: int) -> int:
    """Minimum number of distinct coherent probes to pin down the detector.

    The reduced parametrization keeps the detected block plus an n_in-row
    loss block, minus one global phase per row and the orthonormality
    constraints; each probe contributes n_out click observations.
    """
    return math.ceil(n_in / n_out * (2 * n_out + n_in - 1) - 1)


@dataclass
class CharacterizationResult:
    matrix: ModeMatrix  # (n_out + n_in) x n_in: detected block over reduced loss block
    detected: np.ndarray
    loss: np.ndarray
    residual: float
    row_phase_ambiguous: list[bool] = field(default_factory=list)

    def padded(self) -> np.ndarray:
        """Zero-pad the reduced loss block to n_out rows (decomposition input shape)."""
        n_out, n_in = self.detected.shape
        pad = np.zeros((n_out - self.loss.shape[0], n_in), dtype=complex)
        return np.vstack([self.detected, self.loss, pad])


def characterize_detector(
    probes,
    clicks,
    p_dark: float = 0.0,
    n_starts: int = 8,
    seed: int = 20240901,
    residual_threshold: float = 1e-3,
) -> CharacterizationResult:
    """Recover the detector matrix from coherent-probe click statistics.

    Solves |sum_j G_ij alpha_j|^2 = -ln((1 - p_i) / (1 - p_dark)) for the
    detected block by multi-start nonlinear least squares, fixes each
    row's global phase (first nonzero entry real nonnegative), and
    completes the loss block so the result has exactly orthonormal
    columns.  The fit residual (RMS over all observations) is returned and
    must stay below ``residual_threshold``.
    """
    alphas = np.asarray([np.asarray(a, dtype=complex) for a in probes])
    clicks = np.asarray(clicks, dtype=float)
    n_probes, n_in = alphas.shape
    if clicks.shape[0] != n_probes:
        raise ValueError("one click row per probe required")
    n_out = clicks.shape[1]
    needed = required_probe_count(n_in, n_out)
    if n_probes < needed:
        raise ValueError(
            f"{n_probes} probes insufficient: characterization of a "
            f"{n_out}x{n_in} receiver needs at least n_states = {needed}"
        )
    if (clicks >= 1.0).any():
        raise IllPosedCharacterizationError(
            "click probability of exactly 1 observed; the implied intensity "
            "is infinite, reject the probe"
        )
    gram = np.abs(alphas @ alphas.conj().T) ** 2
    norms = np.sum(np.abs(alphas) ** 2, axis=1)
    parallel = gram > (1 - 1e-9) * np.outer(norms, norms)
    np.fill_diagonal(parallel, False)
    if parallel.any():
        raise ValueError("probes must be pairwise non-parallel")

    targets = -np.log((1.0 - clicks) / (1.0 - p_dark))  # (n_probes, n_out)

    def unpack(x):
        return (x[: n_out * n_in] + 1j * x[n_out * n_in :]).reshape(n_out, n_in)

    def residuals(x):
        gd = unpack(x)
        pred = np.abs(alphas @ gd.T) ** 2  # (n_probes, n_out)
        return (pred - targets).ravel()

    rng = np.random.default_rng(seed)
    scale = np.sqrt(max(targets.mean(), 1e-6) / max(norms.mean(), 1e-12))
    best_x, best_cost = None, np.inf
    for _ in range(max(1, n_starts)):
        x0 = scale * rng.normal(size=2 * n_out * n_in)
        fit = scipy.optimize.least_squares(residuals, x0, method="trf", xtol=1e-14,
                                           ftol=1e-14, gtol=1e-14)
        if fit.cost < best_cost:
            best_cost, best_x = fit.cost, fit.x

    gd = unpack(best_x)
    rms = float(np.sqrt(np.mean(residuals(best_x) ** 2)))
    if rms > residual_threshold:
        raise IllPosedCharacterizationError(
            f"fit residual {rms:.3e} exceeds threshold {residual_threshold:.1e}; "
            "the probe set does not determine the detector"
        )

    # loss block from orthonormal completion: Q_l^dag Q_l = 1 - G_d^dag G_d
    gap = np.eye(n_in) - gd.conj().T @ gd
    w, v = np.linalg.eigh(0.5 * (gap + gap.conj().T))
    w = np.clip(w, 0.0, None)
    q_l = (v * np.sqrt(w)) @ v.conj().T

    full = np.vstack([gd, q_l])
    ambiguous = []
    for i in range(full.shape[0]):
        row = full[i]
        nz = np.flatnonzero(np.abs(row) > 1e-12)
        if len(nz):
            phase = row[nz[0]] / abs(row[nz[0]])
            full[i] = row / phase
            ambiguous.append(i < n_out)
        else:
            ambiguous.append(False)
    # exact orthonormal columns by polar projection; the move it causes must
    # stay on the order of the fit residual itself
    q, _ = _polar_semiunitary(full)
    if np.linalg.norm(q - full) > max(1e-6, 50 * rms):
        raise IllPosedCharacterizationError(
            "recovered matrix far from any semi-unitary; characterization ill-posed"
        )
    mat = ModeMatrix(q, lossless=False, residual=rms)
    return CharacterizationResult(
        matrix=mat,
        detected=q[:n_out],
        loss=q[n_out:],
        residual=rms,
        row_phase_ambiguous=ambiguous,
    )
