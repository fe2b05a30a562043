"""Bosonic-mode primitives for passive linear-optical receivers.

A receiver is described by the complex matrix ``G`` that maps incoming
signal-mode amplitudes to detector-mode amplitudes.  Everything in this
module is derived from ``G``:

* Poisson photon statistics of a phase-randomized weak coherent pulse,
* the photon-number sectors of multimode Fock space (with one canonical
  basis ordering used across the whole codebase),
* the operators induced by ``G`` on each photon-number sector, in
  particular the rank-one single-click operators of threshold detectors,
* exact click probabilities for coherent-state inputs.

Detector independence under coherent input is adopted as the channel
simulation model throughout: passive linear optics maps product coherent
states to product coherent states, so threshold detectors fire
independently.  This is exact, not an approximation, for coherent inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations

import numpy as np

__all__ = [
    "ModeMatrix",
    "FockSector",
    "PhotonDistribution",
    "poisson_pmf",
    "tail_weight",
    "sector_transform",
    "single_click_sector_operator",
    "click_pattern_operator",
    "coherent_click_probs",
]

SEMI_UNITARY_TOL = 1e-10


def poisson_pmf(mu: float, n: int) -> float:
    """Probability that a pulse of mean photon number ``mu`` carries ``n`` photons.

    Computed in log-space (via ``lgamma``) so that large ``n`` does not
    overflow the factorial.

    Raises
    ------
    ValueError
        If ``mu`` is negative or ``n`` is not a nonnegative integer.
    """
    if mu < 0:
        raise ValueError(f"intensity must be nonnegative, got {mu}")
    if n != int(n) or n < 0:
        raise ValueError(f"photon number must be a nonnegative integer, got {n}")
    n = int(n)
    if mu == 0:
        return 1.0 if n == 0 else 0.0
    return math.exp(-mu + n * math.log(mu) - math.lgamma(n + 1))


def tail_weight(mu: float, n_ph: int) -> float:
    """Probability of more than ``n_ph`` photons: ``1 - sum_{n<=n_ph} pmf(n)``.

    Clamped to [0, 1]; the partial sum is accumulated in order of
    increasing ``n`` so the result is exact at working precision.
    """
    if n_ph != int(n_ph) or n_ph < 0:
        raise ValueError(f"cutoff must be a nonnegative integer, got {n_ph}")
    partial = sum(poisson_pmf(mu, n) for n in range(int(n_ph) + 1))
    return min(1.0, max(0.0, 1.0 - partial))


@dataclass(frozen=True)
class PhotonDistribution:
    """Poisson photon-number distribution truncated at ``cutoff``."""

    intensity: float
    cutoff: int

    def __post_init__(self):
        if self.intensity < 0:
            raise ValueError("intensity must be nonnegative")
        if self.cutoff < 0:
            raise ValueError("cutoff must be nonnegative")

    def pmf(self, n: int) -> float:
        return poisson_pmf(self.intensity, n)

    @property
    def tail(self) -> float:
        return tail_weight(self.intensity, self.cutoff)


@lru_cache(maxsize=None)
def _occupation_basis(n_modes: int, n_photons: int) -> tuple[tuple[int, ...], ...]:
    """All occupation vectors with ``n_photons`` photons over ``n_modes`` modes.

    Canonical ordering: photons drain from the first mode to the last,
    i.e. (n,0,...,0) first and (0,...,0,n) last.  Every module indexes
    photon-number sectors through this ordering.
    """
    if n_modes == 1:
        return ((n_photons,),)
    out = []
    for k in range(n_photons, -1, -1):
        for rest in _occupation_basis(n_modes - 1, n_photons - k):
            out.append((k,) + rest)
    return tuple(out)


@dataclass(frozen=True)
class FockSector:
    """The ``n_photons``-photon sector of ``n_modes`` bosonic modes."""

    n_modes: int
    n_photons: int
    basis: tuple[tuple[int, ...], ...] = field(init=False)

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValueError("need at least one mode")
        if self.n_photons < 0:
            raise ValueError("photon number must be nonnegative")
        object.__setattr__(self, "basis", _occupation_basis(self.n_modes, self.n_photons))

    @property
    def dim(self) -> int:
        return math.comb(self.n_photons + self.n_modes - 1, self.n_photons)

    def index(self, occupation: tuple[int, ...]) -> int:
        return self.basis.index(tuple(occupation))


@dataclass(frozen=True)
class ModeMatrix:
    """Dense complex submatrix of a linear mode transformation.

    Rows are output (detector) modes, columns are input signal modes.
    When ``lossless`` is set the columns must be orthonormal.
    """

    entries: np.ndarray
    lossless: bool = False
    residual: float | None = None

    def __post_init__(self):
        arr = np.array(self.entries, dtype=complex)
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)
        if arr.ndim != 2:
            raise ValueError("mode matrix must be two-dimensional")
        n_out, n_in = arr.shape
        if n_in > n_out:
            raise ValueError(f"need n_in <= n_out, got {n_in} > {n_out}")
        if self.lossless:
            res = semi_unitarity_residual(arr)
            if res > SEMI_UNITARY_TOL:
                raise ValueError(
                    f"lossless mode matrix has non-orthonormal columns (residual {res:.3e})"
                )

    @property
    def n_out(self) -> int:
        return self.entries.shape[0]

    @property
    def n_in(self) -> int:
        return self.entries.shape[1]

    def to_record(self) -> dict:
        """JSON-style record: {n_in, n_out, rows: [[[re, im], ...], ...], ...}."""
        rows = [[[float(z.real), float(z.imag)] for z in row] for row in self.entries]
        rec = {
            "n_in": self.n_in,
            "n_out": self.n_out,
            "rows": rows,
            "lossless": bool(self.lossless),
        }
        if self.residual is not None:
            rec["residual"] = float(self.residual)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "ModeMatrix":
        rows = np.array(
            [[complex(re, im) for re, im in row] for row in rec["rows"]], dtype=complex
        )
        if rows.shape != (rec["n_out"], rec["n_in"]):
            raise ValueError("record shape fields disagree with row data")
        return cls(rows, lossless=rec.get("lossless", False), residual=rec.get("residual"))


def semi_unitarity_residual(g: np.ndarray) -> float:
    """Frobenius norm of G'G - 1 (zero for orthonormal columns)."""
    g = np.asarray(g, dtype=complex)
    return float(np.linalg.norm(g.conj().T @ g - np.eye(g.shape[1])))


def _as_array(g) -> np.ndarray:
    if isinstance(g, ModeMatrix):
        return g.entries
    return np.asarray(g, dtype=complex)


def sector_transform(g, n_photons: int) -> np.ndarray:
    """Matrix of the mode transformation on the ``n_photons``-photon sector.

    Maps the input sector (``n_in`` modes) to the output sector
    (``n_out`` modes) in the canonical occupation bases.  For a
    semi-unitary ``g`` the result is an isometry.

    The entry for output occupation ``K`` and input occupation ``k`` is
    the coefficient of the monomial ``prod_i x_i^{K_i}`` in
    ``prod_j (sum_i g_ij x_i)^{k_j}`` times ``sqrt(prod K! / prod k!)``.
    """
    g = _as_array(g)
    n_out, n_in = g.shape
    sec_in = FockSector(n_in, n_photons)
    sec_out = FockSector(n_out, n_photons)
    out_index = {occ: a for a, occ in enumerate(sec_out.basis)}
    s = np.zeros((sec_out.dim, sec_in.dim), dtype=complex)
    for b, k_in in enumerate(sec_in.basis):
        # polynomial in the output-mode symbols, keyed by occupation tuple
        poly = {(0,) * n_out: 1.0 + 0.0j}
        for j, kj in enumerate(k_in):
            for _ in range(kj):
                nxt: dict[tuple[int, ...], complex] = {}
                for occ, coef in poly.items():
                    for i in range(n_out):
                        gij = g[i, j]
                        if gij == 0:
                            continue
                        new = list(occ)
                        new[i] += 1
                        key = tuple(new)
                        nxt[key] = nxt.get(key, 0.0) + coef * gij
                poly = nxt
        # coefficient of prod (c_i^dag)^{K_i} times (c^dag)^K |0> = sqrt(K!)|K>,
        # all over the input normalization sqrt(prod k_j!)
        norm_in = math.sqrt(math.prod(math.factorial(x) for x in k_in))
        for occ, coef in poly.items():
            norm_out = math.sqrt(math.prod(math.factorial(x) for x in occ))
            s[out_index[occ], b] = coef * norm_out / norm_in
    return s


def single_click_sector_operator(g, detector: int, n_photons: int) -> np.ndarray:
    """Rank-one operator for a single click in ``detector`` on the n-photon sector.

    ``detector`` is 1-based.  The operator acts on the input sector
    ``FockSector(n_in, n_photons)`` and equals ``|w><w|`` with

        w_k = sqrt(n! / prod_j k_j!) * prod_j conj(g[detector, j])^{k_j}

    so its trace is ``(sum_j |g_ij|^2)^n``.
    """
    g = _as_array(g)
    n_out, n_in = g.shape
    if not 1 <= detector <= n_out:
        raise ValueError(f"detector index {detector} outside 1..{n_out}")
    if n_photons < 1:
        raise ValueError("single-click operators need at least one photon")
    row = g[detector - 1]
    sec = FockSector(n_in, n_photons)
    w = np.zeros(sec.dim, dtype=complex)
    for b, k in enumerate(sec.basis):
        amp = math.sqrt(
            math.factorial(n_photons) / math.prod(math.factorial(x) for x in k)
        )
        w[b] = amp * math.prod(np.conj(row[j]) ** k[j] for j in range(n_in))
    return np.outer(w, w.conj())


def click_pattern_operator(g, detectors: frozenset | set | tuple, n_photons: int) -> np.ndarray:
    """Operator on the input n-photon sector for clicks in exactly ``detectors``.

    ``detectors`` holds 1-based detector indices.  Assumes a lossless
    (semi-unitary) ``g``; the returned operators over all patterns resolve
    the identity on the sector.  The empty pattern is only possible for
    ``n_photons = 0``.
    """
    g = _as_array(g)
    n_out, n_in = g.shape
    dets = frozenset(int(d) for d in detectors)
    if any(not 1 <= d <= n_out for d in dets):
        raise ValueError("detector index outside range")
    if n_photons == 0:
        dim = FockSector(n_in, 0).dim
        return np.eye(dim, dtype=complex) if not dets else np.zeros((dim, dim), dtype=complex)
    if not dets:
        return np.zeros((FockSector(n_in, n_photons).dim,) * 2, dtype=complex)
    s = sector_transform(g, n_photons)
    sec_out = FockSector(n_out, n_photons)
    rows = [
        a
        for a, occ in enumerate(sec_out.basis)
        if frozenset(i + 1 for i, x in enumerate(occ) if x > 0) == dets
    ]
    block = s[rows, :]
    return block.conj().T @ block


def coherent_click_probs(g, alpha: np.ndarray, p_dark: float = 0.0) -> np.ndarray:
    """Per-detector threshold-click probabilities for a coherent input.

    The input amplitude vector ``alpha`` is routed through ``g`` to give
    detector amplitudes ``beta = g @ alpha``; detector ``i`` clicks with
    probability ``1 - (1 - p_dark) exp(-|beta_i|^2)``, independently of
    the others.
    """
    g = _as_array(g)
    alpha = np.asarray(alpha, dtype=complex)
    if alpha.shape != (g.shape[1],):
        raise ValueError(
            f"amplitude vector has length {alpha.shape}, expected ({g.shape[1]},)"
        )
    if not 0 <= p_dark < 1:
        raise ValueError("dark-count probability must lie in [0, 1)")
    beta = g @ alpha
    return 1.0 - (1.0 - p_dark) * np.exp(-np.abs(beta) ** 2)


def click_pattern_probs(click_probs: np.ndarray) -> dict[frozenset, float]:
    """Exact probabilities of every click pattern for independent detectors."""
    p = np.asarray(click_probs, dtype=float)
    n = len(p)
    out: dict[frozenset, float] = {}
    for r in range(n + 1):
        for subset in combinations(range(n), r):
            s = set(subset)
            prob = 1.0
            for i in range(n):
                prob *= p[i] if i in s else 1.0 - p[i]
            out[frozenset(i + 1 for i in s)] = prob
    return out
