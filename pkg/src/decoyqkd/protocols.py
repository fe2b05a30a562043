"""Protocol definitions: POVMs, key maps, and source states.

Two protocols ship: active unbiased-or-biased BB84 with the qubit
squashing model (3-dimensional receiver space: vacuum + polarization
qubit), and the passive six-state analyzer with a flag-state squasher
(the photon-number subspace up to ``n_b`` kept intact, higher photon
numbers replaced by ten orthogonal classical flags: six single-click,
three double-click, one cross-click).

Alice is described by source-replacement measurements.  BB84 keeps the
full four-dimensional register; the six-state source is reduced to the
two-dimensional support of the entangled source state (the reduction is
recomputed for any conditional signal distribution, which is what makes
differing signal intensities work).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fock
from .fock import FockSector, ModeMatrix

__all__ = [
    "ProtocolSpec",
    "AliceObjects",
    "bb84_spec",
    "sixstate_spec",
    "signal_state",
    "signal_overlap",
    "SIGNAL_VECTORS",
]

# polarization Jones vectors; detector i of the passive analyzers catches
# exactly the matching signal
SIGNAL_VECTORS = {
    "H": np.array([1.0, 0.0], dtype=complex),
    "V": np.array([0.0, 1.0], dtype=complex),
    "D": np.array([1.0, 1.0], dtype=complex) / math.sqrt(2),
    "A": np.array([1.0, -1.0], dtype=complex) / math.sqrt(2),
    "R": np.array([1.0, -1.0j], dtype=complex) / math.sqrt(2),
    "L": np.array([1.0, 1.0j], dtype=complex) / math.sqrt(2),
}


def signal_state(x: str, n: int) -> np.ndarray:
    """n-photon pure state (a_x^dag)^n / sqrt(n!) |0> in the two-mode basis.

    For n = 0 every signal is the (one-dimensional) vacuum.
    """
    if x not in SIGNAL_VECTORS:
        raise ValueError(f"unknown signal label {x!r}")
    if n < 0:
        raise ValueError("photon number must be nonnegative")
    v = SIGNAL_VECTORS[x]
    sec = FockSector(2, n)
    out = np.zeros(sec.dim, dtype=complex)
    for b, (k1, k2) in enumerate(sec.basis):
        out[b] = (
            math.sqrt(math.factorial(n) / (math.factorial(k1) * math.factorial(k2)))
            * v[0] ** k1
            * v[1] ** k2
        )
    return out


def signal_overlap(x_bra: str, x_ket: str, n: int) -> complex:
    """<psi^(x_bra, n) | psi^(x_ket, n)> = (<v_bra|v_ket>)^n."""
    return complex(np.vdot(SIGNAL_VECTORS[x_bra], SIGNAL_VECTORS[x_ket])) ** n


@dataclass
class AliceObjects:
    """Source-replacement data conditioned on a signal distribution."""

    dim: int
    povm: dict  # x -> Hermitian PSD on the (possibly reduced) Alice space
    sigma: np.ndarray  # reduced source state the feasible set must reproduce


@dataclass
class ProtocolSpec:
    name: str
    signals: list
    outcomes: list
    bob_povm: dict  # y -> Hermitian PSD on the squashed receiver space
    basis_probs: dict
    basis_of_signal: dict
    bit_of_signal: dict
    basis_of_outcome: dict  # y -> basis label or None (vac / cross flags)
    bit_of_outcome: dict
    multi_click_outcomes: list
    d_b: int
    n_b: int | None
    alice_reduction: str  # "none" | "schmidt"
    detector_matrix: ModeMatrix | None = None
    subspace_projector: np.ndarray | None = None
    active_bases: dict | None = None  # basis -> 2x2 receiver rotation (active BB84)
    signal_probs: dict = field(default_factory=dict)

    # ----- source side ---------------------------------------------------
    def signal_state(self, x, n):
        if x not in self.signals:
            raise ValueError(f"{x!r} is not a signal of {self.name}")
        return signal_state(x, n)

    def sigma_gram(self, q: dict, n: int = 1) -> np.ndarray:
        """sigma_A in the unreduced basis: sqrt(q_x q_x') <psi^x'|psi^x>^(n)."""
        xs = self.signals
        mat = np.zeros((len(xs), len(xs)), dtype=complex)
        for a, xa in enumerate(xs):
            for b, xb in enumerate(xs):
                mat[a, b] = math.sqrt(q[xa] * q[xb]) * signal_overlap(xb, xa, n)
        return mat

    def alice_objects(self, q: dict, n: int = 1) -> AliceObjects:
        """Alice POVM and reduced state for conditional probabilities ``q``.

        ``q[x]`` is Pr(x | n photons).  With the full register the POVM is
        {|x><x|}; with Schmidt reduction the register is replaced by the
        support of the source state, and the pulled-back POVM elements are
        q_x S^{-1/2} |psi_x*><psi_x*| S^{-1/2} in the eigenbasis of the
        weighted signal mix (S its eigenvalue matrix).
        """
        if abs(sum(q[x] for x in self.signals) - 1.0) > 1e-9:
            raise ValueError("conditional signal probabilities must sum to 1")
        if self.alice_reduction == "none":
            dim = len(self.signals)
            povm = {}
            for a, x in enumerate(self.signals):
                e = np.zeros((dim, dim), dtype=complex)
                e[a, a] = 1.0
                povm[x] = e
            return AliceObjects(dim=dim, povm=povm, sigma=self.sigma_gram(q, n))

        # schmidt reduction on the n-photon sector
        states = {x: self.signal_state(x, n) for x in self.signals}
        d_sig = FockSector(2, n).dim
        rho = np.zeros((d_sig, d_sig), dtype=complex)
        for x in self.signals:
            rho += q[x] * np.outer(states[x], states[x].conj())
        w, v = np.linalg.eigh(rho)
        keep = w > 1e-14
        w, v = w[keep][::-1], v[:, keep][:, ::-1]
        dim = len(w)
        inv_sqrt = 1.0 / np.sqrt(w)
        povm = {}
        for x in self.signals:
            coords = v.conj().T @ states[x]  # components in the eigenbasis
            tilde = np.conj(coords) * inv_sqrt  # S^{-1/2} |psi_x*>
            povm[x] = q[x] * np.outer(tilde, tilde.conj())
        # completeness holds by construction:
        # sum_x q_x conj(coords) conj(coords)^dag = conj(V^dag rho V) = diag(w)
        sigma = np.diag(w).astype(complex)
        return AliceObjects(dim=dim, povm=povm, sigma=sigma)

    # ----- joint observables and key map ---------------------------------
    def gamma_ops(self, alice: AliceObjects) -> dict:
        """Joint POVM elements F_x^A (x) F_y^B on the A (x) B space."""
        return {
            (x, y): np.kron(alice.povm[x], self.bob_povm[y])
            for x in self.signals
            for y in self.outcomes
        }

    def keyed_outcomes(self, basis) -> list:
        return [
            y
            for y in self.outcomes
            if self.basis_of_outcome.get(y) == basis
            and self.bit_of_outcome.get(y) is not None
        ]

    def kraus_and_pinching(self, alice: AliceObjects):
        """Announcement/key-map Kraus operators and the key-bit pinching.

        One Kraus operator per basis: Alice's bit is coherently copied to
        the key register R, the matched-basis detection filter acts on
        Bob, and the basis announcement goes to a classical register C.
        The pinching projects onto the two key-bit values.
        """
        bases = sorted(self.basis_probs)
        d_a, d_b, n_c = alice.dim, self.d_b, len(bases)
        kraus = []
        for ci, b in enumerate(bases):
            bob_tot = np.zeros((d_b, d_b), dtype=complex)
            for y in self.keyed_outcomes(b):
                bob_tot += self.bob_povm[y]
            bob_sqrt = _psd_sqrt(bob_tot)
            cvec = np.zeros((n_c, 1), dtype=complex)
            cvec[ci, 0] = 1.0
            k = np.zeros((2 * d_a * d_b * n_c, d_a * d_b), dtype=complex)
            for bit in (0, 1):
                xs = [
                    x
                    for x in self.signals
                    if self.basis_of_signal[x] == b and self.bit_of_signal[x] == bit
                ]
                if not xs:
                    continue
                a_sqrt = _psd_sqrt(sum(alice.povm[x] for x in xs))
                rvec = np.zeros((2, 1), dtype=complex)
                rvec[bit, 0] = 1.0
                k += np.kron(rvec, np.kron(a_sqrt, np.kron(bob_sqrt, cvec)))
            kraus.append(k)
        dim_rest = d_a * d_b * n_c
        z1 = np.kron(np.diag([1.0, 0.0]), np.eye(dim_rest)).astype(complex)
        z2 = np.kron(np.diag([0.0, 1.0]), np.eye(dim_rest)).astype(complex)
        return kraus, [z1, z2]


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (mat + mat.conj().T))
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T


# --------------------------------------------------------------------------
# BB84
# --------------------------------------------------------------------------


def bb84_spec(p_z: float, p_x: float) -> ProtocolSpec:
    """Active BB84 with the qubit squashing model.

    Receiver space: vacuum + polarization qubit (dimension 3, vacuum
    first).  Double clicks are mapped to a uniform random bit in the
    measured basis by the statistics generator, as the squashing model
    requires; the POVM set here is the squashed one.
    """
    if not (0 <= p_z <= 1 and 0 <= p_x <= 1) or abs(p_z + p_x - 1) > 1e-12:
        raise ValueError("basis probabilities must be in [0,1] and sum to 1")
    qubit = {
        ("Z", 0): np.diag([1.0, 0.0]),
        ("Z", 1): np.diag([0.0, 1.0]),
        ("X", 0): 0.5 * np.array([[1, 1], [1, 1]]),
        ("X", 1): 0.5 * np.array([[1, -1], [-1, 1]]),
    }
    prob = {"Z": p_z, "X": p_x}
    bob = {}
    for (b, bit), blk in qubit.items():
        m = np.zeros((3, 3), dtype=complex)
        m[1:, 1:] = prob[b] * blk
        bob[f"{b}{bit}"] = m
    bob["vac"] = np.diag([1.0, 0.0, 0.0]).astype(complex)

    signals = ["H", "V", "D", "A"]
    outcomes = ["Z0", "Z1", "X0", "X1", "vac"]
    basis_of_signal = {"H": "Z", "V": "Z", "D": "X", "A": "X"}
    bit_of_signal = {"H": 0, "V": 1, "D": 0, "A": 1}
    basis_of_outcome = {"Z0": "Z", "Z1": "Z", "X0": "X", "X1": "X", "vac": None}
    bit_of_outcome = {"Z0": 0, "Z1": 1, "X0": 0, "X1": 1, "vac": None}
    active = {
        "Z": np.eye(2, dtype=complex),
        "X": np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2),
    }
    return ProtocolSpec(
        name="bb84",
        signals=signals,
        outcomes=outcomes,
        bob_povm=bob,
        basis_probs=prob,
        basis_of_signal=basis_of_signal,
        bit_of_signal=bit_of_signal,
        basis_of_outcome=basis_of_outcome,
        bit_of_outcome=bit_of_outcome,
        multi_click_outcomes=[],
        d_b=3,
        n_b=None,
        alice_reduction="none",
        active_bases=active,
        signal_probs={x: prob[basis_of_signal[x]] / 2 for x in signals},
    )


# --------------------------------------------------------------------------
# passive six-state with flag-state squasher
# --------------------------------------------------------------------------

_SIX_DETECTORS = ["H", "V", "D", "A", "R", "L"]
_SIX_BASIS_PAIRS = {"Z": (1, 2), "X": (3, 4), "Y": (5, 6)}


def six_state_detector_matrix(p_hv, p_ad, p_rl) -> ModeMatrix:
    g = np.array(
        [
            [math.sqrt(p_hv), 0],
            [0, math.sqrt(p_hv)],
            [math.sqrt(p_ad / 2), math.sqrt(p_ad / 2)],
            [math.sqrt(p_ad / 2), -math.sqrt(p_ad / 2)],
            [math.sqrt(p_rl / 2), 1j * math.sqrt(p_rl / 2)],
            [math.sqrt(p_rl / 2), -1j * math.sqrt(p_rl / 2)],
        ],
        dtype=complex,
    )
    return ModeMatrix(g, lossless=True)


def sixstate_spec(p_hv: float, p_ad: float, p_rl: float, n_b: int = 1) -> ProtocolSpec:
    """Passive six-state analyzer with a flag-state squasher.

    Receiver space: photon-number sectors 0..n_b of the two polarization
    modes (kept intact) plus ten orthogonal flags, ordered single-click
    H,V,D,A,R,L then double-click Z,X,Y then cross-click.  The subspace
    part of every POVM element is generated from the detector matrix via
    the sector click operators; for n_b = 1 this reproduces the vacuum +
    qubit block structure.
    """
    if min(p_hv, p_ad, p_rl) < 0 or abs(p_hv + p_ad + p_rl - 1) > 1e-12:
        raise ValueError("basis probabilities must be nonnegative and sum to 1")
    if n_b < 1:
        raise ValueError("photon cut-off must be >= 1")
    gmat = six_state_detector_matrix(p_hv, p_ad, p_rl)
    g = gmat.entries
    sector_dims = [FockSector(2, n).dim for n in range(n_b + 1)]
    sub_dim = sum(sector_dims)
    n_flags = 10
    d_b = sub_dim + n_flags
    offs = np.cumsum([0] + sector_dims)

    def embed(sector_blocks, flag=None):
        m = np.zeros((d_b, d_b), dtype=complex)
        for n, blk in sector_blocks:
            o = offs[n]
            m[o : o + sector_dims[n], o : o + sector_dims[n]] = blk
        if flag is not None:
            m[sub_dim + flag, sub_dim + flag] = 1.0
        return m

    from itertools import combinations

    bob = {}
    for i, label in enumerate(_SIX_DETECTORS, start=1):
        blocks = [
            (n, fock.single_click_sector_operator(g, i, n)) for n in range(1, n_b + 1)
        ]
        bob[label] = embed(blocks, flag=i - 1)
    pair_sets = {b: frozenset(p) for b, p in _SIX_BASIS_PAIRS.items()}
    for fi, (b, pair) in enumerate(_SIX_BASIS_PAIRS.items()):
        blocks = [
            (n, fock.click_pattern_operator(g, pair, n)) for n in range(2, n_b + 1)
        ]
        bob[f"dc{b}"] = embed(blocks, flag=6 + fi)
    cc_blocks = []
    for n in range(2, n_b + 1):
        total = np.zeros((sector_dims[n],) * 2, dtype=complex)
        for r in range(2, 7):
            for dets in combinations(range(1, 7), r):
                if frozenset(dets) in pair_sets.values():
                    continue
                total += fock.click_pattern_operator(g, dets, n)
        cc_blocks.append((n, total))
    bob["cc"] = embed(cc_blocks, flag=9)
    bob["vac"] = embed([(0, np.eye(1, dtype=complex))])

    signals = list(_SIX_DETECTORS)
    outcomes = signals + ["dcZ", "dcX", "dcY", "cc", "vac"]
    basis_of_signal = {"H": "Z", "V": "Z", "D": "X", "A": "X", "R": "Y", "L": "Y"}
    bit_of_signal = {"H": 0, "V": 1, "D": 0, "A": 1, "R": 0, "L": 1}
    basis_of_outcome = dict(basis_of_signal)
    basis_of_outcome.update({"dcZ": None, "dcX": None, "dcY": None, "cc": None, "vac": None})
    bit_of_outcome = dict(bit_of_signal)
    bit_of_outcome.update({"dcZ": None, "dcX": None, "dcY": None, "cc": None, "vac": None})
    proj = np.zeros((d_b, d_b), dtype=complex)
    proj[:sub_dim, :sub_dim] = np.eye(sub_dim)
    prob = {"Z": p_hv, "X": p_ad, "Y": p_rl}
    return ProtocolSpec(
        name="sixstate",
        signals=signals,
        outcomes=outcomes,
        bob_povm=bob,
        basis_probs=prob,
        basis_of_signal=basis_of_signal,
        bit_of_signal=bit_of_signal,
        basis_of_outcome=basis_of_outcome,
        bit_of_outcome=bit_of_outcome,
        multi_click_outcomes=["dcZ", "dcX", "dcY", "cc"],
        d_b=d_b,
        n_b=n_b,
        alice_reduction="schmidt",
        detector_matrix=gmat,
        subspace_projector=proj,
        signal_probs={x: prob[basis_of_signal[x]] / 2 for x in signals},
    )
