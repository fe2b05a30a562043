"""Closed-form honest-channel statistics.

Coherent pulses stay coherent through loss, misalignment, and passive
linear-optical receivers, so every click probability has a closed form
and no Monte Carlo is involved: the generated statistics are exactly
reproducible.

Noise model (configuration-visible): misalignment is a polarization
rotation by a fixed angle applied before the receiver; depolarization
mixes the click statistics with those of the same-intensity pulse
averaged over the six polarization axis states (an exact 2-design average
on the single-photon sector); dark counts act independently per detector;
per-detector efficiencies fold into the receiver as extra loss on the
detector rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fock
from .decoy import IntensityPlan, ObservedStats
from .protocols import SIGNAL_VECTORS, ProtocolSpec

__all__ = ["ChannelModel", "simulate_stats", "sifted_leak_terms", "leak_from_stats",
           "single_photon_yields", "binary_entropy"]


@dataclass(frozen=True)
class ChannelModel:
    distance_km: float = 0.0
    loss_db_per_km: float = 0.2
    misalignment_deg: float = 0.0
    depolarization: float = 0.0
    dark_count: float = 0.0
    detector_efficiencies: tuple | None = None

    def __post_init__(self):
        if self.distance_km < 0:
            raise ValueError("distance must be nonnegative")
        if not 0 <= self.depolarization <= 1:
            raise ValueError("depolarization must be a probability")
        if not 0 <= self.dark_count < 1:
            raise ValueError("dark count must lie in [0, 1)")

    @property
    def transmittance(self) -> float:
        return 10 ** (-self.loss_db_per_km * self.distance_km / 10)


_AXIS_STATES = ["H", "V", "D", "A", "R", "L"]


def _rotation(theta_rad: float) -> np.ndarray:
    c, s = math.cos(theta_rad), math.sin(theta_rad)
    return np.array([[c, -s], [s, c]], dtype=complex)


def _efficiency_scale(channel: ChannelModel, n_det: int) -> np.ndarray:
    if channel.detector_efficiencies is None:
        return np.ones(n_det)
    eff = np.asarray(channel.detector_efficiencies, dtype=float)
    if eff.shape != (n_det,):
        raise ValueError(f"need {n_det} detector efficiencies")
    if (eff <= 0).any() or (eff > 1).any():
        raise ValueError("detector efficiencies must lie in (0, 1]")
    return eff


def _bb84_outcome_probs(protocol, amplitude, channel) -> dict:
    """Outcome distribution of the active receiver for one arriving pulse."""
    eff = _efficiency_scale(channel, 2)
    out = {y: 0.0 for y in protocol.outcomes}
    for b, rot in protocol.active_bases.items():
        p_b = protocol.basis_probs[b]
        beta = rot @ amplitude
        clicks = 1.0 - (1.0 - channel.dark_count) * np.exp(-eff * np.abs(beta) ** 2)
        p0, p1 = clicks
        none = (1 - p0) * (1 - p1)
        both = p0 * p1
        out["vac"] += p_b * none
        # double clicks map to a uniform random bit in the measured basis
        out[f"{b}0"] += p_b * (p0 * (1 - p1) + both / 2)
        out[f"{b}1"] += p_b * ((1 - p0) * p1 + both / 2)
    return out


def _bb84_multi_click(protocol, amplitude, channel) -> float:
    eff = _efficiency_scale(channel, 2)
    total = 0.0
    for b, rot in protocol.active_bases.items():
        beta = rot @ amplitude
        clicks = 1.0 - (1.0 - channel.dark_count) * np.exp(-eff * np.abs(beta) ** 2)
        total += protocol.basis_probs[b] * clicks[0] * clicks[1]
    return total


_SIX_PAIRS = {frozenset({1, 2}): "dcZ", frozenset({3, 4}): "dcX", frozenset({5, 6}): "dcY"}


def _sixstate_outcome_probs(protocol, amplitude, channel):
    g = protocol.detector_matrix.entries
    eff = _efficiency_scale(channel, g.shape[0])
    beta = g @ amplitude
    clicks = 1.0 - (1.0 - channel.dark_count) * np.exp(-eff * np.abs(beta) ** 2)
    patterns = fock.click_pattern_probs(clicks)
    out = {y: 0.0 for y in protocol.outcomes}
    m_mult = 0.0
    for pattern, prob in patterns.items():
        if not pattern:
            out["vac"] += prob
        elif len(pattern) == 1:
            (i,) = pattern
            out[protocol.signals[i - 1]] += prob
        else:
            m_mult += prob
            out[_SIX_PAIRS.get(pattern, "cc")] += prob
    return out, m_mult


def _blend(base: dict, mix: dict, q: float) -> dict:
    return {k: (1 - q) * base[k] + q * mix[k] for k in base}


def simulate_stats(
    protocol: ProtocolSpec, plan: IntensityPlan, channel: ChannelModel
) -> ObservedStats:
    """Exact conditional outcome statistics for every (setting, signal) pair."""
    theta = math.radians(channel.misalignment_deg)
    rot = _rotation(theta)
    eta = channel.transmittance
    q_dep = channel.depolarization

    def outcome_probs(amplitude):
        if protocol.active_bases is not None:
            return (
                _bb84_outcome_probs(protocol, amplitude, channel),
                _bb84_multi_click(protocol, amplitude, channel),
            )
        return _sixstate_outcome_probs(protocol, amplitude, channel)

    gamma = {}
    m_mult = {}
    for setting, intensities in plan.settings():
        for x in protocol.signals:
            mu = intensities[x]
            scale = math.sqrt(mu * eta)
            arriving = scale * (rot @ SIGNAL_VECTORS[x])
            probs, mult = outcome_probs(arriving)
            if q_dep > 0:
                mixes = [outcome_probs(scale * SIGNAL_VECTORS[u]) for u in _AXIS_STATES]
                mix = {
                    y: sum(m[0][y] for m in mixes) / len(mixes) for y in probs
                }
                mult_mix = sum(m[1] for m in mixes) / len(mixes)
                probs = _blend(probs, mix, q_dep)
                mult = (1 - q_dep) * mult + q_dep * mult_mix
            for y, v in probs.items():
                gamma[(setting, x, y)] = v
            if setting == "signal":
                m_mult[x] = mult
    return ObservedStats(
        gamma=gamma,
        m_mult=m_mult,
        settings=[s for s, _ in plan.settings()],
        signals=list(protocol.signals),
        outcomes=list(protocol.outcomes),
    )


def binary_entropy(e: float) -> float:
    if e <= 0 or e >= 1:
        return 0.0
    return -e * math.log2(e) - (1 - e) * math.log2(1 - e)


@dataclass
class LeakTerms:
    p_pass: float
    conditional_entropy: float  # H(bit_A | bit_B) on the sifted distribution, bits
    qber: dict = field(default_factory=dict)  # per key basis
    f_ec: float = 1.0

    @property
    def delta_leak(self) -> float:
        """Error-correction leakage per channel use (Shannon-limit f_EC by default)."""
        return self.p_pass * self.f_ec * self.conditional_entropy


def leak_from_stats(
    protocol: ProtocolSpec, plan: IntensityPlan, stats: ObservedStats, f_ec: float = 1.0
) -> LeakTerms:
    """Sifted-key error-correction quantities under the signal setting.

    p_pass is the probability that a round is sifted into the key (matched
    announced bases, conclusive outcome).  The conditional entropy is
    evaluated on the joint sifted bit distribution; an empty sift gives
    p_pass = 0 and zero leakage.
    """
    p_x = plan.signal_probs
    joint = np.zeros((2, 2))
    qber = {}
    basis_pass = {}
    for x in protocol.signals:
        b = protocol.basis_of_signal[x]
        a_bit = protocol.bit_of_signal[x]
        for y in protocol.keyed_outcomes(b):
            w = p_x[x] * stats.gamma[("signal", x, y)]
            joint[a_bit, protocol.bit_of_outcome[y]] += w
            basis_pass.setdefault(b, [0.0, 0.0])
            basis_pass[b][0] += w
            if protocol.bit_of_outcome[y] != a_bit:
                basis_pass[b][1] += w
    p_pass = float(joint.sum())
    if p_pass <= 0:
        return LeakTerms(p_pass=0.0, conditional_entropy=0.0, qber={}, f_ec=f_ec)
    for b, (tot, err) in basis_pass.items():
        qber[b] = err / tot if tot > 0 else 0.0
    sifted = joint / p_pass
    pb = sifted.sum(axis=0)
    h_joint = -sum(v * math.log2(v) for v in sifted.ravel() if v > 0)
    h_b = -sum(v * math.log2(v) for v in pb if v > 0)
    return LeakTerms(
        p_pass=p_pass, conditional_entropy=h_joint - h_b, qber=qber, f_ec=f_ec
    )


def sifted_leak_terms(
    protocol: ProtocolSpec,
    plan: IntensityPlan,
    channel: ChannelModel,
    f_ec: float = 1.0,
) -> LeakTerms:
    return leak_from_stats(protocol, plan, simulate_stats(protocol, plan, channel), f_ec)


def single_photon_yields(protocol: ProtocolSpec, channel: ChannelModel) -> dict:
    """Exact yields for a deterministic single-photon source (solver sanity path).

    The photon survives with the channel transmittance; misalignment
    rotates its polarization; no dark counts or depolarization here.
    Returns {(x, y): probability}.
    """
    theta = math.radians(channel.misalignment_deg)
    rot = _rotation(theta)
    eta = channel.transmittance
    yields = {}
    for x in protocol.signals:
        v = rot @ SIGNAL_VECTORS[x]
        probs = {y: 0.0 for y in protocol.outcomes}
        probs["vac"] = 1 - eta
        if protocol.active_bases is not None:
            for b, brot in protocol.active_bases.items():
                amp = brot @ v
                p_b = protocol.basis_probs[b]
                probs[f"{b}0"] += eta * p_b * abs(amp[0]) ** 2
                probs[f"{b}1"] += eta * p_b * abs(amp[1]) ** 2
        else:
            g = protocol.detector_matrix.entries
            amp = g @ v
            for i, label in enumerate(protocol.signals):
                probs[label] += eta * abs(amp[i]) ** 2
        for y, val in probs.items():
            yields[(x, y)] = val
    return yields
