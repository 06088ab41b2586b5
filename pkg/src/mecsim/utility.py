"""Per-client QoE utility: urgency, priority, switch magnitude, playable time, PSNR.

All functions are pure.  Byte counts are bytes, capacities bytes/second.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .catalog import PresentationVariant

MU_CYCLES_PER_BYTE = 30.0


@dataclass(frozen=True)
class UtilityWeights:
    theta1: float = 0.125
    theta2: float = 1.0
    theta3: float = 1.0
    theta4: float = 0.025
    omega: float = 2.0

    def __post_init__(self):
        for name in ("theta1", "theta2", "theta3", "theta4", "omega"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class Availability:
    """How a requested (segment, level) can reach the client this period.

    local_cached: held by the home MEC server.  peer_cached: one flag per
    cooperating server.  tau / o: the cache-fetch and transcode decisions.
    serve_hit: a local hit selected for delivery.
    """

    local_cached: bool = False
    peer_cached: tuple[bool, ...] = ()
    tau: bool = False
    o: bool = False
    serve_hit: bool = False

    def __post_init__(self):
        if self.tau and self.local_cached:
            raise ValueError("cannot fetch a segment that is already cached locally")
        if self.tau and self.o:
            raise ValueError("cache and transcode are mutually exclusive")

    @property
    def any_peer(self) -> bool:
        return any(self.peer_cached)

    def gate(self, literal: bool = False) -> int:
        if literal:
            return int(self.tau) + int(self.o)
        return int(self.tau) + int(self.o) + int(self.serve_hit)


def urgency(buffer_s: float, seg_duration_s: float, omega: float = 2.0) -> float:
    """exp(omega / (1 + BT/d)) - 1; equals e^omega - 1 on an empty buffer."""
    if seg_duration_s <= 0:
        raise ValueError("segment duration must be positive")
    return math.expm1(omega / (1.0 + buffer_s / seg_duration_s))


def priority(gate: int, el: float, any_peer: bool) -> float:
    """Gated urgency, doubled when no cooperating server holds the segment."""
    return gate * el * (1.0 + (0.0 if any_peer else 1.0))


def switch_magnitude(level: int, last_level: int, l_min: int, l_max: int,
                     active: bool = True) -> float:
    if l_max <= l_min:
        raise ValueError("l_max must exceed l_min")
    return int(active) * abs(level - last_level) / (l_max - l_min)


def transcode_cycles(size_bytes: float, mu: float = MU_CYCLES_PER_BYTE) -> float:
    return mu * size_bytes


def received_bytes(capacity_Bps: float, td_s: float, size: float, sent: float) -> float:
    """Bytes that reach the client in one period, clamped at the remainder."""
    return min(capacity_Bps * td_s, size - sent)


def playable_seconds(variant: PresentationVariant, nbytes: float) -> float:
    """ST(): playback time supported by the first `nbytes` bytes (whole frames)."""
    return variant.frames_complete(nbytes) / variant.frame_rate


def support_ratio(variant: PresentationVariant, phi: float, delta: float) -> float:
    return (playable_seconds(variant, phi + delta) - playable_seconds(variant, phi)) / variant.duration_s


def psnr_gain(variant: PresentationVariant, phi: float, delta: float) -> float:
    """Summed PSNR (dB) of frames newly completed by `delta` bytes after `phi`."""
    z0 = variant.frames_complete(phi)
    z1 = variant.frames_complete(phi + delta)
    return variant.cum_psnr[z1] - variant.cum_psnr[z0]


def psnr_cumulative(variant: PresentationVariant, nbytes: float) -> float:
    return variant.cum_psnr[variant.frames_complete(nbytes)]


@dataclass(frozen=True)
class UtilityTerms:
    priority: float
    support: float
    switch: float
    psnr: float

    def total(self, w: UtilityWeights) -> float:
        return (w.theta1 * self.priority + w.theta2 * self.support
                - w.theta3 * self.switch + w.theta4 * self.psnr)


def utility_terms(w: UtilityWeights, gate: int, el: float, any_peer: bool,
                  variant: PresentationVariant, last_level: int | None, n_levels: int,
                  phi: float, delta: float, cumulative_psnr: bool = False) -> UtilityTerms:
    """The four gated terms for one (client, level) candidate.

    `delta` is the byte count delivered this period (already clamped to the
    remainder); `last_level` None means no previous segment, so no switch.
    """
    if gate == 0:
        return UtilityTerms(0.0, 0.0, 0.0, 0.0)
    pr = priority(gate, el, any_peer)
    sp = gate * support_ratio(variant, phi, delta)
    rs = gate * switch_magnitude(variant.level, last_level or variant.level, 1, n_levels,
                                 active=last_level is not None)
    if cumulative_psnr:
        ps = gate * psnr_cumulative(variant, phi + delta)
    else:
        ps = gate * psnr_gain(variant, phi, delta)
    return UtilityTerms(pr, sp, rs, ps)


def utility(w: UtilityWeights, avail: Availability, el: float,
            variant: PresentationVariant, last_level: int | None, n_levels: int,
            phi: float, capacity_Bps: float, td_s: float,
            literal_gating: bool = False, cumulative_psnr: bool = False) -> float:
    """theta1*Pr + theta2*SP - theta3*RS + theta4*PSNR for one candidate level."""
    delta = received_bytes(capacity_Bps, td_s, variant.size_bytes, phi)
    terms = utility_terms(w, avail.gate(literal_gating), el, avail.any_peer, variant,
                          last_level, n_levels, phi, delta, cumulative_psnr)
    return terms.total(w)
