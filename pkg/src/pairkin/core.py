"""Collision kinematics for binary alignment interactions.

Two mechanisms are implemented. In model 1 the two states of an interacting
pair relax exponentially toward their common midpoint and the interaction
ends after an exponentially distributed random duration. In model 2 the
states approach each other at constant unit closing speed and the
interaction ends exactly when they meet.

Both flows are written in midpoint/half-gap form: the midpoint of a pair is
never touched, only the half-gap is scaled or shrunk, so the pair sum
phi + phi_star is preserved to rounding. All downstream conservation
bookkeeping relies on this.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

__all__ = [
    "Params",
    "PairState",
    "flow_model1",
    "flow_model2",
    "collision_duration_model2",
    "jacobian_model1",
]


@dataclass(frozen=True)
class Params:
    """Rate constants shared by every solver and simulator.

    lam      pairing-rate constant (the usual lambda; renamed for the
             Python keyword), per unit mass and time
    gamma    rate at which model-1 collisions end
    epsilon  scale parameter making collisions fast and short; 1 = unscaled
    """

    lam: float = 1.0
    gamma: float = 1.0
    epsilon: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.lam) and self.lam > 0):
            raise ValueError(f"lambda > 0 required, got {self.lam}")
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError(f"gamma > 0 required, got {self.gamma}")
        if not (0 < self.epsilon <= 1):
            raise ValueError(f"0 < epsilon <= 1 required, got {self.epsilon}")


class PairState(NamedTuple):
    """States of the two members of an interacting pair."""

    phi: float
    phi_star: float


def flow_model1(p: PairState, s: float) -> PairState:
    """Advance a pair by duration s under exponential alignment.

    The half-gap contracts by e^{-s} while the midpoint stays fixed.
    Negative s runs the flow backward (pre-collisional states).
    """
    if not math.isfinite(s):
        raise ValueError(f"finite duration required, got {s}")
    m = 0.5 * (p.phi + p.phi_star)
    h = 0.5 * (p.phi - p.phi_star)
    x = math.exp(-s) * h
    return PairState(m + x, m - x)


def flow_model2(p: PairState, s: float) -> PairState:
    """Advance a pair by duration s under unit-speed alignment.

    The gap |phi - phi_star| shrinks at rate 1 until it reaches zero; after
    that both states sit at the midpoint (the flow is clamped there, the
    collision simply has ended).
    """
    if not (s >= 0):
        raise ValueError(f"s >= 0 required, got {s}")
    m = 0.5 * (p.phi + p.phi_star)
    h = 0.5 * (p.phi - p.phi_star)
    mag = abs(h) - 0.5 * s
    x = math.copysign(mag, h) if mag > 0 else 0.0
    return PairState(m + x, m - x)


def collision_duration_model2(p: PairState) -> float:
    """Time to complete alignment under the unit-speed flow: |phi - phi_star|.

    With the rescaled flow (speed 1/epsilon) the caller multiplies by epsilon.
    """
    return abs(p.phi - p.phi_star)


def jacobian_model1(s: float) -> float:
    """Volume expansion factor e^s of the model-1 collision map over duration s."""
    if not (s >= 0):
        raise ValueError(f"s >= 0 required, got {s}")
    return math.exp(s)
