"""Choke-point calibration of Wi-Fi device counts.

Two adaptive schemes learn a multiplicative coefficient ``a`` from the
choke-point pair (device count, camera total) and apply it to every zone:

* proportional: ``a = y0 / d0`` from the current window only;
* adaptive linear: least squares through the origin over the latest ``q``
  windows, ``a = sum(x*y) / sum(x*x)``.

Coefficients are kept as exact rationals so that ``a * d0`` reproduces the
camera total bit-exactly and scaling identities hold without rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from fractions import Fraction
from typing import Optional, Sequence

from .core import TimeWindow, WindowMeasurement

DEFAULT_Q = 10


class Algorithm(str, Enum):
    PROPORTIONAL = "proportional"
    ADAPTIVE_LINEAR = "adaptive_linear"


@dataclass(frozen=True)
class TrainingPoint:
    x: int  # choke-point device count d0
    y: int  # choke-point camera total y0
    window_index: int


@dataclass(frozen=True)
class CalibrationState:
    mode: Algorithm
    q: int = DEFAULT_Q
    training: tuple[TrainingPoint, ...] = ()
    coefficient: Optional[Fraction] = None

    def __post_init__(self):
        if not isinstance(self.mode, Algorithm):
            object.__setattr__(self, "mode", Algorithm(self.mode))
        if self.q < 1:
            raise ValueError("q must be a positive integer")
        if len(self.training) > self.q:
            raise ValueError("training set larger than q")
        if self.coefficient is not None and self.coefficient < 0:
            raise ValueError("coefficient must be non-negative")

    @property
    def coefficient_valid(self) -> bool:
        return self.coefficient is not None

    def with_mode(self, mode: Algorithm | str, q: int | None = None) -> "CalibrationState":
        """Fresh state for ``mode``; nothing carries over from the previous mode."""
        return CalibrationState(mode=Algorithm(mode), q=self.q if q is None else q)

    @property
    def label(self) -> str:
        if self.mode is Algorithm.PROPORTIONAL:
            return "proportional"
        return f"adaptive_linear_q{self.q}"


@dataclass(frozen=True)
class ZoneEstimate:
    zone_id: str
    window: TimeWindow
    raw_count: int
    calibrated: float
    algorithm: str
    coefficient_used: Optional[float]
    fallback: bool
    is_choke_point: bool = False

    @property
    def rounded(self) -> int:
        # round half up; calibrated is never negative
        return int(math.floor(self.calibrated + 0.5))


def proportional_coefficient(d0: int, y0: int) -> Optional[Fraction]:
    """``y0 / d0``, or None when ``d0 == 0`` (caller keeps the previous coefficient)."""
    if d0 < 0 or y0 < 0:
        raise ValueError("counts must be non-negative")
    if d0 == 0:
        return None
    return Fraction(y0) / Fraction(d0)


def linear_coefficient(points: Sequence[TrainingPoint] | Sequence[tuple]) -> Optional[Fraction]:
    """Slope of the least-squares line through the origin, None when all x are zero."""
    sxy = Fraction(0)
    sxx = Fraction(0)
    for p in points:
        x, y = (p.x, p.y) if isinstance(p, TrainingPoint) else p
        x, y = Fraction(x), Fraction(y)
        sxy += x * y
        sxx += x * x
    if sxx == 0:
        return None
    return sxy / sxx


def update_and_calibrate(state: CalibrationState, choke: WindowMeasurement,
                         others: Sequence[WindowMeasurement]) -> tuple[CalibrationState, list[ZoneEstimate]]:
    """Advance calibration by one window and calibrate every zone.

    The choke-point zone itself is included first in the returned estimates.
    While no valid coefficient exists the raw count is published with
    ``fallback=True``.
    """
    if choke.camera_total is None:
        raise ValueError("choke-point measurement must carry a camera total")
    for m in others:
        if m.window != choke.window:
            raise ValueError(f"measurement for zone {m.zone_id} belongs to window "
                             f"{m.window.index}, expected {choke.window.index}")
    d0, y0 = choke.device_count, choke.camera_total

    if state.mode is Algorithm.PROPORTIONAL:
        a = proportional_coefficient(d0, y0)
        new_state = replace(state, coefficient=a if a is not None else state.coefficient)
    else:
        training = state.training + (TrainingPoint(d0, y0, choke.window.index),)
        if len(training) > state.q:
            training = training[1:]
        coefficient = state.coefficient
        if len(training) == state.q:
            a = linear_coefficient(training)
            if a is not None:
                coefficient = a
        new_state = replace(state, training=training, coefficient=coefficient)

    a = new_state.coefficient
    estimates = []
    for m, is_choke in [(choke, True)] + [(m, False) for m in others]:
        if a is None:
            value, used, fallback = float(m.device_count), None, True
        else:
            value, used, fallback = float(a * m.device_count), float(a), False
        estimates.append(ZoneEstimate(zone_id=m.zone_id, window=m.window, raw_count=m.device_count,
                                      calibrated=value, algorithm=new_state.label,
                                      coefficient_used=used, fallback=fallback,
                                      is_choke_point=is_choke))
    return new_state, estimates
