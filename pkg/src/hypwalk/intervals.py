"""Interval values used for every Green-function quantity."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import PrecisionError


@dataclass(frozen=True)
class GreenValue:
    """A nonnegative quantity known to lie in [value, value + tail_bound]."""

    value: float
    tail_bound: float
    r: float = float("nan")

    def __post_init__(self):
        if self.value < 0 or self.tail_bound < 0:
            raise ValueError(f"invalid interval [{self.value}, +{self.tail_bound}]")

    @property
    def lower(self) -> float:
        return self.value

    @property
    def upper(self) -> float:
        return self.value + self.tail_bound

    @property
    def width(self) -> float:
        return self.tail_bound

    @property
    def mid(self) -> float:
        return self.value + 0.5 * self.tail_bound

    def contains(self, x: float, slack: float = 0.0) -> bool:
        return self.lower - slack <= x <= self.upper + slack

    @classmethod
    def from_bounds(cls, lo: float, hi: float, r: float = float("nan")) -> "GreenValue":
        lo = max(lo, 0.0)
        return cls(lo, max(hi - lo, 0.0), r)

    @classmethod
    def exact(cls, x: float, r: float = float("nan"), rel: float = 4e-15) -> "GreenValue":
        """Wrap a floating-point value computed from a closed form; ``rel`` covers rounding."""
        if not math.isfinite(x):
            return cls(0.0, math.inf, r)
        return cls.from_bounds(x * (1 - rel), x * (1 + rel), r)

    def __mul__(self, other: "GreenValue") -> "GreenValue":
        return GreenValue.from_bounds(self.lower * other.lower, self.upper * other.upper, self.r)

    def __truediv__(self, other: "GreenValue") -> "GreenValue":
        if other.lower <= 0:
            raise PrecisionError("division by an interval that contains 0")
        return GreenValue.from_bounds(self.lower / other.upper, self.upper / other.lower, self.r)

    def scale(self, c: float) -> "GreenValue":
        return GreenValue.from_bounds(self.lower * c, self.upper * c, self.r)

    def __add__(self, other: "GreenValue") -> "GreenValue":
        return GreenValue.from_bounds(self.lower + other.lower, self.upper + other.upper, self.r)
