"""SCAD and L1 penalties and the local linear approximation weights."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NegativeInput, ValidationError


@dataclass(frozen=True)
class PenaltySpec:
    family: str = "scad"
    lam: float = 0.1
    a: float = 3.7

    def __post_init__(self):
        if self.family not in ("scad", "l1"):
            raise ValidationError(f"unknown penalty family {self.family!r}")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValidationError("lambda must be nonnegative")
        if self.family == "scad" and not self.a > 2:
            raise ValidationError("SCAD shape parameter must exceed 2")

    def with_lambda(self, lam) -> "PenaltySpec":
        return PenaltySpec(self.family, float(lam), self.a)


def _check(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise NegativeInput("penalty argument must be nonnegative")
    return t


def penalty_value(spec: PenaltySpec, t):
    """p_lambda(t) for t >= 0 (elementwise)."""
    t = _check(t)
    lam, a = spec.lam, spec.a
    if spec.family == "l1":
        return lam * t
    return np.where(
        t <= lam, lam * t,
        np.where(t <= a * lam,
                 -(t * t - 2 * a * lam * t + lam * lam) / (2 * (a - 1)),
                 (a + 1) * lam * lam / 2))


def penalty_deriv(spec: PenaltySpec, t):
    """p'_lambda(t) for t >= 0, with p'(0) read as the right limit lambda.

    At the kinks the left-continuous branch is used.
    """
    t = _check(t)
    lam, a = spec.lam, spec.a
    if spec.family == "l1":
        return np.full_like(t, lam)
    if lam == 0:
        return np.zeros_like(t)
    return np.where(t <= lam, lam, np.maximum(a * lam - t, 0.0) / (a - 1))


def lla_weights(spec: PenaltySpec, current) -> np.ndarray:
    """Per-coordinate L1 weights for the linearized penalty at ``current``."""
    return penalty_deriv(spec, np.abs(np.asarray(current, dtype=float)))


def total_penalty(spec: PenaltySpec, coef) -> float:
    return float(np.sum(penalty_value(spec, np.abs(np.asarray(coef, dtype=float)))))
