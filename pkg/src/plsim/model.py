"""Parameter algebra for the partially linear single-index model.

The index direction ``alpha`` has unit norm and a positive first entry. It is
stored through its free part ``alpha_free = alpha[1:]`` and the first entry
is recovered as ``sqrt(1 - ||alpha_free||^2)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InactiveNonzero, NormViolation, ValidationError

# ||alpha_free|| at or beyond this is treated as leaving the parameterization.
NORM_LIMIT = 1.0 - 1e-10


def _frozen(a, dtype=float, order="C"):
    a = np.array(a, dtype=dtype, order=order, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Response ``y`` (n,), index covariates ``x`` (n, p), linear covariates ``z`` (n, q).

    ``x`` is kept in Fortran order so column access is contiguous.
    """

    y: np.ndarray
    x: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        x = np.asarray(self.x, dtype=float)
        z = np.asarray(self.z, dtype=float)
        if y.ndim == 2 and y.shape[1] == 1:
            y = y[:, 0]
        if z.ndim == 1:
            z = z[:, None]
        if y.ndim != 1 or x.ndim != 2 or z.ndim != 2:
            raise ValidationError("y must be a vector, x and z matrices")
        n = y.shape[0]
        if x.shape[0] != n or z.shape[0] != n:
            raise ValidationError(
                f"row counts differ: y={n}, x={x.shape[0]}, z={z.shape[0]}")
        if n < 2:
            raise ValidationError("need at least 2 observations")
        if x.shape[1] < 2:
            raise ValidationError("index covariates need p >= 2")
        if z.shape[1] < 1:
            raise ValidationError("linear covariates need q >= 1")
        for name, a in (("y", y), ("x", x), ("z", z)):
            if not np.all(np.isfinite(a)):
                raise ValidationError(f"non-finite entries in {name}")
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "x", _frozen(x, order="F"))
        object.__setattr__(self, "z", _frozen(z))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return self.z.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.y[rows], self.x[rows], self.z[rows])


@dataclass(frozen=True, eq=False)
class IndexParam:
    """Free part ``alpha_free`` (length p - 1) of the unit-norm index direction."""

    alpha_free: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.alpha_free, dtype=float))
        if a.ndim != 1:
            raise ValidationError("alpha_free must be a vector")
        if not np.all(np.isfinite(a)):
            raise NormViolation("alpha_free has non-finite entries")
        nrm = float(np.sqrt(np.dot(a, a)))
        if nrm >= NORM_LIMIT:
            raise NormViolation(
                f"||alpha_free||_2 = {nrm:.12g} leaves the unit ball; "
                "the first index coefficient would not be positive")
        object.__setattr__(self, "alpha_free", _frozen(a))

    @property
    def p(self) -> int:
        return self.alpha_free.shape[0] + 1

    @property
    def alpha1(self) -> float:
        a = self.alpha_free
        return float(np.sqrt(1.0 - np.dot(a, a)))

    @classmethod
    def from_alpha(cls, alpha) -> "IndexParam":
        """Build from a full direction; it is normalized and its sign fixed so alpha[0] > 0."""
        alpha = np.asarray(alpha, dtype=float)
        nrm = np.linalg.norm(alpha)
        if nrm == 0 or alpha[0] == 0:
            raise NormViolation("direction must have a nonzero first entry")
        alpha = alpha / nrm * np.sign(alpha[0])
        return cls(alpha[1:])


@dataclass(frozen=True, eq=False)
class Theta:
    beta: np.ndarray
    index: IndexParam

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if b.ndim != 1:
            raise ValidationError("beta must be a vector")
        object.__setattr__(self, "beta", _frozen(b))

    @property
    def q(self) -> int:
        return self.beta.shape[0]

    @property
    def alpha_free(self) -> np.ndarray:
        return self.index.alpha_free

    @property
    def alpha(self) -> np.ndarray:
        return reconstruct_alpha(self.index)

    def as_vector(self) -> np.ndarray:
        """Stacked ``(alpha_free, beta)``, the column order of the linearized problem."""
        return np.concatenate([self.index.alpha_free, self.beta])


@dataclass(frozen=True, eq=False)
class ActiveSet:
    """Zero-based positions into ``alpha_free`` that are allowed to be nonzero."""

    indices: np.ndarray
    size: int = field(default=None)

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).ravel()
        if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 0):
            raise ValidationError("active indices must be strictly increasing and >= 0")
        if self.size is not None and idx.size and idx[-1] >= self.size:
            raise ValidationError("active index out of bounds")
        object.__setattr__(self, "indices", _frozen(idx, dtype=np.int64))

    @property
    def s(self) -> int:
        return int(self.indices.size)

    def __len__(self):
        return self.s

    @classmethod
    def from_support(cls, alpha_free) -> "ActiveSet":
        a = np.asarray(alpha_free)
        return cls(np.flatnonzero(a != 0), size=a.size)


def reconstruct_alpha(index: IndexParam) -> np.ndarray:
    """Full unit-norm direction ``(sqrt(1 - ||a||^2), a)``."""
    a = index.alpha_free
    return np.concatenate([[np.sqrt(1.0 - np.dot(a, a))], a])


def jacobian(index: IndexParam) -> np.ndarray:
    """The p x (p-1) derivative of ``alpha`` with respect to ``alpha_free``."""
    a = index.alpha_free
    m = a.size
    jac = np.empty((m + 1, m))
    jac[0] = -a / np.sqrt(1.0 - np.dot(a, a))
    jac[1:] = np.eye(m)
    return jac


def jacobian_restricted(index: IndexParam, active: ActiveSet) -> np.ndarray:
    """Jacobian of the compressed direction ``(alpha_1, alpha_free[active])``.

    Returns an (s+1) x s matrix. Coordinates of ``alpha_free`` outside the
    active set must be zero.
    """
    a = index.alpha_free
    mask = np.ones(a.size, dtype=bool)
    mask[active.indices] = False
    if np.any(np.abs(a[mask]) > 1e-12):
        raise InactiveNonzero("alpha_free has nonzero entries outside the active set")
    return jacobian(IndexParam(a[active.indices]))
