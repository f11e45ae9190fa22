"""Local linear kernel smoothing along the index and its derivatives.

At sample points the smoother is leave-one-out: the fit at ``alpha' X_i``
ignores observation ``i``. Predictions at new points use every observation.

Internally the local fit at a target ``t`` is written in centred form. With
kernel weights ``k_j``, offsets ``u_j = Gamma_j - t``, weighted mean ``ubar``
and weighted variance ``V`` of the offsets,

    W_j = (k_j / S0) * (1 - ubar * (u_j - ubar) / V),

which equals the textbook ratio of ``S_n2 - u_j S_n1`` terms but avoids the
cancellation in ``S_n0 S_n2 - S_n1^2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import AllFoldsSingular, GradientOverflow, SingularLocalFit, ValidationError
from .model import ActiveSet, Dataset, Theta, reconstruct_alpha

SINGULAR_TOL = 1e-14
_BLOCK_ELEMENTS = 2 ** 21

_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class KernelSpec:
    family: str = "gaussian"
    h: float = 0.37

    def __post_init__(self):
        if self.family not in ("gaussian", "epanechnikov"):
            raise ValidationError(f"unknown kernel family {self.family!r}")
        if not (np.isfinite(self.h) and self.h > 0):
            raise ValidationError("bandwidth must be positive")

    def with_bandwidth(self, h) -> "KernelSpec":
        return KernelSpec(self.family, float(h))

    def density(self, v):
        """The unscaled kernel ``K(v)``."""
        v = np.asarray(v, dtype=float)
        if self.family == "gaussian":
            return np.exp(-0.5 * v * v) / _SQRT_2PI
        return np.where(np.abs(v) <= 1.0, 0.75 * (1.0 - v * v), 0.0)

    def derivative(self, v):
        """``K'(v)``."""
        v = np.asarray(v, dtype=float)
        if self.family == "gaussian":
            return -v * np.exp(-0.5 * v * v) / _SQRT_2PI
        return np.where(np.abs(v) < 1.0, -1.5 * v, 0.0)

    def scaled(self, u):
        """``K_h(u) = K(u / h) / h``."""
        return self.density(np.asarray(u) / self.h) / self.h

    @property
    def support_radius(self) -> float:
        return np.inf if self.family == "gaussian" else self.h


def _kernel_block(u, kernel, self_cols=None, need_deriv=False):
    """Kernel weights (and d/du) for a block of offsets; rows rescaled freely.

    Each row of weights may be multiplied by an arbitrary positive constant,
    since every quantity built from it is a ratio within the row.
    """
    h = kernel.h
    v = u / h
    if kernel.family == "gaussian":
        v2 = v * v
        if self_cols is not None:
            v2[np.arange(u.shape[0]), self_cols] = np.inf
        shift = v2.min(axis=1, keepdims=True)
        shift[~np.isfinite(shift)] = 0.0
        k = np.exp(-0.5 * (v2 - shift))
        kp = -v / h * k if need_deriv else None
    else:
        inside = np.abs(v) <= 1.0
        k = np.where(inside, 1.0 - v * v, 0.0)
        if self_cols is not None:
            k[np.arange(u.shape[0]), self_cols] = 0.0
        kp = None
        if need_deriv:
            kp = np.where(np.abs(v) < 1.0, -2.0 * v / h, 0.0)
            if self_cols is not None:
                kp[np.arange(u.shape[0]), self_cols] = 0.0
    return k, kp


def _fit_block(u, k, resp, row_ids):
    """Centred local linear fit for each row of the offset block.

    Returns weights W, intercepts, slopes and the centring quantities.
    ``resp`` is (n,) or (n, m).
    """
    s0 = k.sum(axis=1)
    bad = ~(s0 > 0)
    s0_safe = np.where(bad, 1.0, s0)
    # offsets from the heaviest observation keep u - ubar accurate far from the data
    rows = np.arange(u.shape[0])
    uc = u - u[rows, np.argmax(k, axis=1)][:, None]
    cbar = (k * uc).sum(axis=1) / s0_safe
    du = uc - cbar[:, None]
    ubar = cbar + u[rows, np.argmax(k, axis=1)]
    var = (k * du * du).sum(axis=1) / s0_safe
    bad |= ~(var >= SINGULAR_TOL)
    if np.any(bad):
        first = int(row_ids[np.flatnonzero(bad)[0]])
        raise SingularLocalFit(
            f"local design singular at evaluation point {first} "
            f"(weighted index variance below {SINGULAR_TOL}); bandwidth too small?",
            index=first)
    a = 1.0 - ubar[:, None] * du / var[:, None]
    w = k * a / s0[:, None]
    d0 = w @ resp
    d1 = ((k * du) @ resp) / (s0 * var).reshape((-1,) + (1,) * (resp.ndim - 1))
    return w, d0, d1, a, s0, ubar, var


@njit(cache=True)
def _row_fit(g, t, i, resp, gauss, h, k, kp, need_deriv):
    """Fill ``k`` (and ``kp``) for target ``t``, excluding observation ``i`` when i >= 0.

    Returns (d0, d1, s0, ubar, var, c, cbar). ``var < 0`` flags a singular
    local design. Offsets are taken from ``c``, the observation with the
    largest weight, so that ``u_j - ubar = (g_j - c) - cbar`` keeps its
    precision when the target is far from the data.
    """
    n = g.size
    best = -1
    kbest = -1.0
    shift = 0.0
    if gauss:
        shift = np.inf
        for j in range(n):
            if j != i:
                v = (g[j] - t) / h
                if v * v < shift:
                    shift = v * v
        if not np.isfinite(shift):
            shift = 0.0
    s0 = 0.0
    for j in range(n):
        v = (g[j] - t) / h
        if j == i:
            k[j] = 0.0
            kp[j] = 0.0
            continue
        if gauss:
            kj = np.exp(-0.5 * (v * v - shift))
            k[j] = kj
            if need_deriv:
                kp[j] = -v / h * kj
        else:
            av = abs(v)
            k[j] = 1.0 - v * v if av <= 1.0 else 0.0
            if need_deriv:
                kp[j] = -2.0 * v / h if av < 1.0 else 0.0
        s0 += k[j]
        if k[j] > kbest:
            kbest = k[j]
            best = j
    if not s0 > 0.0:
        return 0.0, 0.0, 0.0, 0.0, -1.0, t, 0.0
    c = g[best]
    s1 = 0.0
    for j in range(n):
        s1 += k[j] * (g[j] - c)
    cbar = s1 / s0
    ubar = (c - t) + cbar
    var = 0.0
    for j in range(n):
        du = (g[j] - c) - cbar
        var += k[j] * du * du
    var /= s0
    if not var >= 1e-14:
        return 0.0, 0.0, s0, ubar, -1.0, c, cbar
    d0 = 0.0
    c1 = 0.0
    for j in range(n):
        du = (g[j] - c) - cbar
        d0 += k[j] * (1.0 - ubar * du / var) * resp[j]
        c1 += k[j] * du * resp[j]
    return d0 / s0, c1 / (s0 * var), s0, ubar, var, c, cbar


@njit(cache=True)
def _smooth_vec(g, t, resp, gauss, h, loo):
    """Local linear fit of a single response vector; returns (d0, d1, bad_row)."""
    m = t.size
    n = g.size
    d0 = np.empty(m)
    d1 = np.empty(m)
    k = np.empty(n)
    kp = np.empty(n)
    for r in range(m):
        a, b, s0, ubar, var, c, cbar = _row_fit(g, t[r], r if loo else -1, resp, gauss, h, k, kp,
                                                False)
        if var < 0:
            return d0, d1, r
        d0[r] = a
        d1[r] = b
    return d0, d1, -1


@njit(cache=True)
def _loo_with_derivs(g, resp, gauss, h):
    """Leave-one-out fit at the sample points with the weight matrix ``W`` and
    ``D[i, j] = d eta_i / d Gamma_j``."""
    n = g.size
    eta = np.empty(n)
    slope = np.empty(n)
    w = np.zeros((n, n))
    dm = np.zeros((n, n))
    k = np.empty(n)
    kp = np.empty(n)
    for i in range(n):
        t = g[i]
        d0, d1, s0, ubar, var, c, cbar = _row_fit(g, t, i, resp, gauss, h, k, kp, True)
        if var < 0:
            return eta, slope, w, dm, i
        eta[i] = d0
        slope[i] = d1
        tot = 0.0
        for j in range(n):
            if j == i:
                continue
            du = (g[j] - c) - cbar
            a = 1.0 - ubar * du / var
            e = resp[j] - d0 - d1 * (du + ubar)
            w[i, j] = k[j] * a / s0
            dij = (kp[j] * a * e - k[j] * (ubar * e / var + d1 * a)) / s0
            dm[i, j] = dij
            tot += dij
        dm[i, i] = -tot
    return eta, slope, w, dm, -1


def _singular(i):
    return SingularLocalFit(
        f"local design singular at evaluation point {i} "
        f"(weighted index variance below {SINGULAR_TOL}); bandwidth too small?",
        index=int(i))


def _blocks(n_rows, n_cols):
    step = max(1, min(n_rows, _BLOCK_ELEMENTS // max(n_cols, 1)))
    for start in range(0, n_rows, step):
        yield start, min(n_rows, start + step)


def local_linear_at(t, index_values, responses, kernel: KernelSpec):
    """Local linear intercept and slope at a single point ``t`` (all observations used)."""
    index_values = np.asarray(index_values, dtype=float)
    responses = np.asarray(responses, dtype=float)
    u = (index_values - float(t))[None, :]
    k, _ = _kernel_block(u, kernel)
    _, d0, d1, *_ = _fit_block(u, k, responses, np.array([0]))
    return float(d0[0]), float(d1[0])


def smooth(index_values, responses, kernel: KernelSpec, targets=None):
    """Local linear fit of ``responses`` on ``index_values``.

    With ``targets=None`` the fit is evaluated leave-one-out at each sample
    point; otherwise at ``targets`` using every observation. ``responses``
    may be a matrix, in which case each column is smoothed.
    Returns ``(fitted, slope)``.
    """
    g = np.ascontiguousarray(index_values, dtype=float)
    r = np.ascontiguousarray(responses, dtype=float)
    loo = targets is None
    t = g if loo else np.ascontiguousarray(np.atleast_1d(targets), dtype=float)
    if r.ndim == 1:
        d0, d1, bad = _smooth_vec(g, t, r, kernel.family == "gaussian", float(kernel.h), loo)
        if bad >= 0:
            raise _singular(bad)
        return d0, d1
    out0 = np.empty((t.size,) + r.shape[1:])
    out1 = np.empty_like(out0)
    for lo, hi in _blocks(t.size, g.size):
        rows = np.arange(lo, hi)
        u = g[None, :] - t[lo:hi, None]
        k, _ = _kernel_block(u, kernel, self_cols=rows if loo else None)
        _, d0, d1, *_ = _fit_block(u, k, r, rows)
        out0[lo:hi] = d0
        out1[lo:hi] = d1
    return out0, out1


@dataclass(frozen=True, eq=False)
class ProfileFit:
    """Leave-one-out profile fit of the link at every sample point."""

    eta_hat: np.ndarray
    eta_slope: np.ndarray
    index_values: np.ndarray
    partial_residual: np.ndarray
    kernel: KernelSpec

    def weights(self, i: int) -> np.ndarray:
        """Row ``i`` of the smoother matrix, W_nj(alpha' X_i; alpha) for all j."""
        g = self.index_values
        u = (g - g[i])[None, :]
        k, _ = _kernel_block(u, self.kernel, self_cols=np.array([i]))
        w, *_ = _fit_block(u, k, np.zeros(g.size), np.array([i]))
        return w[0]

    def weight_matrix(self) -> np.ndarray:
        return smoother_matrix(self.index_values, self.kernel)


def smoother_matrix(index_values, kernel: KernelSpec) -> np.ndarray:
    """Dense leave-one-out smoother matrix; meant for small n and testing."""
    g = np.asarray(index_values, dtype=float)
    n = g.size
    out = np.empty((n, n))
    for lo, hi in _blocks(n, n):
        rows = np.arange(lo, hi)
        u = g[None, :] - g[lo:hi, None]
        k, _ = _kernel_block(u, kernel, self_cols=rows)
        out[lo:hi], *_ = _fit_block(u, k, np.zeros(n), rows)
    return out


def profile_eta(data: Dataset, theta: Theta, kernel: KernelSpec) -> ProfileFit:
    """Smooth ``y - z beta`` along ``alpha' x`` (leave-one-out at the sample points)."""
    g = data.x @ theta.alpha
    r = data.y - data.z @ theta.beta
    eta, slope = smooth(g, r, kernel)
    return ProfileFit(eta, slope, g, r, kernel)


def profile_with_gradient(x, z, index_values, resp, alpha_free, kernel, columns=None):
    """Profile fit plus its derivatives with respect to the parameters.

    Parameters
    ----------
    x : (n, p) index covariates.
    z : (n, q) linear covariates, or None when ``beta`` is held at zero.
    index_values : (n,) current ``alpha' x``.
    resp : (n,) current ``y - z beta``.
    alpha_free : current free part of the direction.
    columns : positions of ``alpha_free`` to differentiate against; all when None.

    Returns
    -------
    eta, slope : (n,) leave-one-out fit and local slope.
    grad_alpha : (n, len(columns)) d eta_i / d alpha_free[columns].
    grad_beta : (n, q) d eta_i / d beta, or None.
    """
    a = np.asarray(alpha_free, dtype=float)
    alpha1 = np.sqrt(1.0 - a @ a)
    if columns is None:
        columns = np.arange(a.size)
    columns = np.asarray(columns, dtype=np.int64)
    # d Gamma_k / d alpha_free[j] = x_{k, j+1} - x_{k, 0} * alpha_free[j] / alpha1
    dgamma = x[:, columns + 1] - np.outer(x[:, 0], a[columns] / alpha1)

    eta, slope, w, dmat, bad = _loo_with_derivs(
        np.ascontiguousarray(index_values, dtype=float), np.ascontiguousarray(resp, dtype=float),
        kernel.family == "gaussian", float(kernel.h))
    if bad >= 0:
        raise _singular(bad)
    grad_alpha = dmat @ dgamma
    grad_beta = None if z is None else -(w @ z)
    if not (np.all(np.isfinite(grad_alpha)) and (grad_beta is None or np.all(np.isfinite(grad_beta)))):
        raise GradientOverflow("non-finite entries in the profile gradient")
    return eta, slope, grad_alpha, grad_beta


def profile_eta_gradient(data: Dataset, theta: Theta, active: ActiveSet,
                         kernel: KernelSpec) -> np.ndarray:
    """Rows ``(d eta_i / d beta, d eta_i / d alpha_free[active])``, shape (n, q + s)."""
    g = data.x @ theta.alpha
    r = data.y - data.z @ theta.beta
    _, _, ga, gb = profile_with_gradient(
        data.x, data.z, g, r, theta.alpha_free, kernel, columns=active.indices)
    return np.hstack([gb, ga])


def effective_fraction(index_values, h) -> float:
    """Bandwidth as a fraction of the central 95% range of the index."""
    lo, hi = np.quantile(np.asarray(index_values, dtype=float), [0.025, 0.975])
    return float(h / (hi - lo)) if hi > lo else np.inf


def cv_curve(index_values, responses, grid, kernel: KernelSpec, folds=10, seed=0):
    """Out-of-fold mean squared prediction error for each bandwidth in ``grid``.

    Bandwidths whose local fit is singular on some fold get ``inf``.
    """
    g = np.asarray(index_values, dtype=float)
    r = np.asarray(responses, dtype=float)
    n = g.size
    order = np.random.default_rng(seed).permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[order] = np.arange(n) % folds
    errs = np.empty(len(grid))
    for m, h in enumerate(grid):
        kern = kernel.with_bandwidth(h)
        sse = 0.0
        try:
            for f in range(folds):
                test = fold_of == f
                pred, _ = smooth(g[~test], r[~test], kern, targets=g[test])
                sse += float(np.sum((r[test] - pred) ** 2))
        except SingularLocalFit:
            errs[m] = np.inf
            continue
        errs[m] = sse / n
    return errs


def select_bandwidth_cv(data: Dataset, theta: Theta, grid, folds: int = 10,
                        kernel: KernelSpec | None = None, seed: int = 0) -> float:
    """K-fold cross-validated bandwidth for the smoother of ``y - z beta`` on ``alpha' x``.

    Ties (relative 1e-10) are broken toward the larger bandwidth.
    """
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValidationError("bandwidth grid is empty")
    if folds < 2 or data.n < folds:
        raise ValidationError("need 2 <= folds <= n")
    if grid.size == 1:
        return float(grid[0])
    kernel = kernel or KernelSpec()
    g = data.x @ theta.alpha
    r = data.y - data.z @ theta.beta
    errs = cv_curve(g, r, grid, kernel, folds=folds, seed=seed)
    if not np.any(np.isfinite(errs)):
        raise AllFoldsSingular("every bandwidth in the grid gave a singular local fit")
    best = errs.min()
    ok = errs <= best * (1 + 1e-10) + 1e-300
    return float(grid[ok].max())
