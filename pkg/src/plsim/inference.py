"""Tests for the linear coefficients and for the form of the link.

``test_beta`` compares residual sums of squares of the unrestricted fit and
the fit with ``beta = 0``. ``test_eta`` is a kernel-weighted U-statistic in
the residuals of a parametric null link, standardized so its square is
approximately chi-square with one degree of freedom.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit
from scipy import special

from .errors import (GNDiverged, InvalidDF, NumericalError, SingularPhi, ValidationError,
                     ZeroVarianceEstimate)
from .model import Dataset, Theta, jacobian_restricted
from .optimizer import (FitResult, OptimConfig, fit_constrained, fit_plsim,
                        select_lambda)
from .penalty import PenaltySpec
from .smoother import KernelSpec, smooth

# ----------------------------------------------------------------------------
# reference distributions


def _check_df(q):
    if isinstance(q, bool) or int(q) != q or q < 1:
        raise InvalidDF(f"degrees of freedom must be a positive integer, got {q!r}")
    return int(q)


def chisq_sf(x, q):
    """Upper tail ``P(chi2_q > x)`` via the regularized upper incomplete gamma function."""
    q = _check_df(q)
    x = np.asarray(x, dtype=float)
    out = special.gammaincc(q / 2.0, np.maximum(x, 0.0) / 2.0)
    out = np.where(x <= 0, 1.0, out)
    return float(out) if out.ndim == 0 else out


def chisq_isf(level, q):
    """Upper ``level`` quantile of ``chi2_q``."""
    q = _check_df(q)
    if not 0 < level < 1:
        raise ValidationError("level must lie in (0, 1)")
    return float(2.0 * special.gammainccinv(q / 2.0, level))


def noncentral_chisq_sf(x, q, ncp):
    """Upper tail of the noncentral chi-square as a Poisson mixture of central tails.

    The sum runs over a window around the Poisson mode wide enough that the
    neglected Poisson mass is below 1e-12.
    """
    q = _check_df(q)
    ncp = float(ncp)
    if not (ncp >= 0 and np.isfinite(ncp)):
        raise ValidationError("noncentrality must be finite and nonnegative")
    x = float(x)
    if x <= 0:
        return 1.0
    if ncp == 0:
        return chisq_sf(x, q)
    lam = ncp / 2.0
    mode = math.floor(lam)
    width = math.ceil(8.0 * math.sqrt(lam) + 30.0)
    k = np.arange(max(0, mode - width), mode + width + 1, dtype=float)
    logw = -lam + k * math.log(lam) - special.gammaln(k + 1.0)
    terms = np.exp(logw) * special.gammaincc(q / 2.0 + k, x / 2.0)
    return float(min(1.0, math.fsum(terms)))


# ----------------------------------------------------------------------------
# F-type test for beta


@dataclass(frozen=True, eq=False)
class BetaTestResult:
    t_n: float
    df: int
    p_value: float
    rss0: float
    rss1: float
    n: int
    lam: float
    nonpositive_numerator: bool
    unrestricted: FitResult = field(repr=False)
    restricted: FitResult = field(repr=False)

    @property
    def flags(self) -> dict:
        return {
            "nonpositive_numerator": self.nonpositive_numerator,
            "unrestricted_status": self.unrestricted.status,
            "restricted_status": self.restricted.status,
        }


def t_statistic(rss0: float, rss1: float, n: int, q: int) -> float:
    return (rss0 - rss1) / (rss1 / (n - q))


def _try(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except NumericalError:
        return None


def test_beta(data: Dataset, kernel: KernelSpec | None = None, penalty: PenaltySpec | None = None,
              config: OptimConfig | None = None, lam: float | None = None,
              support=None, init: Theta | None = None) -> BetaTestResult:
    """F-type test of ``beta = 0``.

    Without ``lam`` the tuning parameter is chosen by HBIC on the unrestricted
    fit and reused for the restricted one. Passing ``support`` gives the
    oracle version: both fits are restricted to that active set and, unless
    ``lam`` is given, left unpenalized.
    """
    kernel = kernel or KernelSpec()
    penalty = penalty or PenaltySpec()
    config = config or OptimConfig()
    n, q = data.n, data.q
    if n <= q:
        raise ValidationError("need n > q")
    if support is not None and lam is None:
        lam = 0.0
    if lam is None:
        lam, fit1 = select_lambda(data, kernel, config, penalty, init=init)
    else:
        fit1 = fit_plsim(data, kernel, penalty.with_lambda(lam), config, init=init, support=support)
    pen = penalty.with_lambda(lam)
    # one penalty for both fits: the restricted fit reuses the unrestricted scales
    scales = fit1.penalty_scales
    fit0 = fit_constrained(data, kernel, pen, config, init=Theta(np.zeros(q), fit1.theta_hat.index),
                           support=support, scales=scales)
    # Both criteria are nonconvex in alpha. Cross-start each fit from the
    # other's index and keep the lower objective, so that a local minimum
    # found by one side is available to the other.
    alt1 = _try(fit_plsim, data, kernel, pen, config, init=fit0.theta_hat, support=support,
                scales=scales)
    if alt1 is not None and alt1.objective_trace[-1] < fit1.objective_trace[-1]:
        alt1.lambda_path = fit1.lambda_path
        fit1 = alt1
        alt0 = _try(fit_constrained, data, kernel, pen, config,
                    init=Theta(np.zeros(q), fit1.theta_hat.index), support=support,
                    scales=scales)
        if alt0 is not None and alt0.objective_trace[-1] < fit0.objective_trace[-1]:
            fit0 = alt0
    rss1, rss0 = fit1.rss, fit0.rss
    if rss1 <= 0:
        raise ZeroVarianceEstimate("unrestricted residual sum of squares is zero")
    t_n = t_statistic(rss0, rss1, n, q)
    nonpos = not (rss0 - rss1 > 0)
    p_value = 1.0 if nonpos else chisq_sf(t_n, q)
    return BetaTestResult(
        t_n=float(t_n), df=q, p_value=float(p_value), rss0=float(rss0), rss1=float(rss1),
        n=n, lam=float(lam), nonpositive_numerator=nonpos, unrestricted=fit1, restricted=fit0)


# ----------------------------------------------------------------------------
# noncentrality and theoretical power


@dataclass(frozen=True, eq=False)
class SigmaStarEstimate:
    sigma_star: np.ndarray
    phi: np.ndarray
    mu1: np.ndarray
    mu2: np.ndarray
    q: int
    s: int
    condition: float


def estimate_sigma_star(data: Dataset, fit: FitResult, kernel: KernelSpec | None = None) -> SigmaStarEstimate:
    """Plug-in estimate of ``E[L L']`` and of ``Phi``, the beta block of its inverse.

    ``L_i`` stacks ``Z_i - E[Z | index]`` and
    ``eta'(index) J_A' (X_{i,A*} - E[X_{A*} | index])``, where ``A*`` is the
    first coordinate plus the active set. Conditional means are leave-one-out
    local linear fits on the fitted index.
    """
    kernel = kernel or KernelSpec(h=fit.h)
    g = fit.index_values
    cols = np.concatenate([[0], fit.active.indices + 1])
    mu1, _ = smooth(g, data.x[:, cols], kernel)
    mu2, _ = smooth(g, data.z, kernel)
    zt = data.z - mu2
    jac = jacobian_restricted(fit.theta_hat.index, fit.active)
    xt = (data.x[:, cols] - mu1) @ jac * fit.eta_slope[:, None]
    lmat = np.hstack([zt, xt])
    sig = lmat.T @ lmat / data.n
    sig = 0.5 * (sig + sig.T)
    cond = float(np.linalg.cond(sig))
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularPhi(f"estimated information matrix is singular (condition {cond:.3g})")
    phi = np.linalg.inv(sig)[:data.q, :data.q]
    phi = 0.5 * (phi + phi.T)
    return SigmaStarEstimate(sig, phi, mu1, mu2, data.q, fit.active.s, cond)


def noncentrality(sigma: SigmaStarEstimate, delta, n: int, sigma2: float) -> float:
    """``n delta' Phi^{-1} delta / sigma^2``."""
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    if delta.shape != (sigma.q,):
        raise ValidationError(f"delta must have length {sigma.q}")
    if not sigma2 > 0:
        raise ValidationError("sigma2 must be positive")
    try:
        sol = np.linalg.solve(sigma.phi, delta)
    except np.linalg.LinAlgError as exc:
        raise SingularPhi("Phi is singular") from exc
    return float(n * (delta @ sol) / sigma2)


def theoretical_power(sigma: SigmaStarEstimate, delta, n: int, sigma2: float, level: float = 0.05) -> float:
    """Asymptotic power of the level-``level`` test against ``beta = delta``.

    At zero noncentrality the power is the level itself.
    """
    ncp = noncentrality(sigma, delta, n, sigma2)
    if ncp == 0:
        return float(level)
    return noncentral_chisq_sf(chisq_isf(level, sigma.q), sigma.q, ncp)


# ----------------------------------------------------------------------------
# specification test for the link


@dataclass(frozen=True, eq=False)
class NullLinkSpec:
    """Parametric null link ``g(t, zeta)``.

    ``g(t, zeta)`` returns an (n,) vector and ``g01(t, zeta)`` its (n, d)
    Jacobian in ``zeta``. ``g10`` (derivative in ``t``) is optional and is
    finite-differenced when absent.
    """

    family: str
    g: Callable
    g01: Callable
    d: int
    start: np.ndarray | None = None
    g10: Callable | None = None

    def __post_init__(self):
        if self.family not in ("constant", "linear", "affine", "custom"):
            raise ValidationError(f"unknown null link family {self.family!r}")
        if self.d < 1:
            raise ValidationError("zeta must have at least one component")

    @classmethod
    def constant(cls):
        return cls("constant", lambda t, z: np.full(np.shape(t), z[0]),
                   lambda t, z: np.ones((np.size(t), 1)), 1,
                   g10=lambda t, z: np.zeros(np.shape(t)))

    @classmethod
    def linear(cls):
        """``g(t, zeta) = zeta t``."""
        return cls("linear", lambda t, z: z[0] * np.asarray(t),
                   lambda t, z: np.asarray(t, dtype=float)[:, None], 1,
                   g10=lambda t, z: np.full(np.shape(t), z[0]))

    @classmethod
    def affine(cls):
        """``g(t, zeta) = zeta_0 + zeta_1 t``."""
        return cls("affine", lambda t, z: z[0] + z[1] * np.asarray(t),
                   lambda t, z: np.column_stack([np.ones(np.size(t)), t]), 2,
                   g10=lambda t, z: np.full(np.shape(t), z[1]))

    @classmethod
    def custom(cls, g, g01, d, start=None, g10=None):
        return cls("custom", g, g01, int(d), None if start is None else np.asarray(start, float), g10)

    def slope(self, t, zeta):
        if self.g10 is not None:
            return self.g10(t, zeta)
        step = 1e-6
        return (self.g(t + step, zeta) - self.g(t - step, zeta)) / (2 * step)


def _null_response(data: Dataset, fit: FitResult):
    t = data.x @ fit.alpha
    r = data.y - data.z @ fit.beta
    return t, r


def gauss_newton(link: NullLinkSpec, t, r, start=None, tol=1e-8, max_iter=200):
    """Nonlinear least squares for ``zeta`` by Gauss-Newton with step halving."""
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    if start is None:
        start = link.start if link.start is not None else np.zeros(link.d)
    zeta = np.array(start, dtype=float)
    if zeta.shape != (link.d,):
        raise ValidationError(f"start must have length {link.d}")
    res = r - link.g(t, zeta)
    sse = float(res @ res)
    for _ in range(max_iter):
        jac = np.asarray(link.g01(t, zeta), dtype=float).reshape(t.size, link.d)
        step = np.linalg.lstsq(jac, res, rcond=None)[0]
        scale = 1.0
        for _ in range(40):
            cand = zeta + scale * step
            cres = r - link.g(t, cand)
            csse = float(cres @ cres)
            if np.isfinite(csse) and csse <= sse:
                break
            scale *= 0.5
        else:
            return zeta  # no decrease along the Gauss-Newton direction: stationary
        moved = scale * np.linalg.norm(step)
        zeta, res, sse = cand, cres, csse
        if moved <= tol * (1.0 + np.linalg.norm(zeta)):
            return zeta
    raise GNDiverged(f"Gauss-Newton did not converge in {max_iter} iterations")


def fit_null_link(data: Dataset, fit: FitResult, link: NullLinkSpec) -> np.ndarray:
    """Least squares ``zeta`` for ``y - z beta_hat ~ g(alpha_hat' x, zeta)``."""
    t, r = _null_response(data, fit)
    if link.family == "constant":
        return np.array([r.mean()])
    if link.family == "linear":
        return np.array([(t @ r) / (t @ t)])
    if link.family == "affine":
        design = np.column_stack([np.ones(t.size), t])
        return np.linalg.lstsq(design, r, rcond=None)[0]
    return gauss_newton(link, t, r, start=link.start)


@njit(cache=True)
def _pair_sums(g, e, b, gauss):
    """``sum_{i != j} e_i e_j G_ij`` and ``sum_{i != j} e_i^2 e_j^2 G_ij^2`` with ``G_ij = G((g_i - g_j)/b)``.

    The sums are accumulated row by row in a fixed order.
    """
    n = g.size
    c = 1.0 / math.sqrt(2.0 * math.pi)
    s = 0.0
    v = 0.0
    for i in range(n):
        rs = 0.0
        rv = 0.0
        for j in range(n):
            if j == i:
                continue
            u = (g[i] - g[j]) / b
            if gauss:
                k = c * math.exp(-0.5 * u * u)
            else:
                k = 0.75 * (1.0 - u * u) if abs(u) <= 1.0 else 0.0
            rs += e[j] * k
            rv += e[j] * e[j] * k * k
        s += e[i] * rs
        v += e[i] * e[i] * rv
    return s, v


def spec_statistic(index_values, residuals, b: float, g_kernel: KernelSpec | None = None):
    """Return ``(S_n, sigma2_S_hat, V_n)`` for given residuals along an index."""
    g = np.ascontiguousarray(index_values, dtype=float)
    e = np.ascontiguousarray(residuals, dtype=float)
    n = g.size
    if not b > 0:
        raise ValidationError("bandwidth b must be positive")
    if n < 2:
        raise ValidationError("need at least two observations")
    family = (g_kernel or KernelSpec()).family
    s, v = _pair_sums(g, e, float(b), family == "gaussian")
    denom = n * (n - 1.0)
    s_n = s / (denom * b)
    sig2 = 2.0 * v / (denom * b)
    if not sig2 > 0:
        raise ZeroVarianceEstimate("estimated variance of S_n is not positive")
    v_n = math.sqrt((n - 1.0) / n) * n * math.sqrt(b) * s_n / math.sqrt(sig2)
    return s_n, sig2, v_n


def default_spec_bandwidth(index_values, c: float = 1.0) -> float:
    """``c * sd(index) * n^(-2/5)``."""
    g = np.asarray(index_values, dtype=float)
    return float(c * g.std() * g.size ** (-0.4))


@dataclass(frozen=True, eq=False)
class EtaTestResult:
    s_n: float
    sigma_s_hat: float  # the variance estimate sigma^2_S
    v_n: float
    v_n_sq: float
    p_value: float
    bandwidth_b: float
    zeta_hat: np.ndarray
    bandwidth_rule: str = "c*sd(index)*n^(-2/5), c=1"


def test_eta(data: Dataset, fit: FitResult, link: NullLinkSpec | None = None,
             g_kernel: KernelSpec | None = None, b: float | None = None,
             b_scale: float = 1.0) -> EtaTestResult:
    """Specification test of ``eta(t) = g(t, zeta)`` at the fitted ``(beta, alpha)``."""
    link = link or NullLinkSpec.linear()
    zeta = fit_null_link(data, fit, link)
    t, r = _null_response(data, fit)
    resid = r - link.g(t, zeta)
    rule = f"c*sd(index)*n^(-2/5), c={b_scale:g}"
    if b is None:
        b = default_spec_bandwidth(t, b_scale)
    else:
        rule = "user"
    s_n, sig2, v_n = spec_statistic(t, resid, b, g_kernel)
    v2 = v_n * v_n
    return EtaTestResult(
        s_n=float(s_n), sigma_s_hat=float(sig2), v_n=float(v_n), v_n_sq=float(v2),
        p_value=float(chisq_sf(v2, 1)), bandwidth_b=float(b), zeta_hat=np.asarray(zeta),
        bandwidth_rule=rule)


__all__ = [
    "BetaTestResult", "EtaTestResult", "NullLinkSpec", "SigmaStarEstimate",
    "chisq_isf", "chisq_sf", "default_spec_bandwidth", "estimate_sigma_star",
    "fit_null_link", "gauss_newton", "noncentral_chisq_sf", "noncentrality",
    "spec_statistic", "t_statistic", "test_beta", "test_eta", "theoretical_power",
]

# keep pytest from collecting the public test_* functions when imported in test modules
test_beta.__test__ = False
test_eta.__test__ = False
