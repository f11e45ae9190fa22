"""Profile partial penalized least squares.

Each outer iteration linearizes the leave-one-out profile fit around the
current parameters, replaces the folded concave penalty by its tangent
(weighted L1), and solves the resulting weighted lasso by coordinate descent.
Only the index coefficients are penalized.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import (AllFitsFailed, InitFailure, NumericalError, SingularLocalFit,
                     ValidationError)
from .model import ActiveSet, Dataset, IndexParam, Theta
from .penalty import PenaltySpec, lla_weights, total_penalty
from .smoother import KernelSpec, profile_with_gradient, smooth

_PROJECT_NORM = 1.0 - 1e-8


@dataclass(frozen=True)
class OptimConfig:
    max_outer_iters: int = 50
    outer_tol: float = 1e-6
    cd_max_iters: int = 1000
    cd_tol: float = 1e-8
    lambda_grid: tuple | None = None
    n_lambda: int = 30
    lambda_min_ratio: float = 0.01
    hbic_cn: float | None = None
    warm_start: bool = True
    max_halvings: int = 30
    penalty_scaling: str = "column"
    # a second pass over the grid in the opposite direction; each lambda
    # keeps whichever fit has the lower penalized objective
    return_sweep: bool = True
    # stop a descending sweep once the active set is larger than this;
    # None means n / (C_n log p), where the HBIC size term reaches 1
    max_active: int | None = None

    def __post_init__(self):
        if self.outer_tol <= 0 or self.cd_tol <= 0:
            raise ValidationError("tolerances must be positive")
        if self.max_outer_iters < 1 or self.cd_max_iters < 1:
            raise ValidationError("iteration limits must be positive")
        if self.max_active is not None and self.max_active < 1:
            raise ValidationError("max_active must be positive")
        if self.penalty_scaling not in ("column", "none"):
            raise ValidationError("penalty_scaling must be 'column' or 'none'")
        if self.lambda_grid is not None:
            grid = tuple(float(v) for v in np.atleast_1d(self.lambda_grid))
            if not grid or min(grid) <= 0:
                raise ValidationError("lambda grid must be nonempty and positive")
            object.__setattr__(self, "lambda_grid", grid)


@dataclass(frozen=True, eq=False)
class LinearizedProblem:
    """Least squares surrogate ``(1/2n)||y_star - z_star c||^2``.

    Columns of ``z_star`` are the index coefficients listed in ``alpha_columns``
    followed by ``n_beta`` linear coefficients.
    """

    y_star: np.ndarray
    z_star: np.ndarray
    alpha_columns: np.ndarray
    n_beta: int
    eta_hat: np.ndarray
    eta_slope: np.ndarray

    @property
    def n_alpha(self) -> int:
        return int(self.alpha_columns.size)

    def gram(self):
        n = self.y_star.size
        zs = self.z_star
        return zs.T @ zs / n, zs.T @ self.y_star / n


@dataclass(frozen=True, eq=False)
class LassoSolution:
    coef: np.ndarray
    kkt: float
    sweeps: int
    converged: bool


@dataclass(eq=False)
class FitResult:
    theta_hat: Theta
    active: ActiveSet
    rss: float
    lam: float
    h: float
    objective_trace: np.ndarray
    converged: bool
    status: str
    n_iter: int
    eta_hat: np.ndarray
    eta_slope: np.ndarray
    index_values: np.ndarray
    constrained: bool = False
    penalty_family: str = "scad"
    penalty_scales: np.ndarray | None = None
    lambda_path: list = field(default_factory=list)

    @property
    def beta(self):
        return self.theta_hat.beta

    @property
    def alpha(self):
        return self.theta_hat.alpha

    def residuals(self, data: Dataset) -> np.ndarray:
        return data.y - data.z @ self.theta_hat.beta - self.eta_hat


# --------------------------------------------------------------------------
# weighted lasso

@njit(cache=True)
def _kkt_residual(grad, coef, w):
    worst = 0.0
    for j in range(coef.size):
        if coef[j] != 0.0:
            r = abs(grad[j] - math.copysign(w[j], coef[j]))
        else:
            r = abs(grad[j]) - w[j]
        if r > worst:
            worst = r
    return worst


@njit(cache=True)
def _cd_sweep(G, grad, coef, w, idx):
    big = 0.0
    for j in idx:
        gjj = G[j, j]
        old = coef[j]
        if gjj <= 1e-14:
            new = 0.0
        else:
            zj = grad[j] + gjj * old
            if w[j] > 0.0:
                if zj > w[j]:
                    new = (zj - w[j]) / gjj
                elif zj < -w[j]:
                    new = (zj + w[j]) / gjj
                else:
                    new = 0.0
            else:
                new = zj / gjj
        if new != old:
            delta = new - old
            for k in range(grad.size):
                grad[k] -= G[k, j] * delta
            coef[j] = new
            step = abs(delta) * math.sqrt(max(gjj, 0.0))
            if step > big:
                big = step
    return big


@njit(cache=True)
def _objective(G, c, w, coef):
    return 0.5 * coef @ (G @ coef) - c @ coef + np.sum(w * np.abs(coef))


@njit(cache=True)
def _polish(G, c, w, coef, active):
    """Active-set solve of the stationarity equations with signs held fixed.

    Each pass solves on the current set; if a penalized coordinate would
    change sign, the iterate moves toward the solution only until the first
    such coordinate reaches zero, which then leaves the set. Along that
    segment the objective is a convex quadratic decreasing toward its
    minimizer, so every pass lowers it. ``coef`` is overwritten and True
    returned when the final point does not raise the objective.
    """
    cur = coef.copy()
    keep = active.copy()
    sgn = np.empty(coef.size)
    for j in range(coef.size):
        sgn[j] = math.copysign(1.0, coef[j])
    for _ in range(active.size + 1):
        m = keep.size
        if m == 0:
            break
        sub = np.empty((m, m))
        rhs = np.empty(m)
        for a in range(m):
            j = keep[a]
            rhs[a] = c[j] - w[j] * sgn[j]
            for b in range(m):
                sub[a, b] = G[j, keep[b]]
        x = np.linalg.lstsq(sub, rhs)[0]
        t = 1.0
        hit = -1
        for a in range(m):
            j = keep[a]
            if w[j] > 0.0 and x[a] * sgn[j] <= 0.0:
                frac = cur[j] / (cur[j] - x[a])
                if frac < t:
                    t = frac
                    hit = a
        for a in range(m):
            j = keep[a]
            cur[j] += t * (x[a] - cur[j])
        if hit < 0:
            break
        cur[keep[hit]] = 0.0
        mask = np.ones(m, dtype=np.bool_)
        mask[hit] = False
        keep = keep[mask]
    base = _objective(G, c, w, coef)
    if _objective(G, c, w, cur) > base + 1e-15 * (1.0 + abs(base)):
        return False
    coef[:] = cur
    return True


@njit(cache=True)
def _cd_gram(G, c, w, coef, max_sweeps, tol):
    """Cyclic coordinate descent on 0.5 b'Gb - c'b + sum w|b| with active-set cycling.

    Inner passes over the active set are followed by an exact solve on that
    set once its signs look settled; cyclic passes alone crawl when the
    active columns are nearly collinear.
    """
    d = c.size
    grad = c - G @ coef
    everything = np.arange(d)
    kkt = _kkt_residual(grad, coef, w)
    sweeps = 0
    while sweeps < max_sweeps and kkt > tol:
        _cd_sweep(G, grad, coef, w, everything)
        sweeps += 1
        active = np.flatnonzero(coef != 0.0)
        inner = 0
        while active.size and inner < 100 * (d + 10):
            big = _cd_sweep(G, grad, coef, w, active)
            inner += 1
            if big <= 0.01 * tol:
                break
            if inner % 10 == 0 and _polish(G, c, w, coef, active):
                grad = c - G @ coef
                break
        # recompute to shed accumulated rounding in the running gradient
        grad = c - G @ coef
        kkt = _kkt_residual(grad, coef, w)
    return coef, kkt, sweeps


def kkt_residual(gram, c, coef, weights) -> float:
    """Largest violation of the weighted-lasso stationarity conditions.

    ``weights`` may omit trailing unpenalized coordinates.
    """
    coef = np.asarray(coef, dtype=float)
    w = np.zeros(coef.size)
    weights = np.asarray(weights, dtype=float)
    if weights.size > coef.size:
        raise ValidationError("more weights than coefficients")
    w[:weights.size] = weights
    grad = c - gram @ coef
    return float(_kkt_residual(grad, coef, w))


def solve_weighted_lasso(problem: LinearizedProblem, weights, config: OptimConfig | None = None,
                         start=None, kkt_tol: float | None = None) -> LassoSolution:
    """Minimize ``(1/2n)||y* - Z* c||^2 + sum_j w_j |c_j|`` over the index block.

    ``weights`` covers the index columns; the linear columns are unpenalized.
    """
    config = config or OptimConfig()
    gram, c = problem.gram()
    return _solve_gram(gram, c, weights, problem.n_beta, config, start, kkt_tol)


def _solve_gram(gram, c, weights, n_beta, config, start=None, kkt_tol=None):
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0):
        raise ValidationError("lasso weights must be nonnegative")
    w = np.concatenate([weights, np.zeros(n_beta)])
    if w.size != c.size:
        raise ValidationError("weight vector does not match the problem dimension")
    coef = np.zeros(c.size) if start is None else np.array(start, dtype=float)
    tol = config.cd_tol if kkt_tol is None else kkt_tol
    coef, kkt, sweeps = _cd_gram(np.ascontiguousarray(gram), c, w, coef, config.cd_max_iters, tol)
    converged = kkt <= tol
    if not converged:
        warnings.warn(f"coordinate descent stopped after {sweeps} sweeps with KKT residual {kkt:.3g}",
                      RuntimeWarning, stacklevel=3)
    return LassoSolution(coef, float(kkt), int(sweeps), bool(converged))


def lasso_objective(gram, c, coef, weights, yty=0.0) -> float:
    """``0.5 b'Gb - c'b + sum w|b|`` (plus ``yty/2`` to give the full least squares value)."""
    n_pen = len(weights)
    return float(0.5 * coef @ gram @ coef - c @ coef + np.sum(weights * np.abs(coef[:n_pen])) + 0.5 * yty)


# --------------------------------------------------------------------------
# profile objective and linearization

def _responses(data, beta, constrained):
    return data.y if constrained else data.y - data.z @ beta


def linearize(data: Dataset, theta: Theta, kernel: KernelSpec, constrained: bool = False,
              columns=None) -> LinearizedProblem:
    """First-order expansion of the profile fit around ``theta``.

    ``constrained=True`` holds ``beta`` at zero and drops its columns.
    ``columns`` restricts the index block (oracle fits); default all p - 1.
    """
    p1 = data.p - 1
    columns = np.arange(p1) if columns is None else np.asarray(columns, dtype=np.int64)
    g = data.x @ theta.alpha
    r = _responses(data, theta.beta, constrained)
    eta, slope, ga, gb = profile_with_gradient(
        data.x, None if constrained else data.z, g, r, theta.alpha_free, kernel, columns)
    if constrained:
        grad = ga
        current = theta.alpha_free[columns]
        extra = np.zeros_like(ga)
    else:
        grad = np.hstack([ga, gb])
        current = np.concatenate([theta.alpha_free[columns], theta.beta])
        extra = np.hstack([np.zeros_like(ga), data.z])
    y_star = data.y - eta + grad @ current
    z_star = grad + extra
    return LinearizedProblem(y_star, z_star, columns, 0 if constrained else data.q, eta, slope)


def _profile_objective(data, alpha_free, beta, kernel, penalty, constrained, scales):
    idx = IndexParam(alpha_free)
    g = data.x @ np.concatenate([[idx.alpha1], alpha_free])
    r = _responses(data, beta, constrained)
    eta, slope = smooth(g, r, kernel)
    rss = float(np.sum((r - eta) ** 2))
    obj = rss / (2 * data.n) + total_penalty(penalty, scales * alpha_free)
    return obj, rss, eta, slope, g


def penalty_scales(data: Dataset, theta: Theta, kernel: KernelSpec, config: OptimConfig,
                   constrained=False) -> np.ndarray:
    """Per-coordinate multipliers ``s_j`` in the penalty ``p_lambda(s_j |alpha_j|)``.

    With ``penalty_scaling="column"`` these are the root mean squares of the
    index columns of the linearized design at ``theta``, which puts lambda on
    the scale of a lasso with standardized columns. ``"none"`` gives ones.
    """
    if config.penalty_scaling == "none":
        return np.ones(data.p - 1)
    prob = linearize(data, theta, kernel, constrained=constrained)
    za = prob.z_star[:, :prob.n_alpha]
    return np.maximum(np.sqrt(np.mean(za * za, axis=0)), 1e-12)


def _project(alpha_free):
    nrm = np.linalg.norm(alpha_free)
    if nrm >= _PROJECT_NORM:
        alpha_free = alpha_free * (_PROJECT_NORM / nrm)
    return alpha_free


def _lla(data, kernel, penalty, config, start: Theta, constrained, columns, scales):
    """Outer LLA loop with step halving on the profile objective."""
    p1 = data.p - 1
    columns = np.arange(p1) if columns is None else np.asarray(columns, dtype=np.int64)
    alpha = np.zeros(p1)
    alpha[columns] = start.alpha_free[columns]
    alpha = _project(alpha)
    beta = np.zeros(data.q) if constrained else np.array(start.beta, dtype=float)

    obj, rss, eta, slope, g = _profile_objective(data, alpha, beta, kernel, penalty, constrained, scales)
    if not np.isfinite(obj):
        raise NumericalError("non-finite profile objective at the starting value")
    trace = [obj]
    status = "max_iter"
    n_iter = 0
    for it in range(config.max_outer_iters):
        n_iter = it + 1
        theta = Theta(beta, IndexParam(alpha))
        prob = linearize(data, theta, kernel, constrained=constrained, columns=columns)
        sc = scales[columns]
        w = sc * lla_weights(penalty, sc * alpha[columns])
        current = np.concatenate([alpha[columns], beta if not constrained else []])
        sol = solve_weighted_lasso(prob, w, config, start=current)
        cand_alpha = np.zeros(p1)
        cand_alpha[columns] = sol.coef[:columns.size]
        cand_beta = beta if constrained else sol.coef[columns.size:]
        cand_alpha = _project(cand_alpha)

        step = 1.0
        accepted = False
        for _ in range(config.max_halvings):
            ta = _project(alpha + step * (cand_alpha - alpha)) if step < 1 else cand_alpha
            tb = beta + step * (cand_beta - beta)
            try:
                res = _profile_objective(data, ta, tb, kernel, penalty, constrained, scales)
            except SingularLocalFit:
                res = None
            if res is not None and np.isfinite(res[0]) and res[0] <= obj:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            status = "stalled"
            break
        moved = float(np.sqrt(np.sum((ta - alpha) ** 2) + np.sum((tb - beta) ** 2)))
        alpha, beta = ta, tb
        obj, rss, eta, slope, g = res
        trace.append(obj)
        if moved <= config.outer_tol:
            status = "converged"
            break

    theta = Theta(beta, IndexParam(alpha))
    return FitResult(
        theta_hat=theta,
        active=ActiveSet.from_support(alpha),
        rss=rss,
        lam=penalty.lam,
        h=kernel.h,
        objective_trace=np.asarray(trace),
        converged=status != "max_iter",
        status=status,
        n_iter=n_iter,
        eta_hat=eta,
        eta_slope=slope,
        index_values=g,
        constrained=constrained,
        penalty_family=penalty.family,
        penalty_scales=scales,
    )


# --------------------------------------------------------------------------
# initialization and tuning

def hbic_cn(n: int) -> float:
    return math.log(math.log(n))


def _hbic_value(rss, n, size, p, cn):
    if rss <= 0:
        warnings.warn("zero residual sum of squares; HBIC is -inf", RuntimeWarning, stacklevel=3)
        return -np.inf
    return math.log(rss / n) + size * cn * math.log(p) / n


def hbic(data: Dataset, fit: FitResult, cn: float | None = None) -> float:
    """``log(RSS/n) + |A| C_n log(p) / n`` with ``C_n = log(log n)`` by default."""
    cn = hbic_cn(data.n) if cn is None else cn
    return _hbic_value(fit.rss, data.n, fit.active.s, data.p, cn)


def _log_grid(lmax, config):
    if config.lambda_grid is not None:
        return np.sort(np.asarray(config.lambda_grid))[::-1]
    return np.geomspace(lmax, lmax * config.lambda_min_ratio, config.n_lambda)


def lasso_init(data: Dataset, config: OptimConfig | None = None, constrained=False) -> Theta:
    """Linear lasso of y on (x, z), x penalized, tuned by HBIC; x block normalized into a direction."""
    config = config or OptimConfig()
    n = data.n
    xc = data.x - data.x.mean(axis=0)
    yc = data.y - data.y.mean()
    if constrained:
        design = xc
        nq = 0
    else:
        design = np.hstack([xc, data.z - data.z.mean(axis=0)])
        nq = data.q
    gram = design.T @ design / n
    c = design.T @ yc / n
    yty = float(yc @ yc)
    p = data.p
    # lambda_max: all x coefficients zero given the unpenalized z fit
    if nq:
        zz = gram[p:, p:]
        bz = np.linalg.lstsq(zz, c[p:], rcond=None)[0]
        grad0 = c[:p] - gram[:p, p:] @ bz
    else:
        grad0 = c
    if config.penalty_scaling == "column":
        sd = np.maximum(np.sqrt(np.diag(gram)[:p]), 1e-12)
    else:
        sd = np.ones(p)
    lmax = float(np.max(np.abs(grad0) / sd))
    if not lmax > 0:
        raise InitFailure("response is uncorrelated with every index covariate")
    grid = np.geomspace(lmax, lmax * config.lambda_min_ratio, config.n_lambda)
    cn = hbic_cn(n) if config.hbic_cn is None else config.hbic_cn
    coef = np.zeros(p + nq)
    best = None
    for lam in grid:
        sol = _solve_gram(gram, c, lam * sd, nq, config, start=coef, kkt_tol=1e-7)
        coef = sol.coef
        rss = max(yty - 2 * n * (c @ coef) + n * (coef @ gram @ coef), 1e-300)
        crit = _hbic_value(rss, n, int(np.count_nonzero(coef[:p])), p, cn)
        if best is None or crit < best[0]:
            best = (crit, coef.copy())
    coef = best[1]
    a = coef[:p]
    beta = coef[p:] if nq else np.zeros(data.q)
    nrm = np.linalg.norm(a)
    if nrm == 0:
        return Theta(beta, IndexParam(np.zeros(p - 1)))
    a = a / nrm
    if a[0] == 0:
        # first coordinate unselected: keep the direction but leave room for alpha_1 > 0
        free = a[1:] * 0.9
    else:
        free = (a * np.sign(a[0]))[1:]
        free = _project(free)
    return Theta(beta, IndexParam(free))


def lambda_max(data: Dataset, theta: Theta, kernel: KernelSpec, constrained=False, columns=None,
               scales=None) -> float:
    """Smallest lambda at which the lasso-weighted linearized problem at ``theta`` has all index coefficients zero."""
    prob = linearize(data, theta, kernel, constrained=constrained, columns=columns)
    if scales is None:
        scales = np.ones(data.p - 1)
    gram, c = prob.gram()
    na = prob.n_alpha
    if prob.n_beta:
        bz = np.linalg.lstsq(gram[na:, na:], c[na:], rcond=None)[0]
        grad = c[:na] - gram[:na, na:] @ bz
    else:
        grad = c[:na]
    return float(np.max(np.abs(grad) / scales[prob.alpha_columns])) if grad.size else 0.0


def _check_fit_inputs(data):
    if data.n <= data.q:
        raise ValidationError("need n > q to identify beta")


def fit_plsim(data: Dataset, kernel: KernelSpec, penalty: PenaltySpec,
              config: OptimConfig | None = None, init: Theta | None = None,
              support: ActiveSet | None = None, scales=None) -> FitResult:
    """Profile partial penalized least squares fit at a fixed lambda.

    ``support`` restricts the index coefficients that may be nonzero (oracle fits).
    ``scales`` overrides the penalty multipliers, which otherwise come from
    the linearization at ``init`` (see ``penalty_scales``).
    """
    config = config or OptimConfig()
    _check_fit_inputs(data)
    if init is None:
        init = lasso_init(data, config)
    cols = None if support is None else support.indices
    if scales is None:
        scales = penalty_scales(data, init, kernel, config)
    return _lla(data, kernel, penalty, config, init, False, cols, scales)


def fit_constrained(data: Dataset, kernel: KernelSpec, penalty: PenaltySpec,
                    config: OptimConfig | None = None, init: Theta | None = None,
                    support: ActiveSet | None = None, scales=None) -> FitResult:
    """Fit with ``beta`` held at zero; the smoother acts on the raw response."""
    config = config or OptimConfig()
    _check_fit_inputs(data)
    if init is None:
        init = lasso_init(data, config, constrained=True)
    init = Theta(np.zeros(data.q), init.index)
    cols = None if support is None else support.indices
    if scales is None:
        scales = penalty_scales(data, init, kernel, config, constrained=True)
    return _lla(data, kernel, penalty, config, init, True, cols, scales)


def _better_start(data, kernel, penalty, constrained, scales, warm, init):
    """The warm start unless the initial value has a strictly lower objective at this lambda.

    A descending path that collapses onto ``alpha = e_1`` at large lambda can
    otherwise stay in that basin for the whole path.
    """
    vals = []
    for th in (warm, init):
        try:
            obj = _profile_objective(data, _project(np.array(th.alpha_free)), np.zeros(data.q)
                                     if constrained else th.beta, kernel, penalty, constrained, scales)[0]
        except SingularLocalFit:
            obj = np.inf
        vals.append(obj)
    return init if vals[1] < vals[0] else warm


def select_lambda(data: Dataset, kernel: KernelSpec, config: OptimConfig | None = None,
                  penalty: PenaltySpec | None = None, constrained: bool = False,
                  init: Theta | None = None, ascending: bool = False):
    """Fit along a lambda grid with warm starts and return the HBIC minimizer.

    Returns ``(lambda, fit)``; ``fit.lambda_path`` lists ``(lambda, hbic, |A|)``
    for every grid point. Ties go to the larger lambda.

    The grid is swept in descending order (ascending if ``ascending``) with
    warm starts, then, unless ``config.return_sweep`` is off, once more in the
    opposite direction starting from the last fit. SCAD paths are not
    monotone, and a single warm-started pass can jump past a sparse solution.
    At each lambda the fit with the lower penalized objective is kept.

    A descending sweep stops once the active set exceeds
    ``config.max_active``; the remaining (smaller) lambdas are reported with
    an HBIC of nan and size -1, as are lambdas whose fit failed.
    """
    config = config or OptimConfig()
    penalty = penalty or PenaltySpec()
    _check_fit_inputs(data)
    if init is None:
        init = lasso_init(data, config, constrained=constrained)
    if constrained:
        init = Theta(np.zeros(data.q), init.index)
    scales = penalty_scales(data, init, kernel, config, constrained=constrained)
    if config.lambda_grid is None:
        lmax = lambda_max(data, init, kernel, constrained=constrained, scales=scales)
        if not lmax > 0:
            raise InitFailure("could not determine lambda_max")
        grid = _log_grid(lmax, config)
    else:
        grid = _log_grid(None, config)
    order = grid[::-1] if ascending else grid
    cn = hbic_cn(data.n) if config.hbic_cn is None else config.hbic_cn
    cap = config.max_active
    if cap is None:
        cap = max(1, math.ceil(data.n / (cn * math.log(data.p))))
    fits = {}

    def sweep(lams, start, stop_when_dense):
        for lam in lams:
            pen = penalty.with_lambda(lam)
            if start is not init:
                start = _better_start(data, kernel, pen, constrained, scales, start, init)
            try:
                fit = _lla(data, kernel, pen, config, start, constrained, None, scales)
            except (NumericalError, SingularLocalFit) as exc:
                warnings.warn(f"fit at lambda={lam:.4g} failed: {exc}", RuntimeWarning, stacklevel=3)
                fit = None
            prev = fits.get(lam)
            if fit is not None and (prev is None
                                    or fit.objective_trace[-1] < prev.objective_trace[-1]):
                fits[lam] = fit
            if config.warm_start and fits.get(lam) is not None:
                start = fits[lam].theta_hat
            if stop_when_dense and fits.get(lam) is not None and fits[lam].active.s > cap:
                return lam
        return lams[-1]

    last = sweep(order, init, not ascending and config.warm_start)
    if config.warm_start and config.return_sweep and fits.get(last) is not None:
        back = order[:np.flatnonzero(order == last)[0]][::-1]
        sweep(back, fits[last].theta_hat, False)
    results = {lam: None if lam not in fits else (hbic(data, fits[lam], cn), fits[lam])
               for lam in grid}
    path = []
    best = None
    for lam in grid:  # descending, so the first minimum found is the larger lambda
        entry = results[lam]
        if entry is None:
            path.append((float(lam), np.nan, -1))
            continue
        crit, fit = entry
        path.append((float(lam), float(crit), fit.active.s))
        if best is None or crit < best[0]:
            best = (crit, lam, fit)
    if best is None:
        raise AllFitsFailed("every lambda on the grid failed")
    fit = best[2]
    fit.lambda_path = path
    return float(best[1]), fit
