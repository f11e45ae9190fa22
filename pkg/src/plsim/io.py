"""CSV ingestion, screening, the linear/index variable partition, and result files."""
from __future__ import annotations

import csv
import json
import math
import os
import warnings
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import ConstantColumn, ParseError, SingularLocalFit, ValidationError
from .model import Dataset, IndexParam, Theta
from .smoother import KernelSpec, smooth

# ----------------------------------------------------------------------------
# reading


def read_csv(path):
    """Numeric CSV with a header row. Returns ``(names, matrix)``.

    Row numbers in errors count the header as row 1.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file", row=1) from None
        names = [h.strip() for h in header]
        if len(set(names)) != len(names) or any(not h for h in names):
            raise ParseError(f"{path}: header has empty or duplicate column names", row=1)
        rows = []
        for r, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(names):
                raise ParseError(f"{path}: row {r} has {len(rec)} fields, expected {len(names)}", row=r)
            vals = []
            for c, cell in enumerate(rec):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(f"{path}: row {r}, column {names[c]!r}: "
                                     f"cannot parse {cell!r} as a number", row=r, col=names[c]) from None
                if not math.isfinite(v):
                    raise ParseError(f"{path}: row {r}, column {names[c]!r}: non-finite value",
                                     row=r, col=names[c])
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise ParseError(f"{path}: no data rows", row=2)
    return names, np.array(rows, dtype=float)


def standardize(a, names=None):
    """Centre each column and scale it to unit population variance."""
    a = np.asarray(a, dtype=float)
    squeeze = a.ndim == 1
    a = a.reshape(a.shape[0], -1)
    mean = a.mean(axis=0)
    sd = a.std(axis=0)
    scale = np.maximum(np.abs(mean), 1.0)
    const = ~(sd > 1e-14 * scale)
    if np.any(const):
        j = int(np.flatnonzero(const)[0])
        label = names[j] if names is not None else j
        raise ConstantColumn(f"column {label!r} is constant and cannot be standardized")
    out = (a - mean) / sd
    return out[:, 0] if squeeze else out


@dataclass(frozen=True)
class Roles:
    """Column roles. ``index=None`` puts every remaining column in the index part."""

    response: str
    linear: tuple
    index: tuple | None = None


def _split(spec):
    if spec is None:
        return None
    if isinstance(spec, str):
        return tuple(s.strip() for s in spec.split(",") if s.strip())
    return tuple(spec)


def resolve_roles(names, roles: Roles):
    lookup = {n: i for i, n in enumerate(names)}
    linear = _split(roles.linear) or ()
    index = _split(roles.index)
    for col in (roles.response, *linear, *(index or ())):
        if col not in lookup:
            raise ValidationError(f"column {col!r} not found in the input header")
    if index is None:
        taken = {roles.response, *linear}
        index = tuple(n for n in names if n not in taken)
    overlap = set(linear) & set(index) | ({roles.response} & (set(linear) | set(index)))
    if overlap:
        raise ValidationError(f"columns assigned to more than one role: {sorted(overlap)}")
    return lookup[roles.response], [lookup[c] for c in linear], [lookup[c] for c in index]


def load_and_standardize(path, roles: Roles) -> Dataset:
    """Read ``path`` and return a standardized :class:`Dataset` (population divisor)."""
    names, mat = read_csv(path)
    iy, iz, ix = resolve_roles(names, roles)
    if not iz:
        raise ValidationError("at least one linear-part column is required")
    cols = [iy, *ix, *iz]
    std = standardize(mat[:, cols], [names[c] for c in cols])
    p = len(ix)
    return Dataset(std[:, 0], std[:, 1:1 + p], std[:, 1 + p:])


# ----------------------------------------------------------------------------
# screening and partition


def correlations(y, x):
    """Pearson correlation of ``y`` with each column of ``x`` (0 for constant columns)."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    yc = y - y.mean()
    xc = x - x.mean(axis=0)
    den = np.sqrt((xc * xc).sum(axis=0) * (yc @ yc))
    num = yc @ xc
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def screen_features(data, keep: int) -> np.ndarray:
    """Indices of the ``keep`` index columns with the largest |corr(y, x_j)|.

    Ties go to the lower column index. The result is in rank order.
    """
    y, x = (data.y, data.x) if isinstance(data, Dataset) else data
    p = np.shape(x)[1]
    if not 1 <= keep <= p:
        raise ValidationError(f"keep must lie in [1, {p}]")
    score = np.abs(correlations(y, x))
    order = np.lexsort((np.arange(p), -score))
    return order[:keep]


@dataclass(frozen=True, eq=False)
class PartitionResult:
    linear_vars: np.ndarray
    index_vars: np.ndarray
    scores: np.ndarray
    diagnostics: list = field(default_factory=list)
    settings: dict = field(default_factory=dict)


def _band_check(xj, y, kernel, band_k, grid_size=100):
    lo, hi = np.quantile(xj, [0.025, 0.975])
    grid = np.linspace(lo, hi, grid_size + 2)[1:-1]
    m_grid, _ = smooth(xj, y, kernel, targets=grid)
    m_loo, _ = smooth(xj, y, kernel)
    s2_grid, _ = smooth(xj, (y - m_loo) ** 2, kernel, targets=grid)
    sd = np.sqrt(np.maximum(s2_grid, 1e-8))
    slope, intercept = np.polyfit(xj, y, 1)
    line = intercept + slope * grid
    excess = np.abs(line - m_grid) / (band_k * sd)
    return bool(np.all(excess <= 1.0)), float(excess.max())


def partition_variables(data, corr_threshold: float = 0.3, band_k: float = 0.3,
                        kernel: KernelSpec | None = None, names=None) -> PartitionResult:
    """Split candidate columns into a linear part and an index part.

    A column goes to the linear part when its correlation with the response
    exceeds ``corr_threshold`` in absolute value and its least squares line
    stays inside the band ``m(x) +/- band_k * sd(x)`` around a local linear
    fit at 100 points spanning the central 95% of the column. ``data`` is a
    :class:`Dataset` (its ``x`` columns are the candidates) or a pair
    ``(y, x)``. The default kernel is Gaussian with the normal-reference
    bandwidth ``1.06 sd n^(-1/5)`` per column.
    """
    if not (corr_threshold > 0 and band_k > 0):
        raise ValidationError("thresholds must be positive")
    y, x = (data.y, data.x) if isinstance(data, Dataset) else data
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    n, p = x.shape
    names = list(names) if names is not None else [str(j) for j in range(p)]
    corr = correlations(y, x)
    linear, index, diags = [], [], []
    for j in range(p):
        d = {"column": names[j], "corr": float(corr[j])}
        if not abs(corr[j]) > corr_threshold:
            d["reason"] = "correlation gate"
            index.append(j)
            diags.append(d)
            continue
        xj = x[:, j]
        kern = kernel or KernelSpec("gaussian", 1.06 * xj.std() * n ** (-0.2))
        try:
            inside, worst = _band_check(xj, y, kern, band_k)
        except SingularLocalFit as exc:
            warnings.warn(f"column {names[j]!r}: {exc}; assigned to the index part",
                          RuntimeWarning, stacklevel=2)
            d["reason"] = "singular local fit"
            index.append(j)
            diags.append(d)
            continue
        d.update(reason="band", max_excess=worst, bandwidth=kern.h)
        (linear if inside else index).append(j)
        diags.append(d)
    settings = {"corr_threshold": corr_threshold, "band_k": band_k, "grid_points": 100,
                "grid_range": "central 95%, endpoints excluded", "variance_floor": 1e-8}
    return PartitionResult(np.array(linear, dtype=np.int64), np.array(index, dtype=np.int64),
                           corr, diags, settings)


# ----------------------------------------------------------------------------
# writing


def _clean(v):
    """JSON-ready copy: arrays to lists, non-finite floats to None."""
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def fit_document(fit, data: Dataset | None = None, extra: dict | None = None) -> dict:
    doc = {
        "beta": fit.beta,
        "alpha_free": fit.theta_hat.alpha_free,
        "alpha": fit.alpha,
        "active": fit.active.indices,
        "lambda": fit.lam,
        "h": fit.h,
        "rss": fit.rss,
        "penalty": fit.penalty_family,
        "constrained": fit.constrained,
        "diagnostics": {
            "converged": fit.converged,
            "status": fit.status,
            "n_iter": fit.n_iter,
            "objective_trace": fit.objective_trace,
            "lambda_path": [list(r) for r in fit.lambda_path],
        },
    }
    if data is not None:
        doc["n"], doc["p"], doc["q"] = data.n, data.p, data.q
    if extra:
        doc.update(extra)
    return _clean(doc)


def beta_test_document(res) -> dict:
    return _clean({"test": "beta", "t_n": res.t_n, "df": res.df, "p_value": res.p_value,
                   "rss0": res.rss0, "rss1": res.rss1, "lambda": res.lam, "flags": res.flags})


def eta_test_document(res) -> dict:
    return _clean({"test": "eta", "s_n": res.s_n, "sigma2_s": res.sigma_s_hat, "v_n": res.v_n,
                   "v_n_sq": res.v_n_sq, "p_value": res.p_value, "b": res.bandwidth_b,
                   "zeta_hat": res.zeta_hat, "flags": {"bandwidth_rule": res.bandwidth_rule}})


def write_json(path, doc):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, allow_nan=False)
        fh.write("\n")


def write_curve(path, data: Dataset, fit):
    """Rows ``(index, y - z beta, eta_hat)`` for each observation."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "partial_residual", "eta_hat"])
        r = data.y - data.z @ fit.beta
        for g, pr, e in zip(fit.index_values, r, fit.eta_hat):
            w.writerow([repr(float(g)), repr(float(pr)), repr(float(e))])


def emit_results(outdir, *, data=None, fit=None, beta_test=None, eta_test=None,
                 summary=None, metadata=None) -> list:
    """Write whichever of fit.json, tests.json, summary.csv and curve.csv apply. Returns paths."""
    os.makedirs(outdir, exist_ok=True)
    written = []
    if fit is not None:
        path = os.path.join(outdir, "fit.json")
        write_json(path, fit_document(fit, data, {"metadata": metadata} if metadata else None))
        written.append(path)
        if data is not None:
            path = os.path.join(outdir, "curve.csv")
            write_curve(path, data, fit)
            written.append(path)
    tests = []
    if beta_test is not None:
        tests.append(beta_test_document(beta_test))
    if eta_test is not None:
        tests.append(eta_test_document(eta_test))
    if tests:
        path = os.path.join(outdir, "tests.json")
        write_json(path, _clean({"tests": tests, "metadata": metadata or {}}))
        written.append(path)
    if summary is not None:
        path = os.path.join(outdir, "summary.csv")
        summary.to_csv(path)
        written.append(path)
        path = os.path.join(outdir, "summary.json")
        summary.to_json(path)
        written.append(path)
    return written


def load_fit_json(path) -> Theta:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return Theta(np.array(doc["beta"], dtype=float), IndexParam(np.array(doc["alpha_free"], dtype=float)))


def load_schema(name: str) -> dict:
    """One of the published JSON schemas: ``fit``, ``tests`` or ``partition``."""
    text = resources.files("plsim").joinpath("schemas", f"{name}.schema.json").read_text(encoding="utf-8")
    return json.loads(text)
