"""Simulation designs, a seeded replication runner and summary tables.

Every replication draws from its own generator seeded by
``SeedSequence([seed, rep])``, so a table depends only on the scenario,
the recipe and the seed, never on how replications are spread over workers.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import PLSIMError, UnknownScenario, ValidationError
from .inference import NullLinkSpec, test_beta, test_eta
from .model import ActiveSet, Dataset
from .optimizer import OptimConfig, fit_plsim, select_lambda
from .penalty import PenaltySpec
from .smoother import KernelSpec

MODELS = ("m1a", "m1b_i", "m1b_ii", "m1b_iii", "m2")
RECIPES = ("estimate", "estimate_oracle", "test_beta", "test_beta_oracle",
           "test_eta", "test_eta_oracle")

# link shift constants for the model-2 alternative
M2_A = 1.3409
M2_B = 0.3912

_DEFAULTS = {
    # rho, bandwidth h, noise scale
    "m1a": (0.25, 0.37, 1.0),
    "m1b_i": (0.25, 0.37, 0.5),
    "m1b_ii": (0.75, 0.44, 0.5),
    "m1b_iii": (0.75, 0.44, 0.5),
    "m2": (0.25, 0.37, 0.75),
}

TRACE_SLACK = 1e-6


@dataclass(frozen=True)
class SimScenario:
    """One simulation design.

    ``signal`` is ``c1`` (so ``beta = c1 * (1, 1)``) for the model-1 family
    and ``c2`` (the size of the sine departure) for model 2. ``rho``, ``h``
    and ``noise_scale`` default to the values tied to each model; ``b`` is
    the specification-test bandwidth (data-driven when None).
    """

    model: str = "m1a"
    n: int = 200
    p: int = 100
    signal: float = 0.0
    rho: float | None = None
    h: float | None = None
    b: float | None = None
    noise_scale: float | None = None
    seed: int = 20240101
    reps: int = 200

    def __post_init__(self):
        if self.model not in MODELS:
            raise UnknownScenario(f"unknown model {self.model!r}; choose from {', '.join(MODELS)}")
        rho, h, noise = _DEFAULTS[self.model]
        if self.rho is None:
            object.__setattr__(self, "rho", rho)
        if self.h is None:
            object.__setattr__(self, "h", h)
        if self.noise_scale is None:
            object.__setattr__(self, "noise_scale", noise)
        if self.n < 10 or self.p < 10:
            raise ValidationError("designs need n >= 10 and p >= 10 (the layout uses X_10)")
        if not abs(self.rho) < 1:
            raise ValidationError("rho must lie in (-1, 1)")
        if self.reps < 1:
            raise ValidationError("reps must be positive")
        if not (self.h > 0 and self.noise_scale >= 0):
            raise ValidationError("h must be positive and noise_scale nonnegative")

    def with_signal(self, signal) -> "SimScenario":
        return replace(self, signal=float(signal))


@dataclass(frozen=True, eq=False)
class Truth:
    alpha: np.ndarray
    beta: np.ndarray
    active: ActiveSet
    zeta: float | None = None

    @property
    def positions(self) -> np.ndarray:
        """Full-vector positions of the nonzero index coefficients."""
        return np.flatnonzero(self.alpha)


def gen_ar_normal(n: int, dim: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Rows i.i.d. normal with ``cov[j, k] = rho^|j - k|`` via the AR(1) recursion."""
    if not abs(rho) < 1:
        raise ValidationError("rho must lie in (-1, 1)")
    xi = rng.standard_normal((n, dim))
    out = np.empty((n, dim))
    out[:, 0] = xi[:, 0]
    c = math.sqrt(1.0 - rho * rho)
    for k in range(1, dim):
        out[:, k] = rho * out[:, k - 1] + c * xi[:, k]
    return out


def _direction(p, weights):
    alpha = np.zeros(p)
    alpha[[0, 1, 9]] = weights
    return alpha / np.linalg.norm(alpha)


def _truth(alpha, beta, zeta=None):
    return Truth(alpha, np.asarray(beta, float), ActiveSet.from_support(alpha[1:]), zeta)


def gen_model_1a(sc: SimScenario, rng):
    x = gen_ar_normal(sc.n, sc.p, sc.rho, rng)
    z = gen_ar_normal(sc.n, 2, sc.rho, rng)
    alpha = _direction(sc.p, [2.0, 1.0, 1.0])
    beta = np.full(2, sc.signal)
    y = np.exp(x @ alpha) + z @ beta + sc.noise_scale * rng.standard_normal(sc.n)
    return Dataset(y, x, z), _truth(alpha, beta)


def gen_model_1b(sc: SimScenario, rng):
    if sc.model == "m1b_iii":
        v = gen_ar_normal(sc.n, sc.p + 2, sc.rho, rng)
        z = v[:, 2:4]
        x = np.column_stack([v[:, :2], v[:, 4:]])
    else:
        x = gen_ar_normal(sc.n, sc.p, sc.rho, rng)
        z = gen_ar_normal(sc.n, 2, sc.rho, rng)
    alpha = _direction(sc.p, [1.0, 1.0, 1.0])
    beta = np.full(2, sc.signal)
    y = np.sin(0.5 * np.pi * (x @ alpha)) + z @ beta + sc.noise_scale * rng.standard_normal(sc.n)
    return Dataset(y, x, z), _truth(alpha, beta)


def m2_link(t, c2, zeta=1.0):
    t = np.asarray(t, dtype=float)
    return c2 * np.sin(np.pi * (t - M2_A) / (M2_B - M2_A)) + zeta * t


def gen_model_2(sc: SimScenario, rng):
    x = gen_ar_normal(sc.n, sc.p, sc.rho, rng)
    z = gen_ar_normal(sc.n, 2, sc.rho, rng)
    alpha = _direction(sc.p, [2.0, 1.0, 1.0])
    beta = np.array([0.5, -0.3])
    y = m2_link(x @ alpha, sc.signal) + z @ beta + sc.noise_scale * rng.standard_normal(sc.n)
    return Dataset(y, x, z), _truth(alpha, beta, zeta=1.0)


def generate(sc: SimScenario, rng):
    if sc.model == "m1a":
        return gen_model_1a(sc, rng)
    if sc.model.startswith("m1b"):
        return gen_model_1b(sc, rng)
    if sc.model == "m2":
        return gen_model_2(sc, rng)
    raise UnknownScenario(sc.model)


def replicate_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(rep)]))


# ----------------------------------------------------------------------------
# recipes


def _trace_ok(*fits):
    for f in fits:
        tr = np.asarray(f.objective_trace)
        if tr.size > 1 and np.any(np.diff(tr) > TRACE_SLACK):
            return False
    return True


def _estimate_record(fit, truth, data):
    pos = truth.positions
    est = np.concatenate([fit.beta, fit.alpha[pos]])
    true = np.concatenate([truth.beta, truth.alpha[pos]])
    sel = np.zeros(data.p - 1, dtype=bool)
    sel[fit.active.indices] = True
    tmask = np.zeros(data.p - 1, dtype=bool)
    tmask[truth.active.indices] = True
    return {
        "tp": int(np.sum(sel & tmask)),
        "fp": int(np.sum(sel & ~tmask)),
        "n_true": int(tmask.sum()),
        "n_null": int((~tmask).sum()),
        "err": (est - true).tolist(),
        "lam": float(fit.lam),
        "converged": bool(fit.converged),
    }


def run_recipe(recipe: str, data: Dataset, truth: Truth, sc: SimScenario,
               config: OptimConfig | None = None, level: float = 0.05) -> dict:
    """Run one pipeline on one dataset and return a flat record."""
    config = config or OptimConfig()
    kernel = KernelSpec("gaussian", sc.h)
    penalty = PenaltySpec("scad")
    oracle = recipe.endswith("_oracle")
    support = truth.active if oracle else None
    if recipe.startswith("estimate"):
        if oracle:
            fit = fit_plsim(data, kernel, penalty.with_lambda(0.0), config, support=support)
        else:
            _, fit = select_lambda(data, kernel, config, penalty)
        rec = _estimate_record(fit, truth, data)
        rec["trace_ok"] = _trace_ok(fit)
        return rec
    if recipe.startswith("test_beta"):
        res = test_beta(data, kernel, penalty, config, support=support)
        rec = _estimate_record(res.unrestricted, truth, data)
        rec.update(stat=res.t_n, p_value=res.p_value, reject=bool(res.p_value < level),
                   trace_ok=_trace_ok(res.unrestricted, res.restricted))
        return rec
    if recipe.startswith("test_eta"):
        if oracle:
            fit = fit_plsim(data, kernel, penalty.with_lambda(0.0), config, support=support)
        else:
            _, fit = select_lambda(data, kernel, config, penalty)
        res = test_eta(data, fit, NullLinkSpec.linear(), b=sc.b)
        rec = _estimate_record(fit, truth, data)
        rec.update(stat=res.v_n, p_value=res.p_value, reject=bool(res.p_value < level),
                   trace_ok=_trace_ok(fit))
        return rec
    raise ValidationError(f"unknown recipe {recipe!r}; choose from {', '.join(RECIPES)}")


def _one(args):
    sc, recipe, rep, config, level = args
    with threadpool_limits(limits=1):
        try:
            data, truth = generate(sc, replicate_rng(sc.seed, rep))
            return rep, run_recipe(recipe, data, truth, sc, config, level), None
        except (PLSIMError, np.linalg.LinAlgError, FloatingPointError) as exc:
            return rep, None, f"{type(exc).__name__}: {exc}"


# ----------------------------------------------------------------------------
# summary


COEF_NAMES = ("beta1", "beta2", "alpha1", "alpha2", "alpha10")

CSV_COLUMNS = (
    "model", "recipe", "n", "p", "signal", "reps", "failures", "trace_violations",
    "T", "F",
    *(f"bias_{c}" for c in COEF_NAMES), *(f"mse_{c}" for c in COEF_NAMES),
    "rate", "rate_se",
)


@dataclass
class SummaryTable:
    """Aggregated rows, one per (scenario, signal, recipe).

    ``T`` and ``F`` are fractions of true nonzero (resp. true zero) free
    index coefficients selected. ``rate`` is the rejection rate of a test
    recipe and ``rate_se`` its Monte-Carlo standard error.
    """

    rows: list = field(default_factory=list)
    records: list = field(default_factory=list, repr=False)
    metadata: dict = field(default_factory=dict)

    def extend(self, other: "SummaryTable"):
        self.rows.extend(other.rows)
        self.records.extend(other.records)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in self.rows:
            w.writerow([_fmt(row.get(c)) for c in CSV_COLUMNS])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                fh.write(text)
        return text

    def to_json(self, path=None) -> str:
        doc = {"metadata": self.metadata, "columns": list(CSV_COLUMNS),
               "rows": [{c: row.get(c) for c in CSV_COLUMNS} for row in self.rows]}
        text = json.dumps(doc, indent=2, allow_nan=True)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def summarize(sc: SimScenario, recipe: str, outcomes: list) -> dict:
    """Aggregate ``(rep, record, error)`` triples into one table row."""
    good = [r for _, r, e in outcomes if e is None]
    row = {"model": sc.model, "recipe": recipe, "n": sc.n, "p": sc.p,
           "signal": float(sc.signal), "reps": len(outcomes),
           "failures": len(outcomes) - len(good)}
    row["trace_violations"] = sum(1 for r in good if not r["trace_ok"])
    if not good:
        return row
    tp = sum(r["tp"] for r in good)
    fp = sum(r["fp"] for r in good)
    nt = sum(r["n_true"] for r in good)
    nf = sum(r["n_null"] for r in good)
    row["T"] = tp / nt if nt else float("nan")
    row["F"] = fp / nf if nf else float("nan")
    err = np.array([r["err"] for r in good])
    for k, name in enumerate(COEF_NAMES):
        row[f"bias_{name}"] = float(np.mean(err[:, k]))
        row[f"mse_{name}"] = float(np.mean(err[:, k] ** 2))
    if "reject" in good[0]:
        rate = sum(r["reject"] for r in good) / len(good)
        row["rate"] = rate
        row["rate_se"] = math.sqrt(rate * (1 - rate) / len(good))
    return row


def run_replications(sc: SimScenario, recipe: str = "estimate", threads: int = 1,
                     config: OptimConfig | None = None, level: float = 0.05) -> SummaryTable:
    """Run ``sc.reps`` replications of ``recipe`` and aggregate them.

    Results do not depend on ``threads``: each replication has its own seed,
    runs with single-threaded BLAS, and outcomes are ordered by replication.
    """
    if recipe not in RECIPES:
        raise ValidationError(f"unknown recipe {recipe!r}; choose from {', '.join(RECIPES)}")
    if threads < 1:
        raise ValidationError("threads must be positive")
    config = config or OptimConfig()
    tasks = [(sc, recipe, rep, config, level) for rep in range(sc.reps)]
    if threads == 1:
        outcomes = [_one(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_one, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    outcomes.sort(key=lambda o: o[0])
    table = SummaryTable()
    table.rows.append(summarize(sc, recipe, outcomes))
    table.records.extend({"model": sc.model, "recipe": recipe, "signal": sc.signal,
                          "rep": rep, "error": err, **(rec or {})}
                         for rep, rec, err in outcomes)
    table.metadata = run_metadata([sc])
    return table


def run_metadata(scenarios) -> dict:
    import numba
    import scipy

    from . import __version__
    return {
        "plsim": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "scenarios": [asdict(s) for s in scenarios],
    }


def run_study(base: SimScenario, signals, recipe: str, threads: int = 1,
              config: OptimConfig | None = None) -> SummaryTable:
    """One row per signal level."""
    table = SummaryTable()
    scs = [base.with_signal(s) for s in signals]
    for sc in scs:
        table.extend(run_replications(sc, recipe, threads, config))
    table.metadata = run_metadata(scs)
    return table
