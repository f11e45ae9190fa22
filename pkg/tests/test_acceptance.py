"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The Monte-Carlo criteria share a cache, so the null replications of the
beta test serve both the size check and the distribution-shape check, and
the descent check pools every replication run here. The full module takes
on the order of an hour per available core.
"""
import math
import os
import time

import numpy as np
import pytest
from scipy import integrate, special, stats

from plsim.cli import main
from plsim.inference import (SigmaStarEstimate, chisq_sf, noncentral_chisq_sf,
                             theoretical_power)
from plsim.model import ActiveSet, IndexParam, Theta
from plsim.optimizer import (OptimConfig, kkt_residual, lasso_objective, select_lambda,
                             solve_weighted_lasso)
from plsim.penalty import PenaltySpec
from plsim.simulation import SimScenario, run_replications
from plsim.smoother import KernelSpec, profile_eta, profile_eta_gradient, smooth, smoother_matrix

from conftest import ACCEPTANCE_LINES, make_data
from lasso_oracle import lasso_by_enumeration, problem_from, random_instance

pytestmark = pytest.mark.slow

SEED = 20240101
THREADS = os.cpu_count() or 1
_STUDIES = {}


def report(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


def study(model, recipe, signal, reps, p):
    key = (model, recipe, signal, reps, p)
    if key not in _STUDIES:
        sc = SimScenario(model, p=p, signal=signal, reps=reps, seed=SEED)
        t0 = time.perf_counter()
        table = run_replications(sc, recipe, threads=THREADS)
        _STUDIES[key] = (table, time.perf_counter() - t0)
    return _STUDIES[key]


def null_beta_records():
    table, _ = study("m1b_i", "test_beta", 0.0, 500, 100)
    return [r for r in table.records if r["error"] is None]


def rate_of(records):
    k = sum(r["reject"] for r in records)
    m = len(records)
    return k / m, math.sqrt((k / m) * (1 - k / m) / m)


# ----------------------------------------------------------------------------
# deterministic criteria


def test_criterion_01_smoother_exactness():
    smooth(np.linspace(0, 1, 12), np.ones(12), KernelSpec())  # compile outside the clock
    rng = np.random.default_rng(SEED)
    worst_fit = worst_sum = 0.0
    t0 = time.perf_counter()
    for _ in range(100):
        n = int(rng.integers(20, 200))
        g = rng.standard_normal(n) * rng.uniform(0.5, 2.0)
        a, b = rng.normal(size=2)
        family = ("gaussian", "epanechnikov")[int(rng.integers(2))]
        if family == "gaussian":
            h = rng.uniform(0.3, 1.0)
        else:
            # compact windows must hold two other points around every target
            gaps = np.sort(np.abs(g[:, None] - g[None, :]), axis=1)[:, 2]
            h = rng.uniform(1.2, 2.0) * gaps.max()
        kern = KernelSpec(family, h)
        eta, _ = smooth(g, a + b * g, kern)
        worst_fit = max(worst_fit, np.max(np.abs(eta - (a + b * g))))
        worst_sum = max(worst_sum, np.max(np.abs(smoother_matrix(g, kern).sum(axis=1) - 1)))
    elapsed = time.perf_counter() - t0
    ok = worst_fit <= 1e-10 and worst_sum <= 1e-10 and elapsed < 5
    assert report(1, ok, f"max|eta_hat-eta|={worst_fit:.2e} max|rowsum-1|={worst_sum:.2e} "
                         f"time={elapsed:.2f}s")


def test_criterion_02_gradient_fidelity():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        data, alpha, beta = make_data(seed, n=50, p=5, q=2)
        rng = np.random.default_rng(seed)
        theta = Theta(beta + 0.1 * rng.standard_normal(2),
                      IndexParam(alpha[1:] + 0.05 * rng.standard_normal(4)))
        kern = KernelSpec("gaussian", rng.uniform(0.6, 1.0))
        grad = profile_eta_gradient(data, theta, ActiveSet(np.arange(4)), kern)
        vec = np.concatenate([theta.beta, theta.alpha_free])

        def eta_at(v):
            return profile_eta(data, Theta(v[:2], IndexParam(v[2:])), kern).eta_hat

        fd = np.empty_like(grad)
        for k in range(vec.size):
            e = np.zeros(vec.size)
            e[k] = 1e-6
            fd[:, k] = (eta_at(vec + e) - eta_at(vec - e)) / 2e-6
        worst = max(worst, np.max(np.abs(grad - fd)) / np.max(np.abs(fd)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and elapsed < 30
    assert report(2, ok, f"max relative error={worst:.2e} time={elapsed:.2f}s")


def test_criterion_03_weighted_lasso_oracle():
    rng = np.random.default_rng(SEED)
    t0 = time.perf_counter()
    gap = kkt = 0.0
    for _ in range(200):
        gram, c, weights, q = random_instance(rng)
        sol = solve_weighted_lasso(problem_from(gram, c, q), weights)
        ref_val, _ = lasso_by_enumeration(gram, c, weights)
        gap = max(gap, abs(lasso_objective(gram, c, sol.coef, weights) - ref_val))
        kkt = max(kkt, kkt_residual(gram, c, sol.coef, weights))
    elapsed = time.perf_counter() - t0
    ok = gap <= 1e-6 and kkt <= 1e-6 and elapsed < 60
    assert report(3, ok, f"max objective gap={gap:.2e} max KKT={kkt:.2e} time={elapsed:.2f}s")


def _lower_tail(pdf, x, *args):
    # t = u^2 removes the t^(q/2-1) singularity at zero for q = 1
    val, _ = integrate.quad(lambda u: 2 * u * pdf(u * u, *args), 0, math.sqrt(x),
                            epsabs=1e-15, epsrel=1e-13, limit=500)
    return val


def _central_pdf(t, q):
    return math.exp((q / 2 - 1) * math.log(t) - t / 2 - special.gammaln(q / 2)
                    - (q / 2) * math.log(2)) if t > 0 else (0.5 if q == 2 else 0.0)


def _noncentral_pdf(t, q, ncp):
    if ncp == 0:
        return _central_pdf(t, q)
    if t <= 0:
        return 0.5 * math.exp(-ncp / 2) if q == 2 else 0.0
    nu = q / 2 - 1
    s = math.sqrt(ncp * t)
    return 0.5 * math.exp(-(t + ncp) / 2 + s + (nu / 2) * math.log(t / ncp)) * special.ive(nu, s)


def _tail(pdf, x, *args):
    if x < 25:
        return 1.0 - _lower_tail(pdf, x, *args)
    val, _ = integrate.quad(pdf, x, np.inf, args=args, epsabs=1e-15, epsrel=1e-13, limit=500)
    return val


def test_criterion_10_distribution_functions():
    xs = [0.1, 0.7, 2.0, 3.84, 6.0, 11.0, 25.0, 60.0]
    qs = [1, 2, 3, 5, 9]
    ncps = [0.0, 0.5, 3.0, 15.0, 80.0]
    worst = 0.0
    for x in xs:
        for q in qs:
            for ncp in ncps:
                ref = _tail(_noncentral_pdf, x, q, ncp)
                worst = max(worst, abs(noncentral_chisq_sf(x, q, ncp) - ref))
                if ncp == 0:
                    worst = max(worst, abs(chisq_sf(x, q) - ref))
    rng = np.random.default_rng(SEED)
    exact = True
    for q in (1, 2, 3):
        a = rng.standard_normal((q + 3, q))
        sig = SigmaStarEstimate(a.T @ a, np.linalg.inv(a.T @ a), None, None, q, 0, 1.0)
        for level in (0.01, 0.05, 0.1):
            exact &= theoretical_power(sig, np.zeros(q), 200, 0.3, level) == level
    ok = worst <= 1e-8 and exact
    assert report(10, ok, f"{len(xs) * len(qs) * len(ncps)} grid points, max abs error={worst:.2e}; "
                          f"power(0)==level: {exact}")


def test_criterion_11_determinism(tmp_path, monkeypatch):
    args = ["simulate", "--model", "m1b_i", "--recipe", "test_beta", "--n", "80", "--p", "20",
            "--reps", "8", "--signals", "0,0.1", "--seed", str(SEED)]
    blobs = []
    for threads in (1, 4, 8):
        monkeypatch.setenv("PLSIM_THREADS", str(threads))
        out = tmp_path / f"t{threads}"
        assert main(args + ["--outdir", str(out)]) == 0
        blobs.append((out / "summary.csv").read_bytes())
    ok = blobs[0] == blobs[1] == blobs[2]
    assert report(11, ok, f"summary.csv identical across 1/4/8 workers: {ok}")


def test_criterion_12_single_fit_runtime():
    sc = SimScenario("m1a", n=200, p=300, seed=SEED, reps=1)
    from plsim.simulation import generate, replicate_rng
    data, _ = generate(sc, replicate_rng(SEED, 0))
    kern = KernelSpec("gaussian", sc.h)
    # compile outside the clock
    small, _, _ = make_data(0, n=30, p=5)
    select_lambda(small, kern, OptimConfig(n_lambda=3), PenaltySpec("scad"))
    t0 = time.perf_counter()
    _, fit = select_lambda(data, kern, OptimConfig(n_lambda=30), PenaltySpec("scad"))
    elapsed = time.perf_counter() - t0
    ok = elapsed < 60 and len(fit.lambda_path) == 30
    assert report(12, ok, f"30-point HBIC path at n=200 p=300 in {elapsed:.1f}s "
                          f"({THREADS} core(s)); selected |A|={fit.active.s}")


# ----------------------------------------------------------------------------
# Monte-Carlo criteria


def test_criterion_05_selection_accuracy():
    table, elapsed = study("m1a", "estimate", 0.0, 200, 100)
    row = table.rows[0]
    ok = row["T"] >= 0.95 and row["F"] <= 0.01 and row["failures"] == 0
    assert report(5, ok, f"T={row['T']:.4f} F={row['F']:.4f} failures={row['failures']} "
                         f"time={elapsed / 60:.1f} min on {THREADS} core(s)")


def test_criterion_06_null_size():
    recs = null_beta_records()[:200]
    rate, se = rate_of(recs)
    ok = 0.02 <= rate <= 0.10 and len(recs) == 200
    assert report(6, ok, f"size={rate:.3f} (s.e. {se:.3f}) over {len(recs)} replications")


def test_criterion_07_power():
    null_rate, null_se = rate_of(null_beta_records()[:200])
    rates = [(0.0, null_rate, null_se)]
    for c1 in (0.10, 0.15):
        table, _ = study("m1b_i", "test_beta", c1, 200, 100)
        row = table.rows[0]
        rates.append((c1, row["rate"], row["rate_se"]))
    monotone = all(b[1] >= a[1] - 2 * math.hypot(a[2], b[2]) for a, b in zip(rates, rates[1:]))
    ok = rates[1][1] >= 0.80 and rates[2][1] >= 0.95 and monotone
    detail = " ".join(f"c1={c:.2f}:{r:.3f}" for c, r, _ in rates)
    assert report(7, ok, f"{detail} monotone={monotone}")


def test_criterion_08_null_chisq_shape():
    stat = np.array([r["stat"] for r in null_beta_records()])
    res = stats.kstest(stat, "chi2", args=(2,))
    ok = res.pvalue >= 0.01 and stat.size == 500
    assert report(8, ok, f"KS D={res.statistic:.4f} p={res.pvalue:.3f} over {stat.size} values")


def test_criterion_09_specification_test():
    size_t, _ = study("m2", "test_eta", 0.0, 200, 200)
    power_t, _ = study("m2", "test_eta", 0.5, 200, 200)
    size, power = size_t.rows[0]["rate"], power_t.rows[0]["rate"]
    ok = 0.02 <= size <= 0.10 and power >= 0.90
    assert report(9, ok, f"size={size:.3f} power(c2=0.5)={power:.3f}")


def test_criterion_04_lla_descent():
    # pools the replications of every study above; runs them if needed
    test_keys = [("m1a", "estimate", 0.0, 200, 100), ("m1b_i", "test_beta", 0.0, 500, 100),
                 ("m1b_i", "test_beta", 0.10, 200, 100), ("m1b_i", "test_beta", 0.15, 200, 100),
                 ("m2", "test_eta", 0.0, 200, 200), ("m2", "test_eta", 0.5, 200, 200)]
    violations = reps = 0
    for key in test_keys:
        table, _ = study(*key)
        violations += table.rows[0]["trace_violations"]
        reps += sum(r["error"] is None for r in table.records)
    ok = violations == 0
    assert report(4, ok, f"violations={violations} over {reps} replications")
