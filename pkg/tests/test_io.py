import json

import jsonschema
import numpy as np
import pytest

from plsim.errors import ConstantColumn, ParseError, ValidationError
from plsim.inference import test_beta, test_eta
from plsim.io import (Roles, correlations, emit_results, load_and_standardize, load_fit_json,
                      load_schema, partition_variables, read_csv, screen_features, standardize)
from plsim.optimizer import OptimConfig, fit_plsim
from plsim.penalty import PenaltySpec
from plsim.simulation import SummaryTable
from plsim.smoother import KernelSpec

from conftest import make_data


def write_table(path, names, mat):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(names) + "\n")
        for row in mat:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


@pytest.fixture
def csv_file(tmp_path):
    data, _, _ = make_data(21, n=70, p=5)
    names = ["y", "x1", "x2", "x3", "x4", "x5", "z1", "z2"]
    mat = np.column_stack([data.y, data.x, data.z]) * 3.0 + 1.0
    path = tmp_path / "d.csv"
    write_table(path, names, mat)
    return path, names, mat


def test_read_csv_round_trip(csv_file):
    path, names, mat = csv_file
    got_names, got = read_csv(path)
    assert got_names == names
    np.testing.assert_array_equal(got, mat)


@pytest.mark.parametrize("body,row,col", [
    ("a,b\n1,2\n3,x\n", 3, "b"),
    ("a,b\n1,2\n3\n", 3, None),
    ("a,b\n1,nan\n", 2, "b"),
    ("a,a\n1,2\n", 1, None),
])
def test_parse_errors_locate_the_cell(tmp_path, body, row, col):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(ParseError) as exc:
        read_csv(path)
    assert exc.value.row == row
    assert exc.value.col == col


def test_standardize_is_idempotent():
    a = np.random.default_rng(0).normal(5.0, 3.0, (40, 3))
    once = standardize(a)
    np.testing.assert_allclose(once.mean(axis=0), 0, atol=1e-14)
    np.testing.assert_allclose(once.std(axis=0), 1, atol=1e-14)
    np.testing.assert_allclose(standardize(once), once, atol=1e-14)
    with pytest.raises(ConstantColumn):
        standardize(np.column_stack([a[:, 0], np.full(40, 2.0)]), ["a", "b"])


def test_load_and_standardize_roles(csv_file, tmp_path):
    path, names, mat = csv_file
    data = load_and_standardize(path, Roles("y", "z1,z2"))
    assert (data.p, data.q) == (5, 2)
    np.testing.assert_allclose(data.z[:, 0], standardize(mat[:, 6]))
    # reloading standardized values changes nothing
    again = tmp_path / "again.csv"
    write_table(again, names, np.column_stack([data.y, data.x, data.z]))
    twice = load_and_standardize(again, Roles("y", "z1,z2"))
    np.testing.assert_allclose(twice.x, data.x, atol=1e-13)
    sub = load_and_standardize(path, Roles("y", ("z1",), ("x1", "x3")))
    assert (sub.p, sub.q) == (2, 1)
    with pytest.raises(ValidationError):
        load_and_standardize(path, Roles("y", "z9"))
    with pytest.raises(ValidationError):
        load_and_standardize(path, Roles("y", "z1", "z1,x1"))


def test_screening_ranks_by_absolute_correlation():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((300, 6))
    y = 2 * x[:, 4] - x[:, 1] + 0.1 * rng.standard_normal(300)
    order = screen_features((y, x), 3)
    assert list(order[:2]) == [4, 1]
    c = np.abs(correlations(y, x))
    assert c[order[2]] == np.sort(c)[-3]
    # exact ties keep the lower index first
    tied = np.column_stack([x[:, 0], x[:, 0]])
    assert list(screen_features((x[:, 0], tied), 2)) == [0, 1]
    with pytest.raises(ValidationError):
        screen_features((y, x), 0)


@pytest.fixture(scope="module")
def partition_case():
    rng = np.random.default_rng(2)
    n = 400
    x = rng.standard_normal((n, 4))
    y = 0.8 * x[:, 0] + np.sin(2 * x[:, 1]) + 0.5 * x[:, 2] ** 2 + 0.3 * rng.standard_normal(n)
    return y, x


def test_partition_finds_linear_column(partition_case):
    y, x = partition_case
    res = partition_variables((y, x))
    assert 0 in res.linear_vars
    assert 2 in res.index_vars and 3 in res.index_vars
    assert sorted(np.concatenate([res.linear_vars, res.index_vars])) == [0, 1, 2, 3]
    assert res.diagnostics[3]["reason"] == "correlation gate"
    jsonschema.validate(json.loads(json.dumps({
        "linear_vars": [str(j) for j in res.linear_vars], "index_vars": [str(j) for j in res.index_vars],
        "screened": ["0", "1", "2", "3"], "diagnostics": res.diagnostics, "settings": res.settings})),
        load_schema("partition"))


def test_partition_is_permutation_equivariant(partition_case):
    y, x = partition_case
    perm = np.array([2, 0, 3, 1])
    a = partition_variables((y, x))
    b = partition_variables((y, x[:, perm]))
    assert sorted(perm[b.linear_vars]) == sorted(a.linear_vars)
    again = partition_variables((y, x))
    np.testing.assert_array_equal(again.linear_vars, a.linear_vars)


@pytest.fixture(scope="module")
def outputs(tmp_path_factory):
    data, _, _ = make_data(22, n=90, p=5)
    kern = KernelSpec(h=0.5)
    fit = fit_plsim(data, kern, PenaltySpec(lam=0.05))
    bt = test_beta(data, kern, lam=0.05)
    et = test_eta(data, fit)
    out = tmp_path_factory.mktemp("out")
    paths = emit_results(out, data=data, fit=fit, beta_test=bt, eta_test=et,
                         summary=SummaryTable(), metadata={"seed": 1})
    return data, fit, out, paths


def test_emitted_json_validates(outputs):
    _, _, out, _ = outputs
    jsonschema.validate(json.loads((out / "fit.json").read_text()), load_schema("fit"))
    jsonschema.validate(json.loads((out / "tests.json").read_text()), load_schema("tests"))


def test_fit_json_round_trip_is_exact(outputs):
    _, fit, out, _ = outputs
    theta = load_fit_json(out / "fit.json")
    np.testing.assert_array_equal(theta.beta, fit.beta)
    np.testing.assert_array_equal(theta.alpha_free, fit.theta_hat.alpha_free)


def test_curve_and_summary_files(outputs):
    data, fit, out, _ = outputs
    lines = (out / "curve.csv").read_bytes().split(b"\n")
    assert lines[0] == b"index,partial_residual,eta_hat"
    assert lines[-1] == b"" and len(lines) == data.n + 2
    first = [float(v) for v in lines[1].split(b",")]
    assert first[2] == fit.eta_hat[0]
    assert (out / "summary.csv").read_text().count("\n") == 1
