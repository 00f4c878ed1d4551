import csv
import io

import numpy as np
import pytest

import spreadlab


def test_basis_dimensions():
    assert spreadlab.BasisSpec.torus(4, 0.1).dim == 80
    ev = spreadlab.BasisSpec.dirichlet(16, 1.0).eigenvalues
    assert ev.shape == (16,)
    assert np.all(np.diff(ev) > 0)


def test_spectrum_matches_numpy():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(6, 6))
    m = a @ a.T
    values, vectors = spreadlab.spectrum(m)
    np.testing.assert_allclose(values, np.linalg.eigvalsh(m), rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(vectors.T @ vectors, np.eye(6), atol=1e-10)


def test_inf_cone_diagonal_example():
    m = np.diag([1.0, 10.0])
    s = np.array([[0.0], [1.0]])
    assert spreadlab.inf_cone(m, s, 1.0, np.ones(2)) == pytest.approx(10.0, rel=1e-8)


def test_ns_condition_and_ranks():
    assert spreadlab.ns_condition([(1, 0), (1, 1)]) == (True, True)
    assert spreadlab.ns_condition([(1, 0), (0, 1)]) == (True, False)
    assert spreadlab.ns_bracket_ranks(4, [(1, 0), (1, 1)])[-1] == 80


def test_config_validation_rejects_unknown_key():
    with pytest.raises(spreadlab.SpreadlabError):
        spreadlab.validate_config("schema_version = 1\nexperiment = qv\nbogus = 3\n")
    with pytest.raises(spreadlab.SpreadlabError):
        spreadlab.validate_config("experiment = qv\n")


def test_small_experiment_in_memory():
    res = spreadlab.compute_experiment(
        "schema_version = 1\nexperiment = brackets\nmodel = ns\nexpect = full\n"
    )
    assert res["passed"]
    rows = list(csv.DictReader(io.StringIO(res["tables"]["rank.csv"])))
    assert int(rows[-1]["rank"]) == 80


def test_run_and_report(tmp_path):
    out = tmp_path / "bundle"
    res = spreadlab.run_experiment(
        "schema_version = 1\nexperiment = spectrum\nexpect = positive\n",
        {"replicas": "3", "steps": "256", "out": str(out)},
    )
    assert res["passed"]
    text = spreadlab.report(str(out))
    assert "overall: PASS" in text
    assert (out / "plot_spectrum.csv").exists()
