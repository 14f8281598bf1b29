import math

import pytest

import commopt

QUAD = """
algorithm = "sppm_as"
seeds = [0]

[problem]
kind = "quadratic"
clients = 6
dim = 3
seed = 2

[sppm]
gamma = 1.0
T = 20
sampling = "nice"
tau = 2
"""


def test_version():
    assert commopt.__version__.startswith("commopt ")


def test_run_returns_columns_and_meta():
    t = commopt.run(QUAD, seed=4)
    cols = t["columns"]
    assert list(cols) == ["round", "dist_sq", "K_used", "cost_cum"]
    assert len(cols["round"]) == 21
    assert cols["dist_sq"][-1] < cols["dist_sq"][0]
    assert '"seed":4' in t["meta"]


def test_runs_are_deterministic():
    assert commopt.run(QUAD, seed=1) == commopt.run(QUAD, seed=1)


def test_hash_ignores_seeds():
    assert commopt.config_hash(QUAD) == commopt.config_hash(QUAD.replace("[0]", "[5, 6]"))


def test_config_errors_are_value_errors():
    with pytest.raises(commopt.ConfigError, match="sppm.tau"):
        commopt.run(QUAD.replace("tau = 2", "tau = -1"))
    with pytest.raises(ValueError):
        commopt.run('algorithm = "nope"')


def test_sampling_stats_closed_form_matches_enumeration():
    a = commopt.sampling_stats(QUAD)
    b = commopt.sampling_stats(QUAD, enumerate=True)
    assert math.isclose(a["mu_as"], b["mu_as"], rel_tol=1e-12)
    assert math.isclose(a["sigma_star_as_sq"], b["sigma_star_as_sq"], rel_tol=1e-10)


def test_sweep_rows():
    table = commopt.sweep(QUAD.replace("T = 20", "T = 50"), "tau=1,3,6", threads=1)
    assert [r["value"] for r in table["rows"]] == ["1", "3", "6"]
    assert table["rows"][-1]["final_mean"] < 1e-20


def test_certified_rand_k():
    eta, omega = commopt.certified("rand_k:k=2", 8)
    assert eta == 0.0
    assert math.isclose(omega, 3.0)
