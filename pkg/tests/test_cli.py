import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hetnet import cli
from hetnet import dgp
from hetnet import estimator as est
from hetnet import network as nw
from oracles import col_scale_loops, gauss_solve


def _fit(eta, beta, n_networks=1, gamma=None):
    return est.FitResult(beta_hat=np.atleast_1d(np.asarray(beta, float)),
                         eta_hat=np.asarray(eta, float), d_hat=np.zeros(len(eta)),
                         lambdas={}, gamma_hat=gamma, n_networks=n_networks)


def test_counterfactual_without_effects():
    M = nw.erdos_renyi(10, 0.3, 0)
    X = np.linspace(0, 1, 10)[:, None]
    res = cli.counterfactual_participation(_fit(np.zeros(10), [0.4]), M, X, [2, 5])
    np.testing.assert_allclose(res.predicted, 0.4 * X[res.followers, 0], atol=1e-14)
    assert res.followers.tolist() == [0, 1, 3, 4, 6, 7, 8, 9]


def test_counterfactual_without_leaders_is_model_prediction():
    M = nw.embed_leader_block(nw.erdos_renyi(12, 0.3, 1), nw.path_block(3))
    X = np.linspace(0, 1, 12)[:, None]
    eta = np.zeros(12)
    eta[:3] = 0.2
    res = cli.counterfactual_participation(_fit(eta, [0.5]), M, X, [])
    np.testing.assert_allclose(res.predicted, res.baseline, atol=1e-14)
    direct = gauss_solve(np.eye(12) - col_scale_loops(M.entries, eta), 0.5 * X[:, 0])
    np.testing.assert_allclose(res.predicted, direct, atol=1e-12)
    assert res.participation_rate == pytest.approx(np.clip(direct, 0, 1).mean())


def test_counterfactual_chain_hand_solved():
    # chain 0-1-2-3 with node 0 forced to 1; the remaining system is 3 x 3
    A = np.zeros((4, 4), int)
    for i in range(3):
        A[i, i + 1] = A[i + 1, i] = 1
    eta = np.array([0.3, 0.2, 0.4, 0.1])
    x = np.array([0.1, 0.2, 0.3, 0.4])
    res = cli.counterfactual_participation(_fit(eta, [1.0]), nw.AdjacencyMatrix(A), x[:, None], [0])
    # D1 = 0.3*1 + 0.4*D2 + 0.2,  D2 = 0.2*D1 + 0.1*D3 + 0.3,  D3 = 0.4*D2 + 0.4
    system = [[1.0, -0.4, 0.0], [-0.2, 1.0, -0.1], [0.0, -0.4, 1.0]]
    expected = gauss_solve(system, [0.5, 0.3, 0.4])
    np.testing.assert_allclose(res.predicted, expected, atol=1e-14)


def test_counterfactual_policies_and_errors():
    M = nw.erdos_renyi(8, 0.4, 3)
    X = np.ones((8, 1))
    fit = _fit(np.full(8, 0.05), [0.3])
    a = cli.counterfactual_participation(fit, M, X, [0], "resample", seed=4, draws=50)
    b = cli.counterfactual_participation(fit, M, X, [0], "resample", seed=4, draws=50)
    np.testing.assert_array_equal(a.predicted, b.predicted)
    zero = cli.counterfactual_participation(fit, M, X, [0])
    assert np.max(np.abs(a.predicted - zero.predicted)) < 1.0
    with pytest.raises(ValueError):
        cli.counterfactual_participation(fit, M, X, [0], "bootstrap")
    with pytest.raises(ValueError):
        cli.counterfactual_participation(fit, M, X, [9])
    ring = nw.AdjacencyMatrix(nw.ring_block(5))
    with pytest.raises(dgp.IllConditionedSystemError):
        cli.counterfactual_participation(_fit(np.full(5, 0.5), [1.0]), ring, np.ones(5), [])


def test_counterfactual_multinet_and_cliques_effect_matrix():
    a, b = nw.erdos_renyi(6, 0.5, 1), nw.erdos_renyi(6, 0.5, 2)
    e1, e2 = np.linspace(0, 0.1, 6), np.linspace(0.1, 0, 6)
    fit = _fit(np.r_[e1, e2], [1.0], n_networks=2)
    A = cli.effect_matrix(fit, nw.MultiNetwork((a, b), ("a", "b")))
    np.testing.assert_allclose(A, col_scale_loops(a.entries, e1) + col_scale_loops(b.entries, e2))
    A = cli.effect_matrix(_fit(e1, [1.0], gamma=0.05), a)
    np.testing.assert_allclose(A, col_scale_loops(a.entries, e1) + 0.05 * a.entries)


@given(st.integers(0, 10_000))
def test_counterfactual_monotone_in_leader_set(seed):
    rng = np.random.default_rng(seed)
    n = 15
    M = nw.erdos_renyi(n, 0.3, seed)
    eta = rng.uniform(0, 0.1, n)
    fit = _fit(eta, [0.2])
    X = rng.uniform(0, 1, (n, 1))
    A = col_scale_loops(M.entries, eta)
    small = sorted(rng.choice(n, 2, replace=False).tolist())
    extra = int(rng.choice(np.setdiff1d(np.arange(n), small)))
    lo = cli.counterfactual_participation(fit, M, X, small)
    # preconditions: spectral radius below one and the newly forced node not above 1
    assert np.max(np.abs(np.linalg.eigvals(A))) < 1
    assert lo.predicted[lo.followers.tolist().index(extra)] <= 1
    hi = cli.counterfactual_participation(fit, M, X, small + [extra])
    before = dict(zip(lo.followers.tolist(), lo.predicted))
    for node, value in zip(hi.followers.tolist(), hi.predicted):
        assert value >= before[node] - 1e-12


def _run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


CONFIG = """schema_version: 1
network: {n: 50, p: 0.1}
model: {type: base, leaders: [0, 1, 2, 3, 4], leader_values: 0.5, beta0: [3.0]}
tuning: {second_stage: benchmark}
study: {replications: 3, master_seed: 1}
counterfactual: {leaders: ["0", "1"]}
"""


@pytest.fixture
def workspace(tmp_path, capsys):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(CONFIG)
    code, out, _ = _run(["generate", "--config", cfg, "--seed", 3, "--output", tmp_path / "nets"],
                        capsys)
    assert code == 0 and json.loads(out)["n"] == 50
    code, out, _ = _run(["simulate", "--config", cfg, "--seed", 4, "--networks",
                         tmp_path / "nets", "--output", tmp_path / "data"], capsys)
    assert code == 0
    return tmp_path, cfg, json.loads(out)["manifest"]


def test_pipeline_smoke(workspace, capsys):
    tmp, cfg, manifest = workspace
    code, _, _ = _run(["fit", "--config", cfg, "--data", manifest, "--format", "json",
                       "--output", tmp / "fit.json"], capsys)
    assert code == 0
    code, out, _ = _run(["infer", "--config", cfg, "--data", manifest, "--fit", tmp / "fit.json",
                         "--output", tmp / "inf.csv"], capsys)
    assert code == 0
    lines = (tmp / "inf.csv").read_text().splitlines()
    assert len(lines) == 1 + 50 + 1
    assert lines[-1].startswith("x1,,beta,")
    code, out, _ = _run(["counterfactual", "--config", cfg, "--data", manifest,
                         "--fit", tmp / "fit.json", "--format", "json",
                         "--output", tmp / "cf.json"], capsys)
    assert code == 0
    doc = json.loads((tmp / "cf.json").read_text())
    assert doc["leaders"] == ["0", "1"] and len(doc["followers"]) == 48
    assert 0 <= doc["participation_rate"] <= 1


def test_fit_then_infer_matches_direct_infer(workspace, capsys):
    tmp, cfg, manifest = workspace
    _run(["fit", "--config", cfg, "--data", manifest, "--format", "json",
          "--output", tmp / "fit.json"], capsys)
    _run(["infer", "--config", cfg, "--data", manifest, "--fit", tmp / "fit.json",
          "--output", tmp / "a.csv"], capsys)
    _run(["infer", "--config", cfg, "--data", manifest, "--output", tmp / "b.csv"], capsys)
    assert (tmp / "a.csv").read_bytes() == (tmp / "b.csv").read_bytes()


def test_cli_outputs_are_byte_identical(workspace, capsys):
    tmp, cfg, manifest = workspace
    for fmt in ("csv", "json"):
        for tag in ("a", "b"):
            for cmd in ("fit", "infer"):
                assert _run([cmd, "--config", cfg, "--data", manifest, "--seed", 2,
                             "--format", fmt, "--output", tmp / f"{cmd}_{tag}.{fmt}"],
                            capsys)[0] == 0
        for cmd in ("fit", "infer"):
            assert (tmp / f"{cmd}_a.{fmt}").read_bytes() == (tmp / f"{cmd}_b.{fmt}").read_bytes()
    _run(["simulate", "--config", cfg, "--seed", 4, "--networks", tmp / "nets",
          "--output", tmp / "data2"], capsys)
    for name in ("outcomes.csv", "covariates.csv", "network_net1.csv"):
        assert (tmp / "data" / name).read_bytes() == (tmp / "data2" / name).read_bytes()


def test_mc_subcommand_deterministic(tmp_path, capsys):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(CONFIG)
    for tag in ("a", "b"):
        code, out, _ = _run(["mc", "--config", cfg, "--format", "json",
                             "--output", tmp_path / f"{tag}.json"], capsys)
        assert code == 0 and json.loads(out)["replications_used"] == 3
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    _run(["mc", "--config", cfg, "--seed", 9, "--output", tmp_path / "c.csv"], capsys)
    assert (tmp_path / "c.csv").read_text().startswith("quantity,n,value\n")


def test_output_directory_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "out"))
    code, out, _ = _run(["generate", "--n", 20], capsys)
    assert code == 0 and (tmp_path / "out" / "networks" / "nodes.csv").exists()


def test_usage_errors(tmp_path, capsys):
    code, _, err = _run(["fit", "--bogus"], capsys)
    assert code == cli.EXIT_USAGE
    assert json.loads(err)["error"] == "UsageError"
    code, _, err = _run(["explode"], capsys)
    assert code == cli.EXIT_USAGE


def test_config_errors_exit_with_line_numbers(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(CONFIG.replace("p: 0.1", "p: lots"))
    code, _, err = _run(["generate", "--config", cfg], capsys)
    record = json.loads(err)
    assert code == cli.EXIT_USAGE and record["error"] == "ConfigError"
    assert f"{cfg}:2:" in record["message"]


def test_runtime_errors_exit_nonzero(tmp_path, capsys):
    code, _, err = _run(["fit", "--data", tmp_path / "missing.yaml"], capsys)
    assert code == cli.EXIT_FAILURE
    assert json.loads(err)["status"] == "error"


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "hetnet", "generate", "--n", "10",
                           "--output", str(tmp_path / "g")], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["status"] == "ok"
