import logging

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from hetnet import config as cfgmod
from hetnet import data
from hetnet import network as nw

MANIFEST = """schema_version: 1
outcomes: outcomes.csv
covariates: covariates.csv
networks:
  - label: friends
    edges: friends.csv
"""


def _toy(tmp_path, edges="src,dst\nann,bob\nbob,cy\n", outcomes=None, manifest=MANIFEST):
    (tmp_path / "outcomes.csv").write_text(outcomes or "id,outcome\nann,1\nbob,0\ncy,1\n")
    (tmp_path / "covariates.csv").write_text("id,rooms\ncy,0.5\nann,1.5\nbob,2.0\n")
    (tmp_path / "friends.csv").write_text(edges)
    path = tmp_path / "manifest.yaml"
    path.write_text(manifest)
    return path


def test_three_node_manifest(tmp_path):
    ds = data.load_dataset(_toy(tmp_path))
    assert ds.n == 3 and ds.node_ids == ("ann", "bob", "cy")
    np.testing.assert_array_equal(ds.D, [1, 0, 1])
    np.testing.assert_array_equal(ds.X[:, 0], [1.5, 2.0, 0.5])
    assert ds.covariate_names == ("rooms",)
    np.testing.assert_array_equal(ds.networks.networks[0].entries,
                                  [[0, 1, 0], [1, 0, 1], [0, 1, 0]])
    assert ds.networks.labels == ("friends",)
    assert ds.index_of(["cy", "ann"]).tolist() == [2, 0]
    with pytest.raises(data.DataError):
        ds.index_of(["zed"])


def test_duplicate_edges_dropped_with_warning(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        ds = data.load_dataset(_toy(tmp_path, "src,dst\nann,bob\nann,bob\nbob,ann\n"))
    assert ds.networks.networks[0].edge_count() == 1
    assert "duplicate" in caplog.text


def test_link_reported_from_one_side_is_symmetric(tmp_path):
    ds = data.load_dataset(_toy(tmp_path, "src,dst\ncy,ann\n"))
    A = ds.networks.networks[0].entries
    assert A[0, 2] == 1 and A[2, 0] == 1
    assert A.sum() == 2


@pytest.mark.parametrize("edges, match", [
    ("src,dst\nann,zed\n", "unknown node id"),
    ("src,dst\nann,ann\n", "self-loop"),
    ("src,dst\nann,bob,cy\n", "expected 2 fields"),
])
def test_bad_edge_files(tmp_path, edges, match):
    with pytest.raises(data.DataError, match=match):
        data.load_dataset(_toy(tmp_path, edges))


def test_bad_outcomes_and_manifest(tmp_path):
    binary = MANIFEST.replace("networks:", "binary_outcome: true\nnetworks:")
    with pytest.raises(data.DataError, match="0 or 1"):
        data.load_dataset(_toy(tmp_path, outcomes="id,outcome\nann,1\nbob,0.5\ncy,1\n",
                               manifest=binary))
    with pytest.raises(data.DataError, match="not a number"):
        data.load_dataset(_toy(tmp_path, outcomes="id,outcome\nann,x\nbob,0\ncy,1\n"))
    with pytest.raises(data.DataError, match="duplicate"):
        data.load_dataset(_toy(tmp_path, outcomes="id,outcome\nann,1\nann,0\ncy,1\n"))
    with pytest.raises(data.DataError, match="schema_version"):
        data.load_dataset(_toy(tmp_path, manifest=MANIFEST.replace("1", "2", 1)))
    with pytest.raises(data.DataError, match="no covariates"):
        data.load_dataset(_toy(tmp_path, outcomes="id,outcome\nann,1\nbob,0\ncy,1\ndee,0\n"))


@settings(suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.integers(2, 25), st.floats(0, 1), st.integers(0, 2**32 - 1))
def test_edge_list_round_trip(tmp_path, n, p, seed):
    M = nw.erdos_renyi(n, p, seed)
    ids = [f"h{i:03d}" for i in range(n)]
    path = tmp_path / "edges.csv"
    data.write_edge_list(M, path, ids)
    assert data.read_edge_list(path, ids) == M


def test_directed_edge_list_round_trip(tmp_path):
    A = np.zeros((4, 4), int)
    A[0, 1] = A[2, 3] = A[3, 2] = 1
    M = nw.AdjacencyMatrix(A, symmetric=False)
    data.write_edge_list(M, tmp_path / "e.csv")
    back = data.read_edge_list(tmp_path / "e.csv", ["0", "1", "2", "3"], symmetric=False)
    np.testing.assert_array_equal(back.entries, A)


def test_dataset_round_trip(tmp_path):
    n = 12
    multi = nw.MultiNetwork((nw.erdos_renyi(n, 0.3, 1), nw.erdos_renyi(n, 0.3, 2)), ("a", "b"))
    X = np.random.default_rng(0).standard_normal((n, 2))
    ds = data.Dataset(np.arange(n) / 7, X, ("x1", "x2"), multi, tuple(f"id{i}" for i in range(n)))
    back = data.load_dataset(data.write_dataset(ds, tmp_path / "ds"))
    np.testing.assert_array_equal(back.D, ds.D)
    np.testing.assert_array_equal(back.X, ds.X)
    assert back.networks.networks == ds.networks.networks
    assert back.node_ids == ds.node_ids and back.covariate_names == ds.covariate_names


def test_dataset_invariants():
    M = nw.MultiNetwork((nw.erdos_renyi(3, 0.5, 0),), ("a",))
    with pytest.raises(data.DataError):
        data.Dataset(np.zeros(3), np.zeros((3, 1)), ("x",), M, ("a", "a", "b"))
    with pytest.raises(data.DataError):
        data.Dataset(np.zeros(2), np.zeros((3, 1)), ("x",), M, ("a", "b", "c"))


CONFIG = """schema_version: 1
network:
  n: 60
  p: 0.1
model:
  type: base
  leaders: [0, 1, 2]
tuning:
  second_stage: benchmark
  solver: {tolerance: 1.0e-9}
study:
  replications: 4
"""


def test_config_parses_into_study():
    cfg = cfgmod.parse_config(CONFIG)
    study = cfg.study_config(master_seed=5)
    assert study.n == 60 and study.leaders == (0, 1, 2) and study.replications == 4
    assert study.master_seed == 5
    assert study.tuning.second_stage == "benchmark"
    assert study.tuning.solver.tolerance == 1e-9 and study.tuning.solver.standardize


@pytest.mark.parametrize("text, fragment", [
    (CONFIG.replace("  p: 0.1", "  p: high"), "cfg.yaml:4: network.p should be"),
    (CONFIG.replace("  n: 60", "  size: 60"), "cfg.yaml:3: unknown key 'size'"),
    (CONFIG.replace("study:", "studies:"), "cfg.yaml:11: unknown section 'studies'"),
    (CONFIG.replace("schema_version: 1", "schema_version: 9"), "cfg.yaml:1: unsupported"),
    (CONFIG.replace("schema_version: 1\n", ""), "missing schema_version"),
    (CONFIG.replace("tolerance: 1.0e-9", "tolerance: yes"), "cfg.yaml:10: tuning.solver"),
    (CONFIG.replace("  p: 0.1", "  fixed: 1"), "network.fixed should be bool"),
])
def test_config_errors_carry_line_numbers(text, fragment):
    with pytest.raises(cfgmod.ConfigError) as info:
        cfgmod.parse_config(text, "cfg.yaml")
    assert fragment in str(info.value)


def test_config_reports_every_problem():
    bad = CONFIG.replace("  n: 60", "  n: sixty").replace("  p: 0.1", "  q: 1")
    with pytest.raises(cfgmod.ConfigError) as info:
        cfgmod.parse_config(bad, "c")
    assert len(info.value.problems) == 2
