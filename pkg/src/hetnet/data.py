"""Reading and writing datasets: outcomes, covariates and edge lists.

A dataset directory is described by a YAML manifest::

    schema_version: 1
    outcomes: outcomes.csv        # id,outcome
    covariates: covariates.csv    # id,<name>,<name>,...
    binary_outcome: false
    networks:
      - label: friends
        edges: friends.csv        # src,dst (external ids)

Relative paths resolve against the manifest's directory.  Node order is
the order of the outcomes file; every other file refers to nodes by id.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass

import numpy as np
import yaml

from .network import AdjacencyMatrix, MultiNetwork, as_matrix

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1


class DataError(ValueError):
    """Malformed or inconsistent input files."""


@dataclass(frozen=True)
class Dataset:
    D: np.ndarray
    X: np.ndarray
    covariate_names: tuple
    networks: MultiNetwork
    node_ids: tuple

    def __post_init__(self):
        n = len(self.node_ids)
        if len(set(self.node_ids)) != n:
            raise DataError("node ids must be unique")
        if self.D.shape != (n,):
            raise DataError("outcome length does not match the node count")
        if self.X.ndim != 2 or self.X.shape[0] != n:
            raise DataError("covariate rows do not match the node count")
        if self.X.shape[1] != len(self.covariate_names):
            raise DataError("one name per covariate column")
        if self.networks.n != n:
            raise DataError("network size does not match the node count")

    @property
    def n(self) -> int:
        return len(self.node_ids)

    def index_of(self, ids) -> np.ndarray:
        lookup = {v: i for i, v in enumerate(self.node_ids)}
        missing = [v for v in ids if v not in lookup]
        if missing:
            raise DataError(f"unknown node ids: {missing[:5]}")
        return np.array([lookup[v] for v in ids], dtype=int)


def _read_rows(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
    return [h.strip() for h in header], [[c.strip() for c in r] for r in body]


def _parse_float(path, lineno, text):
    try:
        return float(text)
    except ValueError:
        raise DataError(f"{path}:{lineno}: not a number: {text!r}") from None


def read_outcomes(path, binary: bool = False):
    header, body = _read_rows(path)
    if len(header) != 2:
        raise DataError(f"{path}: expected columns id,outcome")
    ids, values = [], []
    for lineno, (node, value) in enumerate(body, start=2):
        ids.append(node)
        values.append(_parse_float(path, lineno, value))
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate node ids")
    D = np.array(values)
    if binary and not np.all((D == 0) | (D == 1)):
        raise DataError(f"{path}: outcomes must be 0 or 1 when binary_outcome is set")
    return tuple(ids), D


def read_covariates(path, node_ids):
    header, body = _read_rows(path)
    if len(header) < 2:
        raise DataError(f"{path}: expected columns id,<covariate>...")
    rows = {}
    for lineno, row in enumerate(body, start=2):
        if row[0] in rows:
            raise DataError(f"{path}:{lineno}: duplicate node id {row[0]!r}")
        rows[row[0]] = [_parse_float(path, lineno, v) for v in row[1:]]
    missing = [v for v in node_ids if v not in rows]
    if missing:
        raise DataError(f"{path}: no covariates for ids {missing[:5]}")
    extra = set(rows) - set(node_ids)
    if extra:
        raise DataError(f"{path}: ids without an outcome: {sorted(extra)[:5]}")
    return tuple(header[1:]), np.array([rows[v] for v in node_ids], dtype=float)


def read_edge_list(path, node_ids, symmetric: bool = True) -> AdjacencyMatrix:
    """Adjacency from a ``src,dst`` CSV of external ids.

    With ``symmetric`` a link reported from either side is set in both
    directions.  Repeated edges are kept once, with a warning.
    """
    header, body = _read_rows(path)
    if len(header) != 2:
        raise DataError(f"{path}: expected columns src,dst")
    index = {v: i for i, v in enumerate(node_ids)}
    n = len(node_ids)
    A = np.zeros((n, n), dtype=np.int8)
    seen = set()
    duplicates = 0
    for lineno, (a, b) in enumerate(body, start=2):
        if a not in index or b not in index:
            unknown = a if a not in index else b
            raise DataError(f"{path}:{lineno}: unknown node id {unknown!r}")
        i, j = index[a], index[b]
        if i == j:
            raise DataError(f"{path}:{lineno}: self-loop on {a!r}")
        # a reciprocal report (b, a) is not a duplicate row
        if (i, j) in seen:
            duplicates += 1
        seen.add((i, j))
        A[i, j] = 1
        if symmetric:
            A[j, i] = 1
    if duplicates:
        logger.warning("%s: dropped %d duplicate edge rows", path, duplicates)
    return AdjacencyMatrix(A, symmetric=symmetric)


def write_edge_list(M, path, node_ids=None) -> None:
    """Write the links of ``M``; undirected links appear once (i < j)."""
    A = as_matrix(M)
    n = A.shape[0]
    ids = list(node_ids) if node_ids is not None else [str(i) for i in range(n)]
    symmetric = getattr(M, "symmetric", np.array_equal(A, A.T))
    rows, cols = np.nonzero(np.triu(A, k=1) if symmetric else A)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["src", "dst"])
        for i, j in zip(rows, cols):
            writer.writerow([ids[i], ids[j]])


def _resolve(base, path):
    return path if os.path.isabs(path) else os.path.join(base, path)


def load_dataset(manifest_path) -> Dataset:
    """Read and validate the dataset described by a manifest file."""
    with open(manifest_path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise DataError(f"{manifest_path}: manifest must be a mapping")
    version = doc.get("schema_version")
    if version != MANIFEST_VERSION:
        raise DataError(f"{manifest_path}: unsupported schema_version {version!r}")
    for key in ("outcomes", "covariates", "networks"):
        if key not in doc:
            raise DataError(f"{manifest_path}: missing key {key!r}")
    base = os.path.dirname(os.path.abspath(manifest_path))
    node_ids, D = read_outcomes(_resolve(base, doc["outcomes"]),
                                bool(doc.get("binary_outcome", False)))
    names, X = read_covariates(_resolve(base, doc["covariates"]), node_ids)
    entries = doc["networks"]
    if not isinstance(entries, list) or not entries:
        raise DataError(f"{manifest_path}: networks must be a nonempty list")
    nets, labels = [], []
    for entry in entries:
        if not isinstance(entry, dict) or "label" not in entry or "edges" not in entry:
            raise DataError(f"{manifest_path}: each network needs 'label' and 'edges'")
        nets.append(read_edge_list(_resolve(base, entry["edges"]), node_ids,
                                   bool(entry.get("symmetric", True))))
        labels.append(str(entry["label"]))
    return Dataset(D, X, names, MultiNetwork(tuple(nets), tuple(labels)), node_ids)


def write_dataset(dataset: Dataset, directory, binary_outcome: bool = False) -> str:
    """Write a dataset directory with its manifest; returns the manifest path."""
    os.makedirs(directory, exist_ok=True)
    ids = dataset.node_ids
    with open(os.path.join(directory, "outcomes.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "outcome"])
        for node, value in zip(ids, dataset.D):
            writer.writerow([node, repr(float(value))])
    with open(os.path.join(directory, "covariates.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", *dataset.covariate_names])
        for node, row in zip(ids, dataset.X):
            writer.writerow([node, *(repr(float(v)) for v in row)])
    entries = []
    for label, net in zip(dataset.networks.labels, dataset.networks.networks):
        name = f"network_{label}.csv"
        write_edge_list(net, os.path.join(directory, name), ids)
        entries.append({"label": label, "edges": name, "symmetric": bool(net.symmetric)})
    manifest = {"schema_version": MANIFEST_VERSION, "outcomes": "outcomes.csv",
                "covariates": "covariates.csv", "binary_outcome": binary_outcome,
                "networks": entries}
    path = os.path.join(directory, "manifest.yaml")
    with open(path, "w") as fh:
        yaml.safe_dump(manifest, fh, sort_keys=False)
    return path
