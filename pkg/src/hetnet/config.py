"""Versioned YAML run configuration with line-level schema checking.

Every section is optional; omitted keys take the library defaults::

    schema_version: 1
    network:   {kind: erdos_renyi, n: 200, p: 0.1, mean_degree: 10, omega: 0.4,
                n_networks: 1, leader_block: path, fixed: false}
    model:     {type: base, leaders: [0, 1, 2, 3, 4], leader_values: 0.5,
                beta0: [3.0], gamma0: 0.05, sigma: 1.0, error_law: gaussian,
                relevant_networks: [0]}
    tuning:    {first_stage_c: 2.0, second_stage: cv, second_stage_c: 2.0,
                cv_folds: 10, n_lambdas: 30, lambda_ratio: 0.01, k_powers: 2,
                lambda_group_ratio: 1.0,
                solver: {max_iterations: 10000, tolerance: 1.0e-8, standardize: true}}
    inference: {ci_level: 0.95, fdr_q: 0.05, lambda_node: null}
    study:     {replications: 200, master_seed: 0, workers: 1}
    counterfactual: {leaders: [], epsilon_policy: zero, draws: 100}
"""

from __future__ import annotations

from dataclasses import dataclass, field

import yaml

from . import lasso_core as lc
from .estimator import TuningPolicy
from .montecarlo import GeneratorSpec, StudyConfig

SCHEMA_VERSION = 1

_NUM = (int, float)
_OPT_NUM = (int, float, type(None))

# section -> key -> accepted python types (after YAML parsing)
SCHEMA = {
    "network": {"kind": str, "n": int, "p": _NUM, "mean_degree": int, "omega": _NUM,
                "n_networks": int, "leader_block": str, "fixed": bool},
    "model": {"type": str, "leaders": list, "leader_values": (list, int, float),
              "beta0": (list, int, float), "gamma0": _NUM, "sigma": _NUM,
              "error_law": str, "relevant_networks": list},
    "tuning": {"first_stage_c": _NUM, "second_stage": str, "second_stage_c": _NUM,
               "cv_folds": int, "n_lambdas": int, "lambda_ratio": _NUM, "k_powers": int,
               "penalize_gamma": bool, "lambda_group_ratio": _NUM, "solver": dict},
    "inference": {"ci_level": _NUM, "fdr_q": _NUM, "lambda_node": _OPT_NUM,
                  "first_stage_df": bool},
    "study": {"replications": int, "master_seed": int, "workers": int},
    "counterfactual": {"leaders": list, "epsilon_policy": str, "draws": int},
}
SOLVER_SCHEMA = {"max_iterations": int, "tolerance": _NUM, "standardize": bool}


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class RunConfig:
    network: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    tuning: dict = field(default_factory=dict)
    inference: dict = field(default_factory=dict)
    study: dict = field(default_factory=dict)
    counterfactual: dict = field(default_factory=dict)

    def tuning_policy(self, cv_seed: int = 0) -> TuningPolicy:
        opts = {k: v for k, v in self.tuning.items() if k not in ("lambda_group_ratio", "solver")}
        solver = lc.SolverConfig(**{"standardize": True, **self.tuning.get("solver", {})})
        return TuningPolicy(cv_seed=cv_seed, solver=solver, **opts)

    @property
    def lambda_group_ratio(self) -> float:
        return float(self.tuning.get("lambda_group_ratio", 1.0))

    def generator(self) -> GeneratorSpec:
        keys = ("kind", "p", "mean_degree", "omega")
        return GeneratorSpec(**{k: self.network[k] for k in keys if k in self.network})

    def study_config(self, master_seed: int | None = None) -> StudyConfig:
        net, model = self.network, self.model
        kw = {
            "model": model.get("type", "base"),
            "generator": self.generator(),
            "tuning": self.tuning_policy(),
            "lambda_group_ratio": self.lambda_group_ratio,
        }
        for src, dst in (("n", "n"), ("n_networks", "n_networks"),
                         ("leader_block", "leader_block"), ("fixed", "fixed_network")):
            if src in net:
                kw[dst] = net[src]
        for key in ("leaders", "leader_values", "beta0", "gamma0", "sigma", "error_law",
                    "relevant_networks"):
            if key in model:
                kw[key] = model[key]
        for key in ("ci_level", "fdr_q"):
            if key in self.inference:
                kw[key] = self.inference[key]
        if "replications" in self.study:
            kw["replications"] = self.study["replications"]
        seed = self.study.get("master_seed", 0) if master_seed is None else master_seed
        return StudyConfig(master_seed=seed, **kw)


def _where(source, node):
    return f"{source}:{node.start_mark.line + 1}"


def _check_mapping(source, node, schema, section, problems):
    if isinstance(node, yaml.ScalarNode) and node.tag == "tag:yaml.org,2002:null":
        return
    if not isinstance(node, yaml.MappingNode):
        problems.append(f"{_where(source, node)}: section {section!r} must be a mapping")
        return
    seen = set()
    for key_node, value_node in node.value:
        key = key_node.value
        if key in seen:
            problems.append(f"{_where(source, key_node)}: duplicate key {key!r} in {section!r}")
        seen.add(key)
        if key not in schema:
            problems.append(f"{_where(source, key_node)}: unknown key {key!r} in section "
                            f"{section!r} (allowed: {', '.join(sorted(schema))})")
            continue
        value = yaml.safe_load(yaml.serialize(value_node))
        expected = schema[key]
        if expected is dict and key == "solver":
            _check_mapping(source, value_node, SOLVER_SCHEMA, f"{section}.solver", problems)
            continue
        types = expected if isinstance(expected, tuple) else (expected,)
        # YAML booleans are ints in Python; keep them apart from numbers
        ok = isinstance(value, types) and not (isinstance(value, bool) and bool not in types)
        if not ok:
            names = "/".join("null" if t is type(None) else t.__name__ for t in types)
            problems.append(f"{_where(source, value_node)}: {section}.{key} should be "
                            f"{names}, got {value!r}")


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse and schema-check a config document."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"{source}: {exc}"]) from None
    if root is None:
        raise ConfigError([f"{source}: empty config; schema_version is required"])
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError([f"{_where(source, root)}: top level must be a mapping"])
    problems = []
    sections = {}
    version_seen = False
    for key_node, value_node in root.value:
        key = key_node.value
        if key == "schema_version":
            version_seen = True
            version = yaml.safe_load(yaml.serialize(value_node))
            if version != SCHEMA_VERSION:
                problems.append(f"{_where(source, value_node)}: unsupported schema_version "
                                f"{version!r} (expected {SCHEMA_VERSION})")
            continue
        if key not in SCHEMA:
            problems.append(f"{_where(source, key_node)}: unknown section {key!r}")
            continue
        if key in sections:
            problems.append(f"{_where(source, key_node)}: duplicate section {key!r}")
        _check_mapping(source, value_node, SCHEMA[key], key, problems)
        sections[key] = value_node
    if not version_seen:
        problems.append(f"{source}:1: missing schema_version")
    if problems:
        raise ConfigError(problems)
    doc = yaml.safe_load(text)
    return RunConfig(**{k: dict(doc.get(k) or {}) for k in SCHEMA})


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read(), str(path))
