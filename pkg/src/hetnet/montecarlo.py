"""Replication engine for coverage, power and FDR studies.

Each replication draws a network (or reuses a fixed one), covariates and
errors, simulates outcomes, fits the two-stage estimator and de-biases it.
Per-replication records are kept so that every aggregate can be recomputed
from them; :func:`aggregate` is the pure fold that produces the report.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import lasso_core as lc
from .dgp import (StructuralParams, draw_design, simulate_base, simulate_cliques,
                  simulate_multinet)
from .estimator import TuningPolicy, fit_2slss, fit_2slss_cliques, fit_2slss_multinet
from .inference import infer
from .network import (AdjacencyMatrix, MultiNetwork, embed_leader_block, erdos_renyi,
                      path_block, ring_block, watts_strogatz)

MODELS = ("base", "cliques", "multinet")
GENERATORS = ("erdos_renyi", "watts_strogatz", "empty")
LEADER_BLOCKS = ("path", "ring", "none")

# Version of the (master_seed, r) -> seed mapping.  Changing the mapping
# changes every study result, so bump this with it.
SEED_SCHEDULE_VERSION = 1

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# Failures that drop a replication instead of aborting the study.
RECOVERABLE = (np.linalg.LinAlgError, lc.ConvergenceError, FloatingPointError)


def _mix64(z: int) -> int:
    # splitmix64 finalizer, a bijection on 64-bit integers
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def seed_schedule(master_seed: int, r: int) -> int:
    """64-bit seed for replication ``r`` of a study.

    ``mix64(master_seed * golden + r mod 2^64)``: the inner map is a
    translation and the mixer a bijection, so distinct ``r`` (below 2^64)
    always give distinct seeds for a fixed master seed.
    """
    if r < 0:
        raise ValueError("replication index must be nonnegative")
    return _mix64((int(master_seed) * _GOLDEN + int(r)) & _MASK64)


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str = "erdos_renyi"
    p: float = 0.1
    mean_degree: int = 10
    omega: float = 0.4

    def __post_init__(self):
        if self.kind not in GENERATORS:
            raise ValueError(f"unknown generator {self.kind!r}; choose from {GENERATORS}")

    def draw(self, n: int, seed: int) -> AdjacencyMatrix:
        if self.kind == "erdos_renyi":
            return erdos_renyi(n, self.p, seed)
        if self.kind == "watts_strogatz":
            return watts_strogatz(n, self.mean_degree, self.omega, seed)
        return AdjacencyMatrix(np.zeros((n, n), dtype=np.int8))


@dataclass(frozen=True)
class StudyConfig:
    """One Monte-Carlo design.

    ``leaders`` are 0-based node indices with effects ``leader_values`` (a
    scalar is broadcast).  Unless ``leader_block`` is ``"none"`` the links
    among the leaders are overwritten by a fixed block in every draw, which
    guarantees feedback among them.  For ``model="multinet"`` there are
    ``n_networks`` independent draws and only ``relevant_networks`` carry the
    leaders.  ``fixed_network`` reuses one network draw for all replications.
    """

    model: str = "base"
    n: int = 200
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    leaders: tuple = (0, 1, 2, 3, 4)
    leader_values: tuple = (0.5,)
    leader_block: str = "path"
    beta0: tuple = (3.0,)
    gamma0: float = 0.05
    n_networks: int = 2
    relevant_networks: tuple = (0,)
    sigma: float = 1.0
    error_law: str = "gaussian"
    replications: int = 200
    ci_level: float = 0.95
    fdr_q: float = 0.05
    tuning: TuningPolicy = field(default_factory=TuningPolicy)
    lambda_group_ratio: float = 1.0
    master_seed: int = 0
    fixed_network: bool = False

    def __post_init__(self):
        leaders = tuple(int(i) for i in self.leaders)
        values = tuple(float(v) for v in np.atleast_1d(self.leader_values))
        if len(values) == 1 and len(leaders) != 1:
            values = values * len(leaders)
        object.__setattr__(self, "leaders", leaders)
        object.__setattr__(self, "leader_values", values)
        object.__setattr__(self, "beta0", tuple(float(b) for b in np.atleast_1d(self.beta0)))
        object.__setattr__(self, "relevant_networks",
                           tuple(int(j) for j in self.relevant_networks))
        if isinstance(self.generator, dict):
            object.__setattr__(self, "generator", GeneratorSpec(**self.generator))
        if isinstance(self.tuning, dict):
            object.__setattr__(self, "tuning", tuning_from_dict(self.tuning))
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; choose from {MODELS}")
        if self.leader_block not in LEADER_BLOCKS:
            raise ValueError(f"unknown leader block {self.leader_block!r}")
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if len(values) != len(leaders) and leaders:
            raise ValueError("one leader value per leader (or a single value)")
        if len(set(leaders)) != len(leaders):
            raise ValueError("leaders must be distinct")
        if any(i < 0 or i >= self.n for i in leaders):
            raise ValueError("leader index outside 0..n-1")
        if not 0 < self.ci_level < 1:
            raise ValueError("ci_level must lie in (0, 1)")
        if not 0 < self.fdr_q < 1:
            raise ValueError("fdr_q must lie in (0, 1)")
        if self.model == "multinet":
            if self.n_networks < 1:
                raise ValueError("n_networks must be >= 1")
            if any(j < 0 or j >= self.n_networks for j in self.relevant_networks):
                raise ValueError("relevant network index out of range")
        # fails early when the invertibility bounds are violated
        self.structural_params()

    @property
    def q(self) -> int:
        return self.n_networks if self.model == "multinet" else 1

    def eta_vectors(self) -> list:
        """True effects, one length-n vector per network."""
        eta = np.zeros(self.n)
        eta[list(self.leaders)] = self.leader_values
        if self.model != "multinet":
            return [eta]
        return [eta.copy() if j in self.relevant_networks else np.zeros(self.n)
                for j in range(self.n_networks)]

    def true_support(self) -> np.ndarray:
        """Stacked (network-major) indices of the nonzero effects."""
        eta = np.concatenate(self.eta_vectors())
        return np.flatnonzero(eta != 0)

    def structural_params(self) -> StructuralParams:
        etas = self.eta_vectors()
        beta0 = np.asarray(self.beta0)
        if self.model == "multinet":
            return StructuralParams(None, beta0, eta0_multi=tuple(etas), sigma=self.sigma,
                                    error_law=self.error_law)
        gamma0 = self.gamma0 if self.model == "cliques" else None
        return StructuralParams(etas[0], beta0, gamma0=gamma0, sigma=self.sigma,
                                error_law=self.error_law)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["leaders"] = list(self.leaders)
        d["leader_values"] = list(self.leader_values)
        d["beta0"] = list(self.beta0)
        d["relevant_networks"] = list(self.relevant_networks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        d = dict(d)
        if "generator" in d and isinstance(d["generator"], dict):
            d["generator"] = GeneratorSpec(**d["generator"])
        if "tuning" in d and isinstance(d["tuning"], dict):
            d["tuning"] = tuning_from_dict(d["tuning"])
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown study fields: {sorted(unknown)}")
        return cls(**d)


def tuning_from_dict(d: dict) -> TuningPolicy:
    d = dict(d)
    solver = d.pop("solver", None)
    if isinstance(solver, dict):
        d["solver"] = lc.SolverConfig(**solver)
    elif solver is not None:
        d["solver"] = solver
    return TuningPolicy(**d)


@dataclass
class Replication:
    """Outcome of one replication; ``failure`` is set when it was dropped."""

    index: int
    seed: int
    failure: str | None = None
    estimate_S: list = field(default_factory=list)
    estimate_beta: list = field(default_factory=list)
    covered_S: list = field(default_factory=list)
    length_S: list = field(default_factory=list)
    covered_Sc: int = 0
    informative_Sc: int = 0
    length_Sc: float = 0.0
    covered_beta: list = field(default_factory=list)
    length_beta: list = field(default_factory=list)
    rejections: list = field(default_factory=list)
    selected: list = field(default_factory=list)
    gamma_covered: bool | None = None
    gamma_rejected: bool | None = None
    gamma_length: float | None = None
    failed_coefficients: int = 0


@dataclass(eq=False)
class MCReport:
    """Aggregates of a study.

    Rates over an empty set (e.g. ``power`` with no leaders) are NaN.
    ``avgcov_Sc`` and ``avglength_Sc`` use only coefficients with a finite
    interval; ``uninformative_Sc`` is the mean share of the others.
    """

    config: dict
    replications_used: int
    replication_failures: int
    failure_reasons: dict
    avgcov_S: float
    avgcov_Sc: float
    avgcov_beta: float
    avglength_S: float
    avglength_Sc: float
    avglength_beta: float
    per_leader_coverage: list
    per_leader_length: list
    power: float
    fdr: float
    selection_prob: float
    uninformative_Sc: float
    failed_coefficients: int
    gamma_rejection_rate: float | None = None
    gamma_coverage: float | None = None
    gamma_avglength: float | None = None
    detection_prob: list | None = None
    mean_detected: list | None = None
    group_selection_prob: list | None = None
    records: list = field(default_factory=list)
    seed_schedule_version: int = SEED_SCHEDULE_VERSION

    def to_dict(self) -> dict:
        return _encode(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "MCReport":
        d = _decode(dict(d))
        d["records"] = [Replication(**r) for r in d.get("records", [])]
        return cls(**d)

    def __eq__(self, other):
        if not isinstance(other, MCReport):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def _encode(obj):
    """JSON-safe copy: non-finite floats become the strings 'nan'/'inf'/'-inf'."""
    if isinstance(obj, dict):
        return {str(k): _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


_SPECIAL = {"nan": math.nan, "inf": math.inf, "-inf": -math.inf}


def _decode(obj):
    if isinstance(obj, dict):
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    if isinstance(obj, str) and obj in _SPECIAL:
        return _SPECIAL[obj]
    return obj


def _component_seeds(config: StudyConfig, r: int):
    """Seeds for (networks, covariates, errors, cross-validation)."""
    root = np.random.SeedSequence(seed_schedule(config.master_seed, r))
    net_ss, x_ss, eps_ss, cv_ss = root.spawn(4)
    if config.fixed_network:
        # r = 0 is never a replication index, so this stream is reserved
        net_ss = np.random.SeedSequence(seed_schedule(config.master_seed, 0))
    net_seeds = [int(s.generate_state(1, np.uint64)[0]) for s in net_ss.spawn(config.q)]
    as_int = lambda ss: int(ss.generate_state(1, np.uint64)[0])
    return net_seeds, as_int(x_ss), as_int(eps_ss), as_int(cv_ss) % (2**31)


def _block(config: StudyConfig):
    s = len(config.leaders)
    if config.leader_block == "path":
        return path_block(s)
    if config.leader_block == "ring":
        return ring_block(s)
    return None


def draw_networks(config: StudyConfig, seeds) -> list:
    block = _block(config)
    nets = []
    for j, seed in enumerate(seeds):
        A = config.generator.draw(config.n, seed)
        carries = config.model != "multinet" or j in config.relevant_networks
        if block is not None and carries and config.leaders:
            A = embed_leader_block(A, block, config.leaders)
        nets.append(A)
    return nets


def _replicate(config: StudyConfig, r: int) -> Replication:
    rec = Replication(index=r, seed=seed_schedule(config.master_seed, r))
    try:
        _fill(config, r, rec)
    except RECOVERABLE as exc:
        return Replication(index=r, seed=rec.seed, failure=f"{type(exc).__name__}: {exc}")
    return rec


def replication_data(config: StudyConfig, r: int):
    """Network(s), covariates, outcome and tuning of replication ``r``.

    The network is an :class:`AdjacencyMatrix` for the single-network
    models and a :class:`MultiNetwork` otherwise.
    """
    net_seeds, x_seed, eps_seed, cv_seed = _component_seeds(config, r)
    params = config.structural_params()
    nets = draw_networks(config, net_seeds)
    X = draw_design(config.n, len(config.beta0), x_seed)
    tuning = replace(config.tuning, cv_seed=cv_seed)
    if config.model == "multinet":
        M = MultiNetwork(tuple(nets), tuple(f"net{j + 1}" for j in range(config.q)))
        D = simulate_multinet(M, params, X, eps_seed)
    elif config.model == "cliques":
        M = nets[0]
        D = simulate_cliques(M, params, X, eps_seed)
    else:
        M = nets[0]
        D = simulate_base(M, params, X, eps_seed)
    return M, X, D, tuning


def _fill(config: StudyConfig, r: int, rec: Replication) -> None:
    M, X, D, tuning = replication_data(config, r)
    if config.model == "multinet":
        fit = fit_2slss_multinet(D, X, M, tuning, config.lambda_group_ratio)
    elif config.model == "cliques":
        fit = fit_2slss_cliques(D, X, M, tuning=tuning)
    else:
        fit = fit_2slss(D, X, M, tuning)
    res = infer(D, X, M, fit, level=config.ci_level, fdr_q=config.fdr_q)

    eta0 = np.concatenate(config.eta_vectors())
    S = config.true_support()
    Sc = np.setdiff1d(np.arange(eta0.size), S)
    covered = (res.ci_lower <= eta0) & (eta0 <= res.ci_upper)
    length = res.ci_upper - res.ci_lower
    rec.estimate_S = [float(v) for v in res.e_hat[S]]
    rec.estimate_beta = [float(v) for v in res.b_hat]
    rec.covered_S = [bool(c) for c in covered[S]]
    rec.length_S = [float(v) for v in length[S]]
    finite = np.isfinite(length[Sc])
    rec.covered_Sc = int(np.sum(covered[Sc][finite]))
    rec.informative_Sc = int(np.sum(finite))
    rec.length_Sc = float(np.sum(length[Sc][finite]))
    beta0 = np.asarray(config.beta0)
    inside = (res.beta_ci_lower <= beta0) & (beta0 <= res.beta_ci_upper)
    rec.covered_beta = [bool(c) for c in inside]
    rec.length_beta = [float(v) for v in res.beta_ci_upper - res.beta_ci_lower]
    rec.rejections = [int(i) for i in res.bh_rejections]
    rec.selected = [int(i) for i in fit.selected_set]
    rec.failed_coefficients = int(res.failed.size)
    if res.gamma is not None:
        g = res.gamma
        rec.gamma_covered = bool(g["ci_lower"] <= config.gamma0 <= g["ci_upper"])
        rec.gamma_rejected = bool(g["p_value"] < 1 - config.ci_level)
        rec.gamma_length = float(g["ci_upper"] - g["ci_lower"])


def _mean(values) -> float:
    values = list(values)
    return float(np.mean(values)) if values else math.nan


def aggregate(config: StudyConfig, records: list) -> MCReport:
    """Fold replication records (in index order) into a report."""
    records = sorted(records, key=lambda rec: rec.index)
    ok = [rec for rec in records if rec.failure is None]
    failed = [rec for rec in records if rec.failure is not None]
    reasons: dict = {}
    for rec in failed:
        key = rec.failure.split(":", 1)[0]
        reasons[key] = reasons.get(key, 0) + 1

    S = [int(i) for i in config.true_support()]
    s0 = len(S)
    q = config.q
    n = config.n
    support = set(S)

    per_cov = [_mean(rec.covered_S[j] for rec in ok) for j in range(s0)]
    per_len = [_mean(rec.length_S[j] for rec in ok) for j in range(s0)]

    def rate(num, den):
        return num / den if den else math.nan

    def fdp(rec):
        rej = rec.rejections
        return sum(1 for i in rej if i not in support) / len(rej) if rej else 0.0

    report = MCReport(
        config=config.to_dict(),
        replications_used=len(ok),
        replication_failures=len(failed),
        failure_reasons=reasons,
        avgcov_S=_mean(np.mean(rec.covered_S) for rec in ok) if s0 else math.nan,
        avgcov_Sc=_mean(rate(rec.covered_Sc, rec.informative_Sc) for rec in ok
                        if rec.informative_Sc),
        avgcov_beta=_mean(np.mean(rec.covered_beta) for rec in ok),
        avglength_S=_mean(np.mean(rec.length_S) for rec in ok) if s0 else math.nan,
        avglength_Sc=_mean(rate(rec.length_Sc, rec.informative_Sc) for rec in ok
                           if rec.informative_Sc),
        avglength_beta=_mean(np.mean(rec.length_beta) for rec in ok),
        per_leader_coverage=per_cov,
        per_leader_length=per_len,
        power=_mean(sum(1 for i in rec.rejections if i in support) / s0 for rec in ok)
        if s0 else math.nan,
        fdr=_mean(fdp(rec) for rec in ok),
        selection_prob=_mean(float(sorted(rec.selected) == S) for rec in ok),
        uninformative_Sc=_mean(1 - rec.informative_Sc / (n * q - s0) for rec in ok)
        if n * q > s0 else math.nan,
        failed_coefficients=sum(rec.failed_coefficients for rec in ok),
        records=records,
    )
    if config.model == "cliques":
        report.gamma_rejection_rate = _mean(float(rec.gamma_rejected) for rec in ok)
        report.gamma_coverage = _mean(float(rec.gamma_covered) for rec in ok)
        report.gamma_avglength = _mean(rec.gamma_length for rec in ok)
    if config.model == "multinet":
        counts = [[sum(1 for i in rec.rejections if j * n <= i < (j + 1) * n)
                   for j in range(q)] for rec in ok]
        chosen = [[any(j * n <= i < (j + 1) * n for i in rec.selected) for j in range(q)]
                  for rec in ok]
        report.detection_prob = [_mean(float(c[j] > 0) for c in counts) for j in range(q)]
        report.mean_detected = [_mean(c[j] for c in counts if c[j] > 0) for j in range(q)]
        report.group_selection_prob = [_mean(float(c[j]) for c in chosen) for j in range(q)]
    return report


def run_replications(config: StudyConfig, workers: int = 1) -> list:
    indices = range(1, config.replications + 1)
    if workers <= 1:
        return [_replicate(config, r) for r in indices]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map yields in submission order, so aggregation order is fixed by r
        return list(pool.map(_replicate, [config] * config.replications, indices))


def run_study(config: StudyConfig, workers: int = 1) -> MCReport:
    """Run all replications of ``config`` and aggregate them.

    Results do not depend on ``workers``: every replication has its own seed
    and the fold consumes records in replication order.
    """
    return aggregate(config, run_replications(config, workers))


# serialization

_SCALARS = ("replications_used", "replication_failures", "avgcov_S", "avgcov_Sc",
            "avgcov_beta", "avglength_S", "avglength_Sc", "avglength_beta", "power", "fdr",
            "selection_prob", "uninformative_Sc", "failed_coefficients",
            "gamma_rejection_rate", "gamma_coverage", "gamma_avglength",
            "seed_schedule_version")


def serialize_report(report: MCReport, fmt: str = "json") -> str:
    """Render a report as JSON or CSV; :func:`parse_report` inverts both.

    The CSV has columns ``quantity, n, value``: one row per summary quantity,
    followed by rows for per-leader and per-network lists, the failure
    reasons, the configuration and the replication records (JSON-encoded
    values).
    """
    doc = report.to_dict()
    if fmt == "json":
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    n = report.config.get("n", "")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["quantity", "n", "value"])
    for key in _SCALARS:
        writer.writerow([key, n, json.dumps(doc[key])])
    for key in ("per_leader_coverage", "per_leader_length", "detection_prob",
                "mean_detected", "group_selection_prob", "failure_reasons", "config"):
        writer.writerow([key, n, json.dumps(doc[key], sort_keys=True)])
    for rec in doc["records"]:
        writer.writerow(["record", n, json.dumps(rec, sort_keys=True)])
    return buf.getvalue()


def parse_report(text: str, fmt: str = "json") -> MCReport:
    if fmt == "json":
        return MCReport.from_dict(json.loads(text))
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    rows = list(csv.DictReader(io.StringIO(text)))
    doc: dict = {"records": []}
    for row in rows:
        value = json.loads(row["value"])
        if row["quantity"] == "record":
            doc["records"].append(value)
        else:
            doc[row["quantity"]] = value
    return MCReport.from_dict(doc)
