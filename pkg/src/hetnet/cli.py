"""Command-line interface: ``hetnet <subcommand>``.

Subcommands: generate, simulate, fit, infer, mc, counterfactual.  All of
them accept ``--seed``, ``--config``, ``--output`` and ``--format``.  On
success a one-line JSON status goes to stdout; on failure a JSON error
record goes to stderr and the exit code is nonzero (2 for usage errors, 1
otherwise).  ``HETNET_OUTPUT_DIR`` sets the directory for default output
paths.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import lasso_core as lc
from . import montecarlo as mc
from .config import ConfigError, RunConfig, load_config
from .data import DataError, Dataset, load_dataset, read_edge_list, write_dataset, write_edge_list
from .dgp import draw_design, simulate_base, simulate_cliques, simulate_multinet, solve_system
from .estimator import FitResult, fit_2slss, fit_2slss_cliques, fit_2slss_multinet
from .inference import estimate_sigma2, infer, inference_to_csv, inference_to_json
from .network import MultiNetwork, as_matrix, col_scale

OUTPUT_ENV = "HETNET_OUTPUT_DIR"
EXIT_FAILURE = 1
EXIT_USAGE = 2

logger = logging.getLogger("hetnet")


class UsageError(Exception):
    pass


# counterfactual


@dataclass
class CounterfactualResult:
    """Predicted outcomes of the non-leaders with the leaders fixed at 1.

    ``predicted`` holds raw values (a linear probability model can leave
    [0, 1]); the rates average the values clipped to [0, 1].  ``baseline``
    is the unconditional model prediction for the same nodes.
    """

    leaders: np.ndarray
    followers: np.ndarray
    predicted: np.ndarray
    baseline: np.ndarray
    participation_rate: float
    baseline_rate: float


def effect_matrix(fit: FitResult, M) -> np.ndarray:
    """``sum_j M^j ∘ eta_hat^j``, plus ``gamma_hat * M`` for a cliques fit."""
    nets = list(M.networks) if isinstance(M, MultiNetwork) else [M]
    if len(nets) != fit.n_networks:
        raise ValueError("fit and network count disagree")
    A = sum(col_scale(net, eta) for net, eta in zip(nets, fit.eta_blocks()))
    if fit.gamma_hat is not None:
        A = A + fit.gamma_hat * as_matrix(nets[0])
    return A


def counterfactual_participation(fit: FitResult, M, X, leaders, epsilon_policy: str = "zero",
                                 seed: int = 0, draws: int = 100,
                                 sigma: float = 1.0) -> CounterfactualResult:
    """Outcomes of the non-leaders when every node in ``leaders`` has outcome 1.

    Solves ``D_F = (I - A_FF)^{-1} (A_FL 1 + X_F beta_hat + eps_F)`` with
    ``A`` from :func:`effect_matrix`.  ``epsilon_policy="zero"`` sets the
    errors to zero; ``"resample"`` averages the solution over ``draws``
    normal error vectors with standard deviation ``sigma``.
    """
    A = effect_matrix(fit, M)
    n = A.shape[0]
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, np.newaxis]
    L = np.array(sorted(set(int(i) for i in leaders)), dtype=int)
    if L.size and (L.min() < 0 or L.max() >= n):
        raise ValueError("leader index out of range")
    F = np.setdiff1d(np.arange(n), L)
    xb = X @ fit.beta_hat
    if epsilon_policy == "zero":
        eps = np.zeros((1, n))
    elif epsilon_policy == "resample":
        if draws < 1:
            raise ValueError("draws must be >= 1")
        eps = sigma * np.random.default_rng(seed).standard_normal((draws, n))
    else:
        raise ValueError(f"unknown epsilon policy {epsilon_policy!r}")
    system_F = np.eye(F.size) - A[np.ix_(F, F)]
    forced = A[np.ix_(F, L)].sum(axis=1) if L.size else np.zeros(F.size)
    rhs = (forced + xb[F])[:, np.newaxis] + eps[:, F].T
    predicted = solve_system(system_F, rhs).mean(axis=1)
    full = solve_system(np.eye(n) - A, xb[:, np.newaxis] + eps.T).mean(axis=1)
    baseline = full[F]
    rate = float(np.clip(predicted, 0, 1).mean()) if F.size else float("nan")
    base_rate = float(np.clip(baseline, 0, 1).mean()) if F.size else float("nan")
    return CounterfactualResult(L, F, predicted, baseline, rate, base_rate)


# fit files


def fit_to_json(fit: FitResult, dataset: Dataset | None = None) -> str:
    doc = {
        "beta_hat": fit.beta_hat.tolist(),
        "eta_hat": fit.eta_hat.tolist(),
        "d_hat": fit.d_hat.tolist(),
        "gamma_hat": fit.gamma_hat,
        "lambdas": fit.lambdas,
        "n_networks": fit.n_networks,
        "labels": list(fit.labels),
        # the first-stage support enters the noise-variance degrees of freedom
        "first_stage_coef": (None if fit.first_stage_coef is None
                             else fit.first_stage_coef.tolist()),
    }
    if dataset is not None:
        doc["node_ids"] = list(dataset.node_ids)
        doc["covariate_names"] = list(dataset.covariate_names)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def fit_from_json(text: str) -> FitResult:
    doc = json.loads(text)
    return FitResult(beta_hat=np.array(doc["beta_hat"], dtype=float),
                     eta_hat=np.array(doc["eta_hat"], dtype=float),
                     d_hat=np.array(doc["d_hat"], dtype=float),
                     lambdas=doc["lambdas"], gamma_hat=doc["gamma_hat"],
                     n_networks=int(doc["n_networks"]), labels=tuple(doc["labels"]),
                     first_stage_coef=None if doc.get("first_stage_coef") is None
                     else np.array(doc["first_stage_coef"], dtype=float))


def fit_to_csv(fit: FitResult, dataset: Dataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "network", "parameter", "estimate"])
    n = dataset.n
    for j, label in enumerate(fit.labels):
        for i, node in enumerate(dataset.node_ids):
            writer.writerow([node, label, "eta", repr(float(fit.eta_hat[j * n + i]))])
    if fit.gamma_hat is not None:
        writer.writerow(["", fit.labels[0], "gamma", repr(float(fit.gamma_hat))])
    for name, b in zip(dataset.covariate_names, fit.beta_hat):
        writer.writerow([name, "", "beta", repr(float(b))])
    for node, d in zip(dataset.node_ids, fit.d_hat):
        writer.writerow([node, "", "d_hat", repr(float(d))])
    return buf.getvalue()


# subcommands


def _output_path(args, default_name):
    if args.output:
        return args.output
    return os.path.join(os.environ.get(OUTPUT_ENV, "."), default_name)


def _config(args) -> RunConfig:
    return load_config(args.config) if args.config else RunConfig()


def _write(path, text):
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _network_seeds(seed, q):
    return [int(s.generate_state(1, np.uint64)[0])
            for s in np.random.SeedSequence([seed, 1]).spawn(q)]


def _draw_networks(cfg: RunConfig, seed: int):
    study = cfg.study_config()
    nets = mc.draw_networks(study, _network_seeds(seed, study.q))
    labels = tuple(f"net{j + 1}" for j in range(study.q))
    return study, MultiNetwork(tuple(nets), labels)


def _read_network_dir(directory):
    with open(os.path.join(directory, "nodes.csv"), newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    node_ids = tuple(r[0] for r in rows if r)
    with open(os.path.join(directory, "networks.json")) as fh:
        index = json.load(fh)
    nets = [read_edge_list(os.path.join(directory, e["edges"]), node_ids)
            for e in index["networks"]]
    return node_ids, MultiNetwork(tuple(nets), tuple(e["label"] for e in index["networks"]))


def cmd_generate(args) -> dict:
    cfg = _config(args)
    if args.n is not None:
        cfg.network["n"] = args.n
    _, multi = _draw_networks(cfg, args.seed)
    out = _output_path(args, "networks")
    os.makedirs(out, exist_ok=True)
    ids = [str(i) for i in range(multi.n)]
    _write(os.path.join(out, "nodes.csv"), "id\n" + "".join(f"{i}\n" for i in ids))
    entries = []
    for label, net in zip(multi.labels, multi.networks):
        name = f"network_{label}.csv"
        write_edge_list(net, os.path.join(out, name), ids)
        entry = {"label": label, "edges": name, "edge_count": net.edge_count()}
        if args.format == "json":
            rows, cols = np.nonzero(np.triu(net.entries, k=1))
            entry["edge_pairs"] = [[int(i), int(j)] for i, j in zip(rows, cols)]
        entries.append(entry)
    _write(os.path.join(out, "networks.json"),
           json.dumps({"n": multi.n, "networks": entries}, indent=2, sort_keys=True) + "\n")
    return {"output": out, "n": multi.n, "networks": len(entries)}


def _simulate(study, multi, X, seed):
    params = study.structural_params()
    if study.model == "multinet":
        return simulate_multinet(multi, params, X, seed)
    if multi.q != 1:
        raise ValueError(f"model {study.model!r} needs exactly one network")
    if study.model == "cliques":
        return simulate_cliques(multi.networks[0], params, X, seed)
    return simulate_base(multi.networks[0], params, X, seed)


def cmd_simulate(args) -> dict:
    cfg = _config(args)
    if args.networks:
        node_ids, multi = _read_network_dir(args.networks)
        cfg.network["n"] = multi.n
        if multi.q > 1:
            cfg.network["n_networks"] = multi.q
        study = cfg.study_config()
    else:
        study, multi = _draw_networks(cfg, args.seed)
        node_ids = tuple(str(i) for i in range(multi.n))
    x_ss, eps_ss = np.random.SeedSequence([args.seed, 2]).spawn(2)
    X = draw_design(multi.n, len(study.beta0), int(x_ss.generate_state(1, np.uint64)[0]))
    D = _simulate(study, multi, X, int(eps_ss.generate_state(1, np.uint64)[0]))
    names = tuple(f"x{c + 1}" for c in range(X.shape[1]))
    dataset = Dataset(D, X, names, multi, node_ids)
    out = _output_path(args, "dataset")
    manifest = write_dataset(dataset, out)
    truth = {"model": study.model, "beta0": list(study.beta0),
             "gamma0": study.gamma0 if study.model == "cliques" else None,
             "eta0": [v.tolist() for v in study.eta_vectors()]}
    _write(os.path.join(out, "truth.json"), json.dumps(truth, indent=2, sort_keys=True) + "\n")
    if args.format == "json":
        doc = {"node_ids": list(node_ids), "outcome": D.tolist(), "covariates": X.tolist(),
               "covariate_names": list(names)}
        _write(os.path.join(out, "dataset.json"), json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return {"output": out, "manifest": manifest, "n": multi.n}


def _fit(cfg: RunConfig, dataset: Dataset, seed: int) -> FitResult:
    tuning = cfg.tuning_policy(cv_seed=seed % (2**31))
    model = cfg.model.get("type", "base" if dataset.networks.q == 1 else "multinet")
    if model == "multinet":
        return fit_2slss_multinet(dataset.D, dataset.X, dataset.networks, tuning,
                                  cfg.lambda_group_ratio)
    if dataset.networks.q != 1:
        raise ValueError(f"model {model!r} needs exactly one network; the dataset has "
                         f"{dataset.networks.q}")
    M = dataset.networks.networks[0]
    if model == "cliques":
        fit = fit_2slss_cliques(dataset.D, dataset.X, M, tuning=tuning)
    elif model == "base":
        fit = fit_2slss(dataset.D, dataset.X, M, tuning)
    else:
        raise ValueError(f"unknown model {model!r}")
    fit.labels = dataset.networks.labels
    return fit


def _fit_or_load(args, cfg, dataset):
    if getattr(args, "fit", None):
        with open(args.fit) as fh:
            fit = fit_from_json(fh.read())
        if fit.eta_hat.shape[0] != dataset.n * dataset.networks.q:
            raise ValueError("fit file does not match the dataset size")
        return fit
    return _fit(cfg, dataset, args.seed)


def _networks_arg(dataset: Dataset):
    multi = dataset.networks
    return multi if multi.q > 1 else multi.networks[0]


def cmd_fit(args) -> dict:
    cfg = _config(args)
    dataset = load_dataset(args.data)
    fit = _fit(cfg, dataset, args.seed)
    out = _output_path(args, f"fit.{args.format}")
    text = fit_to_json(fit, dataset) if args.format == "json" else fit_to_csv(fit, dataset)
    _write(out, text)
    return {"output": out, "selected": int(fit.selected_set.size)}


def cmd_infer(args) -> dict:
    cfg = _config(args)
    dataset = load_dataset(args.data)
    fit = _fit_or_load(args, cfg, dataset)
    opts = cfg.inference
    res = infer(dataset.D, dataset.X, _networks_arg(dataset), fit,
                level=opts.get("ci_level", 0.95), fdr_q=opts.get("fdr_q", 0.05),
                lambda_node=opts.get("lambda_node"),
                first_stage_df=opts.get("first_stage_df", True))
    res.labels = dataset.networks.labels
    writer = inference_to_json if args.format == "json" else inference_to_csv
    out = _output_path(args, f"inference.{args.format}")
    _write(out, writer(res, dataset.node_ids, dataset.covariate_names))
    return {"output": out, "rejections": int(res.bh_rejections.size)}


def cmd_mc(args) -> dict:
    cfg = _config(args)
    study = cfg.study_config(master_seed=args.seed)
    workers = args.workers if args.workers is not None else int(cfg.study.get("workers", 1))
    report = mc.run_study(study, workers=workers)
    out = _output_path(args, f"mc_report.{args.format}")
    _write(out, mc.serialize_report(report, args.format))
    return {"output": out, "replications_used": report.replications_used,
            "failures": report.replication_failures}


def cmd_counterfactual(args) -> dict:
    cfg = _config(args)
    dataset = load_dataset(args.data)
    fit = _fit_or_load(args, cfg, dataset)
    opts = cfg.counterfactual
    if args.leaders is not None:
        ids = [s for s in args.leaders.split(",") if s]
    else:
        ids = [str(v) for v in opts.get("leaders", [])]
    leaders = dataset.index_of(ids)
    policy = opts.get("epsilon_policy", "zero")
    sigma = 1.0
    if policy == "resample":
        sigma = float(np.sqrt(estimate_sigma2(dataset.D, dataset.X, _networks_arg(dataset), fit)))
    res = counterfactual_participation(fit, dataset.networks, dataset.X, leaders, policy,
                                       seed=args.seed, draws=int(opts.get("draws", 100)),
                                       sigma=sigma)
    out = _output_path(args, f"counterfactual.{args.format}")
    rows = [{"id": dataset.node_ids[i], "predicted": float(p),
             "predicted_clipped": float(np.clip(p, 0, 1)), "baseline": float(b)}
            for i, p, b in zip(res.followers, res.predicted, res.baseline)]
    if args.format == "json":
        doc = {"leaders": [dataset.node_ids[i] for i in res.leaders],
               "epsilon_policy": policy, "participation_rate": res.participation_rate,
               "baseline_rate": res.baseline_rate, "followers": rows}
        text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    else:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["id", "predicted", "predicted_clipped", "baseline"])
        for row in rows:
            writer.writerow([row["id"], repr(row["predicted"]), repr(row["predicted_clipped"]),
                             repr(row["baseline"])])
        text = buf.getvalue()
    _write(out, text)
    return {"output": out, "participation_rate": res.participation_rate,
            "baseline_rate": res.baseline_rate}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    # the action is shared by every subcommand, so its default stays None and
    # each handler resolves it (mc falls back to the config's master seed)
    common.add_argument("--seed", type=int,
                        help="random seed (default 0; mc uses the config master_seed)")
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--output", help="output path (file, or directory for generate/simulate)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")

    parser = _Parser(prog="hetnet", description="Heterogeneous network effects toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", parents=[common], help="draw networks and write edge lists")
    p.add_argument("--n", type=int, help="node count (overrides the config)")
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("simulate", parents=[common], help="simulate a dataset directory")
    p.add_argument("--networks", help="directory written by 'generate'")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("fit", parents=[common], help="two-stage LASSO fit")
    p.add_argument("--data", required=True, help="dataset manifest")
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("infer", parents=[common], help="de-biased intervals and BH tests")
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--fit", help="JSON fit file to reuse instead of refitting")
    p.set_defaults(handler=cmd_infer)

    p = sub.add_parser("mc", parents=[common], help="Monte-Carlo study from a config")
    p.add_argument("--workers", type=int, help="parallel worker processes")
    p.set_defaults(handler=cmd_mc)

    p = sub.add_parser("counterfactual", parents=[common],
                       help="non-leader outcomes with the leaders fixed at 1")
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--fit", help="JSON fit file to reuse instead of refitting")
    p.add_argument("--leaders", help="comma-separated leader ids (overrides the config)")
    p.set_defaults(handler=cmd_counterfactual)
    return parser


def _error_record(command, kind, message):
    return json.dumps({"status": "error", "command": command, "error": kind,
                       "message": message}, sort_keys=True)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(_error_record(None, "UsageError", str(exc)), file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.seed is None and args.command != "mc":
            args.seed = 0
        result = args.handler(args)
    except ConfigError as exc:
        print(_error_record(args.command, "ConfigError", str(exc)), file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ValueError, OSError, np.linalg.LinAlgError, ArithmeticError,
            lc.ConvergenceError) as exc:
        print(_error_record(args.command, type(exc).__name__, str(exc)), file=sys.stderr)
        return EXIT_FAILURE
    print(json.dumps({"status": "ok", "command": args.command, **result}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
