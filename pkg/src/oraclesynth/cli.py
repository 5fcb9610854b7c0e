"""Command line entry point.

Exit codes: 0 success, 2 bad configuration or arguments, 3 failure inside a
component.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .domain import Schema, generate_synthetic_csv, load_csv, record_stats, write_bits
from .errors import ConfigError, SynthError
from .harness import ALGORITHMS, ExperimentConfig, RunReport, compare_reports, run_experiment
from .oracle import OracleProblem, export_mip
from .privacy import sample_exponential_vector
from .rng import substream
from .workload import Workload, answers_csv, enumerate_marginals


def _schema(path: str) -> Schema:
    return Schema.from_json(path)


def cmd_encode(args) -> int:
    ds = load_csv(args.csv, _schema(args.schema))
    if args.out:
        write_bits(ds, args.out)
    print(json.dumps(record_stats(ds), indent=1))
    return 0


def cmd_gen_data(args) -> int:
    if args.n < 1:
        raise ConfigError("--n must be at least 1")
    path = generate_synthetic_csv(_schema(args.schema), args.n, args.seed, args.out)
    print(path)
    return 0


def cmd_workload(args) -> int:
    schema = _schema(args.schema)
    W = enumerate_marginals(schema, args.k, args.marginals, args.seed)
    if args.out:
        W.save(args.out)
    if args.csv:
        text = answers_csv(W.answers(load_csv(args.csv, schema)))
        if args.answers:
            Path(args.answers).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
    print(json.dumps({"queries": len(W), "k": args.k, "marginals": args.marginals}), file=sys.stderr)
    return 0


def cmd_run(args) -> int:
    if args.config is None:
        raise ConfigError("run needs --config")
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        # command-line paths are relative to the working directory
        cfg.out = str(Path(args.out).absolute())
    if args.algorithm is not None:
        cfg.algorithm = args.algorithm
    if args.epsilon is not None:
        cfg.epsilon, cfg.rho = (args.epsilon if len(args.epsilon) > 1 else args.epsilon[0]), None
    if args.rho is not None:
        cfg.rho, cfg.epsilon = args.rho, None
    if args.delta is not None:
        cfg.delta = args.delta
    if args.k is not None:
        cfg.workload["k"] = args.k
    if args.marginals is not None:
        cfg.workload["marginals"] = args.marginals
    if args.oracle is not None:
        cfg.oracle = dict(cfg.oracle or {}, backend=args.oracle)
    cfg.validate()
    reports = run_experiment(cfg)
    for rep in reports:
        print(json.dumps({"epsilon": rep.doc["epsilon_target"], "median_error": rep.median,
                          "rho_total": rep.doc["rho_total"]}))
    return 0


def cmd_export_mip(args) -> int:
    schema = _schema(args.schema)
    if args.workload:
        W = Workload.from_json(schema, json.loads(Path(args.workload).read_text(encoding="utf-8")))
    else:
        W = enumerate_marginals(schema, args.k, args.marginals, args.seed)
    queries = list(W)[: args.queries] if args.queries else list(W)
    sigma = (sample_exponential_vector(args.eta, schema.dimension, substream(args.seed, "export-noise"))
             if args.eta > 0 else np.zeros(schema.dimension))
    export_mip(OracleProblem.build(schema.sizes, queries, None, sigma), args.out)
    print(args.out)
    return 0


def cmd_compare(args) -> int:
    text = compare_reports([RunReport.load(p) for p in args.reports])
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oraclesynth",
                                description="Differentially private synthetic data for marginal workloads")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("encode", help="one-hot encode a CSV and print per-attribute counts")
    e.add_argument("--schema", required=True)
    e.add_argument("--csv", required=True)
    e.add_argument("--out", help="write bit records, one per line")
    e.set_defaults(func=cmd_encode)

    g = sub.add_parser("gen-data", help="write a seeded synthetic CSV for a schema")
    g.add_argument("--schema", required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    w = sub.add_parser("workload", help="enumerate a k-way marginal workload")
    w.add_argument("--schema", required=True)
    w.add_argument("--k", type=int, required=True)
    w.add_argument("--marginals", type=int)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--out", help="workload JSON")
    w.add_argument("--csv", help="also answer the workload on this data")
    w.add_argument("--answers", help="answers CSV path (default stdout)")
    w.set_defaults(func=cmd_workload)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("--config")
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--algorithm", choices=ALGORITHMS)
    priv = r.add_mutually_exclusive_group()
    priv.add_argument("--epsilon", type=float, nargs="+")
    priv.add_argument("--rho", type=float)
    r.add_argument("--delta", type=float)
    r.add_argument("--k", type=int)
    r.add_argument("--marginals", type=int)
    r.add_argument("--oracle", choices=("exact", "local", "export"))
    r.set_defaults(func=cmd_run)

    x = sub.add_parser("export-mip", help="write an oracle problem as an LP-style integer program")
    x.add_argument("--schema", required=True)
    x.add_argument("--workload", help="workload JSON (else enumerate with --k/--marginals)")
    x.add_argument("--k", type=int, default=2)
    x.add_argument("--marginals", type=int)
    x.add_argument("--queries", type=int, help="use only the first N queries")
    x.add_argument("--eta", type=float, default=0.0, help="scale of the exponential perturbation")
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_mip)

    c = sub.add_parser("compare", help="tabulate median errors across reports")
    c.add_argument("reports", nargs="+")
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SynthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
