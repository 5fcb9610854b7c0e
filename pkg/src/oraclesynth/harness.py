"""Experiment configuration, orchestration and reporting.

A config is a JSON object::

    {
      "data": {"csv": "adult.csv", "schema": "adult.schema.json"}
              | {"generate": {"schema": "s.json", "n": 2000, "seed": 1}},
      "workload": {"k": 3, "marginals": 64, "seed": 0},
      "algorithm": "fem" | "sepfem" | "dualquery" | "dqrs",
      "params": {"T": ..., "eta": ..., "samples": ..., "epsilon0": ...,
                 "alpha": ..., "beta": ..., "preset": ...},
      "epsilon": 1.0 | [0.1, 0.5, 1.0], "delta": null,   (or "rho": 0.01)
      "oracle": {"backend": "exact", "cap": 16777216, "restarts": 16},
      "repetitions": 5, "seed": 0, "out": "results/", "timings": false
    }

Relative paths resolve against the config file's directory. ``delta``
defaults to ``1/n^2``. Every random choice derives from ``seed`` through
named substreams, and reports contain no wall-clock data, so reruns with the
same seed write byte-identical reports and traces. Wall times go to a
separate ``timings.json`` when ``timings`` is on.
"""

from __future__ import annotations

import copy
import csv
import io
import itertools
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .domain import EncodedDataset, Schema, generate_synthetic_csv, load_csv
from .dual import (
    DqrsParams,
    dqrs_params,
    dqrs_privacy_cost,
    dualquery_privacy_cost,
    run_dqrs,
    run_dualquery,
)
from .errors import ConfigError, IoFailure, MismatchedWorkloads
from .oracle import DEFAULT_CAP, make_oracle
from .primal import PrimalConfig, run_primal
from .privacy import invert_budget, zcdp_to_dp
from .rng import substream
from .workload import Workload, enumerate_marginals, max_error

ALGORITHMS = ("fem", "sepfem", "dualquery", "dqrs")

# Named hyperparameter settings. Grid presets list every combination to try;
# trying more than one is tuning on the private data and is only done when the
# config sets "benchmark": true, and the report is labelled accordingly.
PRESETS: dict[str, dict[str, Any]] = {
    "desk": {"epsilon0": [0.05], "eta": [1.0], "samples": [50]},
    "fem-sweep-1": {"epsilon0": [0.003, 0.005, 0.007, 0.009, 0.011, 0.015, 0.017, 0.019],
                    "eta": [1.0, 2.0, 3.0, 4.0], "samples": [50]},
    "fem-sweep-2": {"epsilon0": [0.0025, 0.003, 0.0035], "eta": [0.75, 1.0, 1.25], "samples": [50]},
    "dq-grid": {"eta": [0.2, 0.3, 0.4, 0.5, 0.6, 0.7], "samples": [10, 20, 30, 40, 50, 100]},
}


@dataclass
class ExperimentConfig:
    data: dict[str, Any]
    workload: dict[str, Any]
    algorithm: str = "fem"
    params: dict[str, Any] = field(default_factory=dict)
    epsilon: float | list[float] | None = None
    delta: float | None = None
    rho: float | None = None
    oracle: dict[str, Any] = field(default_factory=lambda: {"backend": "exact"})
    repetitions: int = 1
    seed: int = 0
    out: str | None = None
    timings: bool = False
    benchmark: bool = False
    base_dir: str = "."

    @classmethod
    def from_dict(cls, doc: dict[str, Any], base_dir: str | os.PathLike = ".") -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__ if f != "base_dir"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "data" not in doc or "workload" not in doc:
            raise ConfigError("config needs 'data' and 'workload'")
        cfg = cls(**copy.deepcopy(doc), base_dir=str(base_dir))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc, path.parent)

    def to_dict(self) -> dict[str, Any]:
        return {k: copy.deepcopy(getattr(self, k)) for k in self.__dataclass_fields__ if k != "base_dir"}

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if self.epsilon is not None and self.rho is not None:
            raise ConfigError("give either epsilon or rho, not both")
        if self.algorithm in ("fem", "sepfem") and self.epsilon is None and self.rho is None:
            raise ConfigError("primal algorithms need epsilon or rho")
        for e in self.epsilons():
            if e is not None and not e > 0:
                raise ConfigError("epsilon must be positive")
        if self.rho is not None and not self.rho > 0:
            raise ConfigError("rho must be positive")
        if "k" not in self.workload:
            raise ConfigError("workload needs 'k'")
        preset = self.params.get("preset")
        if preset is not None and preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; known: {sorted(PRESETS)}")

    def epsilons(self) -> list[float | None]:
        if isinstance(self.epsilon, (list, tuple)):
            if not self.epsilon:
                raise ConfigError("epsilon list is empty")
            return [float(e) for e in self.epsilon]
        return [None if self.epsilon is None else float(self.epsilon)]

    def path(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else Path(self.base_dir) / q


def _load_schema(cfg: ExperimentConfig, ref: Any) -> Schema:
    if isinstance(ref, dict):
        return Schema.from_json(ref)
    return Schema.from_json(cfg.path(str(ref)))


def load_data(cfg: ExperimentConfig, scratch: Path | None = None) -> EncodedDataset:
    data = cfg.data
    if "generate" in data:
        g = data["generate"]
        schema = _load_schema(cfg, g["schema"])
        if scratch is None:
            with tempfile.TemporaryDirectory() as tmp:
                target = Path(tmp) / "generated.csv"
                generate_synthetic_csv(schema, int(g["n"]), int(g.get("seed", 0)), target)
                return load_csv(target, schema)
        target = scratch / "generated.csv"
        target.parent.mkdir(parents=True, exist_ok=True)
        generate_synthetic_csv(schema, int(g["n"]), int(g.get("seed", 0)), target)
        return load_csv(target, schema)
    if "csv" not in data or "schema" not in data:
        raise ConfigError("data needs 'csv' and 'schema', or 'generate'")
    schema = _load_schema(cfg, data["schema"])
    csv_path = cfg.path(str(data["csv"]))
    if not csv_path.exists():
        raise ConfigError(f"data file {csv_path} does not exist")
    return load_csv(csv_path, schema)


def build_workload(cfg: ExperimentConfig, D: EncodedDataset) -> Workload:
    w = cfg.workload
    return enumerate_marginals(D.schema, int(w["k"]), w.get("marginals"), int(w.get("seed", 0)))


def _resolve_params(cfg: ExperimentConfig) -> list[dict[str, Any]]:
    """Hyperparameter candidates: explicit params, else a preset's grid."""
    explicit = {k: v for k, v in cfg.params.items() if k != "preset"}
    name = cfg.params.get("preset")
    if name is None and cfg.algorithm in ("fem", "sepfem") and not (
            "eta" in explicit and "samples" in explicit and ("T" in explicit or "epsilon0" in explicit)):
        name = "desk"
    if name is None:
        return [explicit]
    grid = {k: v for k, v in PRESETS[name].items() if k not in explicit}
    keys = sorted(grid)
    combos = [dict(zip(keys, vals), **explicit) for vals in itertools.product(*(grid[k] for k in keys))]
    if len(combos) > 1 and not cfg.benchmark:
        raise ConfigError(f"preset {name!r} is a grid; set \"benchmark\": true to tune "
                          "(tuning on the private data is not differentially private)")
    return combos


def _max_rounds(cost, rho: float, limit: int = 10 ** 6) -> int:
    """Largest T with cost(T) <= rho (cost non-decreasing in T)."""
    if cost(1) > rho:
        return 1
    lo, hi = 1, 2
    while hi < limit and cost(hi) <= rho:
        lo, hi = hi, hi * 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        lo, hi = (mid, hi) if cost(mid) <= rho else (lo, mid)
    return lo


def _dual_params(cfg: ExperimentConfig, hp: dict[str, Any], D: EncodedDataset, W: Workload,
                 rho: float | None) -> DqrsParams:
    alpha = float(hp.get("alpha", 0.5))
    beta = float(hp.get("beta", 0.1))
    base = dqrs_params(alpha, beta, len(W), D.schema.domain_size, T=hp.get("T"),
                       eta=hp.get("eta"), s=hp.get("samples"))
    if rho is None or "T" in hp:
        return base
    if cfg.algorithm == "dqrs":
        cost = lambda T: dqrs_privacy_cost(DqrsParams(alpha, beta, T, base.eta, base.s), D.n).exact
    else:
        cost = lambda T: dualquery_privacy_cost(DqrsParams(alpha, beta, T, base.eta, base.s), D.n)
    return DqrsParams(alpha, beta, _max_rounds(cost, rho), base.eta, base.s)


def _fmt(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def _primal_trace_csv(traces) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "query_id", "score", "round_error", "oracle_ms"])
    for tr in traces:
        w.writerow([tr.t, tr.query_id, _fmt(tr.score), _fmt(tr.round_error), _fmt(tr.oracle_ms)])
    return buf.getvalue()


def _dual_trace_csv(traces) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "payoff", "kept", "fresh", "rejected", "refilled", "oracle_ms"])
    for tr in traces:
        w.writerow([tr.t, _fmt(tr.payoff), tr.kept, tr.fresh, tr.rejected, tr.refilled,
                    _fmt(tr.oracle_ms)])
    return buf.getvalue()


@dataclass
class RunReport:
    doc: dict[str, Any]
    traces: list[str]
    timings: list[float]

    @property
    def errors(self) -> list[float]:
        return [r["max_error"] for r in self.doc["repetitions"]]

    @property
    def median(self) -> float:
        return self.doc["median_error"]

    def dumps(self) -> str:
        return json.dumps(self.doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RunReport":
        try:
            return cls(json.loads(Path(path).read_text(encoding="utf-8")), [], [])
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read report {path}: {exc}") from exc


def _run_once(cfg: ExperimentConfig, D: EncodedDataset, W: Workload, hp: dict[str, Any],
              rho: float | None, delta: float, seed: int, oracle):
    alg = cfg.algorithm
    if alg in ("fem", "sepfem"):
        pc = PrimalConfig(rho=rho, eta=float(hp["eta"]), samples=int(hp["samples"]),
                          T=hp.get("T"), epsilon0=hp.get("epsilon0"), variant=alg, seed=seed,
                          timings=cfg.timings)
        res = run_primal(D, W, pc, oracle)
        trace = _primal_trace_csv(res.traces)
        ms = [tr.oracle_ms for tr in res.traces if tr.oracle_ms is not None]
        return res.synthetic, res.ledger, res.T, trace, ms
    params = _dual_params(cfg, hp, D, W, rho)
    runner = run_dqrs if alg == "dqrs" else run_dualquery
    res = runner(D, W, oracle=oracle, seed=seed, params=params, rho_cap=rho, timings=cfg.timings)
    trace = _dual_trace_csv(res.traces)
    ms = [tr.oracle_ms for tr in res.traces if tr.oracle_ms is not None]
    return res.synthetic, res.ledger, params.T, trace, ms


def _report_for(cfg: ExperimentConfig, D: EncodedDataset, W: Workload, eps: float | None,
                oracle) -> RunReport:
    delta = float(cfg.delta) if cfg.delta is not None else 1.0 / (D.n * D.n)
    rho = cfg.rho if eps is None else invert_budget(eps, delta)
    candidates = _resolve_params(cfg)
    best = None
    for hp in candidates:
        reps, traces, timings = [], [], []
        for r in range(cfg.repetitions):
            seed = int(substream(cfg.seed, "repetition", r).integers(2 ** 31))
            syn, ledger, T, trace, ms = _run_once(cfg, D, W, hp, rho, delta, seed, oracle)
            total = ledger.total
            reps.append({"repetition": r, "seed": seed, "T": T,
                         "max_error": max_error(W, D, syn),
                         "rho": total, "epsilon": zcdp_to_dp(total, delta),
                         "spends": len(ledger.spends)})
            traces.append(trace)
            timings.append(math.fsum(ms))
        errs = [x["max_error"] for x in reps]
        med = float(np.median(errs))
        if best is None or med < best[0]:
            best = (med, hp, reps, traces, timings)
    med, hp, reps, traces, timings = best
    errs = [x["max_error"] for x in reps]
    doc = {
        "config": {k: v for k, v in cfg.to_dict().items() if k not in ("out", "timings")},
        "algorithm": cfg.algorithm,
        "epsilon_target": eps,
        "rho_target": rho,
        "delta": delta,
        "params": hp,
        "n": D.n, "d": D.d, "num_queries": len(W),
        "k": int(cfg.workload["k"]),
        "num_marginals": cfg.workload.get("marginals"),
        "workload_seed": int(cfg.workload.get("seed", 0)),
        "data": cfg.data,
        "repetitions": reps,
        "median_error": med, "min_error": min(errs), "max_error": max(errs),
        "rho_total": max(x["rho"] for x in reps),
        "epsilon_total": max(x["epsilon"] for x in reps),
        "non_private_tuning": len(candidates) > 1,
    }
    return RunReport(doc, traces, timings)


def run_experiment(cfg: ExperimentConfig) -> list[RunReport]:
    """Run every epsilon in the config; write reports and traces under ``out``."""
    out = cfg.path(cfg.out) if cfg.out else None
    D = load_data(cfg, out)
    W = build_workload(cfg, D)
    oc = cfg.oracle or {}
    oracle = make_oracle(oc.get("backend", "exact"), int(oc.get("cap", DEFAULT_CAP)),
                         int(oc.get("restarts", 16)),
                         directory=(out / "mip") if out is not None else None)
    reports = []
    timing_doc = {}
    eps_list = cfg.epsilons()
    for eps in eps_list:
        rep = _report_for(cfg, D, W, eps, oracle)
        reports.append(rep)
        if out is not None:
            tag = "" if len(eps_list) == 1 else f"_eps{eps:g}"
            _write(out / f"report{tag}.json", rep.dumps())
            for r, trace in enumerate(rep.traces):
                _write(out / f"trace{tag}_rep{r}.csv", trace)
            timing_doc[f"eps{eps:g}" if eps is not None else "rho"] = rep.timings
    if out is not None and cfg.timings:
        _write(out / "timings.json", json.dumps(timing_doc, indent=1) + "\n")
    return reports


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def compare_reports(reports: Sequence[RunReport]) -> str:
    """CSV with one row per (epsilon, num_marginals) and the median, min and
    max error of each algorithm."""
    if not reports:
        raise ConfigError("no reports to compare")
    ident = lambda r: (json.dumps(r.doc["data"], sort_keys=True), r.doc["n"], r.doc["d"],
                       r.doc["k"], r.doc["workload_seed"])
    ref = ident(reports[0])
    for r in reports[1:]:
        if ident(r) != ref:
            raise MismatchedWorkloads("reports were produced on different data or workloads")
    algs = sorted({r.doc["algorithm"] for r in reports})
    rows: dict[tuple, dict[str, RunReport]] = {}
    for r in reports:
        key = (r.doc["epsilon_target"], r.doc["num_marginals"])
        rows.setdefault(key, {})[r.doc["algorithm"]] = r
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["epsilon", "num_marginals"]
    for a in algs:
        header += [f"{a}_median", f"{a}_min", f"{a}_max"]
    w.writerow(header)
    sort_key = lambda k: (k[0] is None, k[0] or 0.0, k[1] is None, k[1] or 0)
    for key in sorted(rows, key=sort_key):
        row = ["" if key[0] is None else repr(key[0]), "" if key[1] is None else key[1]]
        for a in algs:
            r = rows[key].get(a)
            row += ["", "", ""] if r is None else [repr(r.doc["median_error"]),
                                                   repr(r.doc["min_error"]), repr(r.doc["max_error"])]
        w.writerow(row)
    return buf.getvalue()
