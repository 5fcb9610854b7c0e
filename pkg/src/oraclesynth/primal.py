"""Primal no-regret dynamics: an exponential-mechanism query player against a
follow-the-perturbed-leader data player (FEM, and the separator variant sepFEM).

Round ``t`` proceeds as

1. the data player best-responds to the queries ``q_0..q_{t-1}`` seen so far,
   perturbed by fresh noise, once per sample, giving ``D_hat^t``;
2. the query player picks ``q_t`` with the exponential mechanism on the signed
   score ``q(D) - q(D_hat^t)`` (sensitivity ``1/n``), spending ``rho/T``.

The release is the uniform mixture of ``D_hat^1..D_hat^T``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .domain import EncodedDataset, Schema, SyntheticDataset
from .errors import ConfigError, EmptySeparator, LedgerHalted, RequiresExactOracle
from .oracle import ExactOracle, Oracle, OracleProblem
from .privacy import (
    FilterState,
    PrivacyLedger,
    exponential_mechanism,
    sample_exponential_vector,
    sample_laplace_vector,
)
from .rng import substream
from .workload import MarginalQuery, Workload


def build_separator(schema: Schema) -> list[MarginalQuery]:
    """One single-bit query per coordinate, in bit order."""
    out = []
    for a, size in enumerate(schema.sizes):
        for v in range(size):
            out.append(MarginalQuery.build(schema.sizes, [a], [v]))
    return out


def _is_coordinate_separator(sep: Sequence[MarginalQuery], sizes: Sequence[int]) -> bool:
    d = sum(sizes)
    return (len(sep) == d and all(q.arity == 1 and not q.negated and q.bits == (j,)
                                  for j, q in enumerate(sep)))


def _history_problem(history: Sequence[MarginalQuery], sizes: Sequence[int]) -> OracleProblem:
    counts: dict[MarginalQuery, int] = {}
    for q in history:
        counts[q] = counts.get(q, 0) + 1
    return OracleProblem.build(sizes, list(counts), np.array(list(counts.values()), dtype=np.float64))


def _as_dataset(schema: Schema, sols) -> SyntheticDataset:
    return SyntheticDataset(schema, np.array([s.values for s in sols], dtype=np.int64))


def fem_data_update(history: Sequence[MarginalQuery], schema: Schema, eta: float, s: int,
                    oracle: Oracle, rng: np.random.Generator) -> SyntheticDataset:
    """Uniform distribution over ``s`` records, record ``j`` maximizing
    ``sum_i q_i(x) - <x, sigma_j>`` with ``sigma_j ~ Exp(eta)^d``.

    Sample ``j`` draws its noise and oracle randomness from the ``j``-th child
    stream of ``rng``, so results do not depend on evaluation order.
    """
    if s < 1:
        raise ConfigError("samples per round must be at least 1")
    d = schema.dimension
    children = rng.spawn(s)
    sigmas = np.stack([sample_exponential_vector(eta, d, c) for c in children])
    base = _history_problem(history, schema.sizes)
    sols = oracle.solve_batch(base, sigmas, children)
    return _as_dataset(schema, sols)


def sepfem_data_update(history: Sequence[MarginalQuery], separator: Sequence[MarginalQuery],
                       schema: Schema, eta: float, s: int, oracle: Oracle,
                       rng: np.random.Generator) -> SyntheticDataset:
    """Like :func:`fem_data_update` but the noise enters as Laplace-weighted
    separator queries: maximize ``sum_i q_i(x) + sum_j lam_j sep_j(x)``."""
    if not separator:
        raise EmptySeparator("separator set is empty")
    if s < 1:
        raise ConfigError("samples per round must be at least 1")
    children = rng.spawn(s)
    lams = np.stack([sample_laplace_vector(eta, len(separator), c) for c in children])
    base = _history_problem(history, schema.sizes)
    if _is_coordinate_separator(separator, schema.sizes):
        # sum_j lam_j x_j is the linear term with sigma = -lam
        sols = oracle.solve_batch(base, -lams, children)
    else:
        sols = []
        for lam, c in zip(lams, children):
            p = OracleProblem.build(schema.sizes, base.queries + tuple(separator),
                                    np.concatenate([base.weights, lam]))
            sols.append(oracle.solve(p, c))
    return _as_dataset(schema, sols)


@dataclass(frozen=True)
class Hyperparameters:
    T: int
    eta: float
    samples: int


def sample_count(alpha: float, beta: float, T: int, num_queries: int) -> int:
    return max(1, math.ceil(8.0 * math.log(4.0 * T * num_queries / beta) / alpha ** 2))


def fem_eta(T: int, d: int) -> float:
    return math.sqrt(1.0 / (2500.0 * T * d))


def sepfem_eta(T: int, d: int, M: int) -> float:
    return math.sqrt(5.0 * d / (2.0 * math.sqrt(M) * T))


def default_hyperparameters(variant: str, d: int, n: int, num_queries: int, rho: float,
                            alpha: float, beta: float, M: int | None = None) -> Hyperparameters:
    """Theory-driven ``(T, eta, s)``; logs are natural, ``T`` and ``s`` rounded up."""
    if min(d, n, num_queries) < 1 or rho <= 0:
        raise ConfigError("d, n, |Q| and rho must be positive")
    if not (0 < alpha < 1 and 0 < beta < 1):
        raise ConfigError("alpha and beta must lie in (0, 1)")
    logq = math.log(num_queries) if num_queries > 1 else 1.0
    noise_scale = math.sqrt(2.0 / (rho * n * n))
    if variant == "fem":
        T = max(1, math.ceil((5.0 * d ** 1.5 / 2.0) / (noise_scale * logq)))
        eta = fem_eta(T, d)
    elif variant == "sepfem":
        M = d if M is None else M
        T = max(1, math.ceil(M ** 0.75 * d ** 0.5 * math.sqrt(40.0) / (noise_scale * logq)))
        eta = sepfem_eta(T, d, M)
    else:
        raise ConfigError(f"unknown primal variant {variant!r}")
    return Hyperparameters(T, eta, sample_count(alpha, beta, T, num_queries))


@dataclass
class PrimalConfig:
    """Either ``T`` or ``epsilon0`` fixes the round count; with ``epsilon0`` each
    round spends ``epsilon0**2 / 2`` and ``T = floor(rho / that)``."""

    rho: float
    eta: float
    samples: int
    T: int | None = None
    epsilon0: float | None = None
    variant: str = "fem"
    seed: int = 0
    separator: Sequence[MarginalQuery] | None = None
    timings: bool = False

    def rounds(self) -> int:
        if self.T is not None:
            return int(self.T)
        if self.epsilon0 is None:
            raise ConfigError("set either T or epsilon0")
        # small relative slack so e.g. rho=0.01, epsilon0=0.05 gives 8, not 7.999...
        return max(1, int(math.floor(self.rho / (0.5 * self.epsilon0 ** 2) * (1 + 1e-12))))

    def validate(self) -> None:
        if not self.rho > 0:
            raise ConfigError("rho must be positive")
        if self.rounds() < 1:
            raise ConfigError("T must be at least 1")
        if self.samples < 1:
            raise ConfigError("samples must be at least 1")
        if not self.eta > 0:
            raise ConfigError("eta must be positive")
        if self.variant not in ("fem", "sepfem"):
            raise ConfigError(f"unknown primal variant {self.variant!r}")


@dataclass(frozen=True)
class RoundTrace:
    t: int
    query_id: int
    score: float
    round_error: float
    oracle_ms: float | None = None


@dataclass
class PrimalResult:
    synthetic: SyntheticDataset
    traces: list[RoundTrace]
    ledger: PrivacyLedger
    rounds: list[SyntheticDataset]
    initial_query: int
    rho0: float

    @property
    def T(self) -> int:
        return len(self.rounds)


def per_round_budget(rho: float, T: int) -> float:
    """Largest float ``r <= rho / T`` whose ``T``-fold exact sum stays within ``rho``."""
    r = rho / T
    while math.fsum([r] * T + [-rho]) > 0:
        r = math.nextafter(r, 0.0)
    return r


def run_primal(D: EncodedDataset, W: Workload, cfg: PrimalConfig,
               oracle: Oracle | None = None) -> PrimalResult:
    cfg.validate()
    if not W.closed:
        raise ConfigError("workload must be closed under negation")
    if len(W) == 0:
        raise ConfigError("workload is empty")
    oracle = oracle or ExactOracle()
    schema = D.schema
    T = cfg.rounds()
    rho0 = per_round_budget(cfg.rho, T)
    em_param = math.sqrt(2.0 * rho0)
    ledger = PrivacyLedger(cfg.rho)

    q0 = int(substream(cfg.seed, "initial-query").integers(len(W)))
    history = [W[q0]]
    true_answers = W.answers(D)
    separator = None
    if cfg.variant == "sepfem":
        separator = list(cfg.separator) if cfg.separator is not None else build_separator(schema)

    rounds, traces = [], []
    for t in range(1, T + 1):
        rng = substream(cfg.seed, "data-player", t)
        start = time.perf_counter()
        if cfg.variant == "fem":
            D_hat = fem_data_update(history, schema, cfg.eta, cfg.samples, oracle, rng)
        else:
            D_hat = sepfem_data_update(history, separator, schema, cfg.eta, cfg.samples, oracle, rng)
        elapsed = (time.perf_counter() - start) * 1000.0
        scores = true_answers - W.answers(D_hat)
        qt = exponential_mechanism(scores, em_param, 1.0 / D.n, substream(cfg.seed, "query-player", t))
        if ledger.charge(rho0, f"round {t}") is FilterState.HALT:
            raise LedgerHalted(f"per-round spends exceeded the budget at round {t}")
        history.append(W[qt])
        rounds.append(D_hat)
        traces.append(RoundTrace(t, qt, float(scores[qt]), float(np.abs(scores).max()),
                                 elapsed if cfg.timings else None))

    synthetic = SyntheticDataset.union(rounds)
    return PrimalResult(synthetic, traces, ledger, rounds, q0, rho0)


@dataclass(frozen=True)
class Regret:
    data: float
    query: float

    @property
    def total(self) -> float:
        return self.data + self.query


def empirical_regret(result: PrimalResult, D: EncodedDataset, W: Workload,
                     oracle: Oracle | None = None) -> Regret:
    """Average realized regrets of both players over the run.

    The data player's comparator ``min_x sum_t A(x, q_t)`` is found with the
    oracle, which therefore has to be exact.
    """
    oracle = oracle or ExactOracle()
    if not oracle.exact:
        raise RequiresExactOracle("data-player regret needs an exact oracle")
    T = result.T
    true_answers = W.answers(D)
    cum_scores = np.zeros(len(W))
    played_score = 0.0
    played_hat = 0.0
    for tr, D_hat in zip(result.traces, result.rounds):
        s = true_answers - W.answers(D_hat)
        cum_scores += s
        played_score += s[tr.query_id]
        played_hat += W.answers(D_hat)[tr.query_id]
    r_qry = (cum_scores.max() - played_score) / T
    played = [W[tr.query_id] for tr in result.traces]
    best = oracle.solve(_history_problem(played, D.schema.sizes)).objective
    r_data = (best - played_hat) / T
    return Regret(float(r_data), float(r_qry))
