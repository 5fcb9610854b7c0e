"""Dual dynamics: a multiplicative-weights query player against a best-responding
data player. ``run_dualquery`` draws a fresh query sample every round;
``run_dqrs`` recycles the previous round's sample by rejection sampling and
only tops it up with fresh draws, which is where its privacy saving comes from.

Payoffs are ``A(x, q) = q(D) - q(x)``. The query distribution after ``t``
rounds is ``Q^{t+1}(q) ~ exp(-eta * sum_{tau<=t} A(x^tau, q))``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .domain import EncodedDataset, SyntheticDataset
from .errors import BudgetExceeded, ConfigError, DegenerateWorkload, PoolUnderflow
from .oracle import ExactOracle, Oracle, OracleProblem
from .privacy import FilterState, PrivacyLedger
from .rng import substream
from .workload import Workload


@dataclass(frozen=True)
class DqrsParams:
    alpha: float
    beta: float
    T: int
    eta: float
    s: int

    def gamma(self, t: int) -> float:
        return 0.5 / t ** (2.0 / 3.0)

    def s_tilde(self, t: int) -> int:
        return math.ceil((2.0 * self.gamma(t) + 4.0 * self.eta) * self.s)


def dqrs_params(alpha: float, beta: float, num_queries: int, domain_size: int,
                T: int | None = None, eta: float | None = None, s: int | None = None) -> DqrsParams:
    """Round count, learning rate and pool size from the accuracy target.

    Any of ``T``, ``eta``, ``s`` may be overridden; ``s`` is computed from the
    final ``T``.
    """
    if num_queries < 2:
        raise DegenerateWorkload("need at least two queries")
    if not (0 < alpha < 1 and 0 < beta < 1):
        raise ConfigError("alpha and beta must lie in (0, 1)")
    if T is None:
        T = math.ceil(16.0 * math.log(num_queries) / alpha ** 2)
    if eta is None:
        eta = alpha / 4.0
    if s is None:
        s = math.ceil(48.0 * math.log(3.0 * domain_size * T / beta) / alpha ** 2)
    if T < 1 or s < 1 or not eta > 0:
        raise ConfigError("T, s must be at least 1 and eta positive")
    return DqrsParams(alpha, beta, int(T), float(eta), int(s))


@dataclass(frozen=True)
class MwState:
    """Normalized log-probabilities over the workload and the round index."""

    log_probs: np.ndarray
    t: int = 1

    @classmethod
    def uniform(cls, num_queries: int) -> "MwState":
        return cls(np.full(num_queries, -math.log(num_queries)), 1)

    def probabilities(self) -> np.ndarray:
        p = np.exp(self.log_probs - self.log_probs.max())
        return p / p.sum()

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """``count`` i.i.d. draws by inverse CDF over the materialized weights."""
        cdf = np.cumsum(self.probabilities())
        u = rng.random(count) * cdf[-1]
        return np.minimum(np.searchsorted(cdf, u, side="right"), cdf.shape[0] - 1)


def _logsumexp(a: np.ndarray) -> float:
    m = a.max()
    return float(m + math.log(np.exp(a - m).sum()))


def payoffs(W: Workload, true_answers: np.ndarray, x_values: np.ndarray) -> np.ndarray:
    """``A(x, q) = q(D) - q(x)`` for every query in ``W``."""
    return true_answers - W.evaluate_records(np.asarray(x_values)[None])[0]


def mw_update(state: MwState, A: np.ndarray, eta: float, gamma: float) -> tuple[np.ndarray, MwState]:
    """Return acceptance ratios ``exp(-eta - gamma - eta * A_q)`` and the next state."""
    if not (eta > 0 and gamma > 0):
        raise ConfigError("eta and gamma must be positive")
    log_ratio = -eta - gamma - eta * np.asarray(A, dtype=np.float64)
    nxt = state.log_probs + log_ratio
    nxt = nxt - _logsumexp(nxt)
    return np.exp(log_ratio), MwState(nxt, state.t + 1)


@dataclass(frozen=True)
class SamplePool:
    ids: np.ndarray
    fresh: np.ndarray

    @property
    def size(self) -> int:
        return int(self.ids.shape[0])


@dataclass(frozen=True)
class ResampleStats:
    kept: int
    fresh: int
    rejected: int
    refilled: int


def rejection_resample(pool: SamplePool, ratios: np.ndarray, fresh_sampler, s_tilde: int, s: int,
                       rng: np.random.Generator, refill: bool = True) -> tuple[SamplePool, ResampleStats]:
    """Keep each pooled query with its acceptance ratio, add ``s_tilde`` fresh
    draws, top up if still short of ``s``, then subsample uniformly to ``s``.

    ``fresh_sampler(count, rng)`` must draw from the next-round distribution.
    Kept elements are then distributed exactly like fresh ones, so a uniform
    pool element follows the next-round distribution.
    """
    ratios = np.asarray(ratios)
    keep = rng.random(pool.size) < ratios[pool.ids]
    kept = pool.ids[keep]
    new = fresh_sampler(s_tilde, rng) if s_tilde > 0 else np.zeros(0, dtype=np.int64)
    short = s - kept.size - new.size
    extra = np.zeros(0, dtype=np.int64)
    if short > 0:
        if not refill:
            raise PoolUnderflow(f"pool short by {short} after resampling")
        extra = fresh_sampler(short, rng)
    ids = np.concatenate([kept, new, extra]).astype(np.int64)
    is_fresh = np.concatenate([np.zeros(kept.size, bool), np.ones(new.size + extra.size, bool)])
    if ids.size > s:
        pick = np.sort(rng.choice(ids.size, size=s, replace=False))
        ids, is_fresh = ids[pick], is_fresh[pick]
    stats = ResampleStats(int(kept.size), int(new.size), int(pool.size - kept.size), int(extra.size))
    return SamplePool(ids, is_fresh), stats


def resample_cost(params: DqrsParams, t: int, n: int, fresh_draws: int) -> float:
    """zCDP spent when building the round-``t+1`` pool in round ``t``.

    Each accept/reject decision is ``eta / (gamma_t n)``-DP and each fresh draw
    from ``Q^{t+1}`` (``t`` payoff terms) is ``2 eta t / n``-DP; pure DP
    ``eps`` counts as ``eps**2 / 2``.
    """
    acc = params.eta / (params.gamma(t) * n)
    bad = 2.0 * params.eta * t / n
    return params.s * 0.5 * acc * acc + fresh_draws * 0.5 * bad * bad


def dualquery_round_cost(params: DqrsParams, t: int, n: int) -> float:
    eps = 2.0 * params.eta * (t - 1) / n
    return params.s * 0.5 * eps * eps


@dataclass(frozen=True)
class PrivacyCost:
    exact: float
    bound: float


def dqrs_privacy_cost(params: DqrsParams, n: int) -> PrivacyCost:
    """Total zCDP when no refills are needed, and a closed-form upper bound.

    The last round's pool is never used, so only rounds ``1..T-1`` resample.
    """
    if n < 1:
        raise ConfigError("n must be at least 1")
    exact = math.fsum(resample_cost(params, t, n, params.s_tilde(t)) for t in range(1, params.T))
    c = params.eta ** 2 / n ** 2
    bound = math.fsum(c * (params.s * (4.0 * t ** (4.0 / 3.0) + 8.0 * params.eta * t * t) + 2.0 * t * t)
                      for t in range(1, params.T))
    return PrivacyCost(exact, bound)


def dualquery_privacy_cost(params: DqrsParams, n: int) -> float:
    return math.fsum(dualquery_round_cost(params, t, n) for t in range(1, params.T + 1))


@dataclass(frozen=True)
class DualTrace:
    t: int
    payoff: float
    kept: int
    fresh: int
    rejected: int
    refilled: int
    oracle_ms: float | None = None


@dataclass
class DualResult:
    synthetic: SyntheticDataset
    ledger: PrivacyLedger
    traces: list[DualTrace]
    params: DqrsParams
    records: np.ndarray
    exact_best_response: bool


def _best_response(W: Workload, pool_ids: np.ndarray, oracle: Oracle, rng) -> tuple[int, ...]:
    """Record minimizing the pool-average answer, i.e. maximizing ``A(x, q~)``."""
    ids, counts = np.unique(pool_ids, return_counts=True)
    p = OracleProblem.build(W.schema.sizes, [W[int(i)] for i in ids], -counts / pool_ids.size)
    return oracle.solve(p, rng).values


def _setup(D, W, alpha, beta, params):
    if not W.closed:
        raise ConfigError("workload must be closed under negation")
    if params is None:
        params = dqrs_params(alpha, beta, len(W), D.schema.domain_size)
    return params, W.answers(D)


def _ledger(rho_cap: float | None) -> PrivacyLedger:
    return PrivacyLedger(math.inf if rho_cap is None else rho_cap)


def _charge(ledger: PrivacyLedger, rho: float, label: str) -> None:
    if ledger.charge(rho, label) is FilterState.HALT:
        raise BudgetExceeded(f"privacy cap exceeded at {label}")


def _finish(D, ledger, traces, params, records, oracle):
    values = np.array(records, dtype=np.int64)
    return DualResult(SyntheticDataset(D.schema, values), ledger, traces, params, values, oracle.exact)


def run_dqrs(D: EncodedDataset, W: Workload, alpha: float = 0.5, beta: float = 0.1,
             oracle: Oracle | None = None, seed: int = 0, params: DqrsParams | None = None,
             rho_cap: float | None = None, timings: bool = False) -> DualResult:
    oracle = oracle or ExactOracle()
    params, true_answers = _setup(D, W, alpha, beta, params)
    n = D.n
    ledger = _ledger(rho_cap)
    state = MwState.uniform(len(W))
    first = state.sample(params.s, substream(seed, "pool", 1))
    pool = SamplePool(first, np.ones(params.s, bool))
    records, traces = [], []
    for t in range(1, params.T + 1):
        start = time.perf_counter()
        x = _best_response(W, pool.ids, oracle, substream(seed, "oracle", t))
        elapsed = (time.perf_counter() - start) * 1000.0
        records.append(x)
        A = payoffs(W, true_answers, np.array(x))
        payoff = float(A[pool.ids].mean())
        stats = ResampleStats(0, 0, 0, 0)
        if t < params.T:
            ratios, state = mw_update(state, A, params.eta, params.gamma(t))
            sampler = lambda c, r, st=state: st.sample(c, r)
            pool, stats = rejection_resample(pool, ratios, sampler, params.s_tilde(t), params.s,
                                             substream(seed, "resample", t))
            _charge(ledger, resample_cost(params, t, n, stats.fresh + stats.refilled), f"round {t}")
        traces.append(DualTrace(t, payoff, stats.kept, stats.fresh, stats.rejected, stats.refilled,
                                elapsed if timings else None))
    return _finish(D, ledger, traces, params, records, oracle)


def run_dualquery(D: EncodedDataset, W: Workload, alpha: float = 0.5, beta: float = 0.1,
                  oracle: Oracle | None = None, seed: int = 0, params: DqrsParams | None = None,
                  rho_cap: float | None = None, timings: bool = False) -> DualResult:
    oracle = oracle or ExactOracle()
    params, true_answers = _setup(D, W, alpha, beta, params)
    n = D.n
    ledger = _ledger(rho_cap)
    state = MwState.uniform(len(W))
    records, traces = [], []
    for t in range(1, params.T + 1):
        ids = state.sample(params.s, substream(seed, "pool", t))
        _charge(ledger, dualquery_round_cost(params, t, n), f"round {t}")
        start = time.perf_counter()
        x = _best_response(W, ids, oracle, substream(seed, "oracle", t))
        elapsed = (time.perf_counter() - start) * 1000.0
        records.append(x)
        A = payoffs(W, true_answers, np.array(x))
        # gamma only rescales the unnormalized weights; the next state is the same
        _, state = mw_update(state, A, params.eta, 1.0)
        traces.append(DualTrace(t, float(A[ids].mean()), 0, params.s, 0, 0,
                                elapsed if timings else None))
    return _finish(D, ledger, traces, params, records, oracle)
