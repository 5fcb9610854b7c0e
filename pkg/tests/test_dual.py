from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import random_dataset, small_schema
from oraclesynth.errors import BudgetExceeded, DegenerateWorkload, PoolUnderflow
from oraclesynth.dual import (
    DqrsParams,
    MwState,
    SamplePool,
    dqrs_params,
    dqrs_privacy_cost,
    dualquery_privacy_cost,
    mw_update,
    payoffs,
    rejection_resample,
    run_dqrs,
    run_dualquery,
)
from oraclesynth.oracle import OracleProblem, solve_exact
from oraclesynth.workload import enumerate_marginals, max_error


@pytest.fixture(scope="module")
def toy():
    schema = small_schema((2, 3, 2))
    D = random_dataset(schema, 50, np.random.default_rng(0))
    return D, enumerate_marginals(schema, 2, None, 0)


def test_params_examples():
    p = dqrs_params(0.5, 0.1, 1024, 2 ** 16)
    assert p.T == 444 and p.eta == 0.125
    assert p.gamma(1) == 0.5
    assert DqrsParams(0.5, 0.1, 1, 0.125, 100).s_tilde(1) == 150  # (2*0.5 + 4*0.125) * 100
    assert dqrs_params(0.5, 0.1, 2048, 2 ** 16).T == 488
    assert dqrs_params(0.5, 0.1, 2048, 2 ** 16).s == 3971
    with pytest.raises(DegenerateWorkload):
        dqrs_params(0.5, 0.1, 1, 4)


def test_mw_equal_payoffs_keep_state():
    st = MwState(np.log(np.array([0.1, 0.2, 0.7])))
    _, nxt = mw_update(st, np.full(3, 0.3), 0.2, 0.4)
    assert np.allclose(nxt.probabilities(), [0.1, 0.2, 0.7], atol=1e-15)
    assert nxt.t == 2


def test_mw_two_query_hand_values():
    st = MwState.uniform(2)
    ratios, nxt = mw_update(st, np.array([1.0, 0.0]), 0.5, 0.25)
    assert ratios[0] == pytest.approx(math.exp(-0.5 - 0.25 - 0.5))
    assert ratios[1] == pytest.approx(math.exp(-0.75))
    w = np.array([math.exp(-0.5), 1.0])
    assert np.allclose(nxt.probabilities(), w / w.sum(), atol=1e-15)
    assert nxt.probabilities().sum() == pytest.approx(1.0, abs=1e-12)


def test_ratio_bounds():
    rng = np.random.default_rng(0)
    for _ in range(100):
        eta, gamma = rng.random() * 0.5 + 1e-3, rng.random() + 1e-3
        A_pos = rng.random(20)
        r, _ = mw_update(MwState.uniform(20), A_pos, eta, gamma)
        assert np.all((r > 0) & (r <= math.exp(-gamma)))
        r2, _ = mw_update(MwState.uniform(20), rng.random(20) * 2 - 1, eta, gamma)
        assert np.all((r2 > 0) & (r2 < 1))


def _fixed_sampler(ids):
    return lambda c, r: np.array(ids[:c], dtype=np.int64)


def test_resample_identity():
    pool = SamplePool(np.arange(10) % 4, np.zeros(10, bool))
    out, stats = rejection_resample(pool, np.ones(4), _fixed_sampler([]), 0, 10, np.random.default_rng(0))
    assert np.array_equal(out.ids, pool.ids)
    assert stats.kept == 10 and stats.rejected == 0


def test_resample_keep_count_binomial():
    pool = SamplePool(np.zeros(1000, dtype=np.int64), np.zeros(1000, bool))
    sampler = lambda c, r: np.zeros(c, dtype=np.int64)
    for seed in range(30):
        _, stats = rejection_resample(pool, np.array([0.5]), sampler, 600, 1000, np.random.default_rng(seed))
        assert abs(stats.kept - 500) <= 3 * math.sqrt(250)


def test_resample_underflow_refills_or_raises():
    pool = SamplePool(np.zeros(10, dtype=np.int64), np.zeros(10, bool))
    sampler = lambda c, r: np.ones(c, dtype=np.int64)
    out, stats = rejection_resample(pool, np.array([1e-300, 1.0]), sampler, 2, 10, np.random.default_rng(0))
    assert out.size == 10 and stats.refilled == 8 and out.fresh.all()
    with pytest.raises(PoolUnderflow):
        rejection_resample(pool, np.array([1e-300, 1.0]), sampler, 2, 10, np.random.default_rng(0), refill=False)


def test_pool_law_small():
    rng = np.random.default_rng(7)
    state = MwState(np.log(np.array([0.05, 0.1, 0.15, 0.2, 0.2, 0.1, 0.1, 0.1])))
    A = np.array([1.0, 0.5, 0.0, -0.5, -1.0, 0.2, 0.9, -0.3])
    ratios, nxt = mw_update(state, A, 0.5, 0.3)
    target = nxt.probabilities()
    counts = np.zeros(8)
    sampler = lambda c, r: nxt.sample(c, r)
    for _ in range(10000):
        pool = SamplePool(state.sample(6, rng), np.zeros(6, bool))
        out, _ = rejection_resample(pool, ratios, sampler, 5, 6, rng)
        counts[out.ids[rng.integers(6)]] += 1
    assert 0.5 * np.abs(counts / counts.sum() - target).sum() < 0.03


def test_single_round_is_best_response_to_uniform_pool(toy):
    D, W = toy
    p = DqrsParams(0.5, 0.1, 1, 0.125, 40)
    res = run_dqrs(D, W, params=p, seed=2)
    assert res.records.shape == (1, 3)
    assert res.ledger.spends == []
    from oraclesynth.rng import substream
    pool = MwState.uniform(len(W)).sample(40, substream(2, "pool", 1))
    ids, counts = np.unique(pool, return_counts=True)
    sol = solve_exact(OracleProblem.build(W.schema.sizes, [W[int(i)] for i in ids], -counts / 40))
    assert tuple(res.records[0]) == sol.values


def test_dqrs_ledger_recomputed(toy):
    D, W = toy
    p = DqrsParams(0.5, 0.1, 12, 0.125, 60)
    res = run_dqrs(D, W, params=p, seed=4)
    n = D.n
    expect = []
    for tr in res.traces[:-1]:
        t = tr.t
        g = 0.5 / t ** (2 / 3)
        expect.append(p.s * (p.eta / (g * n)) ** 2 / 2 + (tr.fresh + tr.refilled) * (2 * p.eta * t / n) ** 2 / 2)
    assert res.ledger.spends == pytest.approx(expect, rel=1e-12)
    assert res.ledger.total == pytest.approx(math.fsum(expect), rel=1e-12)
    if all(tr.refilled == 0 for tr in res.traces):
        assert res.ledger.total == pytest.approx(dqrs_privacy_cost(p, n).exact, rel=1e-12)


def test_dualquery_ledger_hand_formula(toy):
    D, W = toy
    p = DqrsParams(0.5, 0.1, 5, 0.125, 30)
    res = run_dualquery(D, W, params=p, seed=4)
    n = D.n
    hand = sum(30 * 0.5 * (2 * 0.125 * (t - 1) / n) ** 2 for t in range(1, 6))
    assert res.ledger.total == pytest.approx(hand, rel=1e-12)
    assert res.ledger.spends[0] == 0.0


def test_first_round_agrees(toy):
    D, W = toy
    p = DqrsParams(0.5, 0.1, 6, 0.125, 50)
    a = run_dqrs(D, W, params=p, seed=11)
    b = run_dualquery(D, W, params=p, seed=11)
    assert tuple(a.records[0]) == tuple(b.records[0])


def test_cost_exact_below_bound_and_below_dualquery():
    for alpha in (0.3, 0.5, 0.7):
        for q in (64, 512, 2048):
            for dom in (2 ** 8, 2 ** 16):
                p = dqrs_params(alpha, 0.1, q, dom)
                c = dqrs_privacy_cost(p, 1000)
                assert c.exact <= c.bound
                if alpha == 0.5:
                    assert c.exact < dualquery_privacy_cost(p, 1000)


def test_budget_cap(toy):
    D, W = toy
    with pytest.raises(BudgetExceeded):
        run_dualquery(D, W, params=DqrsParams(0.5, 0.1, 10, 0.125, 30), rho_cap=1e-9)


def test_deterministic(toy):
    D, W = toy
    p = DqrsParams(0.5, 0.1, 8, 0.125, 30)
    a, b = run_dqrs(D, W, params=p, seed=1), run_dqrs(D, W, params=p, seed=1)
    assert a.records.tobytes() == b.records.tobytes()
    assert a.ledger.spends == b.ledger.spends
    assert all(np.diff(np.cumsum(a.ledger.spends)) >= 0)


def test_payoffs(toy):
    D, W = toy
    x = np.array([1, 2, 0])
    A = payoffs(W, W.answers(D), x)
    assert np.all((A >= -1) & (A <= 1))
    assert np.allclose(A[::2] + A[1::2], 0)


@pytest.mark.slow
def test_rejections_rarely_exceed_fresh_budget():
    schema = small_schema((2,) * 8)
    D = random_dataset(schema, 500, np.random.default_rng(1))
    W = enumerate_marginals(schema, 2, 10, 0)
    p = dqrs_params(0.5, 0.1, len(W), schema.domain_size)
    res = run_dqrs(D, W, params=p, seed=0)
    over = sum(tr.refilled > 0 for tr in res.traces)
    assert over / p.T < 10 * p.beta / (3 * p.T)


@pytest.mark.slow
def test_formula_parameters_reach_alpha():
    schema = small_schema((4, 4, 4, 4))
    from oraclesynth.domain import generate_synthetic_csv, load_csv
    import tempfile, pathlib
    with tempfile.TemporaryDirectory() as tmp:
        D = load_csv(generate_synthetic_csv(schema, 2000, 5, pathlib.Path(tmp) / "d.csv"), schema)
    W = enumerate_marginals(schema, 3, None, 0)
    errs = [max_error(W, D, run_dqrs(D, W, 0.5, 0.1, seed=s).synthetic) for s in range(10)]
    assert sum(e <= 0.5 for e in errs) >= 9
