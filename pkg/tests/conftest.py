from __future__ import annotations

import itertools

import numpy as np
import pytest

from oraclesynth.domain import EncodedDataset, Schema
from oraclesynth.oracle import OracleProblem
from oraclesynth.workload import MarginalQuery


@pytest.fixture
def color_size() -> Schema:
    return Schema.categorical({"color": ["r", "g", "b"], "size": ["s", "l"]})


def small_schema(sizes) -> Schema:
    return Schema.categorical({f"a{i}": [str(v) for v in range(s)] for i, s in enumerate(sizes)})


def random_dataset(schema: Schema, n: int, rng: np.random.Generator) -> EncodedDataset:
    vals = np.stack([rng.integers(0, s, size=n) for s in schema.sizes], axis=1)
    return EncodedDataset(schema, vals)


def all_assignments(sizes):
    return [np.array(v) for v in itertools.product(*(range(s) for s in sizes))]


def random_problem(rng: np.random.Generator, max_space: int = 4096, dyadic: bool = True,
                   max_queries: int = 12) -> OracleProblem:
    while True:
        m = int(rng.integers(1, 6))
        sizes = tuple(int(s) for s in rng.integers(1, 7, size=m))
        if np.prod(sizes) <= max_space:
            break
    queries = []
    for _ in range(int(rng.integers(0, max_queries + 1))):
        k = int(rng.integers(1, m + 1))
        feats = rng.choice(m, size=k, replace=False)
        targs = [int(rng.integers(sizes[a])) for a in feats]
        queries.append(MarginalQuery.build(sizes, feats, targs, bool(rng.random() < 0.5)))
    d = sum(sizes)
    if dyadic:
        w = rng.integers(-128, 129, size=len(queries)) / 64.0
        sigma = rng.integers(-128, 129, size=d) / 64.0
    else:
        w = rng.normal(size=len(queries))
        sigma = rng.normal(size=d)
    return OracleProblem.build(sizes, queries, w, sigma)
