"""k-way marginal queries, workloads closed under negation, and error metrics."""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any, Iterator, Sequence, Union

import numpy as np

from .domain import EncodedDataset, Schema, SyntheticDataset, groups_from_sizes
from .errors import (
    ArityTooLarge,
    ConfigError,
    DimensionMismatch,
    EmptyDataset,
    IoFailure,
    TooManyMarginals,
)
from .rng import substream

Dataset = Union[EncodedDataset, SyntheticDataset]


@dataclass(frozen=True)
class MarginalQuery:
    """Conjunction ``A_f1 = t1 and ... and A_fk = tk``, optionally negated.

    ``features`` are attribute indices in increasing order and ``targets`` the
    value index chosen inside each. ``bits`` are the global bit positions of
    the vector form, which has exactly one set bit per selected group.
    """

    features: tuple[int, ...]
    targets: tuple[int, ...]
    negated: bool
    bits: tuple[int, ...]

    @classmethod
    def build(cls, sizes: Sequence[int], features: Sequence[int], targets: Sequence[int],
              negated: bool = False) -> "MarginalQuery":
        if len(features) != len(targets):
            raise DimensionMismatch("features and targets differ in length")
        if len(set(features)) != len(features):
            raise DimensionMismatch("features must be distinct")
        order = sorted(range(len(features)), key=lambda i: features[i])
        f = tuple(int(features[i]) for i in order)
        t = tuple(int(targets[i]) for i in order)
        groups = groups_from_sizes(sizes)
        for a, v in zip(f, t):
            if not 0 <= a < len(sizes):
                raise DimensionMismatch(f"attribute index {a} out of range")
            if not 0 <= v < sizes[a]:
                raise DimensionMismatch(f"target {v} outside attribute {a}")
        bits = tuple(groups[a][0] + v for a, v in zip(f, t))
        return cls(f, t, bool(negated), bits)

    @property
    def arity(self) -> int:
        return len(self.features)

    def negate(self) -> "MarginalQuery":
        return MarginalQuery(self.features, self.targets, not self.negated, self.bits)

    def vector(self, d: int) -> np.ndarray:
        v = np.zeros(d, dtype=np.uint8)
        v[list(self.bits)] = 1
        return v

    def to_json(self) -> dict[str, Any]:
        return {"features": list(self.features), "targets": list(self.targets),
                "negated": self.negated}


def eval_query(q: MarginalQuery, x: np.ndarray) -> int:
    """``[<x, q_vec> == k] xor negated`` for a single bit record ``x``."""
    x = np.asarray(x)
    if x.ndim != 1 or (q.bits and max(q.bits) >= x.shape[0]):
        raise DimensionMismatch("record too short for query")
    hit = int(sum(int(x[b]) for b in q.bits) == q.arity)
    return hit ^ int(q.negated)


class Workload:
    """An ordered list of marginal queries over one schema.

    With ``closed`` set, entries ``2i`` and ``2i+1`` are a query and its
    negation. Query ids are positions in this list.
    """

    def __init__(self, schema: Schema, queries: Sequence[MarginalQuery], closed: bool = False):
        self.schema = schema
        self.queries: tuple[MarginalQuery, ...] = tuple(queries)
        self.closed = bool(closed)
        if closed:
            if len(self.queries) % 2:
                raise ConfigError("closed workload must have even length")
            for i in range(0, len(self.queries), 2):
                if self.queries[i + 1] != self.queries[i].negate():
                    raise ConfigError(f"query {i + 1} is not the negation of query {i}")

    @classmethod
    def with_negations(cls, schema: Schema, queries: Sequence[MarginalQuery]) -> "Workload":
        out = []
        for q in queries:
            base = q if not q.negated else q.negate()
            out.extend([base, base.negate()])
        return cls(schema, out, closed=True)

    def __len__(self) -> int:
        return len(self.queries)

    def __iter__(self) -> Iterator[MarginalQuery]:
        return iter(self.queries)

    def __getitem__(self, i: int) -> MarginalQuery:
        return self.queries[i]

    @property
    def d(self) -> int:
        return self.schema.dimension

    @cached_property
    def negated_mask(self) -> np.ndarray:
        return np.array([q.negated for q in self.queries], dtype=bool)

    @cached_property
    def _by_marginal(self) -> list[tuple[tuple[int, ...], np.ndarray, np.ndarray]]:
        """(features, query ids, flat target index within the marginal table)."""
        sizes = self.schema.sizes
        buckets: dict[tuple[int, ...], list[tuple[int, int]]] = {}
        for i, q in enumerate(self.queries):
            shape = tuple(sizes[a] for a in q.features)
            flat = int(np.ravel_multi_index(q.targets, shape)) if shape else 0
            buckets.setdefault(q.features, []).append((i, flat))
        out = []
        for feats, items in buckets.items():
            ids = np.array([i for i, _ in items], dtype=np.int64)
            flats = np.array([f for _, f in items], dtype=np.int64)
            out.append((feats, ids, flats))
        return out

    def marginal_tables(self, values: np.ndarray, weights: np.ndarray | None = None):
        """Yield ``(features, ids, flats, table)`` with the (weighted) count table
        of each distinct attribute tuple over records given as value indices."""
        sizes = self.schema.sizes
        for feats, ids, flats in self._by_marginal:
            shape = tuple(sizes[a] for a in feats)
            size = math.prod(shape)
            if feats:
                cells = np.ravel_multi_index(tuple(values[:, a] for a in feats), shape)
            else:
                cells = np.zeros(values.shape[0], dtype=np.int64)
            table = np.bincount(cells, weights=weights, minlength=size)
            yield feats, ids, flats, table

    def answers(self, D: Dataset) -> np.ndarray:
        """Answer every query on ``D``.

        Unweighted (or uniformly weighted) datasets are answered as ``count / n``
        (and ``(n - count) / n`` for negations) so each entry is the correctly
        rounded rational.
        """
        if D.n == 0:
            raise EmptyDataset("cannot answer queries on an empty dataset")
        if D.schema.sizes != self.schema.sizes:
            raise DimensionMismatch("dataset and workload schemas differ")
        out = np.empty(len(self.queries))
        neg = self.negated_mask
        uniform = isinstance(D, EncodedDataset) or bool(np.all(D.weights == D.weights[0]))
        if uniform:
            n = D.n
            for _, ids, flats, table in self.marginal_tables(D.values):
                counts = table[flats].astype(np.int64)
                out[ids] = np.where(neg[ids], n - counts, counts) / n
        else:
            for _, ids, flats, table in self.marginal_tables(D.values, D.weights):
                p = np.clip(table[flats], 0.0, 1.0)
                out[ids] = np.where(neg[ids], 1.0 - p, p)
        return out

    def evaluate_records(self, values: np.ndarray) -> np.ndarray:
        """0/1 matrix ``(records, queries)`` for records given as value indices."""
        values = np.atleast_2d(np.asarray(values, dtype=np.int64))
        out = np.zeros((values.shape[0], len(self.queries)), dtype=np.uint8)
        sizes = self.schema.sizes
        for feats, ids, flats in self._by_marginal:
            shape = tuple(sizes[a] for a in feats)
            if feats:
                cells = np.ravel_multi_index(tuple(values[:, a] for a in feats), shape)
            else:
                cells = np.zeros(values.shape[0], dtype=np.int64)
            hit = (cells[:, None] == flats[None, :]).astype(np.uint8)
            out[:, ids] = hit ^ self.negated_mask[ids].astype(np.uint8)
        return out

    def to_json(self) -> dict[str, Any]:
        return {"sizes": list(self.schema.sizes), "closed": self.closed,
                "queries": [q.to_json() for q in self.queries]}

    @classmethod
    def from_json(cls, schema: Schema, doc: dict[str, Any]) -> "Workload":
        if list(doc.get("sizes", schema.sizes)) != list(schema.sizes):
            raise ConfigError("workload was built for a different schema")
        qs = [MarginalQuery.build(schema.sizes, q["features"], q["targets"], q.get("negated", False))
              for q in doc["queries"]]
        return cls(schema, qs, closed=bool(doc.get("closed", False)))

    def save(self, path: str | os.PathLike) -> Path:
        path = Path(path)
        try:
            path.write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc
        return path


def _sample_tuples(m: int, k: int, count: int, rng: np.random.Generator) -> list[tuple[int, ...]]:
    total = math.comb(m, k)
    if total <= 1_000_000:
        combos = list(itertools.combinations(range(m), k))
        pick = rng.choice(total, size=count, replace=False)
        return [combos[i] for i in pick]
    seen: dict[tuple[int, ...], None] = {}
    while len(seen) < count:
        t = tuple(sorted(int(a) for a in rng.choice(m, size=k, replace=False)))
        seen.setdefault(t, None)
    return list(seen)


def enumerate_marginals(schema: Schema, k: int, num_marginals: int | None, seed: int) -> Workload:
    """Sample ``num_marginals`` attribute k-tuples and emit every query of each.

    ``num_marginals=None`` takes all tuples in lexicographic order. Each
    query is immediately followed by its negation.
    """
    m = len(schema.attributes)
    if k < 1 or k > m:
        raise ArityTooLarge(f"arity {k} not in [1, {m}]")
    total = math.comb(m, k)
    if num_marginals is None:
        tuples = list(itertools.combinations(range(m), k))
    else:
        if num_marginals < 1:
            raise ConfigError("num_marginals must be at least 1")
        if num_marginals > total:
            raise TooManyMarginals(f"{num_marginals} marginals requested, only {total} exist")
        tuples = _sample_tuples(m, k, num_marginals, substream(seed, "workload"))
    sizes = schema.sizes
    queries = []
    for feats in tuples:
        for targets in itertools.product(*(range(sizes[a]) for a in feats)):
            q = MarginalQuery.build(sizes, feats, targets)
            queries.extend([q, q.negate()])
    return Workload(schema, queries, closed=True)


def eval_on_dataset(q: MarginalQuery, D: Dataset) -> float:
    if D.n == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    vals = D.values
    hit = np.ones(D.n, dtype=bool)
    for a, t in zip(q.features, q.targets):
        hit &= vals[:, a] == t
    if isinstance(D, EncodedDataset) or bool(np.all(D.weights == D.weights[0])):
        c = int(hit.sum())
        return (D.n - c) / D.n if q.negated else c / D.n
    p = min(max(float(D.weights[hit].sum()), 0.0), 1.0)
    return 1.0 - p if q.negated else p


def max_error(W: Workload, D: Dataset, D_hat: Dataset) -> float:
    return float(np.max(np.abs(W.answers(D) - W.answers(D_hat)))) if len(W) else 0.0


def answers_csv(answers: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["query_id", "answer"])
    for i, a in enumerate(answers):
        w.writerow([i, repr(float(a))])
    return buf.getvalue()
