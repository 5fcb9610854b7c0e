"""Linear optimization oracle over one-hot records.

A problem asks for a domain-valid record ``x`` maximizing

    f(x) = sum_i w_i * q_i(x) - <x, sigma>

where the ``q_i`` are marginal queries (possibly negated). Three backends are
provided: exhaustive search over the assignment tensor, multi-restart
coordinate ascent, and an exporter that writes each problem as an LP-style
integer program before delegating to another backend.

The oracle only ever sees queries, weights and noise. It has no access to
the private dataset.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import EncodedDataset, groups_from_sizes, values_to_bits
from .errors import DimensionMismatch, IoFailure, SearchSpaceTooLarge
from .workload import MarginalQuery

DEFAULT_CAP = 2 ** 24


@dataclass(frozen=True, eq=False)
class OracleProblem:
    sizes: tuple[int, ...]
    queries: tuple[MarginalQuery, ...]
    weights: np.ndarray
    sigma: np.ndarray

    @classmethod
    def build(cls, sizes: Sequence[int], queries: Sequence[MarginalQuery] = (),
              weights: Sequence[float] | np.ndarray | None = None,
              sigma: Sequence[float] | np.ndarray | None = None) -> "OracleProblem":
        sizes = tuple(int(s) for s in sizes)
        d = sum(sizes)
        queries = tuple(queries)
        w = np.ones(len(queries)) if weights is None else np.asarray(weights, dtype=np.float64)
        if w.shape != (len(queries),):
            raise DimensionMismatch("one weight per query required")
        if not np.isfinite(w).all():
            raise ValueError("weights must be finite")
        s = np.zeros(d) if sigma is None else np.asarray(sigma, dtype=np.float64)
        if s.shape != (d,):
            raise DimensionMismatch(f"perturbation has length {s.shape}, expected {d}")
        for q in queries:
            if q.features and (max(q.features) >= len(sizes)
                               or any(t >= sizes[a] for a, t in zip(q.features, q.targets))):
                raise DimensionMismatch("query does not fit the problem's groups")
        w = w.copy()
        s = s.copy()
        w.setflags(write=False)
        s.setflags(write=False)
        return cls(sizes, queries, w, s)

    def with_sigma(self, sigma: np.ndarray) -> "OracleProblem":
        return OracleProblem.build(self.sizes, self.queries, self.weights, sigma)

    @property
    def d(self) -> int:
        return sum(self.sizes)

    @property
    def groups(self) -> tuple[tuple[int, int], ...]:
        return groups_from_sizes(self.sizes)

    @property
    def search_space(self) -> int:
        return math.prod(self.sizes)


@dataclass(frozen=True)
class OracleSolution:
    values: tuple[int, ...]
    record: np.ndarray
    objective: float
    exact: bool


class _Compiled:
    """Padded array form of a problem's queries, for vectorized evaluation."""

    def __init__(self, p: OracleProblem):
        k = max((q.arity for q in p.queries), default=0)
        Q = len(p.queries)
        self.feats = np.zeros((Q, k), dtype=np.int64)
        self.targs = np.zeros((Q, k), dtype=np.int64)
        self.pad = np.ones((Q, k), dtype=bool)
        for i, q in enumerate(p.queries):
            a = q.arity
            self.feats[i, :a] = q.features
            self.targs[i, :a] = q.targets
            self.pad[i, :a] = False
        self.neg = np.array([q.negated for q in p.queries], dtype=bool)
        self.weights = p.weights
        self.sign_w = np.where(self.neg, -p.weights, p.weights)
        self.offsets = np.array([lo for lo, _ in p.groups], dtype=np.int64)
        self.sigma = p.sigma
        self.const = float(p.weights[self.neg].sum())
        m = len(p.sizes)
        self.by_group = []
        for g in range(m):
            idx, slot = np.nonzero((self.feats == g) & ~self.pad)
            self.by_group.append((idx, slot))

    def hits(self, values: np.ndarray) -> np.ndarray:
        values = np.atleast_2d(values)
        if self.feats.shape[0] == 0:
            return np.zeros((values.shape[0], 0), dtype=bool)
        match = (values[:, self.feats] == self.targs[None]) | self.pad[None]
        return match.all(axis=2) ^ self.neg[None]


def _query_part(p: OracleProblem, c: _Compiled, v: np.ndarray) -> float:
    return float(np.dot(c.hits(v)[0].astype(np.float64), p.weights)) if len(p.queries) else 0.0


def evaluate_objective(p: OracleProblem, values: Sequence[int] | np.ndarray,
                       compiled: _Compiled | None = None) -> float:
    """Canonical objective of a record given as value indices."""
    c = compiled or _Compiled(p)
    v = np.asarray(values, dtype=np.int64)
    return _query_part(p, c, v) - float(p.sigma[c.offsets + v].sum())


def evaluate_objective_bits(p: OracleProblem, bits: np.ndarray) -> float:
    """Objective of a bit record by direct per-query inner products."""
    bits = np.asarray(bits, dtype=np.int64)
    total = 0.0
    for q, w in zip(p.queries, p.weights):
        hit = int(sum(int(bits[b]) for b in q.bits) == q.arity) ^ int(q.negated)
        total += w * hit
    return total - float(np.dot(bits, p.sigma))


def _base_tensor(p: OracleProblem) -> np.ndarray:
    """Query part of the objective on the full assignment tensor (C order)."""
    m = len(p.sizes)
    tables: dict[tuple[int, ...], np.ndarray] = {}
    const = 0.0
    for q, w in zip(p.queries, p.weights):
        shape = tuple(p.sizes[a] for a in q.features)
        t = tables.get(q.features)
        if t is None:
            t = tables[q.features] = np.zeros(shape)
        if q.negated:
            const += w
            t[q.targets] -= w
        else:
            t[q.targets] += w
    obj = np.full(p.sizes, const)
    for feats, t in tables.items():
        bshape = [1] * m
        for a in feats:
            bshape[a] = p.sizes[a]
        obj += t.reshape(bshape)
    return obj


def _sigma_tensor(sizes: tuple[int, ...], sigmas: np.ndarray) -> np.ndarray:
    """``-<x, sigma_k>`` for every assignment, shape ``(K, *sizes)``."""
    K = sigmas.shape[0]
    m = len(sizes)
    out = np.zeros((K,) + tuple(sizes))
    for g, (lo, hi) in enumerate(groups_from_sizes(sizes)):
        bshape = [K] + [1] * m
        bshape[g + 1] = sizes[g]
        out -= sigmas[:, lo:hi].reshape(bshape)
    return out


def _last_argmax(flat: np.ndarray) -> np.ndarray:
    """Row-wise index of the last maximum; the last C-order index among ties
    is the lexicographically smallest bit record."""
    N = flat.shape[-1]
    return N - 1 - np.argmax(flat[..., ::-1], axis=-1)


def _solution(p: OracleProblem, values: np.ndarray, exact: bool, compiled=None) -> OracleSolution:
    values = np.asarray(values, dtype=np.int64)
    rec = values_to_bits(values[None], p.sizes)[0]
    rec.setflags(write=False)
    return OracleSolution(tuple(int(v) for v in values), rec,
                          evaluate_objective(p, values, compiled), exact)


def solve_exact(p: OracleProblem, cap: int = DEFAULT_CAP) -> OracleSolution:
    return solve_exact_batch(p, p.sigma[None], cap)[0]


def solve_exact_batch(p: OracleProblem, sigmas: np.ndarray, cap: int = DEFAULT_CAP,
                      chunk_cells: int = 2 ** 22) -> list[OracleSolution]:
    """Solve ``p`` once per row of ``sigmas`` (each replacing ``p.sigma``)."""
    N = p.search_space
    if N > cap:
        raise SearchSpaceTooLarge(f"{N} assignments exceed the cap of {cap}")
    sigmas = np.atleast_2d(np.asarray(sigmas, dtype=np.float64))
    if sigmas.shape[1] != p.d:
        raise DimensionMismatch("perturbation length differs from d")
    base = _base_tensor(p)
    step = max(1, chunk_cells // N)
    flat_idx = np.empty(sigmas.shape[0], dtype=np.int64)
    for start in range(0, sigmas.shape[0], step):
        sig = sigmas[start:start + step]
        obj = (base[None] + _sigma_tensor(p.sizes, sig)).reshape(sig.shape[0], N)
        flat_idx[start:start + sig.shape[0]] = _last_argmax(obj)
    vals = np.stack(np.unravel_index(flat_idx, p.sizes), axis=1) if p.sizes else flat_idx[:, None]
    # the query part depends only on the record, so evaluate it once per distinct winner
    compiled = _Compiled(p)
    uniq, inverse = np.unique(flat_idx, return_inverse=True)
    q_part = np.array([_query_part(p, compiled, vals[np.argmax(flat_idx == u)]) for u in uniq])
    offsets = compiled.offsets
    sig_part = np.take_along_axis(sigmas, offsets[None] + vals, axis=1).sum(axis=1)
    bits = values_to_bits(vals, p.sizes)
    bits.setflags(write=False)
    out = []
    for i in range(vals.shape[0]):
        v = tuple(int(x) for x in vals[i])
        out.append(OracleSolution(v, bits[i], float(q_part[inverse[i]]) - float(sig_part[i]), True))
    return out


def solve_local_search(p: OracleProblem, restarts: int = 16,
                       rng: np.random.Generator | None = None,
                       max_sweeps: int = 1000) -> OracleSolution:
    """Best of ``restarts`` coordinate-ascent runs from random starting records.

    A move replaces the active value of one attribute by the best value given
    the others; sweeps repeat until no move strictly improves. The first
    restart starts from the lexicographically smallest record.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    c = _Compiled(p)
    sizes = np.array(p.sizes, dtype=np.int64)
    m = len(p.sizes)
    best_v, best_obj = None, -math.inf
    for r in range(max(1, restarts)):
        v = sizes - 1 if r == 0 else (rng.random(m) * sizes).astype(np.int64)
        for _ in range(max_sweeps):
            improved = False
            for g in range(m):
                lo = int(c.offsets[g])
                scores = -c.sigma[lo:lo + sizes[g]].copy()
                idx, slot = c.by_group[g]
                if idx.size:
                    others = (v[c.feats[idx]] == c.targs[idx]) | c.pad[idx]
                    others[np.arange(idx.size), slot] = True
                    ok = others.all(axis=1)
                    np.add.at(scores, c.targs[idx, slot][ok], c.sign_w[idx][ok])
                cur = v[g]
                top = int(sizes[g] - 1 - np.argmax(scores[::-1]))
                if scores[top] > scores[cur]:
                    v[g] = top
                    improved = True
            if not improved:
                break
        obj = evaluate_objective(p, v, c)
        if obj > best_obj:
            best_v, best_obj = v.copy(), obj
    return _solution(p, best_v, False, c)


class Oracle:
    """Backend interface. ``exact`` is True only for optimality-guaranteeing backends."""

    exact = False

    def solve(self, p: OracleProblem, rng: np.random.Generator | None = None) -> OracleSolution:
        raise NotImplementedError

    def solve_batch(self, p: OracleProblem, sigmas: np.ndarray,
                    rngs: Sequence[np.random.Generator] | None = None) -> list[OracleSolution]:
        sigmas = np.atleast_2d(sigmas)
        rngs = rngs if rngs is not None else [None] * sigmas.shape[0]
        return [self.solve(p.with_sigma(s), r) for s, r in zip(sigmas, rngs)]


@dataclass
class ExactOracle(Oracle):
    cap: int = DEFAULT_CAP
    exact = True

    def solve(self, p, rng=None):
        return solve_exact(p, self.cap)

    def solve_batch(self, p, sigmas, rngs=None):
        return solve_exact_batch(p, sigmas, self.cap)


@dataclass
class LocalSearchOracle(Oracle):
    restarts: int = 16
    exact = False

    def solve(self, p, rng=None):
        return solve_local_search(p, self.restarts, rng)


@dataclass
class ExportingOracle(Oracle):
    """Writes every problem it receives to ``directory`` then asks ``inner``."""

    directory: str | os.PathLike
    inner: Oracle = field(default_factory=ExactOracle)
    count: int = 0

    @property
    def exact(self) -> bool:  # type: ignore[override]
        return self.inner.exact

    def _export(self, p: OracleProblem) -> None:
        Path(self.directory).mkdir(parents=True, exist_ok=True)
        export_mip(p, Path(self.directory) / f"problem_{self.count:06d}.lp")
        self.count += 1

    def solve(self, p, rng=None):
        self._export(p)
        return self.inner.solve(p, rng)

    def solve_batch(self, p, sigmas, rngs=None):
        sigmas = np.atleast_2d(sigmas)
        for s in sigmas:
            self._export(p.with_sigma(s))
        return self.inner.solve_batch(p, sigmas, rngs)


def make_oracle(backend: str = "exact", cap: int = DEFAULT_CAP, restarts: int = 16,
                directory: str | os.PathLike | None = None) -> Oracle:
    if backend == "exact":
        return ExactOracle(cap)
    if backend == "local":
        return LocalSearchOracle(restarts)
    if backend == "export":
        from .errors import ConfigError
        if directory is None:
            raise ConfigError("export backend needs an output directory")
        return ExportingOracle(directory, ExactOracle(cap))
    from .errors import ConfigError
    raise ConfigError(f"unknown oracle backend {backend!r}")


def _num(v: float) -> str:
    return repr(float(v))


def _term(coef: float, var: str) -> str:
    sign = "-" if coef < 0 else "+"
    return f"{sign} {_num(abs(coef))} {var}"


def export_mip_text(p: OracleProblem) -> str:
    """LP-style integer program equivalent to the oracle problem.

    A query with negative weight ``w`` is rewritten as ``w + |w| * (not q)`` so
    every indicator ``c_i`` carries a non-negative objective coefficient and the
    one-sided constraints are tight at the optimum; the accumulated constant is
    written as a bare number at the end of the objective.
    """
    lines = ["\\ linear optimization oracle problem", "Maximize"]
    obj_terms = []
    cons = []
    const = 0.0
    for i, (q, w) in enumerate(zip(p.queries, p.weights)):
        neg = q.negated
        if w < 0:
            const += w
            w = -w
            neg = not neg
        obj_terms.append(_term(w, f"c{i}"))
        xs = " ".join(f"+ 1 x{b}" for b in q.bits)
        if not neg:
            cons.append(f" q{i}: {xs} - {q.arity} c{i} >= 0")
        else:
            xs_neg = " ".join(f"- 1 x{b}" for b in q.bits)
            cons.append(f" q{i}: {xs_neg} - 1 c{i} >= -{q.arity}")
    for j, s in enumerate(p.sigma):
        if s != 0:
            obj_terms.append(_term(-s, f"x{j}"))
    if const != 0 or not obj_terms:
        obj_terms.append(("- " if const < 0 else "+ ") + _num(abs(const)))
    lines.append(" obj: " + " ".join(obj_terms))
    lines.append("Subject To")
    lines.extend(cons)
    for g, (lo, hi) in enumerate(p.groups):
        lines.append(f" g{g}: " + " ".join(f"+ 1 x{b}" for b in range(lo, hi)) + " = 1")
    lines.append("Binaries")
    lines.append(" " + " ".join([f"x{j}" for j in range(p.d)] + [f"c{i}" for i in range(len(p.queries))]))
    lines.append("End")
    return "\n".join(lines) + "\n"


def export_mip(p: OracleProblem, path: str | os.PathLike) -> Path:
    path = Path(path)
    try:
        path.write_text(export_mip_text(p), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


@dataclass
class LinearProgram:
    """Parsed form of an exported program (used for round-trip checks)."""

    objective: dict[str, float]
    constant: float
    constraints: list[tuple[str, dict[str, float], str, float]]
    binaries: list[str]


def _parse_expr(expr: str) -> tuple[dict[str, float], float]:
    coefs: dict[str, float] = {}
    const = 0.0
    tokens = expr.split()
    i = 0
    while i < len(tokens):
        sign = -1.0 if tokens[i] == "-" else 1.0
        val = float(tokens[i + 1])
        if i + 2 < len(tokens) and tokens[i + 2] not in "+-":
            coefs[tokens[i + 2]] = coefs.get(tokens[i + 2], 0.0) + sign * val
            i += 3
        else:
            const += sign * val
            i += 2
    return coefs, const


def load_mip(path_or_text: str | os.PathLike) -> LinearProgram:
    text = str(path_or_text)
    if "\n" not in text:
        text = Path(path_or_text).read_text(encoding="utf-8")
    section = None
    objective, constant, constraints, binaries = {}, 0.0, [], []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("\\"):
            continue
        if line in ("Maximize", "Subject To", "Binaries", "End"):
            section = line
            continue
        if section == "Maximize":
            objective, constant = _parse_expr(line.split(":", 1)[1])
        elif section == "Subject To":
            name, rest = line.split(":", 1)
            m = re.match(r"(.*?)\s*(>=|<=|=)\s*(\S+)$", rest.strip())
            coefs, c = _parse_expr(m.group(1))
            constraints.append((name.strip(), coefs, m.group(2), float(m.group(3)) - c))
        elif section == "Binaries":
            binaries.extend(line.split())
    return LinearProgram(objective, constant, constraints, binaries)


def best_response_payoff(D: EncodedDataset, queries: Sequence[MarginalQuery],
                         weights: Sequence[float], x: np.ndarray) -> float:
    """``sum_j w_j (q_j(D) - q_j(x))`` for a bit record ``x``."""
    from .workload import eval_on_dataset, eval_query
    return float(sum(w * (eval_on_dataset(q, D) - eval_query(q, x))
                     for q, w in zip(queries, weights)))
