"""Tabular data ingestion and the one-hot binary encoding of records.

A record over a schema with attributes ``A_1..A_m`` is stored as a bit vector of
length ``d = sum |A_i|``. Attribute ``i`` owns the half-open bit range
``groups[i]`` and exactly one bit in each range is set. Internally most code
works with the equivalent *value-index* form: an integer per attribute giving
the position of the set bit inside its group.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyDataset,
    EmptyFile,
    IoFailure,
    MalformedRow,
    SchemaError,
    UnknownCategoricalValue,
)


@dataclass(frozen=True)
class Attribute:
    """A categorical attribute (``values``) or a bucketed continuous one (``bounds``).

    ``bounds`` are bucket edges: ``len(bounds) - 1`` buckets, bucket ``i``
    covering ``[bounds[i], bounds[i+1])``. Values outside the edges are clamped
    into the first or last bucket.
    """

    name: str
    values: tuple[str, ...] | None = None
    bounds: tuple[float, ...] | None = None

    def __post_init__(self):
        if (self.values is None) == (self.bounds is None):
            raise SchemaError(f"attribute {self.name!r} needs exactly one of values/bounds")
        if self.values is not None:
            if len(self.values) == 0:
                raise SchemaError(f"attribute {self.name!r} has an empty value list")
            if len(set(self.values)) != len(self.values):
                raise SchemaError(f"attribute {self.name!r} repeats a value")
        else:
            b = self.bounds
            if len(b) < 2:
                raise SchemaError(f"attribute {self.name!r} needs at least two bucket bounds")
            if any(not math.isfinite(v) for v in b):
                raise SchemaError(f"attribute {self.name!r} has non-finite bounds")
            if any(b[i] >= b[i + 1] for i in range(len(b) - 1)):
                raise SchemaError(f"bounds of {self.name!r} must be strictly increasing")

    @property
    def is_categorical(self) -> bool:
        return self.values is not None

    @property
    def size(self) -> int:
        return len(self.values) if self.values is not None else len(self.bounds) - 1

    def labels(self) -> list[str]:
        if self.values is not None:
            return list(self.values)
        b = self.bounds
        return [f"[{b[i]:g},{b[i + 1]:g})" for i in range(len(b) - 1)]

    def index_of(self, raw: str, row: int = -1) -> int:
        if self.values is not None:
            try:
                return self.values.index(raw)
            except ValueError:
                raise UnknownCategoricalValue(row, self.name, raw) from None
        try:
            v = float(raw)
        except ValueError:
            raise MalformedRow(row, f"{self.name!r} expects a number, got {raw!r}") from None
        if not math.isfinite(v):
            raise MalformedRow(row, f"{self.name!r} is not finite")
        i = int(np.searchsorted(np.asarray(self.bounds), v, side="right")) - 1
        return min(max(i, 0), self.size - 1)

    def representative(self, index: int) -> str:
        """A raw value that encodes back to bucket/value ``index``."""
        if self.values is not None:
            return self.values[index]
        return repr(float(self.bounds[index]))

    def to_json(self) -> dict[str, Any]:
        if self.values is not None:
            return {"name": self.name, "values": list(self.values)}
        return {"name": self.name, "bounds": list(self.bounds)}


@dataclass(frozen=True)
class Schema:
    attributes: tuple[Attribute, ...]

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaError("attribute names must be unique")
        if not names:
            raise SchemaError("schema has no attributes")

    @classmethod
    def categorical(cls, spec: dict[str, Sequence[str]]) -> "Schema":
        return cls(tuple(Attribute(k, values=tuple(str(v) for v in vs)) for k, vs in spec.items()))

    @classmethod
    def from_json(cls, doc: dict[str, Any] | str | os.PathLike) -> "Schema":
        if not isinstance(doc, dict):
            try:
                doc = json.loads(Path(doc).read_text(encoding="utf-8"))
            except OSError as exc:
                raise SchemaError(f"cannot read schema: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise SchemaError(f"schema is not valid JSON: {exc}") from exc
        try:
            attrs = []
            for a in doc["attributes"]:
                if "values" in a:
                    attrs.append(Attribute(str(a["name"]), values=tuple(str(v) for v in a["values"])))
                elif "bounds" in a:
                    attrs.append(Attribute(str(a["name"]), bounds=tuple(float(v) for v in a["bounds"])))
                else:
                    raise SchemaError(f"attribute {a.get('name')!r} has neither values nor bounds")
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema document: {exc}") from exc
        return cls(tuple(attrs))

    def to_json(self) -> dict[str, Any]:
        return {"attributes": [a.to_json() for a in self.attributes]}

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.attributes)

    @property
    def dimension(self) -> int:
        return sum(self.sizes)

    @property
    def domain_size(self) -> int:
        return math.prod(self.sizes)

    @property
    def groups(self) -> tuple[tuple[int, int], ...]:
        return groups_from_sizes(self.sizes)

    def encode_values(self, raw: Sequence[str], row: int = -1) -> np.ndarray:
        if len(raw) != len(self.attributes):
            raise MalformedRow(row, f"expected {len(self.attributes)} fields, got {len(raw)}")
        return np.array([a.index_of(v, row) for a, v in zip(self.attributes, raw)], dtype=np.int64)

    def decode_values(self, values: Sequence[int]) -> list[str]:
        return [a.representative(int(v)) for a, v in zip(self.attributes, values)]


def groups_from_sizes(sizes: Sequence[int]) -> tuple[tuple[int, int], ...]:
    out, start = [], 0
    for s in sizes:
        out.append((start, start + int(s)))
        start += int(s)
    return tuple(out)


def values_to_bits(values: np.ndarray, sizes: Sequence[int]) -> np.ndarray:
    """Value-index rows ``(n, m)`` to one-hot bit rows ``(n, d)``."""
    values = np.atleast_2d(np.asarray(values, dtype=np.int64))
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    bits = np.zeros((values.shape[0], int(sum(sizes))), dtype=np.uint8)
    if values.shape[0]:
        rows = np.repeat(np.arange(values.shape[0]), values.shape[1])
        bits[rows, (values + offsets).ravel()] = 1
    return bits


def bits_to_values(bits: np.ndarray, sizes: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`values_to_bits`; rows must be valid one-hot."""
    bits = np.atleast_2d(np.asarray(bits))
    if bits.shape[1] != sum(sizes):
        raise DimensionMismatch(f"records have {bits.shape[1]} bits, schema needs {sum(sizes)}")
    cols = []
    for lo, hi in groups_from_sizes(sizes):
        cols.append(np.argmax(bits[:, lo:hi], axis=1))
    return np.stack(cols, axis=1).astype(np.int64) if cols else np.zeros((bits.shape[0], 0), np.int64)


def is_valid_record(bits: np.ndarray, sizes: Sequence[int]) -> bool:
    bits = np.asarray(bits)
    if bits.ndim != 1 or bits.shape[0] != sum(sizes):
        return False
    if not np.isin(bits, (0, 1)).all():
        return False
    return all(int(bits[lo:hi].sum()) == 1 for lo, hi in groups_from_sizes(sizes))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class EncodedDataset:
    """``n`` one-hot records over a schema. Immutable after construction."""

    def __init__(self, schema: Schema, values: np.ndarray):
        values = np.asarray(values, dtype=np.int64).reshape(-1, len(schema.attributes))
        sizes = np.asarray(schema.sizes)
        if values.size and ((values < 0).any() or (values >= sizes).any()):
            raise DimensionMismatch("value index outside its attribute range")
        self.schema = schema
        self._values = _frozen(values)

    @classmethod
    def from_bits(cls, schema: Schema, bits: np.ndarray) -> "EncodedDataset":
        bits = np.asarray(bits).reshape(-1, schema.dimension)
        for i, row in enumerate(bits):
            if not is_valid_record(row, schema.sizes):
                raise MalformedRow(i, "record is not one-hot within every attribute group")
        return cls(schema, bits_to_values(bits, schema.sizes))

    @property
    def values(self) -> np.ndarray:
        return self._values

    @cached_property
    def records(self) -> np.ndarray:
        return _frozen(values_to_bits(self._values, self.schema.sizes))

    @property
    def n(self) -> int:
        return int(self._values.shape[0])

    @property
    def d(self) -> int:
        return self.schema.dimension

    @property
    def groups(self) -> tuple[tuple[int, int], ...]:
        return self.schema.groups

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n, 1.0 / self.n) if self.n else np.zeros(0)

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"EncodedDataset(n={self.n}, d={self.d})"


class SyntheticDataset:
    """Weighted records; weights are non-negative and sum to one.

    ``provenance`` optionally records how many records each round contributed.
    """

    def __init__(self, schema: Schema, values: np.ndarray, weights: np.ndarray | None = None,
                 provenance: Sequence[int] | None = None):
        values = np.asarray(values, dtype=np.int64).reshape(-1, len(schema.attributes))
        if values.shape[0] == 0:
            raise EmptyDataset("a synthetic dataset needs at least one record")
        if weights is None:
            weights = np.full(values.shape[0], 1.0 / values.shape[0])
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (values.shape[0],):
            raise DimensionMismatch("one weight per record required")
        if (weights < 0).any() or not np.isfinite(weights).all():
            raise ValueError("weights must be finite and non-negative")
        total = weights.sum()
        if total <= 0:
            raise EmptyDataset("total weight must be positive")
        self.schema = schema
        self._values = _frozen(values)
        self._weights = _frozen(weights / total)
        self.provenance = tuple(int(p) for p in provenance) if provenance is not None else ()

    @classmethod
    def from_dataset(cls, ds: EncodedDataset) -> "SyntheticDataset":
        return cls(ds.schema, ds.values)

    @classmethod
    def union(cls, parts: Sequence["SyntheticDataset"], part_weights: Sequence[float] | None = None,
              compress: bool = True) -> "SyntheticDataset":
        """Mixture of ``parts``; equal part weights unless given."""
        if not parts:
            raise EmptyDataset("nothing to combine")
        if part_weights is None:
            part_weights = [1.0 / len(parts)] * len(parts)
        values = np.concatenate([p.values for p in parts])
        weights = np.concatenate([p.weights * w for p, w in zip(parts, part_weights)])
        provenance = [p.values.shape[0] for p in parts]
        if compress:
            uniq, inv = np.unique(values, axis=0, return_inverse=True)
            summed = np.zeros(uniq.shape[0])
            np.add.at(summed, inv.ravel(), weights)
            values, weights = uniq, summed
        return cls(parts[0].schema, values, weights, provenance)

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @cached_property
    def records(self) -> np.ndarray:
        return _frozen(values_to_bits(self._values, self.schema.sizes))

    @property
    def n(self) -> int:
        return int(self._values.shape[0])

    @property
    def d(self) -> int:
        return self.schema.dimension

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"SyntheticDataset(records={self.n}, d={self.d})"


def _read_rows(text: str) -> list[list[str]]:
    return [row for row in csv.reader(io.StringIO(text))]


def load_csv(path: str | os.PathLike, schema: Schema) -> EncodedDataset:
    """Parse a header + rows CSV into an :class:`EncodedDataset`.

    Columns are matched to schema attributes by header name; extra columns are
    ignored. Blank lines are skipped.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    rows = [r for r in _read_rows(text) if r and any(c.strip() for c in r)]
    if not rows:
        raise EmptyFile(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    try:
        cols = [header.index(name) for name in schema.names]
    except ValueError:
        missing = [n for n in schema.names if n not in header]
        raise MalformedRow(0, f"header lacks columns {missing}") from None
    values = np.empty((len(rows) - 1, len(cols)), dtype=np.int64)
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise MalformedRow(i, f"expected {len(header)} fields, got {len(row)}")
        values[i - 1] = schema.encode_values([row[c].strip() for c in cols], row=i)
    return EncodedDataset(schema, values)


def _latent_class_model(schema: Schema, rng: np.random.Generator, classes: int):
    mix = rng.dirichlet(np.ones(classes))
    tables = [rng.dirichlet(np.full(a.size, 0.5), size=classes) for a in schema.attributes]
    return mix, tables


def generate_synthetic_csv(schema: Schema, n: int, seed: int, path: str | os.PathLike,
                           classes: int = 4) -> Path:
    """Write ``n`` rows drawn from a seeded latent-class model to ``path``.

    The latent classes make attributes correlated, so low-order marginals carry
    structure that a uniform synthetic dataset would not reproduce. Output is
    byte-identical for the same ``(schema, n, seed)``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    mix, tables = _latent_class_model(schema, rng, classes)
    z = rng.choice(classes, size=n, p=mix)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(schema.names)
    cols = []
    for a, tab in zip(schema.attributes, tables):
        u = rng.random(n)
        idx = (u[:, None] > np.cumsum(tab[z], axis=1)).sum(axis=1)
        idx = np.minimum(idx, a.size - 1)
        if a.is_categorical:
            cols.append([a.values[i] for i in idx])
        else:
            lo = np.asarray(a.bounds)[idx]
            hi = np.asarray(a.bounds)[idx + 1]
            x = lo + (hi - lo) * rng.random(n) * 0.999
            cols.append([f"{v:.6f}" for v in x])
    for row in zip(*cols):
        writer.writerow(row)
    path = Path(path)
    try:
        path.write_text(buf.getvalue(), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


def record_stats(ds: EncodedDataset) -> dict[str, Any]:
    counts = {}
    for j, a in enumerate(ds.schema.attributes):
        c = np.bincount(ds.values[:, j], minlength=a.size) if ds.n else np.zeros(a.size, np.int64)
        counts[a.name] = {lab: int(v) for lab, v in zip(a.labels(), c)}
    return {"n": ds.n, "d": ds.d, "counts": counts}


def write_bits(ds: EncodedDataset, path: str | os.PathLike) -> Path:
    """Write records as one 0/1 string per line (the ``encode`` CLI output)."""
    path = Path(path)
    lines = ["".join(map(str, row)) for row in ds.records.tolist()]
    try:
        path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


def record_string(bits: Iterable[int]) -> str:
    return "".join(str(int(b)) for b in bits)
