"""Example pool: data model, JSONL ingestion, and validation.

A pool is an immutable, id-sorted list of examples partitioned into
topics. Everything downstream (signals, pricing, selection) reads from
it; nothing mutates it after load.

Pool file format: UTF-8 JSONL, one object per line with keys
``id`` (string), ``topic`` (string), ``tokens`` (positive int), and
optional ``label`` (string), ``embedding`` (list of numbers),
``signals`` (object name -> number). Unknown keys are ignored with a
warning.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ValidationError

KNOWN_KEYS = {"id", "topic", "tokens", "label", "embedding", "signals"}


@dataclass
class ExampleRecord:
    """One pool item. Treated as immutable after pool construction."""

    id: str
    topic: str
    token_length: int
    label: str | None = None
    embedding: np.ndarray | None = None
    raw_signals: dict[str, float] = field(default_factory=dict)


class Pool:
    """Validated, id-sorted collection of examples with a topic index.

    Iteration order is ascending id everywhere; all downstream tie-breaks
    rely on this ordering for reproducibility.
    """

    def __init__(self, records: list[ExampleRecord]):
        self.records = sorted(records, key=lambda r: r.id)
        self._validate()
        self.ids = [r.id for r in self.records]
        self._pos = {r.id: i for i, r in enumerate(self.records)}
        self.token_lengths = np.array(
            [r.token_length for r in self.records], dtype=np.int64
        )
        # topic -> ascending-id index array; topics iterate in sorted order
        by_topic: dict[str, list[int]] = {}
        for i, r in enumerate(self.records):
            by_topic.setdefault(r.topic, []).append(i)
        self.topics: dict[str, np.ndarray] = {
            t: np.array(idx, dtype=np.intp) for t, idx in sorted(by_topic.items())
        }
        self._embeddings: np.ndarray | None = None

    def _validate(self) -> None:
        seen: set[str] = set()
        dim: int | None = None
        for r in self.records:
            if r.id in seen:
                raise ValidationError(f"duplicate id {r.id!r} in pool")
            seen.add(r.id)
            if r.token_length < 1:
                raise ValidationError(
                    f"record {r.id!r}: token_length must be >= 1, got {r.token_length}"
                )
            if r.embedding is not None:
                if r.embedding.ndim != 1 or r.embedding.size < 1:
                    raise ValidationError(
                        f"record {r.id!r}: embedding must be a non-empty 1-D vector"
                    )
                if dim is None:
                    dim = r.embedding.size
                elif r.embedding.size != dim:
                    raise ValidationError(
                        f"record {r.id!r}: embedding dimension {r.embedding.size} "
                        f"does not match earlier dimension {dim}"
                    )
                if not np.all(np.isfinite(r.embedding)):
                    raise ValidationError(
                        f"record {r.id!r}: embedding contains non-finite values"
                    )
            for name, value in r.raw_signals.items():
                if not math.isfinite(value):
                    raise ValidationError(
                        f"record {r.id!r}: signal {name!r} is not finite"
                    )

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n(self) -> int:
        return len(self.records)

    def record(self, example_id: str) -> ExampleRecord:
        try:
            return self.records[self._pos[example_id]]
        except KeyError:
            raise ValidationError(f"unknown example id {example_id!r}") from None

    def index_of(self, example_id: str) -> int:
        try:
            return self._pos[example_id]
        except KeyError:
            raise ValidationError(f"unknown example id {example_id!r}") from None

    @property
    def has_labels(self) -> bool:
        return all(r.label is not None for r in self.records)

    def labels(self) -> list[str]:
        """Sorted distinct labels; requires every record to carry one."""
        if not self.has_labels:
            missing = next(r.id for r in self.records if r.label is None)
            raise ValidationError(f"record {missing!r} has no label")
        return sorted({r.label for r in self.records})

    def embedding_matrix(self) -> np.ndarray:
        """N x d matrix of embeddings; fails if any record lacks one.

        Missing embeddings are permitted at load time and only rejected
        here, when a geometric signal actually needs them.
        """
        if self._embeddings is None:
            for r in self.records:
                if r.embedding is None:
                    raise ValidationError(f"record {r.id!r} has no embedding")
            self._embeddings = np.stack([r.embedding for r in self.records])
        return self._embeddings


def topic_sizes(pool: Pool) -> dict[str, int]:
    """Number of examples per topic; counts sum to len(pool)."""
    return {t: int(idx.size) for t, idx in pool.topics.items()}


def _parse_record(obj: object, lineno: int) -> ExampleRecord:
    if not isinstance(obj, dict):
        raise ConfigError(f"line {lineno}: expected a JSON object")
    unknown = set(obj) - KNOWN_KEYS
    if unknown:
        warnings.warn(
            f"line {lineno}: ignoring unknown keys {sorted(unknown)}", stacklevel=2
        )
    try:
        rid = obj["id"]
        topic = obj["topic"]
        tokens = obj["tokens"]
    except KeyError as exc:
        raise ConfigError(f"line {lineno}: missing required key {exc}") from None
    if not isinstance(rid, str):
        raise ConfigError(f"line {lineno}: 'id' must be a string")
    if not isinstance(topic, str):
        raise ConfigError(f"line {lineno}: 'topic' must be a string")
    if not isinstance(tokens, int) or isinstance(tokens, bool):
        raise ConfigError(f"line {lineno}: 'tokens' must be an integer")
    if tokens < 1:
        raise ValidationError(f"line {lineno}: 'tokens' must be >= 1, got {tokens}")

    label = obj.get("label")
    if label is not None and not isinstance(label, str):
        raise ConfigError(f"line {lineno}: 'label' must be a string")

    embedding = None
    if obj.get("embedding") is not None:
        raw = obj["embedding"]
        if not isinstance(raw, list) or not raw:
            raise ConfigError(f"line {lineno}: 'embedding' must be a non-empty array")
        try:
            embedding = np.asarray(raw, dtype=np.float64)
        except (TypeError, ValueError):
            raise ConfigError(
                f"line {lineno}: 'embedding' must contain only numbers"
            ) from None
        if embedding.ndim != 1:
            raise ConfigError(f"line {lineno}: 'embedding' must be a flat array")
        if not np.all(np.isfinite(embedding)):
            raise ValidationError(f"line {lineno}: embedding has non-finite values")

    signals: dict[str, float] = {}
    if obj.get("signals") is not None:
        raw_sig = obj["signals"]
        if not isinstance(raw_sig, dict):
            raise ConfigError(f"line {lineno}: 'signals' must be an object")
        for name, value in raw_sig.items():
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"line {lineno}: signal {name!r} must be a number")
            if not math.isfinite(value):
                raise ValidationError(f"line {lineno}: signal {name!r} is not finite")
            signals[name] = float(value)

    return ExampleRecord(
        id=rid,
        topic=topic,
        token_length=tokens,
        label=label,
        embedding=embedding,
        raw_signals=signals,
    )


def load_pool(path: str | Path) -> Pool:
    """Load and validate a JSONL pool file.

    Per-line problems are reported with the offending line number;
    duplicate ids and ragged embedding dimensions name the records
    involved.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"pool file not found: {path}")
    records: list[ExampleRecord] = []
    seen_lines: dict[str, int] = {}
    dim_seen: tuple[int, int] | None = None  # (dimension, first lineno)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            rec = _parse_record(obj, lineno)
            if rec.id in seen_lines:
                raise ValidationError(
                    f"line {lineno}: duplicate id {rec.id!r} "
                    f"(first seen on line {seen_lines[rec.id]})"
                )
            seen_lines[rec.id] = lineno
            if rec.embedding is not None:
                if dim_seen is None:
                    dim_seen = (rec.embedding.size, lineno)
                elif rec.embedding.size != dim_seen[0]:
                    raise ValidationError(
                        f"line {lineno}: embedding dimension {rec.embedding.size} "
                        f"does not match dimension {dim_seen[0]} from line {dim_seen[1]}"
                    )
            records.append(rec)
    return Pool(records)


def write_pool(pool: Pool, path: str | Path) -> None:
    """Write a pool back to JSONL; load_pool(write_pool(p)) == p."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for r in pool.records:
            obj: dict[str, object] = {
                "id": r.id,
                "topic": r.topic,
                "tokens": int(r.token_length),
            }
            if r.label is not None:
                obj["label"] = r.label
            if r.embedding is not None:
                obj["embedding"] = [float(x) for x in r.embedding]
            if r.raw_signals:
                obj["signals"] = {k: float(v) for k, v in r.raw_signals.items()}
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
