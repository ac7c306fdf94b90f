from __future__ import annotations

import json

import numpy as np
import pytest

from market_select.pool import ExampleRecord, Pool


def make_record(
    rid: str,
    topic: str = "t",
    tokens: int = 1,
    label: str | None = None,
    embedding=None,
    signals: dict[str, float] | None = None,
) -> ExampleRecord:
    emb = None if embedding is None else np.asarray(embedding, dtype=np.float64)
    return ExampleRecord(
        id=rid,
        topic=topic,
        token_length=tokens,
        label=label,
        embedding=emb,
        raw_signals=dict(signals or {}),
    )


def make_pool(*records: ExampleRecord) -> Pool:
    return Pool(list(records))


@pytest.fixture
def tiny_pool() -> Pool:
    return make_pool(
        make_record("a", topic="x", tokens=3, signals={"nll": 1.0}),
        make_record("b", topic="x", tokens=5, signals={"nll": 2.0}),
        make_record("c", topic="y", tokens=2, signals={"nll": 3.0}),
    )


def write_pool_jsonl(path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def random_pool(
    rng: np.random.Generator,
    n: int,
    n_topics: int = 3,
    dim: int | None = None,
    with_labels: bool = False,
    n_labels: int = 4,
    max_tokens: int = 50,
    signal_names: tuple[str, ...] = ("s1",),
) -> Pool:
    records = []
    width = len(str(n))
    for i in range(n):
        emb = None if dim is None else rng.normal(size=dim)
        records.append(
            ExampleRecord(
                id=f"e{i:0{width}d}",
                topic=f"t{rng.integers(n_topics)}",
                token_length=int(rng.integers(1, max_tokens + 1)),
                label=f"l{rng.integers(n_labels)}" if with_labels else None,
                embedding=emb,
                raw_signals={name: float(rng.normal()) for name in signal_names},
            )
        )
    return Pool(records)
