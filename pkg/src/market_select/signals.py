"""Geometric utility signals computed from embeddings, plus pass-through
of ingested per-example signals.

Three geometric signals are provided:

* rarity: mean Euclidean distance to the k nearest same-topic neighbors
  (anti-density; large values mark unusual examples),
* div_cent: distance to the topic centroid,
* div: weighted combination of the two.

Rarity and centroid distance are computed within topics so that topic
identity is not confounded with distributional coverage.
"""

from __future__ import annotations

import re
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError, ValidationError
from .pool import Pool

DEFAULT_K = 10
_CHUNK_ROWS = 1024


@dataclass
class SignalTable:
    """Column store of raw per-example signal values.

    Every column has one value per pool record (ascending-id order) and
    all values are finite. Provenance records whether a column came from
    the pool file (ingested) or was computed here.
    """

    columns: dict[str, np.ndarray]
    provenance: dict[str, str] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def validate(self) -> None:
        n = self.n
        for name, col in self.columns.items():
            if len(col) != n:
                raise ValidationError(
                    f"signal column {name!r} has length {len(col)}, expected {n}"
                )
            if not np.all(np.isfinite(col)):
                raise ValidationError(f"signal column {name!r} has non-finite values")


@dataclass
class KnnParams:
    k: int = DEFAULT_K
    metric: str = "euclidean"

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.metric != "euclidean":
            raise ConfigError(f"unsupported metric {self.metric!r}")


@dataclass
class DiversityParams:
    alpha_cent: float = 0.5
    alpha_knn: float = 0.5

    def __post_init__(self) -> None:
        if self.alpha_cent < 0 or self.alpha_knn < 0:
            raise ConfigError("diversity combination weights must be nonnegative")
        if self.alpha_cent + self.alpha_knn <= 0:
            raise ConfigError("at least one diversity combination weight must be positive")


class ExactNeighborIndex:
    """Exact brute-force nearest neighbors over one point set.

    Distances go through cdist in row chunks, which evaluates each pair
    directly (no inner-product expansion), so duplicates come out at
    exactly zero and results match an exhaustive oracle to float64
    precision. An approximate backend can replace this class behind the
    same mean_knn_distance signature.
    """

    def __init__(self, points: np.ndarray, chunk_rows: int = _CHUNK_ROWS):
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        self.chunk_rows = chunk_rows

    def mean_knn_distance(self, k: int) -> np.ndarray:
        n = self.points.shape[0]
        if not 1 <= k < n:
            raise ValidationError(f"need 1 <= k < n, got k={k}, n={n}")
        out = np.empty(n, dtype=np.float64)
        for start in range(0, n, self.chunk_rows):
            stop = min(start + self.chunk_rows, n)
            dist = cdist(self.points[start:stop], self.points)
            # exclude self only (the diagonal); duplicates legitimately
            # contribute zero distances
            dist[np.arange(stop - start), np.arange(start, stop)] = np.inf
            nearest = np.partition(dist, k - 1, axis=1)[:, :k]
            out[start:stop] = nearest.mean(axis=1)
        return out


def rarity_knn(
    pool: Pool, params: KnnParams | None = None, threads: int = 1
) -> np.ndarray:
    """Mean distance to the k nearest same-topic neighbors, self excluded.

    k is clamped to (topic size - 1) for topics too small to supply k
    neighbors, with a warning; a singleton topic gets rarity 0 because it
    has no neighbors at all. Topics may be processed in parallel; results
    and warnings are assembled in sorted-topic order, so output is
    identical for any thread count.
    """
    params = params or KnnParams()
    emb = _require_embeddings(pool, "rarity")
    out = np.zeros(pool.n, dtype=np.float64)

    def _one_topic(idx: np.ndarray) -> np.ndarray | None:
        if idx.size == 1:
            return None
        k_eff = min(params.k, idx.size - 1)
        return ExactNeighborIndex(emb[idx]).mean_knn_distance(k_eff)

    topics = list(pool.topics.items())
    if threads > 1 and len(topics) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(lambda item: _one_topic(item[1]), topics))
    else:
        results = [_one_topic(idx) for _, idx in topics]

    for (topic, idx), res in zip(topics, results):
        if res is None:
            warnings.warn(
                f"topic {topic!r} has a single example; rarity set to 0",
                stacklevel=2,
            )
            out[idx] = 0.0
            continue
        if idx.size - 1 < params.k:
            warnings.warn(
                f"topic {topic!r} has {idx.size} examples; clamping k from "
                f"{params.k} to {idx.size - 1}",
                stacklevel=2,
            )
        out[idx] = res
    return out


def diversity_centroid(pool: Pool) -> np.ndarray:
    """Euclidean distance from each embedding to its topic mean."""
    emb = _require_embeddings(pool, "div_cent")
    out = np.empty(pool.n, dtype=np.float64)
    for idx in pool.topics.values():
        centroid = emb[idx].mean(axis=0)
        out[idx] = np.linalg.norm(emb[idx] - centroid, axis=1)
    return out


def diversity_combined(
    cent: np.ndarray, rare: np.ndarray, params: DiversityParams | None = None
) -> np.ndarray:
    """Elementwise alpha_cent * cent + alpha_knn * rare."""
    params = params or DiversityParams()
    cent = np.asarray(cent, dtype=np.float64)
    rare = np.asarray(rare, dtype=np.float64)
    if cent.shape != rare.shape:
        raise ValidationError(
            f"column length mismatch: {cent.shape} vs {rare.shape}"
        )
    return params.alpha_cent * cent + params.alpha_knn * rare


def _require_embeddings(pool: Pool, signal: str) -> np.ndarray:
    try:
        return pool.embedding_matrix()
    except ValidationError as exc:
        raise ValidationError(f"signal {signal!r} requires embeddings: {exc}") from None


@dataclass
class SignalSpec:
    """Parsed form of one CLI signal spec string.

    Accepted forms: an ingested name such as ``nll``, ``rarity[:k=<int>]``,
    ``div_cent``, and ``div[:alpha_cent=<f>,alpha_knn=<f>[,k=<int>]]``.
    """

    name: str
    kind: str  # "ingested" | "rarity" | "div_cent" | "div"
    k: int = DEFAULT_K
    alpha_cent: float = 0.5
    alpha_knn: float = 0.5


_SPEC_RE = re.compile(r"^(?P<name>[A-Za-z_][\w.-]*)(?::(?P<args>.*))?$")


def parse_signal_spec(text: str) -> SignalSpec:
    m = _SPEC_RE.match(text.strip())
    if not m:
        raise ConfigError(f"malformed signal spec {text!r}")
    name = m.group("name")
    args: dict[str, str] = {}
    if m.group("args"):
        for part in m.group("args").split(","):
            if "=" not in part:
                raise ConfigError(f"malformed signal spec argument {part!r} in {text!r}")
            key, value = part.split("=", 1)
            args[key.strip()] = value.strip()

    def _int(key: str, default: int) -> int:
        try:
            return int(args.pop(key, default))
        except ValueError:
            raise ConfigError(f"signal spec {text!r}: {key} must be an integer") from None

    def _float(key: str, default: float) -> float:
        try:
            return float(args.pop(key, default))
        except ValueError:
            raise ConfigError(f"signal spec {text!r}: {key} must be a number") from None

    if name == "rarity":
        spec = SignalSpec(name="rarity", kind="rarity", k=_int("k", DEFAULT_K))
    elif name == "div_cent":
        spec = SignalSpec(name="div_cent", kind="div_cent")
    elif name == "div":
        spec = SignalSpec(
            name="div",
            kind="div",
            alpha_cent=_float("alpha_cent", 0.5),
            alpha_knn=_float("alpha_knn", 0.5),
            k=_int("k", DEFAULT_K),
        )
    else:
        spec = SignalSpec(name=name, kind="ingested")
    if args:
        raise ConfigError(
            f"signal spec {text!r}: unknown arguments {sorted(args)}"
        )
    return spec


def build_signal_table(
    pool: Pool, requested: list[str | SignalSpec], threads: int = 1
) -> SignalTable:
    """Assemble one column per requested signal.

    Ingested signals must be present on every record; geometric signals
    need embeddings on every record. Rarity columns shared between
    ``rarity`` and ``div`` specs with the same k are computed once.
    """
    specs = [s if isinstance(s, SignalSpec) else parse_signal_spec(s) for s in requested]
    if not specs:
        raise ConfigError("at least one signal must be requested")
    names = [s.name for s in specs]
    dupes = {n for n in names if names.count(n) > 1}
    if dupes:
        raise ConfigError(f"duplicate signal names requested: {sorted(dupes)}")

    rarity_cache: dict[int, np.ndarray] = {}
    centroid_cache: np.ndarray | None = None

    def _rarity(k: int) -> np.ndarray:
        if k not in rarity_cache:
            rarity_cache[k] = rarity_knn(pool, KnnParams(k=k), threads=threads)
        return rarity_cache[k]

    def _centroid() -> np.ndarray:
        nonlocal centroid_cache
        if centroid_cache is None:
            centroid_cache = diversity_centroid(pool)
        return centroid_cache

    columns: dict[str, np.ndarray] = {}
    provenance: dict[str, str] = {}
    for spec in specs:
        if spec.kind == "ingested":
            values = np.empty(pool.n, dtype=np.float64)
            for i, rec in enumerate(pool.records):
                if spec.name not in rec.raw_signals:
                    raise ValidationError(
                        f"ingested signal {spec.name!r} missing on record {rec.id!r}"
                    )
                values[i] = rec.raw_signals[spec.name]
            columns[spec.name] = values
            provenance[spec.name] = "ingested"
        elif spec.kind == "rarity":
            columns[spec.name] = _rarity(spec.k)
            provenance[spec.name] = "computed"
        elif spec.kind == "div_cent":
            columns[spec.name] = _centroid()
            provenance[spec.name] = "computed"
        elif spec.kind == "div":
            params = DiversityParams(alpha_cent=spec.alpha_cent, alpha_knn=spec.alpha_knn)
            columns[spec.name] = diversity_combined(_centroid(), _rarity(spec.k), params)
            provenance[spec.name] = "computed"
        else:  # pragma: no cover - parse_signal_spec restricts kinds
            raise ConfigError(f"unknown signal kind {spec.kind!r}")

    table = SignalTable(columns=columns, provenance=provenance)
    table.validate()
    return table
