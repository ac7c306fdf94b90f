"""Within-topic normalization of raw signals.

Three methods: plain z-score (mean / population std), robust
(median / interquartile range), and rank_then_robust (rank-to-[0,1]
first, then robust). Every standardized value is clipped to [-tau, tau]
so that no single signal can dominate share aggregation.

Degenerate scales fall back along the chain IQR -> sigma -> all-zeros,
skipping whichever statistic was the degenerate primary; the fallback is
recorded in the per-topic stats. Constant columns therefore come out as
zeros (neutral in aggregation) rather than blowing up.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError, ValidationError
from .pool import Pool
from .signals import SignalTable

METHODS = ("zscore", "robust", "rank_then_robust")
DEFAULT_TAU = 2.5


@dataclass
class StandardizeConfig:
    method: str = "robust"
    tau: float = DEFAULT_TAU

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(
                f"unknown standardization method {self.method!r}; choose from {METHODS}"
            )
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")


@dataclass
class TopicStats:
    """Location/scale actually applied to one (signal, topic) group."""

    location: float
    scale: float
    scale_source: str  # "sigma" | "iqr" | "fallback_sigma" | "fallback_iqr" | "zeros" | "singleton"


@dataclass
class StandardizedTable:
    """Standardized signal columns plus the per-topic stats that produced them."""

    columns: dict[str, np.ndarray]
    stats: dict[str, dict[str, TopicStats]] = field(default_factory=dict)
    tau: float = DEFAULT_TAU

    @property
    def n(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0


def _iqr(values: np.ndarray) -> float:
    # linear-interpolation quantiles (numpy default), q75 - q25
    q75, q25 = np.quantile(values, [0.75, 0.25])
    return float(q75 - q25)


def standardize_values(
    values: np.ndarray, method: str, tau: float
) -> tuple[np.ndarray, TopicStats]:
    """Standardize one within-topic group and clip to [-tau, tau]."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if n == 1:
        return np.zeros(1), TopicStats(float(values[0]), 0.0, "singleton")

    if method == "rank_then_robust":
        values = rank_normalize_values(values)
        method = "robust"

    if method == "zscore":
        location = float(values.mean())
        candidates = [("sigma", float(values.std())), ("iqr", _iqr(values))]
    elif method == "robust":
        location = float(np.median(values))
        candidates = [("iqr", _iqr(values)), ("sigma", float(values.std()))]
    else:
        raise ConfigError(f"unknown standardization method {method!r}")

    for rank, (source, scale) in enumerate(candidates):
        if scale > 0:
            z = np.clip((values - location) / scale, -tau, tau)
            return z, TopicStats(location, scale, source if rank == 0 else f"fallback_{source}")
    return np.zeros(n), TopicStats(location, 0.0, "zeros")


def rank_normalize_values(values: np.ndarray) -> np.ndarray:
    """Map one group to [0, 1] by rank; ties share their average rank."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if n == 1:
        return np.full(1, 0.5)
    ranks = rankdata(values, method="average")
    return (ranks - 1.0) / (n - 1.0)


def rank_normalize(raw: np.ndarray, pool: Pool) -> np.ndarray:
    """Within-topic rank-to-[0,1] map; single-element topics map to 0.5."""
    raw = _check_length(raw, pool)
    out = np.empty(pool.n, dtype=np.float64)
    for idx in pool.topics.values():
        out[idx] = rank_normalize_values(raw[idx])
    return out


def standardize_column(
    raw: np.ndarray, pool: Pool, cfg: StandardizeConfig | None = None
) -> tuple[np.ndarray, dict[str, TopicStats]]:
    """Apply cfg.method per topic and clip; returns the column and the
    per-topic stats (including any degenerate-scale fallbacks)."""
    cfg = cfg or StandardizeConfig()
    raw = _check_length(raw, pool)
    out = np.empty(pool.n, dtype=np.float64)
    stats: dict[str, TopicStats] = {}
    for topic, idx in pool.topics.items():
        out[idx], stats[topic] = standardize_values(raw[idx], cfg.method, cfg.tau)
    return out, stats


def standardize_table(
    table: SignalTable, pool: Pool, cfg: StandardizeConfig | None = None
) -> StandardizedTable:
    """Standardize every column of a signal table."""
    cfg = cfg or StandardizeConfig()
    columns: dict[str, np.ndarray] = {}
    stats: dict[str, dict[str, TopicStats]] = {}
    for name, raw in table.columns.items():
        columns[name], stats[name] = standardize_column(raw, pool, cfg)
    return StandardizedTable(columns=columns, stats=stats, tau=cfg.tau)


def _check_length(raw: np.ndarray, pool: Pool) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (pool.n,):
        raise ValidationError(
            f"signal column has shape {raw.shape}, expected ({pool.n},)"
        )
    return raw
