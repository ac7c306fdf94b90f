"""Cost-function market pricing over the example pool.

Shares are weighted sums of standardized signals. The flat market prices
them with a log-sum-exp cost and its softmax gradient; the
topic-separable market runs one softmax per topic and scales each
topic's price mass to its budget alpha_t, so the global price vector
stays a probability distribution while examples compete only within
their own topic.

All softmax / log-sum-exp paths subtract the running maximum first, so
liquidities as extreme as 1e-3 or 1e6 stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConfigError, ValidationError
from .pool import Pool
from .standardize import StandardizedTable

ALPHA_SUM_TOL = 1e-9
DEFAULT_BETA = 2.0


@dataclass
class Weights:
    """Nonnegative per-signal weights; at least one must be positive."""

    w: dict[str, float]

    def __post_init__(self) -> None:
        if not self.w:
            raise ValidationError("weights must not be empty")
        for name, value in self.w.items():
            if not np.isfinite(value) or value < 0:
                raise ValidationError(
                    f"weight for {name!r} must be finite and >= 0, got {value}"
                )
        if not any(v > 0 for v in self.w.values()):
            raise ValidationError("at least one weight must be positive")

    @property
    def names(self) -> list[str]:
        return list(self.w)

    @staticmethod
    def equal(names: list[str]) -> "Weights":
        if not names:
            raise ValidationError("cannot build equal weights over zero signals")
        return Weights({name: 1.0 / len(names) for name in names})

    def normalized(self) -> "Weights":
        total = sum(self.w.values())
        return Weights({name: v / total for name, v in self.w.items()})


@dataclass
class MarketConfig:
    """Liquidity and topic-budget settings.

    beta is either one global liquidity or a per-topic map; topic_budgets
    is a map summing to 1 or the directive "proportional" (budget
    proportional to topic size, preserving pool composition).
    """

    beta: float | Mapping[str, float] = DEFAULT_BETA
    topic_budgets: str | Mapping[str, float] = "proportional"

    def __post_init__(self) -> None:
        if isinstance(self.beta, (int, float)):
            if not self.beta > 0:
                raise ConfigError(f"beta must be positive, got {self.beta}")
        else:
            for topic, b in self.beta.items():
                if not b > 0:
                    raise ConfigError(f"beta for topic {topic!r} must be positive, got {b}")
        if isinstance(self.topic_budgets, str):
            if self.topic_budgets != "proportional":
                raise ConfigError(
                    f"topic_budgets must be a map or 'proportional', got {self.topic_budgets!r}"
                )
        else:
            for topic, a in self.topic_budgets.items():
                if a < 0:
                    raise ConfigError(f"alpha for topic {topic!r} must be >= 0, got {a}")

    def beta_for(self, topic: str) -> float:
        if isinstance(self.beta, (int, float)):
            return float(self.beta)
        if topic not in self.beta:
            raise ConfigError(f"no liquidity configured for topic {topic!r}")
        return float(self.beta[topic])

    def alphas(self, pool: Pool) -> dict[str, float]:
        """Resolved topic budgets covering every pool topic, summing to 1."""
        if self.topic_budgets == "proportional":
            return {t: idx.size / pool.n for t, idx in pool.topics.items()}
        alphas = {}
        for topic in pool.topics:
            if topic not in self.topic_budgets:
                raise ConfigError(f"no topic budget configured for topic {topic!r}")
            alphas[topic] = float(self.topic_budgets[topic])
        total = sum(alphas.values())
        if abs(total - 1.0) > ALPHA_SUM_TOL:
            raise ConfigError(
                f"topic budgets over pool topics must sum to 1, got {total!r}"
            )
        return alphas


@dataclass
class MarketState:
    """Priced market: shares q, prices p (a distribution), and total cost."""

    shares: np.ndarray
    prices: np.ndarray
    cost: float
    per_topic_cost: dict[str, float] = field(default_factory=dict)


def aggregate_shares(table: StandardizedTable, weights: Weights) -> np.ndarray:
    """q_i = sum_m w_m * standardized signal m at i.

    Every weighted name must exist as a table column; columns without a
    weight are simply not traded.
    """
    q = np.zeros(table.n, dtype=np.float64)
    for name, w in weights.w.items():
        if name not in table.columns:
            raise ValidationError(
                f"weight refers to unknown signal column {name!r}; "
                f"available: {sorted(table.columns)}"
            )
        q += w * table.columns[name]
    return q


def _stable_softmax(scaled: np.ndarray) -> np.ndarray:
    e = np.exp(scaled - scaled.max())
    return e / e.sum()


def _stable_lse(scaled: np.ndarray) -> float:
    m = scaled.max()
    return float(m + np.log(np.exp(scaled - m).sum()))


def lmsr_cost(q: np.ndarray, beta: float) -> float:
    """beta * log(sum_j exp(q_j / beta)), computed via max subtraction."""
    q = _check_shares(q)
    if not beta > 0:
        raise ConfigError(f"beta must be positive, got {beta}")
    return beta * _stable_lse(q / beta)


def lmsr_prices(q: np.ndarray, beta: float) -> np.ndarray:
    """softmax(q / beta): the gradient of lmsr_cost; sums to 1."""
    q = _check_shares(q)
    if not beta > 0:
        raise ConfigError(f"beta must be positive, got {beta}")
    return _stable_softmax(q / beta)


def topic_prices(q: np.ndarray, pool: Pool, cfg: MarketConfig) -> np.ndarray:
    """Per-topic softmax scaled by the topic budget.

    Each topic's price mass equals its alpha_t exactly; a zero-budget
    topic gets exactly zero price everywhere, so its examples can never
    be selected.
    """
    q = _check_shares(q, expected=pool.n)
    alphas = cfg.alphas(pool)
    p = np.zeros(pool.n, dtype=np.float64)
    for topic, idx in pool.topics.items():
        alpha = alphas[topic]
        if alpha == 0.0:
            continue
        p[idx] = alpha * _stable_softmax(q[idx] / cfg.beta_for(topic))
    return p


def topic_cost(q: np.ndarray, pool: Pool, cfg: MarketConfig) -> tuple[float, dict[str, float]]:
    """Total and per-topic cost: sum_t alpha_t * beta_t * LSE(q_t / beta_t)."""
    q = _check_shares(q, expected=pool.n)
    alphas = cfg.alphas(pool)
    per_topic: dict[str, float] = {}
    for topic, idx in pool.topics.items():
        alpha = alphas[topic]
        if alpha == 0.0:
            per_topic[topic] = 0.0
            continue
        beta = cfg.beta_for(topic)
        per_topic[topic] = alpha * beta * _stable_lse(q[idx] / beta)
    return sum(per_topic.values()), per_topic


def price_pool(
    pool: Pool,
    table: StandardizedTable,
    weights: Weights,
    cfg: MarketConfig | None = None,
) -> MarketState:
    """Aggregate shares, then price the topic-separable market."""
    cfg = cfg or MarketConfig()
    if table.n != pool.n:
        raise ValidationError(
            f"table has {table.n} rows but pool has {pool.n} records"
        )
    q = aggregate_shares(table, weights)
    p = topic_prices(q, pool, cfg)
    cost, per_topic = topic_cost(q, pool, cfg)
    return MarketState(shares=q, prices=p, cost=cost, per_topic_cost=per_topic)


def _check_shares(q: np.ndarray, expected: int | None = None) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1 or q.size == 0:
        raise ValidationError("share vector must be 1-D and non-empty")
    if expected is not None and q.size != expected:
        raise ValidationError(f"share vector has length {q.size}, expected {expected}")
    if not np.all(np.isfinite(q)):
        raise ValidationError("share vector contains non-finite values")
    return q
