"""Empirical checks of the selector's statistical behavior.

Three harnesses:

* simulate_recovery: how much of the best achievable utility a top-K
  price selection captures when signals are noisy monotone functions of
  a hidden utility;
* sweep_corruption: how far prices move when one signal column is
  adversarially blended toward its clipping bound;
* sweep_hyperparams: how the selected set drifts across a liquidity /
  length-bias grid, measured by Jaccard overlap with the default
  configuration.

Trials use generators derived from (seed, trial index), so results are
independent of evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

from .errors import ConfigError, ValidationError
from .market import MarketConfig, MarketState, Weights, aggregate_shares, lmsr_prices, topic_cost, topic_prices
from .pool import Pool
from .selection import SelectionConfig, greedy_select
from .standardize import StandardizedTable, standardize_values

MONOTONE_FAMILIES = ("linear", "logistic")


@dataclass
class RecoverySimConfig:
    n: int
    m: int = 3
    sigma: float = 0.5
    k: int = 50
    monotone_family: str = "linear"
    trials: int = 50
    seed: int = 0
    beta: float = 2.0
    tau: float = 2.5

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if not 1 <= self.k <= self.n:
            raise ConfigError(f"need 1 <= k <= n, got k={self.k}, n={self.n}")
        if self.sigma < 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")
        if self.m < 1:
            raise ConfigError(f"m must be >= 1, got {self.m}")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.monotone_family not in MONOTONE_FAMILIES:
            raise ConfigError(
                f"monotone_family must be one of {MONOTONE_FAMILIES}, "
                f"got {self.monotone_family!r}"
            )


@dataclass
class RecoveryResult:
    sigma: float
    k: int
    mean_ratio: float
    empirical_epsilon: float
    ratios: list[float] = field(default_factory=list)


def _top_k(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest values; ties broken by ascending index."""
    order = np.lexsort((np.arange(values.size), -values))
    return order[:k]


def simulate_recovery(cfg: RecoverySimConfig) -> RecoveryResult:
    """Measure recovered utility against the best possible top-k subset.

    Per trial: hidden utilities are uniform on [0, 1]; each signal is a
    random increasing function of utility plus Gaussian noise of scale
    sigma. Signals are standardized (robust, clipped), averaged with
    equal weights, priced with a flat softmax market, and the k
    highest-priced examples are taken. The ratio compares their true
    utility sum to that of the true top-k.
    """
    ratios: list[float] = []
    for trial in range(cfg.trials):
        rng = np.random.default_rng([cfg.seed, trial])
        utilities = rng.uniform(size=cfg.n)
        q = np.zeros(cfg.n, dtype=np.float64)
        for _ in range(cfg.m):
            if cfg.monotone_family == "linear":
                slope = rng.uniform(0.5, 1.5)
                intercept = rng.uniform(-1.0, 1.0)
                signal = slope * utilities + intercept
            else:
                steepness = rng.uniform(2.0, 10.0)
                signal = 1.0 / (1.0 + np.exp(-steepness * (utilities - 0.5)))
            signal = signal + cfg.sigma * rng.normal(size=cfg.n)
            standardized, _ = standardize_values(signal, "robust", cfg.tau)
            q += standardized / cfg.m
        prices = lmsr_prices(q, cfg.beta)
        chosen = _top_k(prices, cfg.k)
        best = _top_k(utilities, cfg.k)
        ratios.append(float(utilities[chosen].sum() / utilities[best].sum()))
    mean_ratio = float(np.mean(ratios))
    return RecoveryResult(
        sigma=cfg.sigma,
        k=cfg.k,
        mean_ratio=mean_ratio,
        empirical_epsilon=1.0 - mean_ratio,
        ratios=ratios,
    )


def recovery_grid(
    cfg: RecoverySimConfig, sigmas: list[float], ks: list[int]
) -> list[RecoveryResult]:
    """simulate_recovery over the (sigma, k) grid, sharing the seed
    derivation so grid points reuse common random draws."""
    if not sigmas or not ks:
        raise ConfigError("sigma and k grids must be nonempty")
    return [
        simulate_recovery(replace(cfg, sigma=sigma, k=k))
        for sigma in sigmas
        for k in ks
    ]


@dataclass
class CorruptionSweepConfig:
    epsilons: list[float]
    target_signal: str
    tau: float = 2.5
    betas: list[float] = field(default_factory=lambda: [2.0])

    def __post_init__(self) -> None:
        if not self.epsilons:
            raise ConfigError("epsilon grid must be nonempty")
        for eps in self.epsilons:
            if not 0.0 <= eps <= 1.0:
                raise ConfigError(f"epsilon must be in [0, 1], got {eps}")
        if not self.betas:
            raise ConfigError("beta grid must be nonempty")
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")


def sweep_corruption(
    pool: Pool,
    table: StandardizedTable,
    weights: Weights,
    cfg: CorruptionSweepConfig,
) -> list[dict[str, float]]:
    """Blend the target column toward the worst in-bounds direction and
    reprice for every (epsilon, beta) pair.

    The corrupted column is (1 - eps) * z + eps * eta with
    eta = -tau * sign(z), the most adversarial choice allowed by the
    clipping bound. Each row records the L1 price movement, the max-norm
    share movement, and its algebraic bound 2 * tau * eps * w.
    """
    if cfg.target_signal not in table.columns:
        raise ValidationError(
            f"target signal {cfg.target_signal!r} not in table; "
            f"available: {sorted(table.columns)}"
        )
    if cfg.target_signal not in weights.w:
        raise ValidationError(f"target signal {cfg.target_signal!r} carries no weight")
    z = table.columns[cfg.target_signal]
    if np.max(np.abs(z)) > cfg.tau:
        raise ValidationError(
            f"column {cfg.target_signal!r} exceeds the clip radius {cfg.tau}"
        )
    w_star = weights.w[cfg.target_signal]
    eta = -cfg.tau * np.sign(z)

    rows: list[dict[str, float]] = []
    for beta in cfg.betas:
        market = MarketConfig(beta=beta, topic_budgets="proportional")
        base_q = aggregate_shares(table, weights)
        base_p = topic_prices(base_q, pool, market)
        for eps in cfg.epsilons:
            corrupted = dict(table.columns)
            corrupted[cfg.target_signal] = (1.0 - eps) * z + eps * eta
            new_table = StandardizedTable(columns=corrupted, tau=table.tau)
            new_q = aggregate_shares(new_table, weights)
            new_p = topic_prices(new_q, pool, market)
            rows.append(
                {
                    "epsilon": float(eps),
                    "beta": float(beta),
                    "price_l1_change": float(np.abs(new_p - base_p).sum()),
                    "share_linf_change": float(np.abs(new_q - base_q).max()),
                    "share_linf_bound": float(2.0 * cfg.tau * eps * w_star),
                }
            )
    return rows


def sweep_hyperparams(
    pool: Pool,
    table: StandardizedTable,
    weights: Weights,
    budget_tokens: int,
    beta_grid: list[float],
    gamma_grid: list[float],
    default_beta: float = 2.0,
    default_gamma: float = 1.6,
) -> list[dict[str, object]]:
    """Grid the liquidity and length-bias knobs and compare each selected
    set against the default configuration's set by Jaccard overlap."""
    if not beta_grid or not gamma_grid:
        raise ConfigError("beta and gamma grids must be nonempty")

    def _select(beta: float, gamma: float) -> tuple[set[str], MarketState, list[str]]:
        market = MarketConfig(beta=beta, topic_budgets="proportional")
        q = aggregate_shares(table, weights)
        p = topic_prices(q, pool, market)
        cost, per_topic = topic_cost(q, pool, market)
        state = MarketState(shares=q, prices=p, cost=cost, per_topic_cost=per_topic)
        report = greedy_select(
            state, pool, SelectionConfig(budget_tokens=budget_tokens, gamma=gamma)
        )
        return set(report.selected), state, report.selected

    default_set, _, _ = _select(default_beta, default_gamma)
    rows: list[dict[str, object]] = []
    for beta, gamma in product(beta_grid, gamma_grid):
        chosen, state, ordered = _select(beta, gamma)
        union = default_set | chosen
        jaccard = 1.0 if not union else len(default_set & chosen) / len(union)
        lengths = [pool.record(rid).token_length for rid in ordered]
        topic_mass = {
            topic: float(
                sum(state.prices[pool.index_of(rid)] for rid in ordered if pool.record(rid).topic == topic)
            )
            for topic in pool.topics
        }
        rows.append(
            {
                "beta": float(beta),
                "gamma": float(gamma),
                "jaccard_vs_default": float(jaccard),
                "n_selected": len(ordered),
                "tokens_used": int(sum(lengths)),
                "median_tokens": float(np.median(lengths)) if lengths else 0.0,
                "topic_price_mass": topic_mass,
            }
        )
    return rows
