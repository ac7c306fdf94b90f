"""Online tuning of signal weights against development-set feedback.

Each signal earns a reward in [0, 1] from how well its standardized
values rank-correlate with observed per-example utilities; weights then
take a multiplicative (exponentiated-gradient) step and renormalize onto
the simplex. Repeated rounds concentrate mass on the best-aligned
signals.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from scipy.stats import spearmanr

from .errors import ConfigError, ValidationError
from .market import Weights
from .pool import Pool
from .standardize import StandardizedTable

MIN_COVERED_IDS = 3
REWARD_KINDS = ("rank_correlation", "custom")


@dataclass
class TuneConfig:
    eta: float = 0.1
    rounds: int = 50
    reward_kind: str = "rank_correlation"

    def __post_init__(self) -> None:
        if not self.eta > 0:
            raise ConfigError(f"eta must be positive, got {self.eta}")
        if self.rounds < 0:
            raise ConfigError(f"rounds must be >= 0, got {self.rounds}")
        if self.reward_kind not in REWARD_KINDS:
            raise ConfigError(
                f"reward_kind must be one of {REWARD_KINDS}, got {self.reward_kind!r}"
            )


@dataclass
class DevFeedback:
    """Observed utility proxy per example id (e.g. negative dev loss)."""

    utilities: dict[str, float]

    def __post_init__(self) -> None:
        for rid, value in self.utilities.items():
            if not math.isfinite(value):
                raise ValidationError(f"utility for {rid!r} is not finite")


def load_dev_feedback(path: str | Path) -> DevFeedback:
    """Read JSONL of {"id": ..., "utility": ...} rows."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"dev feedback file not found: {path}")
    utilities: dict[str, float] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict) or "id" not in obj or "utility" not in obj:
                raise ConfigError(f"line {lineno}: expected keys 'id' and 'utility'")
            utilities[str(obj["id"])] = float(obj["utility"])
    return DevFeedback(utilities=utilities)


def eg_update(weights: Weights, rewards: Mapping[str, float], eta: float) -> Weights:
    """One multiplicative step w'_m = w_m * exp(eta * r_m) / Z; sums to 1.

    Adding a constant to every reward leaves the result unchanged (the
    common factor cancels in the normalizer).
    """
    if not eta > 0:
        raise ConfigError(f"eta must be positive, got {eta}")
    missing = [name for name in weights.names if name not in rewards]
    if missing:
        raise ValidationError(f"rewards missing for signals: {missing}")
    # subtract the max reward before exponentiating: same result, no overflow
    top = max(rewards[name] for name in weights.names)
    raw = {
        name: weights.w[name] * math.exp(eta * (rewards[name] - top))
        for name in weights.names
    }
    z = sum(raw.values())
    if z <= 0:
        raise ValidationError("all weights vanished in the update")
    return Weights({name: v / z for name, v in raw.items()})


def signal_reward(
    table: StandardizedTable, feedback: DevFeedback, pool: Pool
) -> dict[str, float]:
    """Per-signal reward in [0, 1]: rescaled Spearman correlation between
    the standardized column and dev utility over the covered ids.

    A degenerate (constant) column gets the neutral reward 0.5.
    """
    covered = sorted(set(feedback.utilities) & set(pool.ids))
    if len(covered) < MIN_COVERED_IDS:
        raise ValidationError(
            f"need at least {MIN_COVERED_IDS} covered ids, got {len(covered)}"
        )
    idx = np.array([pool.index_of(rid) for rid in covered], dtype=np.intp)
    utils = np.array([feedback.utilities[rid] for rid in covered], dtype=np.float64)
    rewards: dict[str, float] = {}
    for name, col in table.columns.items():
        with warnings.catch_warnings():
            # a constant column has no defined correlation; treat it as
            # uninformative rather than let scipy warn
            warnings.simplefilter("ignore")
            corr = spearmanr(col[idx], utils).statistic
        if not np.isfinite(corr):
            corr = 0.0
        rewards[name] = (float(corr) + 1.0) / 2.0
    return rewards


@dataclass
class TuneResult:
    weights: Weights
    trajectory: list[dict[str, object]] = field(default_factory=list)


def tune_weights(
    table: StandardizedTable,
    feedback: DevFeedback,
    pool: Pool,
    cfg: TuneConfig | None = None,
    reward_fn: Callable[[StandardizedTable, DevFeedback, Pool], Mapping[str, float]] | None = None,
) -> TuneResult:
    """Run cfg.rounds reward / update iterations from equal weights.

    Returns the final weights and the per-round trajectory (weights and
    rewards after each update). rounds=0 returns the equal start.
    """
    cfg = cfg or TuneConfig()
    if cfg.reward_kind == "custom":
        if reward_fn is None:
            raise ConfigError("reward_kind 'custom' requires a reward_fn")
    else:
        reward_fn = signal_reward
    weights = Weights.equal(list(table.columns))
    trajectory: list[dict[str, object]] = []
    for round_idx in range(cfg.rounds):
        rewards = dict(reward_fn(table, feedback, pool))
        weights = eg_update(weights, rewards, cfg.eta)
        trajectory.append(
            {
                "round": round_idx + 1,
                "weights": dict(weights.w),
                "rewards": rewards,
            }
        )
    return TuneResult(weights=weights, trajectory=trajectory)
