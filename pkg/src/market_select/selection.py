"""Token-budgeted greedy selection driven by price-per-token scores.

Examples are ranked by rho = p / l^gamma and scanned in descending
order; each example whose token length still fits is admitted
(skip-and-continue, so a long misfit does not block later short items).
The balanced variant first guarantees per-label minimum counts, then
fills the rest of the budget by global score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError, ValidationError
from .market import MarketState
from .pool import Pool

DEFAULT_GAMMA = 1.6
MODES = ("greedy", "balanced")


@dataclass
class SelectionConfig:
    """Budget and ranking knobs.

    label_floor None means "auto" in balanced mode: half the per-label
    share of the count an unconstrained greedy run would pick.
    max_examples, when set, additionally stops the scan after that many
    admissions (used by the retention-rate alias).
    """

    budget_tokens: int
    gamma: float = DEFAULT_GAMMA
    mode: str = "greedy"
    label_floor: int | None = None
    max_examples: int | None = None

    def __post_init__(self) -> None:
        if self.budget_tokens < 1:
            raise ConfigError(f"budget_tokens must be >= 1, got {self.budget_tokens}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if self.mode == "price_per_token":  # accepted alias
            self.mode = "greedy"
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.label_floor is not None and self.label_floor < 0:
            raise ConfigError(f"label_floor must be >= 0, got {self.label_floor}")
        if self.max_examples is not None and self.max_examples < 0:
            raise ConfigError(f"max_examples must be >= 0, got {self.max_examples}")


@dataclass
class SelectionReport:
    """Outcome of one selection run.

    selected is ordered by descending score (ties by ascending id);
    per_topic maps topic -> {count, tokens, price_mass}; balance_score
    is None when the pool is unlabeled or nothing was selected.
    """

    selected: list[str]
    tokens_used: int
    per_topic: dict[str, dict[str, float]]
    per_label: dict[str, int] | None
    balance_score: float | None
    skipped_for_budget: int
    diagnostics: dict[str, object] = field(default_factory=dict)
    # per-index trace of the selection scan, for explain-style replay;
    # not part of the serialized report
    scan_events: list[dict[str, object]] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict[str, object]:
        """Serializable outcome; excludes diagnostics and the scan trace,
        so a balanced run with floor 0 serializes identically to greedy."""
        return {
            "selected": list(self.selected),
            "tokens_used": self.tokens_used,
            "per_topic": self.per_topic,
            "per_label": self.per_label,
            "balance_score": self.balance_score,
            "skipped_for_budget": self.skipped_for_budget,
        }


def score_rho(state: MarketState, pool: Pool, gamma: float) -> np.ndarray:
    """rho_i = p_i / l_i^gamma; gamma 0 ranks by raw price."""
    if gamma < 0:
        raise ConfigError(f"gamma must be >= 0, got {gamma}")
    lengths = pool.token_lengths.astype(np.float64)
    # l >= 1, so log is safe and l^gamma cannot underflow to zero
    return state.prices / np.exp(gamma * np.log(lengths))


def _scan_order(rho: np.ndarray, pool: Pool) -> list[int]:
    """Indices in descending rho, ties broken by ascending id."""
    return sorted(range(pool.n), key=lambda i: (-rho[i], pool.ids[i]))


def greedy_select(state: MarketState, pool: Pool, cfg: SelectionConfig) -> SelectionReport:
    """One pass over the descending-score order, admitting what fits."""
    rho = score_rho(state, pool, cfg.gamma)
    order = _scan_order(rho, pool)
    selected, tokens, skipped, events = _scan(
        order, pool.token_lengths, cfg.budget_tokens, cfg.max_examples, phase="scan"
    )
    return _build_report(selected, tokens, skipped, state, pool, rho, events)


def balanced_select(state: MarketState, pool: Pool, cfg: SelectionConfig) -> SelectionReport:
    """Per-label floors first, then global fill; never exceeds the budget.

    With floor 0 this degenerates to exactly greedy_select.
    """
    if not pool.has_labels:
        missing = next(r.id for r in pool.records if r.label is None)
        raise ValidationError(
            f"balanced selection requires labels on every record; {missing!r} has none"
        )
    rho = score_rho(state, pool, cfg.gamma)
    order = _scan_order(rho, pool)
    floor = cfg.label_floor
    labels = pool.labels()
    if floor is None:
        # auto: half the per-label share of an unconstrained greedy pick
        greedy_sel, _, _, _ = _scan(
            order, pool.token_lengths, cfg.budget_tokens, cfg.max_examples
        )
        floor = math.ceil(0.5 * len(greedy_sel) / len(labels))

    lengths = pool.token_lengths
    chosen: list[int] = []
    in_set = np.zeros(pool.n, dtype=bool)
    considered = np.zeros(pool.n, dtype=bool)
    tokens = 0
    events: list[dict[str, object]] = []

    # phase 1: top-scored examples per label until each floor is met
    for label in labels:
        taken = 0
        position = 0
        for i in order:
            if taken >= floor:
                break
            if cfg.max_examples is not None and len(chosen) >= cfg.max_examples:
                break
            if in_set[i] or pool.records[i].label != label:
                continue
            position += 1
            considered[i] = True
            if tokens + int(lengths[i]) <= cfg.budget_tokens:
                events.append(_event(i, "admit", position, tokens, f"floor:{label}", int(lengths[i])))
                in_set[i] = True
                chosen.append(i)
                tokens += int(lengths[i])
                taken += 1
            else:
                events.append(_event(i, "reject", position, tokens, f"floor:{label}"))

    # phase 2: fill remaining capacity by global score
    position = 0
    for i in order:
        if cfg.max_examples is not None and len(chosen) >= cfg.max_examples:
            break
        if in_set[i]:
            continue
        position += 1
        considered[i] = True
        if tokens + int(lengths[i]) <= cfg.budget_tokens:
            events.append(_event(i, "admit", position, tokens, "fill", int(lengths[i])))
            in_set[i] = True
            chosen.append(i)
            tokens += int(lengths[i])
        else:
            events.append(_event(i, "reject", position, tokens, "fill"))

    skipped = int(np.sum(considered & ~in_set))
    report = _build_report(chosen, tokens, skipped, state, pool, rho, events)
    report.diagnostics["resolved_label_floor"] = floor
    return report


def _event(
    index: int,
    action: str,
    position: int,
    tokens_before: int,
    phase: str,
    length: int | None = None,
) -> dict[str, object]:
    ev: dict[str, object] = {
        "index": index,
        "action": action,
        "position": position,
        "tokens_before": tokens_before,
        "phase": phase,
    }
    if length is not None:
        ev["tokens_after"] = tokens_before + length
    return ev


def _scan(
    order: list[int],
    lengths: np.ndarray,
    budget: int,
    max_examples: int | None,
    phase: str = "scan",
) -> tuple[list[int], int, int, list[dict[str, object]]]:
    selected: list[int] = []
    tokens = 0
    skipped = 0
    events: list[dict[str, object]] = []
    for position, i in enumerate(order, start=1):
        if max_examples is not None and len(selected) >= max_examples:
            break
        if tokens + int(lengths[i]) <= budget:
            events.append(_event(i, "admit", position, tokens, phase, int(lengths[i])))
            selected.append(i)
            tokens += int(lengths[i])
        else:
            events.append(_event(i, "reject", position, tokens, phase))
            skipped += 1
    return selected, tokens, skipped, events


def _build_report(
    selected_idx: list[int],
    tokens: int,
    skipped: int,
    state: MarketState,
    pool: Pool,
    rho: np.ndarray,
    events: list[dict[str, object]] | None = None,
) -> SelectionReport:
    ordered = sorted(selected_idx, key=lambda i: (-rho[i], pool.ids[i]))
    in_set = np.zeros(pool.n, dtype=bool)
    in_set[selected_idx] = True

    per_topic: dict[str, dict[str, float]] = {}
    for topic, idx in pool.topics.items():
        mask = in_set[idx]
        per_topic[topic] = {
            "count": int(mask.sum()),
            "tokens": int(pool.token_lengths[idx][mask].sum()),
            "price_mass": float(state.prices[idx][mask].sum()),
        }

    per_label: dict[str, int] | None = None
    score: float | None = None
    if pool.has_labels:
        per_label = {label: 0 for label in pool.labels()}
        for i in selected_idx:
            per_label[pool.records[i].label] += 1
        if selected_idx:
            score = _balance_from_counts(per_label, len(selected_idx))

    return SelectionReport(
        selected=[pool.ids[i] for i in ordered],
        tokens_used=tokens,
        per_topic=per_topic,
        per_label=per_label,
        balance_score=score,
        skipped_for_budget=skipped,
        scan_events=events or [],
    )


def _balance_from_counts(counts: dict[str, int], total: int) -> float:
    n_labels = len(counts)
    return 0.5 * sum(abs(c / total - 1.0 / n_labels) for c in counts.values())


def balance_score(report: SelectionReport, pool: Pool) -> float:
    """Half the L1 distance between selected label frequencies and uniform.

    0 means perfectly balanced; 1 - 1/L means everything came from one of
    L labels.
    """
    labels = pool.labels()
    if not report.selected:
        raise ValidationError("balance score is undefined for an empty selection")
    counts = {label: 0 for label in labels}
    for rid in report.selected:
        counts[pool.record(rid).label] += 1
    return _balance_from_counts(counts, len(report.selected))


@dataclass
class CoverageMetrics:
    """Geometric coverage of the selection in embedding space."""

    variance_ratio: float
    covering_radius: float


def coverage_report(selected_ids: list[str], pool: Pool) -> CoverageMetrics:
    """Trace-of-covariance ratio selected/pool, and the covering radius
    (largest distance from any pool point to its nearest selected point)."""
    if not selected_ids:
        raise ValidationError("coverage is undefined for an empty selection")
    emb = pool.embedding_matrix()
    sel_idx = np.array([pool.index_of(rid) for rid in selected_ids], dtype=np.intp)

    def _trace_var(points: np.ndarray) -> float:
        return float(points.var(axis=0).sum())  # population variance per dim

    pool_var = _trace_var(emb)
    sel_var = _trace_var(emb[sel_idx])
    ratio = 1.0 if pool_var == 0.0 else sel_var / pool_var

    sel_points = emb[sel_idx]
    radius = 0.0
    chunk = 1024
    for start in range(0, pool.n, chunk):
        dists = cdist(emb[start : start + chunk], sel_points)
        radius = max(radius, float(dists.min(axis=1).max()))
    return CoverageMetrics(variance_ratio=ratio, covering_radius=radius)
