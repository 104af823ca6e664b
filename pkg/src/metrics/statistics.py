# src/metrics/statistics.py

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy.stats import gmean

from src.core.errors import StatisticsError
from src.core.models import RunRecord, ScoreCard, ThresholdManifest
from src.core.registry import Registry
from src.metrics.calibration import scale_manifest
from src.metrics.scoring import (
    DEFAULT_LAMBDA,
    ItemScore,
    attach_discrepancies,
    geomean,
    group_by_family,
    score_items,
)

logger = structlog.get_logger()

DEFAULT_SCALES = (0.25, 0.5, 1.0, 2.0, 5.0)
DEFAULT_IMPUTED = 0.01

# resample rows handed to one worker at a time
_CHUNK_ROWS = 1024


@dataclass(frozen=True)
class BootstrapConfig:
    replicates: int = 10_000
    seed: int = 42
    level: float = 0.95
    small_n_cutoff: int = 3
    workers: int = 1

    def __post_init__(self):
        if self.replicates < 1:
            raise StatisticsError('invalid-config', f"replicates={self.replicates}")
        if not 0.0 < self.level < 1.0:
            raise StatisticsError('invalid-config', f"level={self.level}")
        if self.workers < 1:
            raise StatisticsError('invalid-config', f"workers={self.workers}")


@dataclass(frozen=True)
class ConfidenceInterval:
    lo: float
    hi: float
    method: str
    n: int
    point: float


class GapPolicy(str, Enum):
    ATTEMPTED_ONLY = 'attempted-only'
    DEFAULT = 'default'
    PUNITIVE = 'punitive'


def _nearest_rank(sorted_values: np.ndarray, q: float) -> float:
    """ceil(q*B)-th order statistic"""
    rank = max(1, math.ceil(q * sorted_values.size))
    return float(sorted_values[rank - 1])


def bootstrap_ci(speedups: Sequence[float], cfg: BootstrapConfig = BootstrapConfig()) -> ConfidenceInterval:
    values = np.asarray(list(speedups), dtype=np.float64)
    if values.size == 0:
        raise StatisticsError('empty-input', 'no speedups to resample')
    if np.any(values <= 0) or not np.all(np.isfinite(values)):
        raise StatisticsError('nonpositive-speedup', 'speedups must be finite and positive')

    n = values.size
    point = float(gmean(values))
    if n < cfg.small_n_cutoff:
        return ConfidenceInterval(float(values.min()), float(values.max()), 'range', n, point)
    if values.min() == values.max():
        c = float(values[0])
        return ConfidenceInterval(c, c, 'percentile', n, c)

    # one MT19937 stream in replicate order; workers only consume slices of it
    rng = np.random.Generator(np.random.MT19937(cfg.seed))
    indexes = rng.integers(0, n, size=(cfg.replicates, n))

    def _chunk(bounds: Tuple[int, int]) -> np.ndarray:
        lo, hi = bounds
        return gmean(values[indexes[lo:hi]], axis=1)

    bounds = [(i, min(i + _CHUNK_ROWS, cfg.replicates)) for i in range(0, cfg.replicates, _CHUNK_ROWS)]
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as executor:
            parts = list(executor.map(_chunk, bounds))
    else:
        parts = [_chunk(b) for b in bounds]
    stats = np.sort(np.concatenate(parts))

    alpha = (1.0 - cfg.level) / 2.0
    return ConfidenceInterval(_nearest_rank(stats, alpha), _nearest_rank(stats, 1.0 - alpha), 'percentile', n, point)


def attach_family_cis(card: ScoreCard, scores: Sequence[ItemScore], cfg: BootstrapConfig) -> ScoreCard:
    """record per-family CIs on S_f into an existing scorecard"""
    cis = {}
    for family_id, family_scores in sorted(group_by_family(scores).items()):
        valid = [s.s(DEFAULT_LAMBDA) for s in sorted(family_scores, key=lambda s: s.item_id) if s.valid]
        if valid:
            ci = bootstrap_ci(valid, cfg)
            cis[family_id] = (ci.lo, ci.hi)
    return replace(card, ci_by_family=cis)


@dataclass(frozen=True)
class SweepRow:
    scale: float
    correct_by_level: Dict[int, int]
    total_by_level: Dict[int, int]
    geomean_by_level: Dict[int, Optional[float]]
    correct: int
    total: int
    geomean: Optional[float]


def sensitivity_sweep(records: Sequence[RunRecord], registry: Registry, manifest: ThresholdManifest,
                      scales: Sequence[float] = DEFAULT_SCALES) -> List[SweepRow]:
    """rescore under each threshold scale; correct = valid at that scale"""
    prepared = [attach_discrepancies(r, registry, manifest) for r in records]
    for record in prepared:
        if record.ok and any(s.discrepancy is None for s in record.scenarios):
            raise StatisticsError('missing-discrepancy', f"record for {record.item_id} lacks discrepancies")

    rows = []
    for scale in scales:
        scaled = manifest if scale == 1.0 else scale_manifest(manifest, scale)
        scores = score_items(prepared, registry, scaled)
        levels = sorted({s.level for s in scores})
        correct_by_level, total_by_level, geomean_by_level = {}, {}, {}
        for level in levels:
            group = sorted((s for s in scores if s.level == level), key=lambda s: s.item_id)
            valid_s = [s.s(DEFAULT_LAMBDA) for s in group if s.valid]
            correct_by_level[level] = len(valid_s)
            total_by_level[level] = len(group)
            geomean_by_level[level] = geomean(valid_s)
        valid_all = [s.s(DEFAULT_LAMBDA) for s in sorted(scores, key=lambda s: s.item_id) if s.valid]
        rows.append(SweepRow(
            scale=float(scale),
            correct_by_level=correct_by_level,
            total_by_level=total_by_level,
            geomean_by_level=geomean_by_level,
            correct=len(valid_all),
            total=len(scores),
            geomean=geomean(valid_all),
        ))
        logger.debug("rescored at scale", scale=scale, correct=len(valid_all))
    return rows


@dataclass(frozen=True)
class GapResult:
    policy: GapPolicy
    correct: int
    denominator: int
    geomean: Optional[float]

    @property
    def coverage(self) -> str:
        return f"{self.correct}/{self.denominator}"


def harness_gap(scores: Sequence[ItemScore], policy: str = GapPolicy.DEFAULT,
                imputed: float = DEFAULT_IMPUTED) -> GapResult:
    """
    attempted-only: blocked targets leave both denominators.
    default: blocked targets count against coverage only.
    punitive: every non-correct target enters the geomean at `imputed`.
    """
    try:
        policy = GapPolicy(policy)
    except ValueError:
        raise StatisticsError('unknown-policy', f"policy {policy!r}")
    if imputed <= 0:
        raise StatisticsError('nonpositive-speedup', f"imputed={imputed}")

    ordered = sorted(scores, key=lambda s: s.item_id)
    correct_s = [s.s(DEFAULT_LAMBDA) for s in ordered if s.valid]
    if policy is GapPolicy.ATTEMPTED_ONLY:
        denominator = sum(1 for s in ordered if s.attempted)
        return GapResult(policy, len(correct_s), denominator, geomean(correct_s))
    if policy is GapPolicy.DEFAULT:
        return GapResult(policy, len(correct_s), len(ordered), geomean(correct_s))
    padded = [s.s(DEFAULT_LAMBDA) if s.valid else imputed for s in ordered]
    return GapResult(policy, len(correct_s), len(ordered), geomean(padded))
