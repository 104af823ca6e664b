# src/metrics/scoring.py
"""
Calibrated correctness, validity, coverage, blended speedups and the macro
aggregations that make up a ScoreCard.

Aggregates walk items in sorted item_id order (and families in sorted
family_id order) so results are bit-identical regardless of input order.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy.stats import gmean

from src.core.errors import ManifestError, ScoringError
from src.core.models import (
    FamilyBreakdown,
    RunRecord,
    RunStatus,
    ScoreCard,
    ThresholdManifest,
)
from src.core.registry import Registry
from src.metrics.discrepancy import DEFAULT_TOPK, dispatch_discrepancy

logger = structlog.get_logger()

DEFAULT_LAMBDAS = (0.0, 0.5, 1.0)
DEFAULT_LAMBDA = 0.5


@dataclass(frozen=True)
class ItemScore:
    item_id: str
    c_i: float
    valid: bool
    s_thr: Optional[float] = None
    s_lat: Optional[float] = None
    s_blend: Mapping[float, Optional[float]] = field(default_factory=dict)
    family_id: str = ''
    level: int = 1
    status: RunStatus = RunStatus.OK

    def __post_init__(self):
        object.__setattr__(self, 'status', RunStatus(self.status))
        if self.valid != (self.s_thr is not None):
            raise ScoringError('invalid-item-score', f"speedups must be present iff {self.item_id} is valid")

    @property
    def attempted(self) -> bool:
        return self.status is not RunStatus.BLOCKED

    def s(self, lam: float = DEFAULT_LAMBDA) -> Optional[float]:
        lam = float(lam)
        if lam not in self.s_blend and self.valid:
            return blend(self.s_thr, self.s_lat, lam)
        return self.s_blend.get(lam)


def calibrated_correctness(d: float, g: float, f: float) -> float:
    if not g < f:
        raise ManifestError('band-violation', f"g={g} must be below f={f}")
    if d <= g:
        return 1.0
    if d >= f:
        return 0.0
    return (f - d) / (f - g)


def attach_discrepancies(record: RunRecord, registry: Registry, manifest: ThresholdManifest,
                         k: int = DEFAULT_TOPK) -> RunRecord:
    """compute and cache d for every scenario that lacks one"""
    if not record.ok or all(s.discrepancy is not None for s in record.scenarios):
        return record
    item = registry.item(record.item_id)
    family = registry.families[item.family_id]
    tol = manifest.tolerance(item.dtype)
    scenarios = tuple(
        s if s.discrepancy is not None else s.with_discrepancy(dispatch_discrepancy(family, s, tol, k=k).d)
        for s in record.scenarios
    )
    return replace(record, scenarios=scenarios)


def item_correctness(record: RunRecord, manifest: ThresholdManifest) -> float:
    """C_i: mean of per-scenario calibrated correctness; 0 for any failed run"""
    if not record.ok:
        return 0.0
    entry = manifest.entry(record.item_id)
    values = []
    for scenario in sorted(record.scenarios, key=lambda s: s.scenario_id):
        if scenario.discrepancy is None:
            raise ScoringError('missing-discrepancy',
                               f"scenario {scenario.scenario_id} of {record.item_id} has no discrepancy")
        values.append(calibrated_correctness(scenario.discrepancy, entry.g, entry.f))
    return float(np.mean(values))


def _mean(values: Sequence[float]) -> float:
    return float(np.mean(np.asarray(values, dtype=np.float64)))


def family_and_macro_correctness(items: Mapping[str, Sequence[ItemScore]]) -> Tuple[Dict[str, float], float]:
    c_f = {}
    for family_id in sorted(items):
        scores = sorted(items[family_id], key=lambda s: s.item_id)
        if not scores:
            raise ScoringError('empty-family', f"family {family_id} has no items")
        c_f[family_id] = _mean([s.c_i for s in scores])
    if not c_f:
        raise ScoringError('empty-family', 'no families to aggregate')
    return c_f, _mean([c_f[f] for f in sorted(c_f)])


def validity_and_coverage(items: Mapping[str, Sequence[ItemScore]],
                          manifest: ThresholdManifest) -> Tuple[float, float, Dict[str, bool]]:
    """returns (Coverage, Coverage_macro, valid flag per item)"""
    flags = {}
    per_family = []
    for family_id in sorted(items):
        scores = sorted(items[family_id], key=lambda s: s.item_id)
        if not scores:
            raise ScoringError('empty-family', f"family {family_id} has no items")
        family_flags = []
        for score in scores:
            valid = score.status is RunStatus.OK and score.c_i >= manifest.entry(score.item_id).tau
            flags[score.item_id] = valid
            family_flags.append(1.0 if valid else 0.0)
        per_family.append(_mean(family_flags))
    if not flags:
        return 0.0, 0.0, flags
    coverage = _mean([1.0 if flags[i] else 0.0 for i in sorted(flags)])
    return coverage, _mean(per_family), flags


def _item_axes(record: RunRecord) -> Tuple[float, float]:
    scenarios = sorted(record.scenarios, key=lambda s: s.scenario_id)
    measurements = np.array([
        (s.ref_throughput, s.cand_throughput, s.ref_latency_s, s.cand_latency_s) for s in scenarios
    ], dtype=np.float64)
    if np.any(measurements <= 0) or not np.all(np.isfinite(measurements)):
        raise ScoringError('zero-or-negative-measurement', f"item {record.item_id} has a nonpositive measurement")
    ref_thr, cand_thr, ref_lat, cand_lat = measurements.mean(axis=0)
    return float(cand_thr / ref_thr), float(ref_lat / cand_lat)


def blend(s_thr: float, s_lat: float, lam: float) -> float:
    if not 0.0 <= lam <= 1.0:
        raise ScoringError('invalid-lambda', f"lambda={lam}")
    if lam == 1.0:
        return s_thr
    if lam == 0.0:
        return s_lat
    return float(gmean([s_thr, s_lat], weights=[lam, 1.0 - lam]))


def blended_speedup(record: RunRecord, lam: float = DEFAULT_LAMBDA) -> Tuple[float, float, float]:
    """(s_thr, s_lat, s) for a valid item; scenario-mean measurements feed both axes"""
    if not record.ok:
        raise ScoringError('invalid-item', f"item {record.item_id} is not valid and earns no speedup")
    s_thr, s_lat = _item_axes(record)
    return s_thr, s_lat, blend(s_thr, s_lat, lam)


def geomean(values: Iterable[float]) -> Optional[float]:
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        return None
    return float(gmean(arr))


def macro_speedup(items: Mapping[str, Sequence[ItemScore]],
                  lam: float = DEFAULT_LAMBDA) -> Tuple[Dict[str, float], Optional[float], frozenset]:
    """S_f over each family's valid items, then S_macro over families with any valid item"""
    s_f = {}
    for family_id in sorted(items):
        valid = [s.s(lam) for s in sorted(items[family_id], key=lambda s: s.item_id) if s.valid]
        if valid:
            s_f[family_id] = geomean(valid)
    s_macro = geomean(s_f[f] for f in sorted(s_f))
    return s_f, s_macro, frozenset(s_f)


def default_score(s_macro: Optional[float], c_macro: float, coverage_macro: float) -> float:
    if s_macro is None:
        return 0.0
    return s_macro * c_macro * coverage_macro


def fast_at(speedups: Iterable[float], threshold: float) -> int:
    return sum(1 for s in speedups if s > threshold)


def score_items(records: Iterable[RunRecord], registry: Registry, manifest: ThresholdManifest,
                lambdas: Sequence[float] = DEFAULT_LAMBDAS, k: int = DEFAULT_TOPK) -> List[ItemScore]:
    """
    one ItemScore per registered item; items without a record count as
    blocked. Records must belong to a single agent. The default lambda is
    always blended alongside the requested ones.
    """
    blend_lambdas = sorted({*map(float, lambdas), DEFAULT_LAMBDA})
    by_item = {}
    agents = set()
    for record in records:
        agents.add(record.agent_id)
        if record.item_id in by_item:
            raise ScoringError('duplicate-record', f"item {record.item_id} has more than one record")
        by_item[record.item_id] = record
    if len(agents) > 1:
        raise ScoringError('mixed-agent-records', f"records span agents {sorted(agents)}")

    scores = []
    for item_id in registry.item_ids():
        item = registry.item(item_id)
        record = by_item.get(item_id)
        if record is None:
            scores.append(ItemScore(item_id=item_id, c_i=0.0, valid=False, family_id=item.family_id,
                                    level=item.level, status=RunStatus.BLOCKED))
            continue
        if record.ok and not record.covers(item):
            raise ScoringError('incomplete-record', f"record for {item_id} misses scenarios")

        record = attach_discrepancies(record, registry, manifest, k=k)
        c_i = item_correctness(record, manifest)
        valid = record.ok and c_i >= manifest.entry(item_id).tau
        if not valid:
            scores.append(ItemScore(item_id=item_id, c_i=c_i, valid=False, family_id=item.family_id,
                                    level=item.level, status=record.status))
            continue
        s_thr, s_lat = _item_axes(record)
        scores.append(ItemScore(
            item_id=item_id,
            c_i=c_i,
            valid=True,
            s_thr=s_thr,
            s_lat=s_lat,
            s_blend={float(lam): blend(s_thr, s_lat, lam) for lam in blend_lambdas},
            family_id=item.family_id,
            level=item.level,
            status=record.status,
        ))
    return scores


def group_by_family(scores: Iterable[ItemScore]) -> Dict[str, List[ItemScore]]:
    grouped = {}
    for score in scores:
        grouped.setdefault(score.family_id, []).append(score)
    return grouped


def scorecard_from_items(agent_id: str, scores: Sequence[ItemScore], manifest: ThresholdManifest,
                         lambdas: Sequence[float] = DEFAULT_LAMBDAS) -> ScoreCard:
    grouped = group_by_family(scores)
    if not grouped:
        raise ScoringError('empty-family', 'nothing to score')

    c_f, c_macro = family_and_macro_correctness(grouped)
    coverage, coverage_macro, _ = validity_and_coverage(grouped, manifest)

    s_macro_by_lambda = {}
    s_f_default = {}
    valid_families = frozenset()
    for lam in lambdas:
        s_f, s_macro, fam_valid = macro_speedup(grouped, lam)
        s_macro_by_lambda[float(lam)] = s_macro
        if float(lam) == DEFAULT_LAMBDA:
            s_f_default, valid_families = s_f, fam_valid
    if DEFAULT_LAMBDA not in s_macro_by_lambda:
        s_f_default, s_macro_by_lambda[DEFAULT_LAMBDA], valid_families = macro_speedup(grouped, DEFAULT_LAMBDA)

    per_family = {}
    for family_id in sorted(grouped):
        family_scores = grouped[family_id]
        valid_count = sum(1 for s in family_scores if s.valid)
        per_family[family_id] = FamilyBreakdown(
            c_f=c_f[family_id],
            coverage_f=valid_count / len(family_scores),
            s_f=s_f_default.get(family_id),
            valid_count=valid_count,
            item_count=len(family_scores),
        )

    attempted = [s for s in scores if s.attempted]
    valid_s = [s.s(DEFAULT_LAMBDA) for s in sorted(scores, key=lambda s: s.item_id) if s.valid]
    card = ScoreCard(
        agent_id=agent_id,
        c_macro=c_macro,
        coverage_item=coverage,
        coverage_macro=coverage_macro,
        s_macro_by_lambda=s_macro_by_lambda,
        score_default=default_score(s_macro_by_lambda[DEFAULT_LAMBDA], c_macro, coverage_macro),
        per_family=per_family,
        valid_families=valid_families,
        coverage_attempted=(len(valid_s) / len(attempted)) if attempted else 0.0,
        attempted_count=len(attempted),
        blocked_count=len(scores) - len(attempted),
        fast_at_1=fast_at(valid_s, 1.0),
        fast_at_1_5=fast_at(valid_s, 1.5),
    )
    logger.info(
        "built scorecard",
        agent_id=agent_id,
        c_macro=card.c_macro,
        coverage_macro=card.coverage_macro,
        score_default=card.score_default,
    )
    return card


def build_scorecard(records: Sequence[RunRecord], registry: Registry, manifest: ThresholdManifest,
                    lambdas: Sequence[float] = DEFAULT_LAMBDAS, agent_id: Optional[str] = None,
                    k: int = DEFAULT_TOPK) -> ScoreCard:
    agents = {r.agent_id for r in records}
    if len(agents) > 1:
        raise ScoringError('mixed-agent-records', f"records span agents {sorted(agents)}")
    if agent_id is None:
        if not agents:
            raise ScoringError('missing-agent', 'no records and no agent_id given')
        agent_id = next(iter(agents))
    elif agents and agents != {agent_id}:
        raise ScoringError('mixed-agent-records', f"records belong to {sorted(agents)}, not {agent_id}")

    scores = score_items(records, registry, manifest, lambdas=lambdas, k=k)
    return scorecard_from_items(agent_id, scores, manifest, lambdas=lambdas)


def level_summary(scores: Sequence[ItemScore]) -> List[Dict[str, object]]:
    """per-level attempted/blocked/correct counts and pooled geomean, plus a combined row"""
    rows = []
    levels = sorted({s.level for s in scores})
    groups = [(f"L{lvl}", [s for s in scores if s.level == lvl]) for lvl in levels]
    groups.append(('all', list(scores)))
    for label, group in groups:
        ordered = sorted(group, key=lambda s: s.item_id)
        valid_s = [s.s(DEFAULT_LAMBDA) for s in ordered if s.valid]
        rows.append({
            'level': label,
            'targets': len(ordered),
            'attempted': sum(1 for s in ordered if s.attempted),
            'blocked': sum(1 for s in ordered if not s.attempted),
            'correct': len(valid_s),
            'geomean': geomean(valid_s),
            'fast@1': fast_at(valid_s, 1.0),
            'fast@1.5': fast_at(valid_s, 1.5),
        })
    return rows
