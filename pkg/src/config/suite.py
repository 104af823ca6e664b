# src/config/suite.py

from typing import Dict, List, Optional

from src.config.tolerances import DtypeTolerances
from src.core.models import (
    BenchmarkItem,
    DiscrepancyKind,
    Dtype,
    FamilySpec,
    TaskNode,
    ThresholdManifest,
)
from src.core.registry import Registry, validate_registry
from src.metrics.calibration import BAND_FLOOR, freeze_manifest

SCENARIOS = ('s0', 's1', 's2')
STANDARD_SEED = 42


class StandardFamilies:
    NUMERIC_OPS = FamilySpec(
        family_id='numeric-ops',
        discrepancy_kind=DiscrepancyKind.ELEMENTWISE_NUMERIC,
        default_fail_threshold=10.0,
    )

    ROUTING = FamilySpec(
        family_id='routing',
        discrepancy_kind=DiscrepancyKind.ELEMENTWISE_NUMERIC,
        default_fail_threshold=10.0,
    )

    DECODER_LM = FamilySpec(
        family_id='decoder-lm',
        discrepancy_kind=DiscrepancyKind.TOKEN_SEQUENCE,
        default_fail_threshold=0.25,
    )

    RETRIEVAL = FamilySpec(
        family_id='retrieval',
        discrepancy_kind=DiscrepancyKind.RANKING_TOPK,
        default_fail_threshold=0.2,
    )

    SPEECH_METRIC = FamilySpec(
        family_id='speech-metric',
        discrepancy_kind=DiscrepancyKind.SCALAR_METRIC,
        default_fail_threshold=0.05,
    )

    @classmethod
    def get_all(cls) -> List[FamilySpec]:
        return [value for name, value in vars(cls).items()
                if isinstance(value, FamilySpec)]


def _item(item_id: str, family: FamilySpec, level: int) -> BenchmarkItem:
    return BenchmarkItem(
        item_id=item_id,
        family_id=family.family_id,
        level=level,
        dtype=Dtype.FP32,
        scenario_ids=SCENARIOS,
        reference_runner=item_id,
    )


class StandardItems:
    RMSNORM = _item('rmsnorm', StandardFamilies.NUMERIC_OPS, 1)
    SOFTMAX = _item('softmax', StandardFamilies.NUMERIC_OPS, 1)
    LINEAR = _item('linear', StandardFamilies.NUMERIC_OPS, 1)
    GELU = _item('gelu', StandardFamilies.NUMERIC_OPS, 1)
    MOE_GATE = _item('moe_gate', StandardFamilies.ROUTING, 1)
    RETRIEVAL_TOPK = _item('retrieval_topk', StandardFamilies.RETRIEVAL, 1)
    SCORE_METRIC = _item('score_metric', StandardFamilies.SPEECH_METRIC, 1)
    MLP = _item('mlp', StandardFamilies.NUMERIC_OPS, 2)
    BLOCK = _item('block', StandardFamilies.NUMERIC_OPS, 3)
    TOY_MODEL = _item('toy_model', StandardFamilies.DECODER_LM, 4)

    @classmethod
    def get_all(cls) -> List[BenchmarkItem]:
        return [value for name, value in vars(cls).items()
                if isinstance(value, BenchmarkItem)]


# sub-kernel slots each composite calls
TASK_DEPENDENCIES: Dict[str, tuple] = {
    'mlp': ('linear', 'gelu'),
    'block': ('rmsnorm', 'mlp'),
    'toy_model': ('block', 'linear'),
}


def standard_registry() -> Registry:
    return validate_registry(StandardFamilies.get_all(), StandardItems.get_all())


def standard_task_nodes() -> List[TaskNode]:
    return [
        TaskNode(
            task_id=item.item_id,
            item_id=item.item_id,
            level=item.level,
            dependencies=frozenset(TASK_DEPENDENCIES.get(item.item_id, ())),
        )
        for item in StandardItems.get_all()
    ]


def default_manifest(registry: Optional[Registry] = None) -> ThresholdManifest:
    """
    uncalibrated fallback: g at the dtype band for numeric families and 0
    otherwise, f at the family default
    """
    registry = registry or standard_registry()
    per_item = {}
    for item_id in registry.item_ids():
        family = registry.family_of(item_id)
        numeric = family.discrepancy_kind is DiscrepancyKind.ELEMENTWISE_NUMERIC
        per_item[item_id] = (BAND_FLOOR if numeric else 0.0, family.default_fail_threshold)
    return freeze_manifest(per_item, DtypeTolerances.get_all(), provenance='family defaults')
