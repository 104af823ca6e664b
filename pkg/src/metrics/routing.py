# src/metrics/routing.py
"""Expert-load histograms, Gini skew and hot-expert overlap for MoE gates."""

from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import structlog

from src.core.errors import RoutingError
from src.core.models import CaptureBundle, PayloadKind

logger = structlog.get_logger()

DEFAULT_TOP = 16


@dataclass(frozen=True)
class ExpertLoad:
    num_experts: int
    counts: Tuple[int, ...]
    source: str = ''

    def __post_init__(self):
        object.__setattr__(self, 'counts', tuple(int(c) for c in self.counts))
        if self.num_experts < 1 or len(self.counts) != self.num_experts:
            raise RoutingError('invalid-load', f"{len(self.counts)} counts for {self.num_experts} experts")
        if any(c < 0 for c in self.counts) or sum(self.counts) <= 0:
            raise RoutingError('invalid-load', 'counts must be nonnegative with a positive total')

    def to_dict(self) -> Dict[str, Any]:
        return {'num_experts': self.num_experts, 'counts': list(self.counts), 'source': self.source}


def _top_indices(values: np.ndarray, k: int) -> np.ndarray:
    """indices of the k largest values, ties to the lower index"""
    # stable sort on the negated values keeps lower indices first among equals
    return np.argsort(-values, kind='stable')[:k]


def _gate_logits(source: Union[CaptureBundle, np.ndarray]) -> np.ndarray:
    if isinstance(source, CaptureBundle):
        rows = []
        for _, inputs in source.scenarios:
            if not inputs or inputs[0].kind is not PayloadKind.NUMERIC_TENSOR:
                raise RoutingError('missing-logits', f"bundle {source.bundle_id} has no gate logits")
            logits = inputs[0].as_array()
            rows.append(logits.reshape(-1, logits.shape[-1]))
        return np.concatenate(rows, axis=0)
    logits = np.asarray(source, dtype=np.float64)
    if logits.ndim == 1:
        logits = logits.reshape(1, -1)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise RoutingError('missing-logits', f"gate logits must be tokens x experts, got {logits.shape}")
    return logits


def expert_load(source: Union[CaptureBundle, np.ndarray], k: int, label: Optional[str] = None) -> ExpertLoad:
    """counts[e] = number of (token, slot) assignments routed to expert e under top-k"""
    logits = _gate_logits(source)
    num_experts = logits.shape[1]
    if k < 1 or k > num_experts:
        raise RoutingError('k-exceeds-experts', f"k={k} with {num_experts} experts")
    counts = np.zeros(num_experts, dtype=np.int64)
    for row in logits:
        counts[_top_indices(row, k)] += 1
    if label is None:
        label = source.bundle_id if isinstance(source, CaptureBundle) else 'gate-logits'
    return ExpertLoad(num_experts=num_experts, counts=tuple(int(c) for c in counts), source=label)


def gini(load: ExpertLoad) -> float:
    c = np.asarray(load.counts, dtype=np.float64)
    n = c.size
    mad = np.abs(c[:, None] - c[None, :]).sum()
    return float(mad / (2.0 * n * n * c.mean()))


def hot_experts(load: ExpertLoad, top: int = DEFAULT_TOP) -> Tuple[int, ...]:
    if top < 1 or top > load.num_experts:
        raise RoutingError('top-exceeds-experts', f"top={top} with {load.num_experts} experts")
    return tuple(int(e) for e in _top_indices(np.asarray(load.counts, dtype=np.float64), top))


def hot_expert_overlap(a: ExpertLoad, b: ExpertLoad, top: int = DEFAULT_TOP) -> Tuple[int, float]:
    if a.num_experts != b.num_experts:
        raise RoutingError('expert-count-mismatch', f"{a.num_experts} vs {b.num_experts} experts")
    shared = len(set(hot_experts(a, top)) & set(hot_experts(b, top)))
    logger.debug("compared hot experts", a=a.source, b=b.source, shared=shared, top=top)
    return shared, shared / top
