# src/metrics/discrepancy.py
"""
Family-specific discrepancy functions D_f(y_cand, y_ref).

Numeric outputs are compared in ratio space: each element's absolute error
is divided by its dtype band atol + rtol*|ref|, so a ratio of 1.0 is the edge
of the indistinguishability band for every dtype.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import structlog

from src.core.errors import DiscrepancyError
from src.core.models import (
    DISCREPANCY_SENTINEL,
    KIND_PAYLOADS,
    DiscrepancyKind,
    DtypeTolerance,
    FamilySpec,
    OutputPayload,
    PayloadKind,
    ScenarioResult,
)

logger = structlog.get_logger()

DEFAULT_TOPK = 20


@dataclass(frozen=True)
class DiscrepancyReport:
    scenario_id: str
    d: float
    kind: DiscrepancyKind
    worst_index: Optional[int] = None


def _expect_kind(payload: OutputPayload, kind: PayloadKind, role: str) -> None:
    if payload.kind is not kind:
        raise DiscrepancyError('kind-mismatch', f"{role} is {payload.kind.value}, expected {kind.value}")


def elementwise_error_ratio(cand: OutputPayload, ref: OutputPayload, tol: DtypeTolerance,
                            scenario_id: str = '') -> DiscrepancyReport:
    _expect_kind(cand, PayloadKind.NUMERIC_TENSOR, 'candidate')
    _expect_kind(ref, PayloadKind.NUMERIC_TENSOR, 'reference')
    if cand.shape != ref.shape:
        raise DiscrepancyError('shape-mismatch', f"candidate {cand.shape} vs reference {ref.shape}")

    y_ref = ref.as_array().ravel()
    y_cand = cand.as_array().ravel()
    if not np.all(np.isfinite(y_ref)):
        raise DiscrepancyError('non-finite-reference', f"reference for {scenario_id or 'scenario'} holds NaN/Inf")

    bad = ~np.isfinite(y_cand)
    if bad.any():
        return DiscrepancyReport(scenario_id, DISCREPANCY_SENTINEL, DiscrepancyKind.ELEMENTWISE_NUMERIC,
                                 int(np.argmax(bad)))

    ratios = np.abs(y_cand - y_ref) / tol.band(y_ref)
    # argmax returns the first maximum, i.e. the lowest flat index on ties
    worst = int(np.argmax(ratios))
    return DiscrepancyReport(scenario_id, float(ratios[worst]), DiscrepancyKind.ELEMENTWISE_NUMERIC, worst)


def token_mismatch_rate(cand: OutputPayload, ref: OutputPayload, scenario_id: str = '') -> DiscrepancyReport:
    _expect_kind(cand, PayloadKind.TOKEN_IDS, 'candidate')
    _expect_kind(ref, PayloadKind.TOKEN_IDS, 'reference')
    y_ref = ref.as_array()
    y_cand = cand.as_array()
    if y_ref.size == 0:
        raise DiscrepancyError('empty-reference', f"reference token sequence for {scenario_id or 'scenario'} is empty")

    overlap = min(y_ref.size, y_cand.size)
    mismatches = int(np.count_nonzero(y_ref[:overlap] != y_cand[:overlap]))
    mismatches += abs(y_ref.size - y_cand.size)
    d = min(1.0, mismatches / max(y_ref.size, 1))
    return DiscrepancyReport(scenario_id, d, DiscrepancyKind.TOKEN_SEQUENCE)


def topk_rank_disagreement(cand: OutputPayload, ref: OutputPayload, k: int = DEFAULT_TOPK,
                           scenario_id: str = '') -> DiscrepancyReport:
    _expect_kind(cand, PayloadKind.RANKED_IDS, 'candidate')
    _expect_kind(ref, PayloadKind.RANKED_IDS, 'reference')
    if k < 1:
        raise DiscrepancyError('invalid-k', f"k={k}")
    if len(cand.values) < k or len(ref.values) < k:
        raise DiscrepancyError('k-exceeds-length',
                               f"k={k} with rankings of length {len(cand.values)}/{len(ref.values)}")
    shared = len(set(cand.values[:k]) & set(ref.values[:k]))
    return DiscrepancyReport(scenario_id, 1.0 - shared / k, DiscrepancyKind.RANKING_TOPK)


def scalar_abs_delta(cand: OutputPayload, ref: OutputPayload, scenario_id: str = '') -> DiscrepancyReport:
    _expect_kind(cand, PayloadKind.SCALAR, 'candidate')
    _expect_kind(ref, PayloadKind.SCALAR, 'reference')
    if not (cand.is_finite() and ref.is_finite()):
        raise DiscrepancyError('non-finite-input', f"scalar metric for {scenario_id or 'scenario'} is not finite")
    return DiscrepancyReport(scenario_id, abs(float(cand.values[0]) - float(ref.values[0])),
                             DiscrepancyKind.SCALAR_METRIC)


def dispatch_discrepancy(family: FamilySpec, scenario: ScenarioResult, tol: DtypeTolerance,
                         k: int = DEFAULT_TOPK) -> DiscrepancyReport:
    """route one scenario to the family's D_f; cache the result with scenario.with_discrepancy(report.d)"""
    expected = KIND_PAYLOADS[family.discrepancy_kind]
    for role, payload in (('candidate', scenario.cand_output), ('reference', scenario.ref_output)):
        if payload.kind is not expected:
            raise DiscrepancyError(
                'kind-mismatch',
                f"family {family.family_id} expects {expected.value}, {role} is {payload.kind.value}",
            )

    sid = scenario.scenario_id
    kind = family.discrepancy_kind
    if kind is DiscrepancyKind.ELEMENTWISE_NUMERIC:
        report = elementwise_error_ratio(scenario.cand_output, scenario.ref_output, tol, scenario_id=sid)
    elif kind is DiscrepancyKind.TOKEN_SEQUENCE:
        report = token_mismatch_rate(scenario.cand_output, scenario.ref_output, scenario_id=sid)
    elif kind is DiscrepancyKind.RANKING_TOPK:
        report = topk_rank_disagreement(scenario.cand_output, scenario.ref_output, k=k, scenario_id=sid)
    else:
        report = scalar_abs_delta(scenario.cand_output, scenario.ref_output, scenario_id=sid)

    logger.debug("computed discrepancy", scenario_id=sid, family_id=family.family_id, d=report.d)
    return report
