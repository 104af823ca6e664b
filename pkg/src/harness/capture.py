# src/harness/capture.py
"""
Golden-input bundles: the seeded standard bundles shipped with the suite,
bundles captured from end-to-end runs, and the in-process reference
replicates and cliff curves that calibration is built from.
"""

import zlib
from datetime import datetime
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pytz
import structlog

from src.core.errors import CalibrationError, HarnessError
from src.core.models import (
    BenchmarkItem,
    CaptureBundle,
    DiscrepancyKind,
    OutputPayload,
    ScenarioResult,
    ThresholdManifest,
)
from src.core.registry import Registry
from src.harness.kernels import KernelContext, is_builtin, make_inputs, resolve
from src.metrics.calibration import build_cliff_curve, calibrate_f, calibrate_g, freeze_manifest
from src.metrics.discrepancy import dispatch_discrepancy, elementwise_error_ratio

logger = structlog.get_logger()

DEFAULT_REPLICATES = 3


def _scenario_rng(seed: int, item_id: str, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(item_id.encode('utf-8')), index])


def standard_bundle(item: BenchmarkItem, seed: int = 42) -> CaptureBundle:
    if not is_builtin(item.reference_runner):
        raise HarnessError('no-workload', f"no generator for external runner {item.reference_runner}")
    scenarios = []
    for index, scenario_id in enumerate(item.scenario_ids):
        arrays = make_inputs(item.reference_runner, _scenario_rng(seed, item.item_id, index), index)
        scenarios.append((scenario_id, tuple(OutputPayload.tensor(a) for a in arrays)))
    return CaptureBundle(
        bundle_id=f"{item.item_id}-standard-{seed}",
        item_id=item.item_id,
        scenarios=tuple(scenarios),
        source='synthetic',
        seed=seed,
        task_id=item.item_id,
    )


def standard_bundles(registry: Registry, seed: int = 42) -> Dict[str, CaptureBundle]:
    return {
        item_id: standard_bundle(registry.item(item_id), seed)
        for item_id in registry.item_ids()
        if is_builtin(registry.item(item_id).reference_runner)
    }


def bundles_from_captures(captures: Sequence[Tuple[str, Mapping[str, Sequence[Sequence[OutputPayload]]]]],
                          task_items: Mapping[str, str], run_id: str, seed: int = 0) -> List[CaptureBundle]:
    """
    captures: (scenario_id, {slot: [inputs per call]}) per end-to-end
    scenario. One bundle per sub-kernel; each call becomes a scenario
    named <scenario_id>/call<j>.
    """
    per_slot: Dict[str, List[Tuple[str, Tuple[OutputPayload, ...]]]] = {}
    for scenario_id, slots in captures:
        for slot in sorted(slots):
            for j, inputs in enumerate(slots[slot]):
                per_slot.setdefault(slot, []).append((f"{scenario_id}/call{j}", tuple(inputs)))

    captured_at = datetime.now(pytz.UTC).isoformat()
    bundles = []
    for slot in sorted(per_slot):
        bundles.append(CaptureBundle(
            bundle_id=f"{run_id}-{slot}",
            item_id=task_items.get(slot, slot),
            scenarios=tuple(per_slot[slot]),
            source='end-to-end-run',
            seed=seed,
            task_id=slot,
            captured_at=captured_at,
        ))
    logger.info("captured sub-kernel inputs", run_id=run_id, bundle_count=len(bundles))
    return bundles


def reference_outputs(item: BenchmarkItem, bundle: CaptureBundle,
                      reduction_seed: Optional[int] = None,
                      bindings: Optional[Mapping[str, str]] = None) -> List[OutputPayload]:
    """run the built-in reference in-process over every bundle scenario"""
    kernel = resolve(item.reference_runner)
    outputs = []
    for index, (_, inputs) in enumerate(bundle.scenarios):
        ctx = KernelContext(bindings=dict(bindings or {}), scenario_index=index, reduction_seed=reduction_seed)
        outputs.append(kernel.to_payload(np.asarray(kernel.fn(ctx, *[p.as_array() for p in inputs]))))
    return outputs


def reference_replicates(item: BenchmarkItem, bundle: CaptureBundle,
                         count: int = DEFAULT_REPLICATES) -> List[List[OutputPayload]]:
    """replicates[r][s]: replicate r of scenario s; r=0 keeps the natural reduction order"""
    return [reference_outputs(item, bundle, reduction_seed=None if r == 0 else r) for r in range(count)]


def _argmax_agreement(candidate: OutputPayload, reference: OutputPayload) -> float:
    a = candidate.as_array()
    b = reference.as_array()
    if a.ndim < 2:
        a, b = a.reshape(1, -1), b.reshape(1, -1)
    return float(np.mean(np.argmax(a, axis=-1) == np.argmax(b, axis=-1)))


def wrong_baseline(reference: OutputPayload, seed: int) -> OutputPayload:
    """seeded random output of the reference's shape and scale"""
    ref = reference.as_array()
    rng = np.random.default_rng(seed)
    scale = float(np.std(ref)) or 1.0
    return OutputPayload.tensor(rng.standard_normal(ref.shape) * scale + float(np.mean(ref)))


def _pair_scenario(scenario_id: str, cand: OutputPayload, ref: OutputPayload) -> ScenarioResult:
    return ScenarioResult(
        scenario_id=scenario_id, ref_output=ref, cand_output=cand,
        ref_runtime_s=1.0, cand_runtime_s=1.0, ref_throughput=1.0, cand_throughput=1.0,
        ref_latency_s=1.0, cand_latency_s=1.0,
    )


def calibrate_item(item: BenchmarkItem, registry: Registry, tol_table: ThresholdManifest,
                   bundle: CaptureBundle, replicates: int = DEFAULT_REPLICATES,
                   seed: int = 42) -> Tuple[float, float]:
    """
    (g, f) for one item. Numeric families: g from the replicate band, f at
    the knee of a blend-to-wrong cliff curve. Other families: g is the
    largest replicate disagreement and f the family default.
    """
    family = registry.families[item.family_id]
    tol = tol_table.tolerance(item.dtype)
    reps = reference_replicates(item, bundle, replicates)

    if family.discrepancy_kind is not DiscrepancyKind.ELEMENTWISE_NUMERIC:
        observed = 0.0
        for s, scenario_id in enumerate(bundle.scenario_ids):
            for r in range(1, len(reps)):
                pair = _pair_scenario(scenario_id, reps[r][s], reps[0][s])
                observed = max(observed, dispatch_discrepancy(family, pair, tol).d)
        f = family.default_fail_threshold
        if observed >= f:
            raise CalibrationError('cliff-inside-band', f"{item.item_id}: replicate spread {observed} >= f={f}")
        return observed, f

    g = max(calibrate_g(item, [rep[s] for rep in reps], tol) for s in range(len(bundle.scenarios)))
    ref = reps[0][0]
    curve = build_cliff_curve(
        ref, wrong_baseline(ref, seed),
        discrepancy=lambda cand, r: elementwise_error_ratio(cand, r, tol).d,
        quality=_argmax_agreement,
    )
    return g, calibrate_f(curve, g)


def calibrate_suite(registry: Registry, bundles: Mapping[str, CaptureBundle], tol_table: ThresholdManifest,
                    replicates: int = DEFAULT_REPLICATES, seed: int = 42) -> ThresholdManifest:
    per_item = {}
    for item_id in sorted(bundles):
        per_item[item_id] = calibrate_item(registry.item(item_id), registry, tol_table, bundles[item_id],
                                           replicates=replicates, seed=seed)
        logger.debug("calibrated item", item_id=item_id, g=per_item[item_id][0], f=per_item[item_id][1])
    return freeze_manifest(per_item, tol_table.dtype_table, tau_default=tol_table.tau_default,
                           provenance=f"calibrated seed={seed} replicates={replicates}")
