# src/metrics/calibration.py
"""
Threshold calibration: the indistinguishability band g from
reference-vs-reference nondeterminism, the failure threshold f from the knee
of a quality-cliff curve, and freezing/scaling of the resulting manifest.
"""

import itertools
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence, Tuple

import numpy as np
import structlog

from src.core.errors import CalibrationError, DiscrepancyError, ManifestError
from src.core.models import (
    BenchmarkItem,
    DtypeTolerance,
    OutputPayload,
    ThresholdEntry,
    ThresholdManifest,
)
from src.metrics.discrepancy import elementwise_error_ratio

logger = structlog.get_logger()

# ratio-space floor: the dtype band itself
BAND_FLOOR = 1.0

_CURVATURE_EPS = 1e-12


@dataclass(frozen=True)
class CliffCurve:
    points: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        points = tuple((float(d), float(q)) for d, q in self.points)
        object.__setattr__(self, 'points', points)
        if len(points) < 4:
            raise CalibrationError('invalid-curve', f"need at least 4 points, got {len(points)}")
        ds = [d for d, _ in points]
        qs = [q for _, q in points]
        if any(d < 0 for d in ds) or any(b <= a for a, b in zip(ds, ds[1:])):
            raise CalibrationError('invalid-curve', 'discrepancies must be nonnegative and strictly increasing')
        if any(not 0.0 <= q <= 1.0 for q in qs):
            raise CalibrationError('invalid-curve', 'quality must lie in [0,1]')
        if qs[0] < max(qs):
            raise CalibrationError('invalid-curve', "first point's quality must be the curve maximum")


def calibrate_g(item: BenchmarkItem, ref_replicates: Sequence[OutputPayload], tol: DtypeTolerance) -> float:
    if len(ref_replicates) < 2:
        raise CalibrationError('fewer-than-two-replicates',
                               f"item {item.item_id} has {len(ref_replicates)} replicate(s)")
    observed = 0.0
    # ordered pairs: the ratio is not symmetric, so both directions count
    for rep_a, rep_b in itertools.permutations(ref_replicates, 2):
        try:
            report = elementwise_error_ratio(rep_a, rep_b, tol)
        except DiscrepancyError as e:
            if e.code == 'shape-mismatch':
                raise CalibrationError('shape-mismatch', f"replicates of {item.item_id} disagree in shape")
            raise
        observed = max(observed, report.d)

    g = max(BAND_FLOOR, observed)
    logger.debug("calibrated band", item_id=item.item_id, observed=observed, g=g)
    return g


def _half_quality_point(curve: CliffCurve) -> Optional[float]:
    threshold = 0.5 * curve.points[0][1]
    for d, q in curve.points:
        if q <= threshold:
            return d
    return None


def _knee_point(curve: CliffCurve) -> Optional[float]:
    qs = np.array([q for _, q in curve.points])
    second = qs[2:] - 2.0 * qs[1:-1] + qs[:-2]
    if second.size == 0 or second.max() <= _CURVATURE_EPS:
        return None
    return curve.points[int(np.argmax(second)) + 1][0]


def calibrate_f(curve: CliffCurve, g: float) -> float:
    if curve.points[-1][0] <= g:
        raise CalibrationError('cliff-inside-band', f"curve ends at {curve.points[-1][0]} <= g={g}")

    knee = _knee_point(curve)
    fallback = _half_quality_point(curve)
    if knee is not None and knee > g:
        return knee
    if fallback is None:
        raise CalibrationError('degenerate-curve', 'quality never drops to half of its initial value')
    if fallback <= g:
        raise CalibrationError('cliff-inside-band', f"knee and half-quality point both within g={g}")
    return fallback


def build_cliff_curve(ref: OutputPayload, wrong: OutputPayload,
                      discrepancy: Callable[[OutputPayload, OutputPayload], float],
                      quality: Callable[[OutputPayload, OutputPayload], float],
                      steps: int = 8) -> CliffCurve:
    """
    blend the reference towards a deliberately wrong baseline and record
    (discrepancy, downstream quality) at each blend fraction
    """
    y_ref = ref.as_array()
    y_wrong = wrong.as_array()
    points = []
    for alpha in np.linspace(0.0, 1.0, steps + 1):
        blended = OutputPayload.tensor((1.0 - alpha) * y_ref + alpha * y_wrong)
        d = discrepancy(blended, ref)
        if points and d <= points[-1][0]:
            continue
        points.append((d, quality(blended, ref)))
    # quality can only be bounded by the untouched reference
    top = points[0][1]
    points = [(d, min(q, top)) for d, q in points]
    return CliffCurve(tuple(points))


def freeze_manifest(per_item: Mapping[str, Tuple[float, float, Optional[float]]],
                    dtype_table: Sequence[DtypeTolerance],
                    tau_default: float = 1.0,
                    provenance: str = 'calibrated') -> ThresholdManifest:
    """
    per_item maps item_id to (g, f) or (g, f, tau); a missing or None tau
    takes tau_default
    """
    entries = {}
    for item_id in sorted(per_item):
        values = tuple(per_item[item_id])
        g, f = values[0], values[1]
        tau = values[2] if len(values) > 2 and values[2] is not None else tau_default
        try:
            entries[item_id] = ThresholdEntry(g=g, f=f, tau=tau)
        except ManifestError as e:
            logger.error("rejected manifest entry", item_id=item_id, error=str(e))
            raise
    manifest = ThresholdManifest(
        per_item=entries,
        dtype_table=tuple(dtype_table),
        tolerance_scale=1.0,
        tau_default=tau_default,
        provenance=provenance,
        frozen=True,
    )
    logger.info("froze threshold manifest", item_count=len(entries))
    return manifest


def scale_manifest(manifest: ThresholdManifest, scale: float) -> ThresholdManifest:
    if scale <= 0:
        raise ManifestError('nonpositive-scale', f"scale={scale}")
    if not manifest.frozen:
        raise ManifestError('unfrozen-manifest', 'only frozen manifests can be scaled')
    return ThresholdManifest(
        per_item={k: v.scaled(scale) for k, v in manifest.per_item.items()},
        dtype_table=manifest.dtype_table,
        tolerance_scale=manifest.tolerance_scale * scale,
        tau_default=manifest.tau_default,
        provenance=f"{manifest.provenance} scaled x{scale!r}".strip(),
        frozen=True,
    )
