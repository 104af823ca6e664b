# tests/test_calibration.py

import numpy as np
import pytest

from src.config.tolerances import DtypeTolerances
from src.core.errors import CalibrationError, ManifestError
from src.core.models import BenchmarkItem, Dtype, OutputPayload
from src.metrics.calibration import (
    BAND_FLOOR,
    CliffCurve,
    build_cliff_curve,
    calibrate_f,
    calibrate_g,
    freeze_manifest,
    scale_manifest,
)
from src.metrics.discrepancy import elementwise_error_ratio

ITEM = BenchmarkItem('linear', 'numeric-ops', 1, Dtype.FP32, ('s0',), 'linear')


def test_identical_replicates_sit_on_the_floor(fp32):
    y = OutputPayload.tensor([1.0, 2.0, 3.0])
    assert calibrate_g(ITEM, [y, y, y], fp32) == BAND_FLOOR


def test_band_widens_to_observed_spread(fp32):
    ref = OutputPayload.tensor([0.0, 0.0])
    # 1.7 bands at element 0; symmetric because |ref| is zero in both directions
    other = OutputPayload.tensor([1.7e-5, 0.0])
    assert calibrate_g(ITEM, [ref, other], fp32) == pytest.approx(1.7)


def test_small_spread_stays_on_the_floor(fp32):
    ref = OutputPayload.tensor([0.0])
    reps = [ref, OutputPayload.tensor([0.3e-5]), OutputPayload.tensor([0.8e-5])]
    assert calibrate_g(ITEM, reps, fp32) == BAND_FLOOR


def test_needs_two_replicates(fp32):
    with pytest.raises(CalibrationError) as e:
        calibrate_g(ITEM, [OutputPayload.tensor([1.0])], fp32)
    assert e.value.code == 'fewer-than-two-replicates'


def test_replicate_shape_mismatch(fp32):
    with pytest.raises(CalibrationError) as e:
        calibrate_g(ITEM, [OutputPayload.tensor([1.0]), OutputPayload.tensor([1.0, 2.0])], fp32)
    assert e.value.code == 'shape-mismatch'


def test_knee_at_the_collapse():
    curve = CliffCurve(((0, 1.0), (1, 1.0), (2, 1.0), (3, 0.2), (4, 0.1)))
    assert calibrate_f(curve, 1.0) == 3


def test_linear_decay_falls_back_to_half_quality():
    curve = CliffCurve(((0, 1.0), (2, 0.75), (4, 0.5), (6, 0.25), (8, 0.0)))
    assert calibrate_f(curve, 1.0) == 4


def test_flat_curve_is_degenerate():
    curve = CliffCurve(((0, 1.0), (1, 1.0), (2, 1.0), (3, 1.0)))
    with pytest.raises(CalibrationError) as e:
        calibrate_f(curve, 0.5)
    assert e.value.code == 'degenerate-curve'


def test_cliff_inside_band():
    curve = CliffCurve(((0, 1.0), (1, 1.0), (2, 0.1), (3, 0.0)))
    with pytest.raises(CalibrationError) as e:
        calibrate_f(curve, 5.0)
    assert e.value.code == 'cliff-inside-band'


@pytest.mark.parametrize('points', [
    ((0, 1.0), (1, 0.5), (2, 0.2)),
    ((0, 1.0), (2, 0.5), (1, 0.2), (3, 0.0)),
    ((0, 0.5), (1, 1.0), (2, 0.2), (3, 0.0)),
])
def test_invalid_curves(points):
    with pytest.raises(CalibrationError) as e:
        CliffCurve(points)
    assert e.value.code == 'invalid-curve'


def test_built_curve_is_monotone_in_discrepancy(fp32):
    ref = OutputPayload.tensor([[3.0, 1.0, 0.0], [0.0, 2.0, 1.0]])
    wrong = OutputPayload.tensor([[0.0, 1.0, 3.0], [2.0, 0.0, 1.0]])
    curve = build_cliff_curve(
        ref, wrong,
        discrepancy=lambda c, r: elementwise_error_ratio(c, r, fp32).d,
        quality=lambda c, r: float((c.as_array().argmax(-1) == r.as_array().argmax(-1)).mean()),
    )
    ds = [d for d, _ in curve.points]
    assert ds == sorted(ds) and ds[0] == 0.0
    assert curve.points[0][1] == 1.0
    assert curve.points[-1][1] == 0.0


class TestScaling:
    def _manifest(self):
        return freeze_manifest({'i': (1.0, 3.0)}, DtypeTolerances.get_all(), provenance='unit')

    def test_quarter_scale(self):
        scaled = scale_manifest(self._manifest(), 0.25)
        assert scaled.entry('i').g == 0.25
        assert scaled.entry('i').f == 0.75
        assert scaled.tolerance_scale == 0.25

    def test_unit_scale_keeps_entries(self):
        manifest = self._manifest()
        scaled = scale_manifest(manifest, 1.0)
        assert dict(scaled.per_item) == dict(manifest.per_item)
        assert scaled.dtype_table == manifest.dtype_table

    def test_scales_compose(self):
        scaled = scale_manifest(scale_manifest(self._manifest(), 2.0), 0.5)
        assert scaled.tolerance_scale == 1.0

    def test_random_scales_compose_multiplicatively(self):
        rng = np.random.default_rng(31)
        for _ in range(200):
            g = float(rng.uniform(0.0, 5.0))
            manifest = freeze_manifest({'i': (g, g + float(rng.uniform(0.1, 5.0)))}, DtypeTolerances.get_all())
            a, b = (float(x) for x in rng.uniform(0.1, 4.0, size=2))
            twice = scale_manifest(scale_manifest(manifest, a), b)
            once = scale_manifest(manifest, a * b)
            assert twice.tolerance_scale == pytest.approx(once.tolerance_scale)
            assert twice.entry('i').g == pytest.approx(once.entry('i').g)
            assert twice.entry('i').f == pytest.approx(once.entry('i').f)
            assert twice.entry('i').tau == manifest.entry('i').tau

    def test_nonpositive_scale(self):
        with pytest.raises(ManifestError) as e:
            scale_manifest(self._manifest(), 0.0)
        assert e.value.code == 'nonpositive-scale'
