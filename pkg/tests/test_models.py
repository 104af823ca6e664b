# tests/test_models.py

import math

import pytest

from src.config.suite import StandardFamilies, StandardItems, standard_registry
from src.config.tolerances import DtypeTolerances
from src.core.errors import ManifestError, RegistryError, ValidationError
from src.core.models import (
    BenchmarkItem,
    CaptureBundle,
    DiscrepancyKind,
    Dtype,
    DtypeTolerance,
    FamilySpec,
    OutputPayload,
    PayloadKind,
    RunRecord,
    RunStatus,
    TaskNode,
    ThresholdEntry,
)
from src.core.registry import validate_registry
from src.metrics.calibration import freeze_manifest
from tests.conftest import make_scenario


def _family(family_id='f'):
    return FamilySpec(family_id, DiscrepancyKind.ELEMENTWISE_NUMERIC, 10.0)


def _item(item_id='i', family_id='f', scenarios=('s0', 's1')):
    return BenchmarkItem(item_id, family_id, 1, Dtype.FP32, scenarios, 'linear')


class TestRegistry:
    def test_minimal_registry(self):
        registry = validate_registry([_family()], [_item()])
        assert registry.family_ids() == ['f']
        assert registry.item_ids() == ['i']
        assert registry.family_of('i').family_id == 'f'

    def test_dangling_family_reference(self):
        with pytest.raises(RegistryError) as e:
            validate_registry([_family()], [_item(family_id='missing')])
        assert e.value.code == 'dangling-family-reference'

    def test_duplicate_item(self):
        with pytest.raises(RegistryError) as e:
            validate_registry([_family()], [_item(), _item()])
        assert e.value.code == 'duplicate-id'

    def test_duplicate_family(self):
        with pytest.raises(RegistryError) as e:
            validate_registry([_family(), _family()], [])
        assert e.value.code == 'duplicate-id'

    def test_unknown_item(self):
        registry = validate_registry([_family()], [_item()])
        with pytest.raises(RegistryError) as e:
            registry.item('nope')
        assert e.value.code == 'unknown-item'

    def test_registry_is_read_only(self):
        registry = validate_registry([_family()], [_item()])
        with pytest.raises(TypeError):
            registry.items['x'] = _item('x')

    def test_standard_suite(self):
        registry = standard_registry()
        assert len(registry.family_ids()) == len(StandardFamilies.get_all()) == 5
        assert len(registry.item_ids()) == len(StandardItems.get_all()) == 10
        assert {registry.item(i).level for i in registry.item_ids()} == {1, 2, 3, 4}


class TestValueTypes:
    def test_item_needs_scenarios(self):
        with pytest.raises(ValidationError) as e:
            _item(scenarios=())
        assert e.value.code == 'empty-scenario-list'

    def test_item_level_range(self):
        with pytest.raises(ValidationError):
            BenchmarkItem('i', 'f', 5, Dtype.FP32, ('s0',), 'linear')

    def test_tolerance_needs_a_band(self):
        with pytest.raises(ValidationError):
            DtypeTolerance(Dtype.FP32, 0.0, 0.0)

    def test_tolerance_table(self):
        assert DtypeTolerances.for_dtype(Dtype.FP32).atol == 1e-5
        assert DtypeTolerances.for_dtype('FP8-E5M2').rtol == 0.25
        assert len(DtypeTolerances.get_all()) == 5

    def test_payload_shapes(self):
        t = OutputPayload.tensor([[1.0, 2.0], [3.0, 4.0]])
        assert t.shape == (2, 2)
        assert t.as_array()[1, 0] == 3.0
        s = OutputPayload.scalar(0.5)
        assert s.shape == () and s.values == (0.5,)
        ids = OutputPayload.ids(PayloadKind.TOKEN_IDS, [3, 1, 2])
        assert ids.shape == (3,)

    def test_ids_reject_negative(self):
        with pytest.raises(ValidationError):
            OutputPayload.ids(PayloadKind.RANKED_IDS, [1, -1])

    def test_payload_finiteness(self):
        assert OutputPayload.tensor([1.0, 2.0]).is_finite()
        assert not OutputPayload.tensor([1.0, math.nan]).is_finite()

    def test_scenario_needs_positive_timings(self):
        with pytest.raises(ValidationError):
            make_scenario('s0', [1.0], [1.0], cand_time=0.0)

    def test_ok_record_needs_scenarios(self):
        with pytest.raises(ValidationError):
            RunRecord('a', 'i', RunStatus.OK)

    def test_failed_record_carries_no_scenarios(self):
        with pytest.raises(ValidationError):
            RunRecord('a', 'i', RunStatus.CRASH, scenarios=(make_scenario('s0', [1.0], [1.0]),))

    def test_record_covers_item(self):
        record = RunRecord('a', 'i', RunStatus.OK, scenarios=(make_scenario('s0', [1.0], [1.0]),))
        assert not record.covers(_item())
        assert record.covers(_item(scenarios=('s0',)))

    def test_with_discrepancy_is_a_copy(self):
        scenario = make_scenario('s0', [1.0], [1.0])
        cached = scenario.with_discrepancy(0.5)
        assert scenario.discrepancy is None
        assert cached.discrepancy == 0.5

    def test_task_node_rejects_self_dependency(self):
        with pytest.raises(ValidationError):
            TaskNode('mlp', 'mlp', 2, frozenset({'mlp'}))

    def test_bundle_rejects_repeated_scenarios(self):
        inputs = (OutputPayload.tensor([1.0]),)
        with pytest.raises(ValidationError):
            CaptureBundle('b', 'i', (('s0', inputs), ('s0', inputs)))

    def test_bundle_lookup(self):
        inputs = (OutputPayload.tensor([1.0]),)
        bundle = CaptureBundle('b', 'i', (('s0', inputs),))
        assert bundle.inputs_for('s0') == inputs
        with pytest.raises(ValidationError):
            bundle.inputs_for('s9')


class TestManifest:
    def test_freeze(self):
        manifest = freeze_manifest({'i': (1.0, 3.0)}, DtypeTolerances.get_all())
        assert manifest.frozen
        assert manifest.tolerance_scale == 1.0
        assert manifest.entry('i') == ThresholdEntry(g=1.0, f=3.0, tau=1.0)

    def test_band_violation(self):
        with pytest.raises(ManifestError) as e:
            freeze_manifest({'i': (3.0, 3.0)}, DtypeTolerances.get_all())
        assert e.value.code == 'band-violation'

    def test_frozen_manifest_rejects_mutation(self):
        manifest = freeze_manifest({'i': (1.0, 3.0)}, DtypeTolerances.get_all())
        with pytest.raises(ManifestError) as e:
            manifest.set_entry('i', ThresholdEntry(g=1.0, f=4.0))
        assert e.value.code == 'frozen-manifest'
        with pytest.raises(ManifestError):
            manifest.provenance = 'edited'
        with pytest.raises(TypeError):
            manifest.per_item['j'] = ThresholdEntry(g=1.0, f=4.0)

    def test_missing_entry(self):
        manifest = freeze_manifest({'i': (1.0, 3.0)}, DtypeTolerances.get_all())
        with pytest.raises(ManifestError) as e:
            manifest.entry('j')
        assert e.value.code == 'missing-entry'

    def test_tau_override(self):
        manifest = freeze_manifest({'i': (1.0, 3.0, 0.9), 'j': (1.0, 3.0)}, DtypeTolerances.get_all(),
                                   tau_default=0.95)
        assert manifest.entry('i').tau == 0.9
        assert manifest.entry('j').tau == 0.95

    def test_dict_round_trip(self):
        manifest = freeze_manifest({'i': (1.0, 3.0)}, DtypeTolerances.get_all(), provenance='test')
        assert type(manifest).from_dict(manifest.to_dict()).to_dict() == manifest.to_dict()
