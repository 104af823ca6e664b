# tests/conftest.py

from typing import Sequence

import numpy as np
import pytest

from src.config.suite import default_manifest, standard_registry
from src.config.tolerances import DtypeTolerances
from src.core.models import (
    BenchmarkItem,
    DiscrepancyKind,
    Dtype,
    FamilySpec,
    OutputPayload,
    RunRecord,
    RunStatus,
    ScenarioResult,
)
from src.core.registry import validate_registry
from src.harness.client import TimingProtocol
from src.metrics.calibration import freeze_manifest


def make_scenario(scenario_id: str, ref: Sequence[float], cand: Sequence[float],
                  ref_time: float = 1.0, cand_time: float = 1.0, units: int = 1) -> ScenarioResult:
    return ScenarioResult(
        scenario_id=scenario_id,
        ref_output=OutputPayload.tensor(ref),
        cand_output=OutputPayload.tensor(cand),
        ref_runtime_s=ref_time,
        cand_runtime_s=cand_time,
        ref_throughput=units / ref_time,
        cand_throughput=units / cand_time,
        ref_latency_s=ref_time,
        cand_latency_s=cand_time,
    )


def ok_record(item_id: str, speedup: float = 1.0, ratio: float = 0.0, agent_id: str = 'agent',
              scenario_ids: Sequence[str] = ('s0', 's1')) -> RunRecord:
    """numeric record: candidate `speedup` times faster, element 0 off by `ratio` FP32 bands"""
    error = ratio * float(DtypeTolerances.FP32.band(np.array(1.0)))
    scenarios = [make_scenario(sid, [1.0, 2.0], [1.0 + error, 2.0], cand_time=1.0 / speedup)
                 for sid in scenario_ids]
    return RunRecord(agent_id=agent_id, item_id=item_id, status=RunStatus.OK, scenarios=tuple(scenarios))


def failed_record(item_id: str, status: RunStatus = RunStatus.CRASH, agent_id: str = 'agent') -> RunRecord:
    return RunRecord(agent_id=agent_id, item_id=item_id, status=status)


@pytest.fixture
def two_family_registry():
    """family `a` with items a1..a4, family `b` with item b1; all FP32, two scenarios"""
    families = [
        FamilySpec('a', DiscrepancyKind.ELEMENTWISE_NUMERIC, 10.0),
        FamilySpec('b', DiscrepancyKind.ELEMENTWISE_NUMERIC, 10.0),
    ]
    items = [BenchmarkItem(f"a{i}", 'a', 1, Dtype.FP32, ('s0', 's1'), 'linear') for i in range(1, 5)]
    items.append(BenchmarkItem('b1', 'b', 2, Dtype.FP32, ('s0', 's1'), 'linear'))
    return validate_registry(families, items)


@pytest.fixture
def two_family_manifest(two_family_registry):
    # ratio-space band: g = 1, f = 3
    return freeze_manifest({i: (1.0, 3.0) for i in two_family_registry.item_ids()},
                           DtypeTolerances.get_all())


@pytest.fixture
def fp32():
    return DtypeTolerances.FP32


@pytest.fixture
def registry():
    return standard_registry()


@pytest.fixture
def manifest(registry):
    return default_manifest(registry)


@pytest.fixture
def fast_protocol():
    return TimingProtocol(warmup_iters=1, timed_runs=1)
