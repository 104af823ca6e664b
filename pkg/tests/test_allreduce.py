# tests/test_allreduce.py

import numpy as np
import pytest

from src.core.errors import HarnessError
from src.harness.allreduce import allreduce_check
from src.harness.client import WorkerProgram

RANKS = 4


def _scenarios(count, length=64, seed=0):
    # small integers keep every partial sum exact
    rng = np.random.default_rng(seed)
    return [rng.integers(1, 10, size=(RANKS, length)).astype(np.float64) for _ in range(count)]


def test_ring_passes_every_scenario():
    results = allreduce_check(WorkerProgram('allreduce.ring', timeout_s=30.0), _scenarios(20), ranks=RANKS)
    assert [r.scenario_id for r in results] == [f"s{i}" for i in range(20)]
    assert all(r.passed for r in results)
    assert all(r.worst_ratio == 0.0 for r in results)


def test_identity_fails_every_scenario():
    ids = [f"case-{i}" for i in range(20)]
    results = allreduce_check(WorkerProgram('allreduce.identity', timeout_s=30.0), _scenarios(20, seed=1),
                              ranks=RANKS, scenario_ids=ids)
    assert [r.scenario_id for r in results] == ids
    assert not any(r.passed for r in results)
    assert all(r.failing_ranks == (0, 1, 2, 3) for r in results)


@pytest.mark.parametrize('ranks', [2, 3, 5])
def test_ring_for_other_rank_counts(ranks):
    rng = np.random.default_rng(ranks)
    scenarios = [rng.integers(1, 10, size=(ranks, 32)).astype(np.float64) for _ in range(3)]
    results = allreduce_check(WorkerProgram('allreduce.ring', timeout_s=30.0), scenarios, ranks=ranks)
    assert all(r.passed for r in results)


def test_vectors_larger_than_a_pipe_buffer():
    # 20000 float64 values is well past a 64 KiB pipe buffer in both directions
    results = allreduce_check(WorkerProgram('allreduce.ring', timeout_s=30.0), _scenarios(2, length=20000),
                              ranks=RANKS)
    assert all(r.passed for r in results)


def test_one_rank_is_rejected():
    with pytest.raises(HarnessError) as e:
        allreduce_check(WorkerProgram('allreduce.ring'), [np.ones((1, 4))], ranks=1)
    assert e.value.code == 'invalid-ranks'


def test_scenario_shape_must_match_ranks():
    with pytest.raises(HarnessError) as e:
        allreduce_check(WorkerProgram('allreduce.ring'), [np.ones((3, 4))], ranks=RANKS)
    assert e.value.code == 'invalid-scenario'


def test_non_collective_locator():
    with pytest.raises(HarnessError) as e:
        allreduce_check(WorkerProgram('gelu'), _scenarios(1), ranks=RANKS)
    assert e.value.code == 'unresolvable-locator'
