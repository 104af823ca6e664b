# tests/test_routing.py

import numpy as np
import pytest

from src.core.errors import RoutingError
from src.core.models import CaptureBundle, OutputPayload
from src.harness.kernels import toy_gate_logits
from src.metrics.routing import ExpertLoad, expert_load, gini, hot_expert_overlap, hot_experts


def test_single_token_top2():
    assert expert_load(np.array([[3.0, 1.0, 2.0]]), k=2).counts == (1, 0, 1)


def test_uniform_logits_follow_the_tie_rule():
    load = expert_load(np.zeros((10, 8)), k=3)
    assert load.counts == (10, 10, 10, 0, 0, 0, 0, 0)


def test_bundle_matches_raw_logits():
    logits = np.random.default_rng(0).standard_normal((12, 16))
    bundle = CaptureBundle('gate-capture', 'moe_gate', (
        ('p0', (OutputPayload.tensor(logits[:5]),)),
        ('p1', (OutputPayload.tensor(logits[5:]),)),
    ))
    assert expert_load(bundle, 4).counts == expert_load(logits, 4).counts
    assert expert_load(bundle, 4).source == 'gate-capture'


def test_k_exceeds_experts():
    with pytest.raises(RoutingError) as e:
        expert_load(np.zeros((2, 4)), k=5)
    assert e.value.code == 'k-exceeds-experts'


def test_invalid_load():
    with pytest.raises(RoutingError):
        ExpertLoad(2, (0, 0))


class TestGini:
    def test_uniform(self):
        assert gini(ExpertLoad(4, (5, 5, 5, 5))) == 0.0

    def test_one_hot(self):
        assert gini(ExpertLoad(128, (1,) + (0,) * 127)) == pytest.approx(127 / 128)

    def test_two_experts(self):
        assert gini(ExpertLoad(2, (3, 1))) == pytest.approx(0.25)

    def test_scale_invariant(self):
        counts = (7, 0, 3, 12, 1, 1)
        scaled = tuple(5 * c for c in counts)
        assert abs(gini(ExpertLoad(6, counts)) - gini(ExpertLoad(6, scaled))) < 1e-12


class TestHotExperts:
    def test_ties_to_lower_index(self):
        assert hot_experts(ExpertLoad(4, (2, 5, 2, 1)), top=2) == (1, 0)

    def test_identical_loads(self):
        load = ExpertLoad(32, tuple(range(32)))
        assert hot_expert_overlap(load, load, 16) == (16, 1.0)

    def test_disjoint(self):
        a = ExpertLoad(32, (10,) * 16 + (1,) * 16)
        b = ExpertLoad(32, (1,) * 16 + (10,) * 16)
        assert hot_expert_overlap(a, b, 16) == (0, 0.0)

    def test_four_shared(self):
        a = ExpertLoad(64, tuple(100 if e < 16 else 1 for e in range(64)))
        b = ExpertLoad(64, tuple(100 if 12 <= e < 28 else 1 for e in range(64)))
        assert hot_expert_overlap(a, b, 16) == (4, 0.25)

    def test_expert_count_mismatch(self):
        with pytest.raises(RoutingError):
            hot_expert_overlap(ExpertLoad(2, (1, 1)), ExpertLoad(3, (1, 1, 1)), 1)

    def test_top_exceeds_experts(self):
        with pytest.raises(RoutingError):
            hot_experts(ExpertLoad(2, (1, 1)), top=3)


def test_structured_traffic_is_more_skewed_than_random_tensors():
    loads = {
        source: expert_load(toy_gate_logits(source, 4096, 128, seed=42), 8, label=source)
        for source in ('random-tensor', 'random-tokens', 'structured')
    }
    assert gini(loads['structured']) > gini(loads['random-tokens']) > gini(loads['random-tensor'])
    shared, _ = hot_expert_overlap(loads['random-tensor'], loads['structured'], 16)
    assert shared < 16


def test_unknown_gate_source():
    with pytest.raises(RoutingError):
        toy_gate_logits('adversarial', 8, 16, seed=0)


def test_moving_load_from_the_lightest_to_the_heaviest_expert_raises_gini():
    rng = np.random.default_rng(41)
    for _ in range(200):
        counts = rng.integers(1, 50, size=int(rng.integers(2, 17)))
        lo, hi = int(np.argmin(counts)), int(np.argmax(counts))
        if lo == hi:
            continue
        moved = counts.copy()
        moved[lo] -= 1
        moved[hi] += 1
        before = gini(ExpertLoad(counts.size, tuple(counts)))
        after = gini(ExpertLoad(moved.size, tuple(moved)))
        assert after > before
        assert 0.0 <= before < 1.0
