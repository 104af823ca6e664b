# tests/test_table_helper.py

import pytest

from src.metrics.scoring import build_scorecard
from src.metrics.statistics import sensitivity_sweep
from src.utils.table_helper import LEADERBOARD_COLUMNS, emit_leaderboard, family_frame, render, sweep_frame
from tests.conftest import failed_record, ok_record


@pytest.fixture
def cards(two_family_registry, two_family_manifest):
    def card(agent_id, speedup):
        records = [ok_record(i, speedup=speedup, agent_id=agent_id) for i in two_family_registry.item_ids()]
        return build_scorecard(records, two_family_registry, two_family_manifest)

    broken = build_scorecard([failed_record(i, agent_id='broken') for i in two_family_registry.item_ids()],
                             two_family_registry, two_family_manifest)
    return [card('tie-b', 1.0), broken, card('fast', 2.0), card('tie-a', 1.0)]


def test_leaderboard_order(cards):
    frame = emit_leaderboard(cards)
    assert list(frame.columns) == LEADERBOARD_COLUMNS
    assert list(frame['agent']) == ['fast', 'tie-a', 'tie-b', 'broken']
    assert frame['Score_default'].tolist() == pytest.approx([2.0, 1.0, 1.0, 0.0])


def test_agent_without_valid_items(cards):
    row = emit_leaderboard(cards).iloc[-1]
    assert row['agent'] == 'broken'
    assert row['Coverage'] == 0.0
    assert row['S_macro(λ=0.5)'] != row['S_macro(λ=0.5)']


def test_render(cards):
    text = render(emit_leaderboard(cards))
    lines = text.splitlines()
    assert lines[0].split('\t') == LEADERBOARD_COLUMNS
    assert lines[1].startswith('fast\t2.000\t2.000\t2.000\t1.000')
    # missing S_macro renders as a dash
    assert lines[-1].split('\t')[1] == '-'


def test_family_frame(cards):
    frame = family_frame(cards[2])
    assert list(frame['family']) == ['a', 'b']
    assert list(frame['valid']) == [4, 1]
    assert frame['ci_lo'].isna().all()


def test_sweep_frame(two_family_registry, two_family_manifest):
    records = [ok_record(i) for i in two_family_registry.item_ids()]
    frame = sweep_frame(sensitivity_sweep(records, two_family_registry, two_family_manifest, [0.5, 1.0]))
    assert list(frame['scale']) == [0.5, 1.0]
    assert list(frame['L1 correct']) == ['4/4', '4/4']
    assert list(frame['all correct']) == ['5/5', '5/5']
