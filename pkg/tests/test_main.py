# tests/test_main.py

import pytest

from src.main import EXIT_FAILURES, EXIT_OK, EXIT_USAGE, main
from src.utils.records_helper import RECORDS, RecordsHelper
from tests.conftest import failed_record, ok_record

FAST = ['--warmup', '0', '--timed-runs', '1', '--timeout', '20']


@pytest.fixture
def records_file(tmp_path, two_family_registry):
    def write(records, name='records.jsonl'):
        path = tmp_path / name
        RecordsHelper().write_records(path, records, registry=two_family_registry)
        return str(path)
    return write


@pytest.fixture
def clean_records(two_family_registry):
    return [ok_record(i, speedup=1.2) for i in two_family_registry.item_ids()]


def _run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr().out


class TestScore:
    def test_clean_run(self, capsys, records_file, clean_records):
        code, out = _run(capsys, 'score', '--input', records_file(clean_records))
        assert code == EXIT_OK
        assert out.splitlines()[0].startswith('agent\tS_macro')
        assert '# agent' in out

    def test_failing_kernel(self, capsys, records_file, clean_records):
        records = clean_records[:-1] + [failed_record('b1')]
        code, _ = _run(capsys, 'score', '--input', records_file(records))
        assert code == EXIT_FAILURES

    def test_missing_input(self, capsys):
        code, _ = _run(capsys, 'score')
        assert code == EXIT_USAGE

    def test_unreadable_input(self, capsys, tmp_path):
        bad = tmp_path / 'bad.jsonl'
        bad.write_text('not json\n')
        code, _ = _run(capsys, 'score', '--input', str(bad))
        assert code == EXIT_USAGE

    def test_scorecards_feed_the_leaderboard(self, capsys, tmp_path, records_file, clean_records):
        slow = [ok_record(r.item_id, speedup=0.8, agent_id='slow') for r in clean_records]
        cards = tmp_path / 'cards.jsonl'
        code, _ = _run(capsys, 'score', '--input', records_file(clean_records + slow),
                       '--format', 'records', '--out', str(cards))
        assert code == EXIT_OK
        code, out = _run(capsys, 'leaderboard', '--input', str(cards))
        assert code == EXIT_OK
        assert [line.split('\t')[0] for line in out.splitlines()[1:]] == ['agent', 'slow']


def test_sweep_rows_agree_when_every_item_has_headroom(capsys, records_file, clean_records):
    code, out = _run(capsys, 'sweep', '--input', records_file(clean_records))
    assert code == EXIT_OK
    rows = out.splitlines()[2:]
    assert [r.split('\t')[0] for r in rows] == ['0.250', '0.500', '1.000', '2.000', '5.000']
    assert len({tuple(r.split('\t')[1:]) for r in rows}) == 1


def test_sweep_rejects_bad_scales(capsys, records_file, clean_records):
    code, _ = _run(capsys, 'sweep', '--input', records_file(clean_records), '--scales', '0.5,tight')
    assert code == EXIT_USAGE


def test_bootstrap_is_reproducible(capsys, records_file, clean_records):
    records = [ok_record(r.item_id, speedup=1.0 + i / 10) for i, r in enumerate(clean_records)]
    path = records_file(records)
    argv = ['bootstrap', '--input', path, '--seed', '42', '--replicates', '2000']
    first = _run(capsys, *argv)
    second = _run(capsys, *argv)
    assert first == second
    assert first[0] == EXIT_OK
    groups = [line.split('\t')[1] for line in first[1].splitlines()[1:]]
    assert groups == ['family:a', 'family:b', 'L1', 'L2', 'all']


def test_gap(capsys, records_file, clean_records):
    records = clean_records[:2] + [failed_record(r.item_id) for r in clean_records[2:]]
    code, out = _run(capsys, 'gap', '--input', records_file(records), '--policy', 'punitive')
    assert code == EXIT_OK
    (row,) = out.splitlines()[1:]
    assert row.split('\t')[:5] == ['agent', 'punitive', '2/5', '2', '5']


def test_capture_writes_bundles(capsys, tmp_path):
    out = tmp_path / 'capture.jsonl'
    code, _ = _run(capsys, 'capture', '--item', 'gelu', '--out', str(out))
    assert code == EXIT_OK
    (bundle,) = RecordsHelper().read_bundles(out)
    assert bundle.item_id == 'gelu'


def test_routing(capsys):
    code, out = _run(capsys, 'routing', '--tokens', '512', '--experts', '32', '-k', '4', '--top', '8')
    assert code == EXIT_OK
    lines = out.splitlines()
    assert lines[0].split('\t') == ['source', 'gini', 'top-8', 'shared_with_first']
    assert [line.split('\t')[0] for line in lines[1:]] == ['random-tensor', 'random-tokens', 'structured']
    assert lines[1].endswith('8/8')


def test_routing_loads_to_a_file(capsys, tmp_path):
    out = tmp_path / 'loads.jsonl'
    code, _ = _run(capsys, 'routing', '--tokens', '64', '--experts', '8', '-k', '2', '--top', '4',
                   '--format', 'records', '--out', str(out))
    assert code == EXIT_OK
    docs = RecordsHelper().read_documents(out, RECORDS)
    assert [d['source'] for d in docs] == ['random-tensor', 'random-tokens', 'structured']
    assert all(sum(d['counts']) == 64 * 2 for d in docs)


def test_routing_unknown_source(capsys):
    code, _ = _run(capsys, 'routing', '--sources', 'adversarial')
    assert code == EXIT_USAGE


class TestHarnessCommands:
    def test_run_tier1_reference(self, capsys):
        code, out = _run(capsys, 'run-tier1', '--item', 'gelu', *FAST)
        assert code == EXIT_OK
        assert out.startswith('status\tok')

    def test_run_tier1_crash(self, capsys):
        code, out = _run(capsys, 'run-tier1', '--item', 'gelu', '--candidate', 'fault:crash:gelu', *FAST)
        assert code == EXIT_FAILURES
        assert out.startswith('status\tcrash')

    def test_allreduce_identity_fails(self, capsys):
        code, _ = _run(capsys, 'allreduce-check', '--candidate', 'allreduce.identity',
                       '--scenarios', '2', '--length', '8', '--timeout', '20')
        assert code == EXIT_FAILURES

    def test_allreduce_ring_passes(self, capsys):
        code, out = _run(capsys, 'allreduce-check', '--scenarios', '2', '--length', '8', '--timeout', '20')
        assert code == EXIT_OK
        assert len(out.splitlines()) == 3

    def test_agent_that_attempts_nothing_fails_the_run(self, capsys):
        code, _ = _run(capsys, 'run-tier3', '--agent', 'idle:conv3d=gelu', '--warmup', '0', '--timed-runs', '1')
        assert code == EXIT_FAILURES


def test_unknown_subcommand(capsys):
    assert main(['explode']) == EXIT_USAGE


def test_invalid_settings(capsys, monkeypatch, records_file, clean_records):
    monkeypatch.setenv('FK_TIMED_RUNS', '0')
    assert main(['score', '--input', records_file(clean_records)]) == EXIT_USAGE
