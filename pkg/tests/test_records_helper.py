# tests/test_records_helper.py

import numpy as np
import pytest

from src.config.suite import StandardItems
from src.core.errors import RecordsFormatError
from src.core.models import OutputPayload, PayloadKind, RunRecord, RunStatus, ScenarioResult
from src.harness.capture import standard_bundle
from src.metrics.routing import ExpertLoad
from src.metrics.scoring import build_scorecard
from src.utils.records_helper import MANIFEST, RECORDS, RecordsHelper, decode_line, encode_line
from tests.conftest import failed_record, ok_record


@pytest.fixture
def helper(tmp_path):
    return RecordsHelper(tmp_path)


def test_encoding_is_canonical():
    assert encode_line(RECORDS, {'b': 1, 'a': [1.5]}) == '{"a":[1.5],"b":1,"schema":"fk-records/1"}'


def test_records_with_an_embedded_registry(helper, two_family_registry):
    records = [ok_record('a1', speedup=1.5, ratio=0.5), failed_record('b1')]
    helper.write_records('run/records.jsonl', records, registry=two_family_registry)
    loaded, registry = helper.read_records('run/records.jsonl')
    assert loaded == records
    assert registry.item_ids() == two_family_registry.item_ids()
    assert registry.family_of('b1').family_id == 'b'


def test_records_without_a_registry(helper):
    helper.write_records('records.jsonl', [failed_record('a1')])
    loaded, registry = helper.read_records('records.jsonl')
    assert registry is None
    assert [r.item_id for r in loaded] == ['a1']


def test_manifest(helper, two_family_manifest):
    helper.write_manifest('manifest.jsonl', two_family_manifest)
    loaded = helper.read_manifest('manifest.jsonl')
    assert loaded.frozen
    assert loaded.to_dict() == two_family_manifest.to_dict()


def test_bundles(helper):
    bundles = [standard_bundle(StandardItems.GELU), standard_bundle(StandardItems.RETRIEVAL_TOPK)]
    helper.write_bundles('capture.jsonl', bundles)
    assert helper.read_bundles('capture.jsonl') == bundles


def test_scorecards_are_written_in_agent_order(helper, two_family_registry, two_family_manifest):
    cards = [
        build_scorecard([ok_record(i, agent_id=agent) for i in two_family_registry.item_ids()],
                        two_family_registry, two_family_manifest)
        for agent in ('zeta', 'alpha')
    ]
    helper.write_scorecards('cards.jsonl', cards)
    loaded = helper.read_scorecards('cards.jsonl')
    assert [c.agent_id for c in loaded] == ['alpha', 'zeta']
    assert loaded[1].to_dict() == cards[0].to_dict()


def test_loads(helper):
    loads = [ExpertLoad(4, (1, 0, 2, 5), source='structured')]
    helper.write_loads('loads.jsonl', loads)
    (doc,) = helper.read_documents('loads.jsonl', RECORDS)
    assert doc['type'] == 'expert-load'
    assert (doc['counts'], doc['source']) == ([1, 0, 2, 5], 'structured')


def test_malformed_line(helper, tmp_path):
    (tmp_path / 'bad.jsonl').write_text('{"schema":"fk-records/1"}\nnot json\n')
    with pytest.raises(RecordsFormatError) as e:
        helper.read_documents('bad.jsonl')
    assert 'bad.jsonl:2' in str(e.value)


def test_wrong_schema(helper, two_family_manifest):
    helper.write_manifest('manifest.jsonl', two_family_manifest)
    with pytest.raises(RecordsFormatError):
        helper.read_records('manifest.jsonl')


def test_bad_record_document(helper, tmp_path):
    (tmp_path / 'records.jsonl').write_text(encode_line(RECORDS, {'type': 'run-record', 'agent_id': 'a'}) + '\n')
    with pytest.raises(RecordsFormatError):
        helper.read_records('records.jsonl')


def test_missing_file(helper):
    with pytest.raises(RecordsFormatError):
        helper.read_manifest('absent.jsonl')


def test_document_without_schema():
    with pytest.raises(RecordsFormatError):
        decode_line('{"type":"item"}')
    with pytest.raises(RecordsFormatError):
        decode_line(encode_line(RECORDS, {}), MANIFEST)


def _random_payload(rng):
    pick = rng.integers(0, 4)
    if pick == 0:
        return OutputPayload.tensor(rng.normal(size=tuple(rng.integers(1, 4, size=rng.integers(1, 3)))))
    if pick == 1:
        return OutputPayload.scalar(float(rng.normal()))
    kind = PayloadKind.TOKEN_IDS if pick == 2 else PayloadKind.RANKED_IDS
    return OutputPayload.ids(kind, rng.integers(0, 100, size=rng.integers(1, 6)))


def _random_record(rng, index):
    failures = [s for s in RunStatus if s is not RunStatus.OK]
    if rng.random() < 0.3:
        return RunRecord(f"agent-{index % 3}", f"item-{index}", failures[rng.integers(len(failures))])
    scenarios = []
    for s in range(int(rng.integers(1, 4))):
        ref_time, cand_time = (float(t) for t in rng.uniform(1e-6, 2.0, size=2))
        scenarios.append(ScenarioResult(
            scenario_id=f"s{s}",
            ref_output=_random_payload(rng),
            cand_output=_random_payload(rng),
            ref_runtime_s=ref_time,
            cand_runtime_s=cand_time,
            ref_throughput=1.0 / ref_time,
            cand_throughput=1.0 / cand_time,
            ref_latency_s=ref_time,
            cand_latency_s=cand_time,
            discrepancy=None if rng.random() < 0.5 else float(rng.exponential()),
            ref_run_times_s=tuple(float(t) for t in rng.uniform(1e-6, 2.0, size=rng.integers(0, 4))),
        ))
    return RunRecord(f"agent-{index % 3}", f"item-{index}", RunStatus.OK, tuple(scenarios))


def test_random_records_survive_a_file(helper):
    rng = np.random.default_rng(51)
    records = [_random_record(rng, i) for i in range(1000)]
    helper.write_records('random.jsonl', records)
    loaded, _ = helper.read_records('random.jsonl')
    assert loaded == records
