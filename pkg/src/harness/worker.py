# src/harness/worker.py
"""
Worker process: `python -m src.harness.worker`.

Reads one job document followed by scenario documents from stdin and answers
each scenario with a result or failure document on stdout. All documents are
fk-records/1 lines. Logging goes to stderr.

    job:      {type: job, locator, bindings, warmup_iters, timed_runs, capture}
    scenario: {type: scenario, scenario_id, index, inputs: [payload]}
    result:   {type: result, scenario_id, output: payload, run_times_s, captures}
    failure:  {type: failure, scenario_id, status, error}
"""

import os
import sys
import time
from typing import Any, Dict, List, Mapping, Optional, TextIO

import numpy as np
import structlog

from src.core.errors import NonFiniteOutputError
from src.core.models import OutputPayload, RunStatus
from src.harness.kernels import Kernel, KernelContext, resolve
from src.utils.records_helper import RECORDS, decode_line, encode_line

logger = structlog.get_logger()


def classify_exception(exc: BaseException) -> RunStatus:
    if isinstance(exc, NonFiniteOutputError):
        return RunStatus.NAN
    if isinstance(exc, TypeError):
        return RunStatus.TYPE_ERROR
    if isinstance(exc, IndexError):
        return RunStatus.ILLEGAL_MEMORY
    return RunStatus.CRASH


class _Recorder:
    def __init__(self):
        self.calls: Dict[str, List[List[Dict[str, Any]]]] = {}

    def __call__(self, slot: str, arrays) -> None:
        self.calls.setdefault(slot, []).append([OutputPayload.tensor(a).to_dict() for a in arrays])


def run_scenario(kernel: Kernel, job: Mapping[str, Any], scenario: Mapping[str, Any]) -> Dict[str, Any]:
    arrays = [OutputPayload.from_dict(p).as_array() for p in scenario['inputs']]
    ctx = KernelContext(bindings=job.get('bindings', {}), scenario_index=scenario.get('index', 0))

    for _ in range(job.get('warmup_iters', 0)):
        kernel.fn(ctx, *arrays)

    run_times = []
    output = None
    for _ in range(max(1, job.get('timed_runs', 1))):
        start = time.perf_counter()
        output = kernel.fn(ctx, *arrays)
        run_times.append(time.perf_counter() - start)

    doc = {
        'type': 'result',
        'scenario_id': scenario['scenario_id'],
        'output': kernel.to_payload(np.asarray(output)).to_dict(),
        'run_times_s': run_times,
        'captures': None,
    }
    if job.get('capture'):
        recorder = _Recorder()
        kernel.fn(KernelContext(ctx.bindings, ctx.scenario_index, recorder), *arrays)
        doc['captures'] = recorder.calls
    return doc


def serve(stdin: TextIO, stdout: TextIO) -> int:
    lines = iter(stdin)
    try:
        job = decode_line(next(lines), RECORDS)
        kernel = resolve(job['locator'])
    except (StopIteration, KeyError) as e:
        logger.error("worker received no usable job", error=str(e))
        return 2

    role = os.getenv('FK_WORKER_ROLE', 'candidate')
    logger.debug("worker started", locator=job['locator'], role=role)
    for line in lines:
        if not line.strip():
            continue
        scenario = decode_line(line, RECORDS)
        try:
            doc = run_scenario(kernel, job, scenario)
        except Exception as e:
            status = classify_exception(e)
            logger.warning("kernel failed", locator=job['locator'], role=role,
                           scenario_id=scenario.get('scenario_id'), status=status.value, error=repr(e))
            stdout.write(encode_line(RECORDS, {
                'type': 'failure',
                'scenario_id': scenario.get('scenario_id'),
                'status': status.value,
                'error': repr(e),
            }) + '\n')
            stdout.flush()
            return 1
        stdout.write(encode_line(RECORDS, doc) + '\n')
        stdout.flush()
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    return serve(sys.stdin, sys.stdout)


if __name__ == '__main__':
    sys.exit(main())
