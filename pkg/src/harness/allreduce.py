# src/harness/allreduce.py

import multiprocessing as mp
from dataclasses import dataclass
from multiprocessing.connection import wait
from typing import List, Optional, Sequence

import numpy as np
import structlog

from src.config.tolerances import DtypeTolerances
from src.core.errors import HarnessError
from src.core.models import DtypeTolerance, OutputPayload
from src.harness.client import WorkerProgram
from src.harness.kernels import COLLECTIVES, RankChannel
from src.metrics.calibration import BAND_FLOOR
from src.metrics.discrepancy import elementwise_error_ratio

logger = structlog.get_logger()

DEFAULT_RANKS = 4


@dataclass(frozen=True)
class AllreduceResult:
    scenario_id: str
    passed: bool
    worst_ratio: float
    failing_ranks: tuple


def _rank_main(locator: str, rank: int, size: int, vectors, send_right, recv_left, results, timeout_s: float):
    channel = RankChannel(rank, size, send_right, recv_left, timeout_s)
    fn = COLLECTIVES[locator]
    try:
        for vec in vectors:
            out = fn(np.asarray(vec, dtype=np.float64), channel)
            results.send(('ok', np.asarray(out, dtype=np.float64)))
    except TimeoutError as e:
        results.send(('timeout', str(e)))
    except Exception as e:
        results.send(('error', repr(e)))
    finally:
        results.close()


def _spawn(ctx, locator: str, scenarios: List[np.ndarray], ranks: int, timeout_s: float):
    ring = [ctx.Pipe(duplex=False) for _ in range(ranks)]
    results = [ctx.Pipe(duplex=False) for _ in range(ranks)]
    procs = []
    for rank in range(ranks):
        # pipe r carries rank r -> rank r+1
        _, send_right = ring[rank]
        recv_left, _ = ring[(rank - 1) % ranks]
        proc = ctx.Process(
            target=_rank_main,
            args=(locator, rank, ranks, [s[rank] for s in scenarios], send_right, recv_left,
                  results[rank][1], timeout_s),
            name=f"rank-{rank}",
            daemon=True,
        )
        try:
            proc.start()
        except OSError as e:
            for p in procs:
                p.kill()
            logger.error("failed to spawn rank", rank=rank, error=str(e))
            raise HarnessError('rank-spawn-failure', f"rank {rank}: {e}")
        procs.append(proc)
    # the ranks own these ends now; a rank that dies must read as EOF here
    for conn in [*(end for pair in ring for end in pair), *(r[1] for r in results)]:
        conn.close()
    return procs, [r[0] for r in results]


def allreduce_check(candidate: WorkerProgram, scenarios: Sequence[np.ndarray], ranks: int = DEFAULT_RANKS,
                    tol: Optional[DtypeTolerance] = None, g: float = BAND_FLOOR,
                    scenario_ids: Optional[Sequence[str]] = None) -> List[AllreduceResult]:
    """
    scenarios[s] is a (ranks, n) array: row r is rank r's input. A scenario
    passes iff every rank ends up holding the elementwise sum within band g.
    """
    if ranks < 2:
        raise HarnessError('invalid-ranks', f"ranks={ranks}; all-reduce over one rank is the identity")
    if candidate.locator not in COLLECTIVES:
        raise HarnessError('unresolvable-locator', f"{candidate.locator} is not a built-in collective")
    arrays = [np.asarray(s, dtype=np.float64) for s in scenarios]
    for s in arrays:
        if s.ndim != 2 or s.shape[0] != ranks or s.shape[1] == 0:
            raise HarnessError('invalid-scenario', f"expected ({ranks}, n) inputs, got {s.shape}")
    ids = list(scenario_ids) if scenario_ids is not None else [f"s{i}" for i in range(len(arrays))]
    tol = tol or DtypeTolerances.FP32

    ctx = mp.get_context('spawn')
    procs, result_conns = _spawn(ctx, candidate.locator, arrays, ranks, candidate.timeout_s)
    outputs = [[None] * ranks for _ in arrays]
    received = [0] * ranks
    pending = {conn: rank for rank, conn in enumerate(result_conns)}
    try:
        while pending:
            ready = wait(list(pending), timeout=candidate.timeout_s)
            if not ready:
                stalled = sorted(pending.values())
                raise HarnessError('channel-timeout', f"ranks {stalled} sent nothing for {candidate.timeout_s}s")
            for conn in ready:
                rank = pending[conn]
                try:
                    tag, payload = conn.recv()
                except EOFError:
                    raise HarnessError('rank-failure', f"rank {rank} exited after {received[rank]} scenarios")
                if tag == 'timeout':
                    raise HarnessError('channel-timeout', f"rank {rank}: {payload}")
                if tag != 'ok':
                    raise HarnessError('rank-failure', f"rank {rank}: {payload}")
                outputs[received[rank]][rank] = payload
                received[rank] += 1
                if received[rank] == len(arrays):
                    del pending[conn]
    finally:
        for proc in procs:
            proc.join(timeout=1.0)
            if proc.is_alive():
                proc.kill()

    results = []
    for s, inputs in enumerate(arrays):
        expected = OutputPayload.tensor(inputs.sum(axis=0))
        worst, failing = 0.0, []
        for rank in range(ranks):
            got = outputs[s][rank]
            if got.shape != inputs[rank].shape:
                worst, failing = float('inf'), failing + [rank]
                continue
            d = elementwise_error_ratio(OutputPayload.tensor(got), expected, tol).d
            worst = max(worst, d)
            if d > g:
                failing.append(rank)
        results.append(AllreduceResult(ids[s], not failing, worst, tuple(failing)))
        logger.debug("checked all-reduce scenario", scenario_id=ids[s], passed=not failing, worst_ratio=worst)
    logger.info("all-reduce check finished", candidate=candidate.locator, ranks=ranks,
                passed=sum(r.passed for r in results), total=len(results))
    return results
