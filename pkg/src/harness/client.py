# src/harness/client.py

import os
import queue
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, TextIO, Tuple

import structlog

from src.core.errors import HarnessError, RecordsFormatError, ValidationError
from src.core.models import OutputPayload, RunStatus
from src.harness.kernels import is_builtin, is_collective
from src.utils.records_helper import RECORDS, decode_line, encode_line

logger = structlog.get_logger()

PROJECT_ROOT = Path(__file__).resolve().parents[2]
CLOCK_RESOLUTION = time.get_clock_info('perf_counter').resolution


class WorkerRole(str, Enum):
    REFERENCE = 'reference'
    CANDIDATE = 'candidate'


@dataclass(frozen=True)
class WorkerProgram:
    locator: str
    role: WorkerRole = WorkerRole.CANDIDATE
    timeout_s: float = 60.0

    def __post_init__(self):
        object.__setattr__(self, 'role', WorkerRole(self.role))
        if self.timeout_s <= 0:
            raise HarnessError('invalid-program', f"timeout_s={self.timeout_s}")
        if not (is_builtin(self.locator) or is_collective(self.locator) or os.access(self.locator, os.X_OK)):
            raise HarnessError('unresolvable-locator', f"{self.locator} is neither built in nor executable")

    @property
    def command(self) -> List[str]:
        if is_builtin(self.locator):
            return [sys.executable, '-m', 'src.harness.worker']
        return [self.locator]


@dataclass(frozen=True)
class TimingProtocol:
    warmup_iters: int = 10
    timed_runs: int = 3
    reduction: str = 'mean'

    def __post_init__(self):
        if self.warmup_iters < 0 or self.timed_runs < 1:
            raise HarnessError('invalid-protocol', f"warmup={self.warmup_iters} timed_runs={self.timed_runs}")
        if self.reduction != 'mean':
            raise HarnessError('invalid-protocol', f"unsupported reduction {self.reduction}")


@dataclass
class ScenarioOutput:
    scenario_id: str
    output: OutputPayload
    run_times_s: Tuple[float, ...]
    captures: Optional[Dict[str, List[List[OutputPayload]]]] = None

    @property
    def runtime_s(self) -> float:
        # runs below clock resolution read as zero
        return max(sum(self.run_times_s) / len(self.run_times_s), CLOCK_RESOLUTION)


@dataclass
class WorkerOutcome:
    status: RunStatus
    outputs: List[ScenarioOutput] = field(default_factory=list)
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.status is RunStatus.OK


def _feed(stream: TextIO, text: str) -> None:
    try:
        stream.write(text)
        stream.close()
    except OSError:
        # the worker exited before reading its whole job
        pass


def _pump(stream: TextIO, sink: Callable[[Optional[str]], None]) -> None:
    for line in stream:
        sink(line)
    sink(None)


class WorkerClient:
    """runs one worker process per call and speaks fk-records/1 with it"""
    def __init__(
        self,
        program: WorkerProgram,
        protocol: TimingProtocol = TimingProtocol(),
        bindings: Optional[Mapping[str, str]] = None,
        capture: bool = False,
        role_label: Optional[str] = None,
    ):
        self.program = program
        self.protocol = protocol
        self.bindings = dict(bindings or {})
        self.capture = capture
        self.role_label = role_label or program.role.value
        self._process: Optional[subprocess.Popen] = None

    def _job_lines(self, scenarios: Sequence[Tuple[str, Sequence[OutputPayload]]]) -> str:
        lines = [encode_line(RECORDS, {
            'type': 'job',
            'locator': self.program.locator,
            'bindings': self.bindings,
            'warmup_iters': self.protocol.warmup_iters,
            'timed_runs': self.protocol.timed_runs,
            'capture': self.capture,
        })]
        for index, (scenario_id, inputs) in enumerate(scenarios):
            lines.append(encode_line(RECORDS, {
                'type': 'scenario',
                'scenario_id': scenario_id,
                'index': index,
                'inputs': [p.to_dict() for p in inputs],
            }))
        return '\n'.join(lines) + '\n'

    def _parse(self, stdout: str, expected: Sequence[str]) -> WorkerOutcome:
        outputs = []
        for line in stdout.splitlines():
            if not line.strip():
                continue
            doc = decode_line(line, RECORDS)
            if doc.get('type') == 'failure':
                return WorkerOutcome(RunStatus(doc['status']), error=doc.get('error'))
            captures = doc.get('captures')
            outputs.append(ScenarioOutput(
                scenario_id=doc['scenario_id'],
                output=OutputPayload.from_dict(doc['output']),
                run_times_s=tuple(doc['run_times_s']),
                captures=None if captures is None else {
                    slot: [[OutputPayload.from_dict(p) for p in call] for call in calls]
                    for slot, calls in captures.items()
                },
            ))
        if [o.scenario_id for o in outputs] != list(expected):
            return WorkerOutcome(RunStatus.CRASH, error='worker answered a different scenario set')
        return WorkerOutcome(RunStatus.OK, outputs=outputs)

    def run(self, scenarios: Sequence[Tuple[str, Sequence[OutputPayload]]]) -> WorkerOutcome:
        """every scenario answer has its own deadline of timeout_s"""
        timeout = self.program.timeout_s
        env = dict(os.environ)
        env['FK_WORKER_ROLE'] = self.role_label
        env['PYTHONPATH'] = os.pathsep.join(p for p in (str(PROJECT_ROOT), env.get('PYTHONPATH')) if p)

        try:
            self._process = subprocess.Popen(
                self.program.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                cwd=str(PROJECT_ROOT),
                env=env,
            )
        except OSError as e:
            logger.error("failed to spawn worker", locator=self.program.locator, error=str(e))
            return WorkerOutcome(RunStatus.CRASH, error=str(e))
        process = self._process
        logger.debug("spawned worker", locator=self.program.locator, role=self.role_label, pid=process.pid)

        answers: queue.Queue = queue.Queue()
        stderr: List[Optional[str]] = []
        pumps = [
            threading.Thread(target=_feed, args=(process.stdin, self._job_lines(scenarios)), daemon=True),
            threading.Thread(target=_pump, args=(process.stdout, answers.put), daemon=True),
            threading.Thread(target=_pump, args=(process.stderr, stderr.append), daemon=True),
        ]
        for pump in pumps:
            pump.start()

        lines = []
        finished = False
        while len(lines) < len(scenarios) and not finished:
            try:
                line = answers.get(timeout=timeout)
            except queue.Empty:
                return self._hang(f"no answer for scenario {len(lines)} within {timeout}s")
            if line is None:
                finished = True
            elif line.strip():
                lines.append(line)
        try:
            returncode = process.wait(timeout=timeout)
        except subprocess.TimeoutExpired:
            return self._hang(f"worker did not exit within {timeout}s of its last answer")
        for pump in pumps:
            pump.join(timeout=1.0)
        while not answers.empty():
            line = answers.get_nowait()
            if line is not None and line.strip():
                lines.append(line)
        self._process = None

        try:
            outcome = self._parse(''.join(lines), [sid for sid, _ in scenarios])
        except (RecordsFormatError, ValidationError, KeyError, TypeError, ValueError) as e:
            logger.warning("unparseable worker output", locator=self.program.locator, error=str(e))
            return WorkerOutcome(RunStatus.CRASH, error=f"unparseable output: {e}")
        if outcome.ok and returncode != 0:
            tail = ''.join(filter(None, stderr)).strip()[-500:]
            return WorkerOutcome(RunStatus.CRASH, error=f"exit code {returncode}: {tail}")
        return outcome

    def _hang(self, error: str) -> WorkerOutcome:
        self.close()
        logger.warning("worker timed out", locator=self.program.locator, role=self.role_label, error=error)
        return WorkerOutcome(RunStatus.HANG, error=error)

    def close(self) -> None:
        if self._process is not None and self._process.poll() is None:
            self._process.kill()
            self._process.wait()
        self._process = None

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()
