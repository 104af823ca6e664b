# src/harness/tiers.py
"""
The three run tiers.

Tier 1 (run_pair): reference and candidate in separate worker processes over
one bundle. Tier 2 (run_e2e): the composed L4 pipeline over a workload, with
sub-kernel inputs captured as it runs. Tier 3 (run_eval_sweep): Tier-1 pairs
for every agent and item on the standard bundles, then scored.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import structlog

from src.core.errors import HarnessError, ManifestError, ReferenceFailureError
from src.core.models import (
    BenchmarkItem,
    CaptureBundle,
    OutputPayload,
    RunRecord,
    RunStatus,
    ScenarioResult,
    ScoreCard,
    TaskNode,
    ThresholdManifest,
)
from src.core.registry import Registry
from src.harness.capture import bundles_from_captures, standard_bundles
from src.harness.client import TimingProtocol, WorkerClient, WorkerOutcome, WorkerProgram, WorkerRole
from src.harness.dag import TaskGraph, resolve_closure
from src.harness.kernels import is_builtin, make_inputs
from src.metrics.scoring import build_scorecard

logger = structlog.get_logger()

REFERENCE_AGENT = 'reference'


def _units(payload: OutputPayload) -> int:
    return max(1, len(payload.values))


def _scenario_result(scenario_id: str, ref, cand) -> ScenarioResult:
    ref_runtime = ref.runtime_s
    cand_runtime = cand.runtime_s
    units = _units(ref.output)
    return ScenarioResult(
        scenario_id=scenario_id,
        ref_output=ref.output,
        cand_output=cand.output,
        ref_runtime_s=ref_runtime,
        cand_runtime_s=cand_runtime,
        ref_throughput=units / ref_runtime,
        cand_throughput=units / cand_runtime,
        ref_latency_s=ref_runtime,
        cand_latency_s=cand_runtime,
        ref_run_times_s=ref.run_times_s,
        cand_run_times_s=cand.run_times_s,
    )


def _output_status(ref: OutputPayload, cand: OutputPayload) -> RunStatus:
    if cand.kind is not ref.kind or cand.shape != ref.shape:
        return RunStatus.SHAPE_ERROR
    if not cand.is_finite():
        return RunStatus.NAN
    return RunStatus.OK


def run_pair(item: BenchmarkItem, candidate: WorkerProgram, bundle: CaptureBundle,
             protocol: TimingProtocol = TimingProtocol(), agent_id: str = REFERENCE_AGENT,
             bindings: Optional[Mapping[str, str]] = None) -> RunRecord:
    """
    Tier 1. The reference runs first and alone, then the candidate; a
    candidate failure becomes the record status, a reference failure raises.
    """
    if bundle.item_id != item.item_id:
        raise HarnessError('bundle-mismatch', f"bundle {bundle.bundle_id} belongs to {bundle.item_id}")

    scenarios = list(bundle.scenarios)
    reference = WorkerProgram(item.reference_runner, WorkerRole.REFERENCE, candidate.timeout_s)
    with WorkerClient(reference, protocol) as client:
        ref_outcome = client.run(scenarios)
    if not ref_outcome.ok:
        logger.error("reference failed", item_id=item.item_id, status=ref_outcome.status.value,
                     error=ref_outcome.error)
        raise ReferenceFailureError(f"{item.item_id}: {ref_outcome.status.value} ({ref_outcome.error})")

    with WorkerClient(candidate, protocol, bindings=bindings) as client:
        cand_outcome = client.run(scenarios)
    if not cand_outcome.ok:
        logger.warning("candidate failed", item_id=item.item_id, agent_id=agent_id,
                       status=cand_outcome.status.value, error=cand_outcome.error)
        return RunRecord(agent_id=agent_id, item_id=item.item_id, status=cand_outcome.status)

    results = []
    for ref_out, cand_out in zip(ref_outcome.outputs, cand_outcome.outputs):
        status = _output_status(ref_out.output, cand_out.output)
        if status is not RunStatus.OK:
            logger.warning("candidate output rejected", item_id=item.item_id, agent_id=agent_id,
                           scenario_id=ref_out.scenario_id, status=status.value)
            return RunRecord(agent_id=agent_id, item_id=item.item_id, status=status)
        results.append(_scenario_result(ref_out.scenario_id, ref_out, cand_out))

    logger.debug("ran pair", item_id=item.item_id, agent_id=agent_id, scenarios=len(results))
    return RunRecord(agent_id=agent_id, item_id=item.item_id, status=RunStatus.OK, scenarios=tuple(results))


@dataclass
class E2EMeasurement:
    scenario_id: str
    throughput: float
    latency_s: float
    run_times_s: Tuple[float, ...]
    output: OutputPayload


@dataclass
class E2EResult:
    task_id: str
    measurements: List[E2EMeasurement] = field(default_factory=list)
    bundles: List[CaptureBundle] = field(default_factory=list)


def run_e2e(node: TaskNode, dag: TaskGraph, workload: Sequence[Tuple[str, Sequence[OutputPayload]]],
            protocol: TimingProtocol = TimingProtocol(), timeout_s: float = 60.0,
            run_id: Optional[str] = None, seed: int = 0) -> E2EResult:
    """Tier 2: the composed pipeline over the workload, capturing every sub-kernel's inputs"""
    if node.level != 4:
        raise HarnessError('composition-failure', f"{node.task_id} is L{node.level}, not an L4 model")
    if not workload:
        raise HarnessError('composition-failure', 'empty workload')

    bindings = resolve_closure(dag, node.task_id)
    unresolved = sorted(slot for slot, locator in bindings.items() if not is_builtin(locator))
    if unresolved:
        raise HarnessError('composition-failure', f"slots {unresolved} are not bound to in-process kernels")

    program = WorkerProgram(dag.runner_for(node.task_id), WorkerRole.REFERENCE, timeout_s)
    with WorkerClient(program, protocol, bindings=bindings, capture=True) as client:
        outcome: WorkerOutcome = client.run(list(workload))
    if not outcome.ok:
        logger.error("pipeline failed", task_id=node.task_id, status=outcome.status.value, error=outcome.error)
        raise HarnessError('composition-failure', f"{node.task_id}: {outcome.status.value} ({outcome.error})")

    result = E2EResult(task_id=node.task_id)
    for out in outcome.outputs:
        first = workload[[sid for sid, _ in workload].index(out.scenario_id)][1][0]
        tokens = int(first.shape[0]) if first.shape else 1
        result.measurements.append(E2EMeasurement(
            scenario_id=out.scenario_id,
            throughput=tokens / out.runtime_s,
            latency_s=out.runtime_s,
            run_times_s=out.run_times_s,
            output=out.output,
        ))
    task_items = {n.task_id: n.item_id for n in dag.nodes()}
    result.bundles = bundles_from_captures(
        [(out.scenario_id, out.captures or {}) for out in outcome.outputs],
        task_items, run_id or f"{node.task_id}-e2e", seed=seed,
    )
    logger.info("ran end-to-end pipeline", task_id=node.task_id, scenarios=len(result.measurements),
                bundles=len(result.bundles))
    return result


def toy_workload(count: int, seed: int = 42) -> List[Tuple[str, Tuple[OutputPayload, ...]]]:
    """`count` prompts for the toy model, sharing one set of model weights"""
    weights = make_inputs('toy_model', np.random.default_rng(seed), 0)[1:]
    rng = np.random.default_rng(seed + 1)
    workload = []
    for i in range(count):
        x = make_inputs('toy_model', rng, i)[0]
        workload.append((f"p{i}", tuple(OutputPayload.tensor(a) for a in [x] + weights)))
    return workload


def _composite_bindings(item_id: str, dag: Optional[TaskGraph]) -> Dict[str, str]:
    """
    sub-kernel slots of a composite resolve through the DAG (best kernel or
    reference), never through the agent's own lower-level candidates
    """
    if dag is None or item_id not in dag.graph:
        return {}
    return {slot: locator for slot, locator in resolve_closure(dag, item_id).items() if is_builtin(locator)}


def evaluate_agent(agent_id: str, agent_bindings: Mapping[str, str], registry: Registry,
                   bundles: Mapping[str, CaptureBundle], protocol: TimingProtocol = TimingProtocol(),
                   timeout_s: float = 60.0, dag: Optional[TaskGraph] = None,
                   max_workers: int = 1) -> List[RunRecord]:
    """Tier-1 pairs for every bound item; unbound items get no record and score as blocked"""
    jobs = [i for i in registry.item_ids() if i in agent_bindings and i in bundles]
    for item_id in registry.item_ids():
        if item_id not in agent_bindings:
            logger.info("item not attempted", agent_id=agent_id, item_id=item_id)

    def _run(item_id: str) -> RunRecord:
        candidate = WorkerProgram(agent_bindings[item_id], WorkerRole.CANDIDATE, timeout_s)
        return run_pair(registry.item(item_id), candidate, bundles[item_id], protocol, agent_id=agent_id,
                        bindings=_composite_bindings(item_id, dag))

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            records = list(executor.map(_run, jobs))
    else:
        records = [_run(item_id) for item_id in jobs]
    return sorted(records, key=lambda r: r.item_id)


def run_eval_sweep(agents: Mapping[str, Mapping[str, str]], registry: Registry, manifest: ThresholdManifest,
                   bundles: Optional[Mapping[str, CaptureBundle]] = None,
                   protocol: TimingProtocol = TimingProtocol(), timeout_s: float = 60.0,
                   dag: Optional[TaskGraph] = None, max_workers: int = 1,
                   seed: int = 42) -> Dict[str, ScoreCard]:
    """Tier 3: agent -> {item_id: candidate locator} in, agent -> ScoreCard out"""
    if not manifest.frozen:
        raise ManifestError('unfrozen-manifest', 'tier-3 sweeps require a frozen manifest')
    bundles = bundles if bundles is not None else standard_bundles(registry, seed)

    cards = {}
    for agent_id in sorted(agents):
        records = evaluate_agent(agent_id, agents[agent_id], registry, bundles, protocol, timeout_s,
                                 dag=dag, max_workers=max_workers)
        cards[agent_id] = build_scorecard(records, registry, manifest, agent_id=agent_id)
        logger.info("evaluated agent", agent_id=agent_id, attempted=len(records),
                    score_default=cards[agent_id].score_default)
    return cards


def reference_agent(registry: Registry) -> Dict[str, str]:
    """bindings that pit every item's reference against itself"""
    return {item_id: registry.item(item_id).reference_runner for item_id in registry.item_ids()}
