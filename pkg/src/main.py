# src/main.py

import argparse
import sys
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from dotenv import load_dotenv

from src.config.settings import Settings
from src.config.suite import default_manifest, standard_registry, standard_task_nodes
from src.config.tolerances import DtypeTolerances
from src.core.errors import FastKernelsError, HarnessError, RecordsFormatError, ReferenceFailureError
from src.core.models import RunRecord, ScoreCard, ThresholdManifest
from src.core.registry import Registry
from src.harness.allreduce import allreduce_check
from src.harness.capture import calibrate_suite, standard_bundle, standard_bundles
from src.harness.client import TimingProtocol, WorkerProgram, WorkerRole
from src.harness.dag import register_task_graph
from src.harness.kernels import toy_gate_logits
from src.harness.tiers import evaluate_agent, reference_agent, run_e2e, run_pair, toy_workload
from src.metrics.discrepancy import dispatch_discrepancy
from src.metrics.routing import ExpertLoad, expert_load, gini, hot_expert_overlap, hot_experts
from src.metrics.scoring import DEFAULT_LAMBDA, build_scorecard, level_summary, score_items, scorecard_from_items
from src.metrics.statistics import (
    DEFAULT_SCALES,
    BootstrapConfig,
    GapPolicy,
    attach_family_cis,
    bootstrap_ci,
    harness_gap,
    sensitivity_sweep,
)
from src.utils.records_helper import CAPTURE, MANIFEST, RECORDS, SCORECARD, RecordsHelper, encode_line
from src.utils.table_helper import emit_leaderboard, family_frame, records_frame, render, sweep_frame

logger = structlog.get_logger()

EXIT_OK = 0
EXIT_FAILURES = 1
EXIT_USAGE = 2
EXIT_INTERNAL = 3

# --- shared plumbing -------------------------------------------------------------

def _emit(args: argparse.Namespace, text: str) -> None:
    if args.out:
        with open(args.out, 'w', encoding='utf-8') as fh:
            fh.write(text)
        logger.info("wrote output", path=args.out)
    else:
        sys.stdout.write(text)


def _emit_docs(args: argparse.Namespace, schema: str, docs) -> None:
    if args.out:
        RecordsHelper().write_documents(args.out, schema, docs)
    else:
        sys.stdout.write(''.join(encode_line(schema, d) + '\n' for d in docs))


def _require_input(args: argparse.Namespace) -> str:
    if not args.input:
        raise RecordsFormatError(f"{args.command} needs --input")
    return args.input


def _load_records(helper: RecordsHelper, args: argparse.Namespace) -> Tuple[List[RunRecord], Registry]:
    records, registry = helper.read_records(_require_input(args))
    return records, registry or standard_registry()


def _load_manifest(helper: RecordsHelper, args: argparse.Namespace, registry: Registry) -> ThresholdManifest:
    if args.manifest:
        return helper.read_manifest(args.manifest)
    logger.info("no manifest given, using family defaults")
    return default_manifest(registry)


def _by_agent(records: Sequence[RunRecord]) -> Dict[str, List[RunRecord]]:
    grouped: Dict[str, List[RunRecord]] = {}
    for record in records:
        grouped.setdefault(record.agent_id, []).append(record)
    return grouped


def _protocol(args: argparse.Namespace, settings: Settings) -> TimingProtocol:
    return TimingProtocol(
        warmup_iters=settings.FK_WARMUP_ITERS if args.warmup is None else args.warmup,
        timed_runs=settings.FK_TIMED_RUNS if args.timed_runs is None else args.timed_runs,
    )


def _timeout(args: argparse.Namespace, settings: Settings) -> float:
    return settings.FK_TIMEOUT_S if args.timeout is None else args.timeout


def _bindings(pairs: Optional[Sequence[str]]) -> Dict[str, str]:
    bindings = {}
    for pair in pairs or []:
        if '=' not in pair:
            raise RecordsFormatError(f"binding {pair!r} is not slot=locator")
        slot, locator = pair.split('=', 1)
        bindings[slot.strip()] = locator.strip()
    return bindings


def _float_list(text: str) -> List[float]:
    try:
        return [float(s) for s in text.split(',')]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def _card_failures(cards: Sequence[ScoreCard]) -> bool:
    # an agent that attempted nothing also fails the run
    return any(c.attempted_count == 0 or c.coverage_attempted < 1.0 for c in cards)


# --- subcommands --------------------------------------------------------------------

def cmd_calibrate(args, settings, helper) -> int:
    registry = standard_registry()
    seed = settings.resolve_seed(args.seed)
    if args.input:
        bundles = {b.item_id: b for b in helper.read_bundles(args.input)}
    else:
        bundles = standard_bundles(registry, seed)
    tol_table = default_manifest(registry)
    manifest = calibrate_suite(registry, bundles, tol_table, replicates=args.replicates, seed=seed)
    if args.format == 'records':
        _emit_docs(args, MANIFEST, [manifest.to_dict()])
    else:
        rows = [{'item': k, 'g': e.g, 'f': e.f, 'tau': e.tau} for k, e in sorted(manifest.per_item.items())]
        _emit(args, render(records_frame(rows, ['item', 'g', 'f', 'tau'])))
    return EXIT_OK


def cmd_score(args, settings, helper) -> int:
    records, registry = _load_records(helper, args)
    manifest = _load_manifest(helper, args, registry)
    cards, levels = [], {}
    for agent_id, agent_records in sorted(_by_agent(records).items()):
        scores = score_items(agent_records, registry, manifest, k=args.topk or settings.FK_TOPK)
        card = scorecard_from_items(agent_id, scores, manifest)
        if args.with_ci:
            cfg = BootstrapConfig(replicates=settings.FK_BOOTSTRAP_REPLICATES,
                                  seed=settings.resolve_seed(args.seed), level=settings.FK_CI_LEVEL)
            card = attach_family_cis(card, scores, cfg)
        cards.append(card)
        levels[agent_id] = level_summary(scores)
    if not cards:
        raise RecordsFormatError(f"{args.input} holds no run records")
    if args.format == 'records':
        _emit_docs(args, SCORECARD, [c.to_dict() for c in cards])
    else:
        text = render(emit_leaderboard(cards))
        for card in cards:
            text += f"\n# {card.agent_id}\n" + render(family_frame(card))
            text += render(records_frame(levels[card.agent_id],
                                         ['level', 'targets', 'attempted', 'blocked', 'correct', 'geomean']))
        _emit(args, text)
    return EXIT_FAILURES if _card_failures(cards) else EXIT_OK


def cmd_sweep(args, settings, helper) -> int:
    records, registry = _load_records(helper, args)
    manifest = _load_manifest(helper, args, registry)
    scales = args.scales or list(DEFAULT_SCALES)
    docs, text = [], ''
    for agent_id, agent_records in sorted(_by_agent(records).items()):
        rows = sensitivity_sweep(agent_records, registry, manifest, scales)
        for row in rows:
            docs.append({
                'type': 'sweep-row', 'agent_id': agent_id, 'scale': row.scale,
                'correct': row.correct, 'total': row.total, 'geomean': row.geomean,
                'correct_by_level': {str(k): v for k, v in row.correct_by_level.items()},
                'total_by_level': {str(k): v for k, v in row.total_by_level.items()},
                'geomean_by_level': {str(k): v for k, v in row.geomean_by_level.items()},
            })
        text += f"# {agent_id}\n" + render(sweep_frame(rows))
    if args.format == 'records':
        _emit_docs(args, RECORDS, docs)
    else:
        _emit(args, text)
    return EXIT_OK


def cmd_bootstrap(args, settings, helper) -> int:
    records, registry = _load_records(helper, args)
    manifest = _load_manifest(helper, args, registry)
    cfg = BootstrapConfig(
        replicates=args.replicates or settings.FK_BOOTSTRAP_REPLICATES,
        seed=settings.resolve_seed(args.seed),
        level=args.level or settings.FK_CI_LEVEL,
        workers=args.workers or settings.FK_MAX_WORKERS,
    )
    rows = []
    for agent_id, agent_records in sorted(_by_agent(records).items()):
        scores = sorted(score_items(agent_records, registry, manifest), key=lambda s: s.item_id)
        groups = [(f"family:{f}", [s for s in scores if s.family_id == f]) for f in registry.family_ids()]
        groups += [(f"L{lvl}", [s for s in scores if s.level == lvl]) for lvl in sorted({s.level for s in scores})]
        groups.append(('all', scores))
        for label, group in groups:
            valid = [s.s(DEFAULT_LAMBDA) for s in group if s.valid]
            if not valid:
                continue
            ci = bootstrap_ci(valid, cfg)
            rows.append({'agent': agent_id, 'group': label, 'n': ci.n, 'point': ci.point,
                         'lo': ci.lo, 'hi': ci.hi, 'method': ci.method})
    if args.format == 'records':
        _emit_docs(args, RECORDS, [{'type': 'confidence-interval', **r} for r in rows])
    else:
        _emit(args, render(records_frame(rows, ['agent', 'group', 'n', 'point', 'lo', 'hi', 'method'])))
    return EXIT_OK


def cmd_gap(args, settings, helper) -> int:
    records, registry = _load_records(helper, args)
    manifest = _load_manifest(helper, args, registry)
    policies = [args.policy] if args.policy else [p.value for p in GapPolicy]
    imputed = args.imputed or settings.FK_IMPUTED_SPEEDUP
    rows = []
    for agent_id, agent_records in sorted(_by_agent(records).items()):
        scores = score_items(agent_records, registry, manifest)
        for policy in policies:
            result = harness_gap(scores, policy, imputed)
            rows.append({'agent': agent_id, 'policy': result.policy.value, 'coverage': result.coverage,
                         'correct': result.correct, 'denominator': result.denominator,
                         'geomean': result.geomean})
    if args.format == 'records':
        _emit_docs(args, RECORDS, [{'type': 'gap-result', **r} for r in rows])
    else:
        _emit(args, render(records_frame(rows, ['agent', 'policy', 'coverage', 'correct', 'denominator', 'geomean'])))
    return EXIT_OK


def cmd_leaderboard(args, settings, helper) -> int:
    cards = helper.read_scorecards(_require_input(args))
    if not cards:
        raise RecordsFormatError('no scorecards to rank')
    frame = emit_leaderboard(cards)
    if args.format == 'records':
        order = {agent: i for i, agent in enumerate(frame['agent'])}
        _emit_docs(args, SCORECARD, [c.to_dict() for c in sorted(cards, key=lambda c: order[c.agent_id])])
    else:
        _emit(args, render(frame))
    return EXIT_OK


def cmd_run_tier1(args, settings, helper) -> int:
    registry = standard_registry()
    item = registry.item(args.item)
    if args.input:
        bundle = next((b for b in helper.read_bundles(args.input) if b.item_id == item.item_id), None)
        if bundle is None:
            raise RecordsFormatError(f"{args.input} holds no bundle for {item.item_id}")
    else:
        bundle = standard_bundle(item, settings.resolve_seed(args.seed))
    candidate = WorkerProgram(args.candidate or item.reference_runner, WorkerRole.CANDIDATE,
                              _timeout(args, settings))
    record = run_pair(item, candidate, bundle, _protocol(args, settings), agent_id=args.agent,
                      bindings=_bindings(args.bind))
    if args.format == 'records':
        _emit_docs(args, RECORDS, [{'type': 'run-record', **record.to_dict()}])
    else:
        rows = [{'scenario': s.scenario_id, 'ref_runtime_s': s.ref_runtime_s, 'cand_runtime_s': s.cand_runtime_s,
                 'speedup': s.ref_runtime_s / s.cand_runtime_s} for s in record.scenarios]
        _emit(args, f"status\t{record.status.value}\n"
                    + render(records_frame(rows, ['scenario', 'ref_runtime_s', 'cand_runtime_s', 'speedup'])))
    return EXIT_OK if record.ok else EXIT_FAILURES


def cmd_run_tier2(args, settings, helper) -> int:
    dag = register_task_graph(standard_task_nodes())
    for slot, locator in _bindings(args.bind).items():
        dag.set_best_kernel(slot, locator)
    seed = settings.resolve_seed(args.seed)
    result = run_e2e(dag.node('toy_model'), dag, toy_workload(args.prompts, seed), _protocol(args, settings),
                     _timeout(args, settings), seed=seed)
    if args.format == 'records':
        _emit_docs(args, CAPTURE, [b.to_dict() for b in result.bundles])
    else:
        rows = [{'scenario': m.scenario_id, 'throughput': m.throughput, 'latency_s': m.latency_s}
                for m in result.measurements]
        text = render(records_frame(rows, ['scenario', 'throughput', 'latency_s']))
        rows = [{'bundle': b.bundle_id, 'item': b.item_id, 'scenarios': len(b.scenarios)} for b in result.bundles]
        _emit(args, text + '\n' + render(records_frame(rows, ['bundle', 'item', 'scenarios'])))
    return EXIT_OK


def _parse_agent(spec: str, registry: Registry) -> Tuple[str, Dict[str, str]]:
    """name:reference or name:item=locator,item=locator"""
    if ':' not in spec:
        raise RecordsFormatError(f"agent {spec!r} is not name:bindings")
    name, rest = spec.split(':', 1)
    if rest.strip() == 'reference':
        return name, reference_agent(registry)
    return name, _bindings(rest.split(','))


def cmd_run_tier3(args, settings, helper) -> int:
    registry = standard_registry()
    manifest = _load_manifest(helper, args, registry)
    agents = dict(_parse_agent(spec, registry) for spec in (args.agent or ['reference:reference']))
    dag = register_task_graph(standard_task_nodes())
    bundles = standard_bundles(registry, settings.resolve_seed(args.seed))
    cards, all_records = [], []
    for agent_id in sorted(agents):
        records = evaluate_agent(agent_id, agents[agent_id], registry, bundles, _protocol(args, settings),
                                 _timeout(args, settings), dag=dag, max_workers=settings.FK_MAX_WORKERS)
        all_records += records
        cards.append(build_scorecard(records, registry, manifest, agent_id=agent_id))
    if args.records_out:
        helper.write_records(args.records_out, all_records, registry)
    if args.format == 'records':
        _emit_docs(args, SCORECARD, [c.to_dict() for c in cards])
    else:
        _emit(args, render(emit_leaderboard(cards)))
    return EXIT_FAILURES if _card_failures(cards) else EXIT_OK


def cmd_capture(args, settings, helper) -> int:
    registry = standard_registry()
    seed = settings.resolve_seed(args.seed)
    bundles = standard_bundles(registry, seed)
    selected = [bundles[i] for i in sorted(bundles) if not args.item or i == args.item]
    _emit_docs(args, CAPTURE, [b.to_dict() for b in selected])
    return EXIT_OK


def cmd_replay(args, settings, helper) -> int:
    registry = standard_registry()
    manifest = _load_manifest(helper, args, registry)
    rows, records = [], []
    for bundle in helper.read_bundles(_require_input(args)):
        item = registry.item(bundle.item_id)
        candidate = WorkerProgram(args.candidate or item.reference_runner, WorkerRole.CANDIDATE,
                                  _timeout(args, settings))
        record = run_pair(item, candidate, bundle, _protocol(args, settings), agent_id=args.agent)
        records.append(record)
        family = registry.family_of(item.item_id)
        worst = None
        if record.ok:
            tol = manifest.tolerance(item.dtype)
            worst = max(dispatch_discrepancy(family, s, tol).d for s in record.scenarios)
        rows.append({'bundle': bundle.bundle_id, 'item': item.item_id, 'status': record.status.value,
                     'scenarios': len(bundle.scenarios), 'max_d': worst})
    if args.format == 'records':
        _emit_docs(args, RECORDS, [{'type': 'run-record', **r.to_dict()} for r in records])
    else:
        _emit(args, render(records_frame(rows, ['bundle', 'item', 'status', 'scenarios', 'max_d'])))
    return EXIT_OK if all(r.ok for r in records) else EXIT_FAILURES


def cmd_allreduce_check(args, settings, helper) -> int:
    rng = np.random.default_rng(settings.resolve_seed(args.seed))
    scenarios = [rng.integers(-100, 100, size=(args.ranks, args.length)).astype(np.float64)
                 for _ in range(args.scenarios)]
    candidate = WorkerProgram(args.candidate or 'allreduce.ring', WorkerRole.CANDIDATE, _timeout(args, settings))
    results = allreduce_check(candidate, scenarios, ranks=args.ranks, tol=DtypeTolerances.FP32)
    rows = [{'scenario': r.scenario_id, 'passed': r.passed, 'worst_ratio': r.worst_ratio,
             'failing_ranks': ','.join(str(x) for x in r.failing_ranks) or '-'} for r in results]
    if args.format == 'records':
        _emit_docs(args, RECORDS, [{'type': 'allreduce-result', **r} for r in rows])
    else:
        _emit(args, render(records_frame(rows, ['scenario', 'passed', 'worst_ratio', 'failing_ranks'])))
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURES


def cmd_routing(args, settings, helper) -> int:
    seed = settings.resolve_seed(args.seed)
    loads: List[ExpertLoad] = []
    if args.input:
        loads = [expert_load(b, args.k) for b in helper.read_bundles(args.input)]
    else:
        for source in args.sources.split(','):
            logits = toy_gate_logits(source, args.tokens, args.experts, seed)
            loads.append(expert_load(logits, args.k, label=source))
    top = min(args.top, loads[0].num_experts)
    rows = []
    for load in loads:
        shared, fraction = hot_expert_overlap(loads[0], load, top)
        rows.append({'source': load.source, 'gini': gini(load),
                     f"top-{top}": ','.join(str(e) for e in sorted(hot_experts(load, top))),
                     'shared_with_first': f"{shared}/{top}"})
    if args.format == 'records' and args.out:
        helper.write_loads(args.out, loads)
    elif args.format == 'records':
        _emit_docs(args, RECORDS, [{'type': 'expert-load', **load.to_dict()} for load in loads])
    else:
        _emit(args, render(records_frame(rows, ['source', 'gini', f"top-{top}", 'shared_with_first'])))
    return EXIT_OK


COMMANDS = {
    'calibrate': cmd_calibrate,
    'score': cmd_score,
    'sweep': cmd_sweep,
    'bootstrap': cmd_bootstrap,
    'gap': cmd_gap,
    'leaderboard': cmd_leaderboard,
    'run-tier1': cmd_run_tier1,
    'run-tier2': cmd_run_tier2,
    'run-tier3': cmd_run_tier3,
    'capture': cmd_capture,
    'replay': cmd_replay,
    'allreduce-check': cmd_allreduce_check,
    'routing': cmd_routing,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--input', help='input file (fk-records, fk-capture or fk-scorecard)')
    common.add_argument('--manifest', help='fk-manifest file; family defaults when omitted')
    common.add_argument('--out', help='output file; stdout when omitted')
    common.add_argument('--seed', type=int, default=None, help='falls back to FK_SEED')
    common.add_argument('--format', choices=['table', 'records'], default='table')

    harness = argparse.ArgumentParser(add_help=False)
    harness.add_argument('--warmup', type=int, default=None)
    harness.add_argument('--timed-runs', type=int, default=None)
    harness.add_argument('--timeout', type=float, default=None, help='seconds per scenario')

    parser = argparse.ArgumentParser(prog='fastkernels-eval', description='kernel benchmark evaluation')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('calibrate', parents=[common])
    p.add_argument('--replicates', type=int, default=3)

    p = sub.add_parser('score', parents=[common])
    p.add_argument('--topk', type=int, default=None)
    p.add_argument('--with-ci', action='store_true', help='attach per-family bootstrap intervals')

    p = sub.add_parser('sweep', parents=[common])
    p.add_argument('--scales', type=_float_list, default=None, help='comma-separated, default 0.25,0.5,1,2,5')

    p = sub.add_parser('bootstrap', parents=[common])
    p.add_argument('--replicates', type=int, default=None)
    p.add_argument('--level', type=float, default=None)
    p.add_argument('--workers', type=int, default=None)

    p = sub.add_parser('gap', parents=[common])
    p.add_argument('--policy', choices=[g.value for g in GapPolicy], default=None)
    p.add_argument('--imputed', type=float, default=None)

    sub.add_parser('leaderboard', parents=[common])

    p = sub.add_parser('run-tier1', parents=[common, harness])
    p.add_argument('--item', required=True)
    p.add_argument('--candidate', default=None, help='locator; the reference itself when omitted')
    p.add_argument('--agent', default='cli')
    p.add_argument('--bind', action='append', help='slot=locator for composite items')

    p = sub.add_parser('run-tier2', parents=[common, harness])
    p.add_argument('--prompts', type=int, default=4)
    p.add_argument('--bind', action='append', help='task=locator best-kernel overrides')

    p = sub.add_parser('run-tier3', parents=[common, harness])
    p.add_argument('--agent', action='append', help='name:reference or name:item=locator,...')
    p.add_argument('--records-out', default=None)

    p = sub.add_parser('capture', parents=[common])
    p.add_argument('--item', default=None)

    p = sub.add_parser('replay', parents=[common, harness])
    p.add_argument('--candidate', default=None)
    p.add_argument('--agent', default='replay')

    p = sub.add_parser('allreduce-check', parents=[common])
    p.add_argument('--candidate', default=None, help='allreduce.ring or allreduce.identity')
    p.add_argument('--ranks', type=int, default=4)
    p.add_argument('--scenarios', type=int, default=20)
    p.add_argument('--length', type=int, default=64)
    p.add_argument('--timeout', type=float, default=None)

    p = sub.add_parser('routing', parents=[common])
    p.add_argument('--sources', default='random-tensor,random-tokens,structured')
    p.add_argument('--tokens', type=int, default=4096)
    p.add_argument('--experts', type=int, default=128)
    p.add_argument('-k', type=int, default=8)
    p.add_argument('--top', type=int, default=16)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK

    try:
        settings = Settings()
    except ValueError as e:
        logger.error("invalid settings", error=str(e))
        return EXIT_USAGE

    helper = RecordsHelper()
    try:
        return COMMANDS[args.command](args, settings, helper)
    except ReferenceFailureError as e:
        logger.error("reference failure", command=args.command, error=str(e))
        return EXIT_INTERNAL
    except HarnessError as e:
        logger.error("harness error", command=args.command, code=e.code, error=str(e))
        return EXIT_INTERNAL
    except RecordsFormatError as e:
        logger.error("malformed input", command=args.command, error=str(e))
        return EXIT_USAGE
    except FastKernelsError as e:
        logger.error("rejected input", command=args.command, code=e.code, error=str(e))
        return EXIT_USAGE
    except Exception as e:
        logger.error("error in main execution", command=args.command, error=str(e))
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
