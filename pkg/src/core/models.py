# src/core/models.py
"""
Domain types shared by the scoring engine and the harness.

Every value validates itself on construction and is immutable afterwards,
except ThresholdManifest which stays editable until it is frozen.
Each type knows how to turn itself into a plain dict (`to_dict`) and back
(`from_dict`); the line-delimited file formats are built on top of that.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from types import MappingProxyType
from typing import Any, Dict, FrozenSet, Iterable, Mapping, Optional, Tuple, Union

import numpy as np

from src.core.errors import ManifestError, ValidationError

Number = Union[int, float]

# candidate NaN/Inf maps here; compares greater than any finite f
DISCREPANCY_SENTINEL = math.inf


class DiscrepancyKind(str, Enum):
    ELEMENTWISE_NUMERIC = 'elementwise-numeric'
    TOKEN_SEQUENCE = 'token-sequence'
    RANKING_TOPK = 'ranking-topk'
    SCALAR_METRIC = 'scalar-metric'


class Dtype(str, Enum):
    FP32 = 'FP32'
    FP16 = 'FP16'
    BF16 = 'BF16'
    FP8_E4M3 = 'FP8-E4M3'
    FP8_E5M2 = 'FP8-E5M2'


class PayloadKind(str, Enum):
    NUMERIC_TENSOR = 'numeric-tensor'
    TOKEN_IDS = 'token-ids'
    RANKED_IDS = 'ranked-ids'
    SCALAR = 'scalar'


class RunStatus(str, Enum):
    OK = 'ok'
    BLOCKED = 'blocked'
    CRASH = 'crash'
    HANG = 'hang'
    SHAPE_ERROR = 'shape-error'
    ILLEGAL_MEMORY = 'illegal-memory'
    NAN = 'nan'
    TYPE_ERROR = 'type-error'


# payload kind each discrepancy family expects
KIND_PAYLOADS = {
    DiscrepancyKind.ELEMENTWISE_NUMERIC: PayloadKind.NUMERIC_TENSOR,
    DiscrepancyKind.TOKEN_SEQUENCE: PayloadKind.TOKEN_IDS,
    DiscrepancyKind.RANKING_TOPK: PayloadKind.RANKED_IDS,
    DiscrepancyKind.SCALAR_METRIC: PayloadKind.SCALAR,
}


def _require(condition: bool, code: str, message: str) -> None:
    if not condition:
        raise ValidationError(code, message)


@dataclass(frozen=True)
class FamilySpec:
    family_id: str
    discrepancy_kind: DiscrepancyKind
    default_fail_threshold: float
    default_validity_threshold: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, 'discrepancy_kind', DiscrepancyKind(self.discrepancy_kind))
        _require(bool(self.family_id), 'invalid-family', 'family_id must be nonempty')
        _require(self.default_fail_threshold >= 0, 'invalid-family',
                 f"negative fail threshold for {self.family_id}")
        _require(0.0 <= self.default_validity_threshold <= 1.0, 'invalid-family',
                 f"validity threshold outside [0,1] for {self.family_id}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'family_id': self.family_id,
            'discrepancy_kind': self.discrepancy_kind.value,
            'default_fail_threshold': self.default_fail_threshold,
            'default_validity_threshold': self.default_validity_threshold,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'FamilySpec':
        return cls(
            family_id=data['family_id'],
            discrepancy_kind=DiscrepancyKind(data['discrepancy_kind']),
            default_fail_threshold=data['default_fail_threshold'],
            default_validity_threshold=data['default_validity_threshold'],
        )


@dataclass(frozen=True)
class DtypeTolerance:
    dtype: Dtype
    atol: float
    rtol: float

    def __post_init__(self):
        object.__setattr__(self, 'dtype', Dtype(self.dtype))
        _require(self.atol >= 0 and self.rtol >= 0, 'invalid-tolerance',
                 f"negative tolerance for {self.dtype.value}")
        _require(self.atol > 0 or self.rtol > 0, 'invalid-tolerance',
                 f"atol and rtol both zero for {self.dtype.value}")

    def band(self, ref: np.ndarray) -> np.ndarray:
        """per-element indistinguishability band atol + rtol*|ref|"""
        return self.atol + self.rtol * np.abs(ref)

    def to_dict(self) -> Dict[str, Any]:
        return {'dtype': self.dtype.value, 'atol': self.atol, 'rtol': self.rtol}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'DtypeTolerance':
        return cls(dtype=Dtype(data['dtype']), atol=data['atol'], rtol=data['rtol'])


@dataclass(frozen=True)
class BenchmarkItem:
    item_id: str
    family_id: str
    level: int
    dtype: Dtype
    scenario_ids: Tuple[str, ...]
    reference_runner: str

    def __post_init__(self):
        object.__setattr__(self, 'dtype', Dtype(self.dtype))
        object.__setattr__(self, 'scenario_ids', tuple(self.scenario_ids))
        _require(bool(self.item_id), 'invalid-item', 'item_id must be nonempty')
        _require(self.level in (1, 2, 3, 4), 'invalid-item', f"level {self.level} not in 1..4")
        _require(len(self.scenario_ids) > 0, 'empty-scenario-list',
                 f"item {self.item_id} has no scenarios")
        _require(len(set(self.scenario_ids)) == len(self.scenario_ids), 'duplicate-id',
                 f"item {self.item_id} repeats a scenario id")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'item_id': self.item_id,
            'family_id': self.family_id,
            'level': self.level,
            'dtype': self.dtype.value,
            'scenario_ids': list(self.scenario_ids),
            'reference_runner': self.reference_runner,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'BenchmarkItem':
        return cls(
            item_id=data['item_id'],
            family_id=data['family_id'],
            level=data['level'],
            dtype=Dtype(data['dtype']),
            scenario_ids=tuple(data['scenario_ids']),
            reference_runner=data['reference_runner'],
        )


@dataclass(frozen=True)
class OutputPayload:
    kind: PayloadKind
    shape: Tuple[int, ...]
    values: Tuple[Number, ...]

    def __post_init__(self):
        object.__setattr__(self, 'kind', PayloadKind(self.kind))
        object.__setattr__(self, 'shape', tuple(int(s) for s in self.shape))
        object.__setattr__(self, 'values', tuple(self.values))
        if self.kind is PayloadKind.SCALAR:
            _require(self.shape == () and len(self.values) == 1, 'invalid-payload',
                     'scalar payload must hold exactly one value and an empty shape')
        elif self.kind is PayloadKind.NUMERIC_TENSOR:
            _require(all(s > 0 for s in self.shape), 'invalid-payload', 'tensor dims must be positive')
            _require(math.prod(self.shape) == len(self.values), 'invalid-payload',
                     f"shape {self.shape} does not match {len(self.values)} values")
        else:
            _require(self.shape == (len(self.values),), 'invalid-payload',
                     f"{self.kind.value} payload must be one-dimensional")
            _require(all(isinstance(v, (int, np.integer)) and not isinstance(v, bool) and v >= 0
                         for v in self.values),
                     'invalid-payload', f"{self.kind.value} must hold nonnegative integers")

    @classmethod
    def tensor(cls, array: Any) -> 'OutputPayload':
        arr = np.asarray(array, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        return cls(PayloadKind.NUMERIC_TENSOR, arr.shape, tuple(float(v) for v in arr.ravel()))

    @classmethod
    def ids(cls, kind: PayloadKind, ids: Iterable[int]) -> 'OutputPayload':
        ids = tuple(int(v) for v in ids)
        return cls(kind, (len(ids),), ids)

    @classmethod
    def scalar(cls, value: float) -> 'OutputPayload':
        return cls(PayloadKind.SCALAR, (), (float(value),))

    def as_array(self) -> np.ndarray:
        if self.kind in (PayloadKind.TOKEN_IDS, PayloadKind.RANKED_IDS):
            return np.asarray(self.values, dtype=np.int64)
        arr = np.asarray(self.values, dtype=np.float64)
        return arr if self.kind is PayloadKind.SCALAR else arr.reshape(self.shape)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(np.asarray(self.values, dtype=np.float64))))

    def to_dict(self) -> Dict[str, Any]:
        return {'kind': self.kind.value, 'shape': list(self.shape), 'values': list(self.values)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'OutputPayload':
        return cls(kind=PayloadKind(data['kind']), shape=tuple(data['shape']), values=tuple(data['values']))


@dataclass(frozen=True)
class ScenarioResult:
    scenario_id: str
    ref_output: OutputPayload
    cand_output: OutputPayload
    ref_runtime_s: float
    cand_runtime_s: float
    ref_throughput: float
    cand_throughput: float
    ref_latency_s: float
    cand_latency_s: float
    discrepancy: Optional[float] = None
    ref_run_times_s: Tuple[float, ...] = ()
    cand_run_times_s: Tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'ref_run_times_s', tuple(self.ref_run_times_s))
        object.__setattr__(self, 'cand_run_times_s', tuple(self.cand_run_times_s))
        for name in ('ref_runtime_s', 'cand_runtime_s', 'ref_throughput', 'cand_throughput',
                     'ref_latency_s', 'cand_latency_s'):
            _require(getattr(self, name) > 0, 'invalid-measurement',
                     f"{name} must be positive in scenario {self.scenario_id}")
        _require(self.discrepancy is None or self.discrepancy >= 0, 'invalid-measurement',
                 f"negative discrepancy in scenario {self.scenario_id}")

    def with_discrepancy(self, d: float) -> 'ScenarioResult':
        return replace(self, discrepancy=d)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'scenario_id': self.scenario_id,
            'ref_output': self.ref_output.to_dict(),
            'cand_output': self.cand_output.to_dict(),
            'ref_runtime_s': self.ref_runtime_s,
            'cand_runtime_s': self.cand_runtime_s,
            'ref_throughput': self.ref_throughput,
            'cand_throughput': self.cand_throughput,
            'ref_latency_s': self.ref_latency_s,
            'cand_latency_s': self.cand_latency_s,
            'discrepancy': self.discrepancy,
            'ref_run_times_s': list(self.ref_run_times_s),
            'cand_run_times_s': list(self.cand_run_times_s),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'ScenarioResult':
        return cls(
            scenario_id=data['scenario_id'],
            ref_output=OutputPayload.from_dict(data['ref_output']),
            cand_output=OutputPayload.from_dict(data['cand_output']),
            ref_runtime_s=data['ref_runtime_s'],
            cand_runtime_s=data['cand_runtime_s'],
            ref_throughput=data['ref_throughput'],
            cand_throughput=data['cand_throughput'],
            ref_latency_s=data['ref_latency_s'],
            cand_latency_s=data['cand_latency_s'],
            discrepancy=data.get('discrepancy'),
            ref_run_times_s=tuple(data.get('ref_run_times_s', ())),
            cand_run_times_s=tuple(data.get('cand_run_times_s', ())),
        )


@dataclass(frozen=True)
class RunRecord:
    agent_id: str
    item_id: str
    status: RunStatus
    scenarios: Tuple[ScenarioResult, ...] = ()
    profile_attachment: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, 'status', RunStatus(self.status))
        object.__setattr__(self, 'scenarios', tuple(self.scenarios))
        if self.status is RunStatus.OK:
            _require(len(self.scenarios) > 0, 'invalid-record',
                     f"ok record for {self.item_id} carries no scenarios")
        else:
            _require(len(self.scenarios) == 0, 'invalid-record',
                     f"{self.status.value} record for {self.item_id} must not carry scenarios")

    @property
    def ok(self) -> bool:
        return self.status is RunStatus.OK

    def covers(self, item: BenchmarkItem) -> bool:
        return {s.scenario_id for s in self.scenarios} >= set(item.scenario_ids)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'agent_id': self.agent_id,
            'item_id': self.item_id,
            'status': self.status.value,
            'scenarios': [s.to_dict() for s in self.scenarios],
            'profile_attachment': self.profile_attachment,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'RunRecord':
        return cls(
            agent_id=data['agent_id'],
            item_id=data['item_id'],
            status=RunStatus(data['status']),
            scenarios=tuple(ScenarioResult.from_dict(s) for s in data.get('scenarios', [])),
            profile_attachment=data.get('profile_attachment'),
        )


@dataclass(frozen=True)
class ThresholdEntry:
    g: float
    f: float
    tau: float = 1.0

    def __post_init__(self):
        if self.g < 0 or self.f <= 0 or not 0.0 <= self.tau <= 1.0:
            raise ManifestError('invalid-entry', f"g={self.g} f={self.f} tau={self.tau}")
        if self.g >= self.f:
            raise ManifestError('band-violation', f"g={self.g} must be below f={self.f}")

    def scaled(self, scale: float) -> 'ThresholdEntry':
        return ThresholdEntry(g=self.g * scale, f=self.f * scale, tau=self.tau)

    def to_dict(self) -> Dict[str, Any]:
        return {'g': self.g, 'f': self.f, 'tau': self.tau}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'ThresholdEntry':
        return cls(g=data['g'], f=data['f'], tau=data['tau'])


@dataclass(eq=True)
class ThresholdManifest:
    per_item: Mapping[str, ThresholdEntry] = field(default_factory=dict)
    dtype_table: Tuple[DtypeTolerance, ...] = ()
    tolerance_scale: float = 1.0
    tau_default: float = 1.0
    provenance: str = ''
    frozen: bool = False

    def __post_init__(self):
        if self.tolerance_scale <= 0:
            raise ManifestError('nonpositive-scale', f"tolerance_scale={self.tolerance_scale}")
        per_item = dict(self.per_item)
        object.__setattr__(self, 'dtype_table', tuple(self.dtype_table))
        object.__setattr__(self, 'per_item', MappingProxyType(per_item) if self.frozen else per_item)

    def __setattr__(self, name, value):
        if getattr(self, 'frozen', False):
            raise ManifestError('frozen-manifest', f"cannot set {name} on a frozen manifest")
        object.__setattr__(self, name, value)

    def set_entry(self, item_id: str, entry: ThresholdEntry) -> None:
        if self.frozen:
            raise ManifestError('frozen-manifest', f"cannot update {item_id} on a frozen manifest")
        self.per_item[item_id] = entry

    def entry(self, item_id: str) -> ThresholdEntry:
        try:
            return self.per_item[item_id]
        except KeyError:
            raise ManifestError('missing-entry', f"no thresholds for item {item_id}")

    def tolerance(self, dtype: Dtype) -> DtypeTolerance:
        for tol in self.dtype_table:
            if tol.dtype is Dtype(dtype):
                return tol
        raise ManifestError('missing-entry', f"no tolerance for dtype {Dtype(dtype).value}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'per_item': {k: self.per_item[k].to_dict() for k in sorted(self.per_item)},
            'dtype_table': [t.to_dict() for t in self.dtype_table],
            'tolerance_scale': self.tolerance_scale,
            'tau_default': self.tau_default,
            'provenance': self.provenance,
            'frozen': self.frozen,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'ThresholdManifest':
        return cls(
            per_item={k: ThresholdEntry.from_dict(v) for k, v in data['per_item'].items()},
            dtype_table=tuple(DtypeTolerance.from_dict(t) for t in data['dtype_table']),
            tolerance_scale=data['tolerance_scale'],
            tau_default=data['tau_default'],
            provenance=data.get('provenance', ''),
            frozen=data['frozen'],
        )


@dataclass(frozen=True)
class TaskNode:
    task_id: str
    item_id: str
    level: int
    dependencies: FrozenSet[str] = frozenset()
    best_kernel: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, 'dependencies', frozenset(self.dependencies))
        _require(self.level in (1, 2, 3, 4), 'level-violation', f"task {self.task_id} level {self.level}")
        _require(self.task_id not in self.dependencies, 'level-violation',
                 f"task {self.task_id} depends on itself")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'task_id': self.task_id,
            'item_id': self.item_id,
            'level': self.level,
            'dependencies': sorted(self.dependencies),
            'best_kernel': self.best_kernel,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'TaskNode':
        return cls(
            task_id=data['task_id'],
            item_id=data['item_id'],
            level=data['level'],
            dependencies=frozenset(data.get('dependencies', [])),
            best_kernel=data.get('best_kernel'),
        )


@dataclass(frozen=True)
class CaptureBundle:
    """
    inputs recorded for one item, one entry per scenario.
    scenarios: (scenario_id, inputs) pairs in replay order.
    """
    bundle_id: str
    item_id: str
    scenarios: Tuple[Tuple[str, Tuple[OutputPayload, ...]], ...]
    source: str = 'synthetic'
    seed: int = 0
    task_id: Optional[str] = None
    captured_at: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, 'scenarios', tuple((sid, tuple(inputs)) for sid, inputs in self.scenarios))
        _require(self.source in ('end-to-end-run', 'synthetic'), 'invalid-bundle',
                 f"unknown bundle source {self.source}")
        ids = [sid for sid, _ in self.scenarios]
        _require(len(ids) > 0, 'empty-scenario-list', f"bundle {self.bundle_id} has no scenarios")
        _require(len(set(ids)) == len(ids), 'duplicate-id', f"bundle {self.bundle_id} repeats a scenario")

    @property
    def scenario_ids(self) -> Tuple[str, ...]:
        return tuple(sid for sid, _ in self.scenarios)

    def inputs_for(self, scenario_id: str) -> Tuple[OutputPayload, ...]:
        for sid, inputs in self.scenarios:
            if sid == scenario_id:
                return inputs
        raise ValidationError('unknown-scenario', f"{scenario_id} not in bundle {self.bundle_id}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'bundle_id': self.bundle_id,
            'item_id': self.item_id,
            'scenarios': [
                {'scenario_id': sid, 'inputs': [p.to_dict() for p in inputs]}
                for sid, inputs in self.scenarios
            ],
            'source': self.source,
            'seed': self.seed,
            'task_id': self.task_id,
            'captured_at': self.captured_at,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'CaptureBundle':
        return cls(
            bundle_id=data['bundle_id'],
            item_id=data['item_id'],
            scenarios=tuple(
                (s['scenario_id'], tuple(OutputPayload.from_dict(p) for p in s['inputs']))
                for s in data['scenarios']
            ),
            source=data['source'],
            seed=data['seed'],
            task_id=data.get('task_id'),
            captured_at=data.get('captured_at'),
        )


@dataclass(frozen=True)
class FamilyBreakdown:
    c_f: float
    coverage_f: float
    s_f: Optional[float]
    valid_count: int
    item_count: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            'c_f': self.c_f,
            'coverage_f': self.coverage_f,
            's_f': self.s_f,
            'valid_count': self.valid_count,
            'item_count': self.item_count,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'FamilyBreakdown':
        return cls(**{k: data[k] for k in ('c_f', 'coverage_f', 's_f', 'valid_count', 'item_count')})


def _lambda_key(lam: float) -> str:
    return repr(float(lam))


@dataclass(frozen=True)
class ScoreCard:
    agent_id: str
    c_macro: float
    coverage_item: float
    coverage_macro: float
    s_macro_by_lambda: Mapping[float, Optional[float]]
    score_default: float
    per_family: Mapping[str, FamilyBreakdown]
    valid_families: FrozenSet[str]
    ci_by_family: Optional[Mapping[str, Tuple[float, float]]] = None
    coverage_attempted: float = 0.0
    attempted_count: int = 0
    blocked_count: int = 0
    fast_at_1: int = 0
    fast_at_1_5: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'valid_families', frozenset(self.valid_families))
        object.__setattr__(self, 's_macro_by_lambda',
                           {float(k): v for k, v in self.s_macro_by_lambda.items()})
        if self.ci_by_family is not None:
            object.__setattr__(self, 'ci_by_family',
                               {k: (float(lo), float(hi)) for k, (lo, hi) in self.ci_by_family.items()})

    def s_macro(self, lam: float = 0.5) -> Optional[float]:
        return self.s_macro_by_lambda.get(float(lam))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'agent_id': self.agent_id,
            'c_macro': self.c_macro,
            'coverage_item': self.coverage_item,
            'coverage_macro': self.coverage_macro,
            'coverage_attempted': self.coverage_attempted,
            's_macro_by_lambda': {_lambda_key(k): self.s_macro_by_lambda[k]
                                  for k in sorted(self.s_macro_by_lambda)},
            'score_default': self.score_default,
            'per_family': {k: self.per_family[k].to_dict() for k in sorted(self.per_family)},
            'valid_families': sorted(self.valid_families),
            'ci_by_family': None if self.ci_by_family is None else {
                k: list(self.ci_by_family[k]) for k in sorted(self.ci_by_family)
            },
            'attempted_count': self.attempted_count,
            'blocked_count': self.blocked_count,
            'fast_at_1': self.fast_at_1,
            'fast_at_1_5': self.fast_at_1_5,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'ScoreCard':
        ci = data.get('ci_by_family')
        return cls(
            agent_id=data['agent_id'],
            c_macro=data['c_macro'],
            coverage_item=data['coverage_item'],
            coverage_macro=data['coverage_macro'],
            s_macro_by_lambda={float(k): v for k, v in data['s_macro_by_lambda'].items()},
            score_default=data['score_default'],
            per_family={k: FamilyBreakdown.from_dict(v) for k, v in data['per_family'].items()},
            valid_families=frozenset(data['valid_families']),
            ci_by_family=None if ci is None else {k: (v[0], v[1]) for k, v in ci.items()},
            coverage_attempted=data.get('coverage_attempted', 0.0),
            attempted_count=data.get('attempted_count', 0),
            blocked_count=data.get('blocked_count', 0),
            fast_at_1=data.get('fast_at_1', 0),
            fast_at_1_5=data.get('fast_at_1_5', 0),
        )
