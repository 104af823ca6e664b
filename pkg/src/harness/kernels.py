# src/harness/kernels.py
"""
Desk-scale stand-ins for production kernels.

Every built-in is a plain numpy function taking a KernelContext followed by
its input arrays. Composite kernels (mlp, block, toy_model) call their
sub-kernels through named slots so optimized lower-level kernels can be
bound in without touching the composite.

Locators:
    <name>                       a registered kernel, e.g. "rmsnorm"
    fault:<kind>:<name>[@amp]    a fault-injected candidate wrapping <name>
"""

import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np

from src.core.errors import NonFiniteOutputError, RoutingError
from src.core.models import OutputPayload, PayloadKind

HIDDEN = 16
VOCAB = 32
EXPERTS = 16
GATE_TOPK = 4
DOCS = 64
TOKENS_BY_SCENARIO = (4, 8, 16)
NOISE_SEED = 1234
HANG_SECONDS = 3600.0
STALL_SECONDS = 4.0


@dataclass
class KernelContext:
    """per-call state handed to kernels: slot bindings, scenario position, capture hook"""
    bindings: Mapping[str, str] = field(default_factory=dict)
    scenario_index: int = 0
    recorder: Optional[Callable[[str, Sequence[np.ndarray]], None]] = None
    # set to replay the reference with a permuted reduction order
    reduction_seed: Optional[int] = None

    def reduction_order(self, n: int) -> Optional[np.ndarray]:
        if self.reduction_seed is None:
            return None
        return np.random.default_rng(self.reduction_seed).permutation(n)

    def slot(self, name: str) -> Callable[..., np.ndarray]:
        locator = self.bindings.get(name, name)
        kernel = resolve(locator)

        def call(*arrays: np.ndarray) -> np.ndarray:
            if self.recorder is not None:
                self.recorder(name, arrays)
            return kernel.fn(self, *arrays)
        return call


@dataclass(frozen=True)
class Kernel:
    name: str
    fn: Callable[..., np.ndarray]
    output_kind: PayloadKind
    level: int = 1
    slots: tuple = ()

    def to_payload(self, output: np.ndarray) -> OutputPayload:
        if self.output_kind is PayloadKind.SCALAR:
            return OutputPayload.scalar(float(np.asarray(output).reshape(-1)[0]))
        if self.output_kind in (PayloadKind.TOKEN_IDS, PayloadKind.RANKED_IDS):
            ids = np.asarray(output).reshape(-1)
            if ids.dtype.kind == 'f' and not np.all(np.isfinite(ids)):
                raise NonFiniteOutputError(f"{self.name} emitted non-finite ids")
            return OutputPayload.ids(self.output_kind, ids)
        return OutputPayload.tensor(output)


# --- reference math -------------------------------------------------------

def rmsnorm(x: np.ndarray, weight: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    rms = np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    return x / rms * weight


def softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x ** 3)))


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ w + b


def tiled_linear(x: np.ndarray, w: np.ndarray, b: np.ndarray, tile: int = 4) -> np.ndarray:
    """same product as linear, accumulated tile by tile from the last k-tile back"""
    out = np.zeros((x.shape[0], w.shape[1]), dtype=np.float64)
    for start in reversed(range(0, x.shape[1], tile)):
        out += x[:, start:start + tile] @ w[start:start + tile, :]
    return out + b


def topk_gate(logits: np.ndarray, k: int) -> np.ndarray:
    """selected expert indices per token, ties to the lower expert index"""
    logits = np.atleast_2d(logits)
    return np.argsort(-logits, axis=-1, kind='stable')[:, :k]


def gate_weights(logits: np.ndarray, k: int) -> np.ndarray:
    logits = np.atleast_2d(logits)
    selected = topk_gate(logits, k)
    weights = np.zeros_like(logits)
    picked = np.take_along_axis(logits, selected, axis=-1)
    np.put_along_axis(weights, selected, softmax(picked), axis=-1)
    return weights


# --- kernel entry points ----------------------------------------------------

def _rmsnorm_kernel(ctx: KernelContext, x, weight, eps=None):
    eps = 1e-6 if eps is None else float(np.asarray(eps).reshape(-1)[0])
    order = ctx.reduction_order(x.shape[-1])
    if order is None:
        return rmsnorm(x, weight, eps)
    rms = np.sqrt(np.mean(x[..., order] ** 2, axis=-1, keepdims=True) + eps)
    return x / rms * weight


def _softmax_kernel(ctx: KernelContext, x):
    order = ctx.reduction_order(x.shape[-1])
    if order is None:
        return softmax(x)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e[..., order].sum(axis=-1, keepdims=True)


def _linear_kernel(ctx: KernelContext, x, w, b):
    order = ctx.reduction_order(x.shape[-1])
    if order is None:
        return linear(x, w, b)
    return x[:, order] @ w[order, :] + b


def _tiled_linear_kernel(ctx: KernelContext, x, w, b):
    return tiled_linear(x, w, b)


def _gelu_kernel(ctx: KernelContext, x):
    return gelu(x)


def _moe_gate_kernel(ctx: KernelContext, logits):
    return gate_weights(logits, GATE_TOPK)


def _retrieval_kernel(ctx: KernelContext, query, docs):
    query = query.reshape(-1)
    order = ctx.reduction_order(query.size)
    scores = docs @ query if order is None else docs[:, order] @ query[order]
    return np.argsort(-scores, kind='stable')


def _score_metric_kernel(ctx: KernelContext, logits, targets):
    predicted = np.argmax(logits, axis=-1)
    return np.array([np.mean(predicted != targets.astype(np.int64))])


def _mlp_kernel(ctx: KernelContext, x, w1, b1, w2, b2):
    lin = ctx.slot('linear')
    act = ctx.slot('gelu')
    return lin(act(lin(x, w1, b1)), w2, b2)


def _block_kernel(ctx: KernelContext, x, norm_w, w1, b1, w2, b2):
    normed = ctx.slot('rmsnorm')(x, norm_w)
    return x + ctx.slot('mlp')(normed, w1, b1, w2, b2)


def _toy_model_kernel(ctx: KernelContext, x, *params):
    # params: 2 layers x (norm_w, w1, b1, w2, b2), then head (w_out, b_out)
    layers, head = params[:-2], params[-2:]
    block = ctx.slot('block')
    h = x
    for i in range(0, len(layers), 5):
        h = block(h, *layers[i:i + 5])
    logits = ctx.slot('linear')(h, *head)
    return np.argmax(logits, axis=-1)


BUILTINS: Dict[str, Kernel] = {
    k.name: k for k in (
        Kernel('rmsnorm', _rmsnorm_kernel, PayloadKind.NUMERIC_TENSOR),
        Kernel('softmax', _softmax_kernel, PayloadKind.NUMERIC_TENSOR),
        Kernel('linear', _linear_kernel, PayloadKind.NUMERIC_TENSOR),
        Kernel('linear_tiled', _tiled_linear_kernel, PayloadKind.NUMERIC_TENSOR),
        Kernel('gelu', _gelu_kernel, PayloadKind.NUMERIC_TENSOR),
        Kernel('moe_gate', _moe_gate_kernel, PayloadKind.NUMERIC_TENSOR),
        Kernel('retrieval_topk', _retrieval_kernel, PayloadKind.RANKED_IDS),
        Kernel('score_metric', _score_metric_kernel, PayloadKind.SCALAR),
        Kernel('mlp', _mlp_kernel, PayloadKind.NUMERIC_TENSOR, level=2, slots=('linear', 'gelu')),
        Kernel('block', _block_kernel, PayloadKind.NUMERIC_TENSOR, level=3, slots=('rmsnorm', 'mlp')),
        Kernel('toy_model', _toy_model_kernel, PayloadKind.TOKEN_IDS, level=4, slots=('block', 'linear')),
    )
}


# --- fault-injected candidates ----------------------------------------------

def _noise(base: Kernel, amplitude: float) -> Callable[..., np.ndarray]:
    def fn(ctx: KernelContext, *arrays):
        out = np.asarray(base.fn(ctx, *arrays), dtype=np.float64)
        rng = np.random.default_rng(NOISE_SEED + ctx.scenario_index)
        return out + amplitude * rng.standard_normal(out.shape)
    return fn


def _crash(base: Kernel) -> Callable[..., np.ndarray]:
    def fn(ctx: KernelContext, *arrays):
        # integer division by zero on the second scenario
        ctx.scenario_index // (ctx.scenario_index - 1)
        return base.fn(ctx, *arrays)
    return fn


def _hang(base: Kernel) -> Callable[..., np.ndarray]:
    def fn(ctx: KernelContext, *arrays):
        time.sleep(HANG_SECONDS)
        return base.fn(ctx, *arrays)
    return fn


def _stall(base: Kernel) -> Callable[..., np.ndarray]:
    def fn(ctx: KernelContext, *arrays):
        # slow on the second scenario only
        if ctx.scenario_index == 1:
            time.sleep(STALL_SECONDS)
        return base.fn(ctx, *arrays)
    return fn


def _nan(base: Kernel) -> Callable[..., np.ndarray]:
    def fn(ctx: KernelContext, *arrays):
        out = np.array(base.fn(ctx, *arrays), dtype=np.float64)
        out.reshape(-1)[0] = np.nan
        return out
    return fn


def _shape(base: Kernel) -> Callable[..., np.ndarray]:
    def fn(ctx: KernelContext, *arrays):
        out = np.asarray(base.fn(ctx, *arrays), dtype=np.float64)
        return out.reshape(-1)[:-1]
    return fn


def _type(base: Kernel) -> Callable[..., np.ndarray]:
    def fn(ctx: KernelContext, *arrays):
        return arrays[0] + 'bf16'
    return fn


def _oob(base: Kernel) -> Callable[..., np.ndarray]:
    def fn(ctx: KernelContext, *arrays):
        x = arrays[0]
        return x[x.shape[0] + 1]
    return fn


FAULTS = {
    'crash': _crash,
    'hang': _hang,
    'stall': _stall,
    'nan': _nan,
    'shape': _shape,
    'type': _type,
    'oob': _oob,
}


def resolve(locator: str) -> Kernel:
    if locator in BUILTINS:
        return BUILTINS[locator]
    if locator.startswith('fault:'):
        parts = locator.split(':')
        if len(parts) != 3:
            raise KeyError(f"malformed fault locator: {locator}")
        kind, base_name = parts[1], parts[2]
        amplitude = None
        if '@' in base_name:
            base_name, amp = base_name.split('@', 1)
            amplitude = float(amp)
        base = BUILTINS.get(base_name)
        if base is None:
            raise KeyError(f"unknown kernel: {base_name}")
        if kind == 'noise':
            fn = _noise(base, 0.0 if amplitude is None else amplitude)
        elif kind in FAULTS:
            fn = FAULTS[kind](base)
        else:
            raise KeyError(f"unknown fault kind: {kind}")
        return Kernel(locator, fn, base.output_kind, base.level, base.slots)
    raise KeyError(f"unknown kernel: {locator}")


def is_builtin(locator: str) -> bool:
    try:
        resolve(locator)
        return True
    except (KeyError, ValueError):
        return False


# --- collectives ------------------------------------------------------------

class RankChannel:
    """
    a rank's view of the ring: byte streams to its right and from its left
    neighbour. Sends run on a background thread with at most one in flight.
    """

    def __init__(self, rank: int, size: int, send_right, recv_left, timeout_s: float):
        self.rank = rank
        self.size = size
        self._send = send_right
        self._recv = recv_left
        self.timeout_s = timeout_s
        self._sender: Optional[threading.Thread] = None
        self._send_error: Optional[BaseException] = None

    def _send_bytes(self, data: bytes) -> None:
        try:
            self._send.send_bytes(data)
        except OSError as e:
            self._send_error = e

    def flush(self) -> None:
        if self._sender is not None:
            self._sender.join(self.timeout_s)
            if self._sender.is_alive():
                raise TimeoutError(f"rank {self.rank} could not hand its message on within {self.timeout_s}s")
            self._sender = None
        if self._send_error is not None:
            raise self._send_error

    def send(self, vec: np.ndarray) -> None:
        self.flush()
        data = np.ascontiguousarray(vec, dtype=np.float64).tobytes()
        self._sender = threading.Thread(target=self._send_bytes, args=(data,), name=f"rank-{self.rank}-send",
                                        daemon=True)
        self._sender.start()

    def recv(self) -> np.ndarray:
        if not self._recv.poll(self.timeout_s):
            raise TimeoutError(f"rank {self.rank} heard nothing for {self.timeout_s}s")
        return np.frombuffer(self._recv.recv_bytes(), dtype=np.float64).copy()


def ring_allreduce(vec: np.ndarray, channel: RankChannel) -> np.ndarray:
    """pass every contribution once around the ring, accumulating as it goes by"""
    total = np.array(vec, dtype=np.float64)
    passing = total.copy()
    for _ in range(channel.size - 1):
        channel.send(passing)
        passing = channel.recv()
        total += passing
    channel.flush()
    return total


def identity_allreduce(vec: np.ndarray, channel: RankChannel) -> np.ndarray:
    # a single-process harness that stages collectives collapses them to this
    return np.array(vec, dtype=np.float64)


COLLECTIVES: Dict[str, Callable[[np.ndarray, RankChannel], np.ndarray]] = {
    'allreduce.ring': ring_allreduce,
    'allreduce.identity': identity_allreduce,
}


def is_collective(locator: str) -> bool:
    return locator in COLLECTIVES


# --- workload generation ------------------------------------------------------

def _mlp_params(rng: np.random.Generator) -> List[np.ndarray]:
    return [
        rng.standard_normal((HIDDEN, 2 * HIDDEN)) / np.sqrt(HIDDEN),
        0.1 * rng.standard_normal(2 * HIDDEN),
        rng.standard_normal((2 * HIDDEN, HIDDEN)) / np.sqrt(2 * HIDDEN),
        0.1 * rng.standard_normal(HIDDEN),
    ]


def make_inputs(name: str, rng: np.random.Generator, scenario_index: int) -> List[np.ndarray]:
    """seeded inputs for one scenario of a built-in reference kernel"""
    tokens = TOKENS_BY_SCENARIO[scenario_index % len(TOKENS_BY_SCENARIO)]
    x = rng.standard_normal((tokens, HIDDEN))
    norm_w = 1.0 + 0.1 * rng.standard_normal(HIDDEN)
    if name == 'rmsnorm':
        return [x, norm_w]
    if name == 'softmax':
        return [rng.standard_normal((tokens, VOCAB))]
    if name in ('linear', 'linear_tiled'):
        return [x, rng.standard_normal((HIDDEN, HIDDEN)) / np.sqrt(HIDDEN), 0.1 * rng.standard_normal(HIDDEN)]
    if name == 'gelu':
        return [x]
    if name == 'moe_gate':
        return [rng.standard_normal((tokens, EXPERTS))]
    if name == 'retrieval_topk':
        return [rng.standard_normal(HIDDEN), rng.standard_normal((DOCS, HIDDEN))]
    if name == 'score_metric':
        return [rng.standard_normal((tokens * 4, VOCAB)), rng.integers(0, VOCAB, tokens * 4).astype(np.float64)]
    if name == 'mlp':
        return [x] + _mlp_params(rng)
    if name == 'block':
        return [x, norm_w] + _mlp_params(rng)
    if name == 'toy_model':
        params = []
        for _ in range(2):
            params += [1.0 + 0.1 * rng.standard_normal(HIDDEN)] + _mlp_params(rng)
        params += [rng.standard_normal((HIDDEN, VOCAB)) / np.sqrt(HIDDEN), 0.1 * rng.standard_normal(VOCAB)]
        return [x] + params
    raise KeyError(f"no workload generator for kernel: {name}")


def toy_gate_logits(source: str, tokens: int, experts: int, seed: int) -> np.ndarray:
    """
    gate logits for routing analytics.
    random-tensor: i.i.d. logits injected at the gate (near-uniform routing).
    random-tokens / structured: token embeddings through a fixed gate projection;
    structured traffic draws from a small, Zipf-skewed vocabulary, random tokens
    draw uniformly from a wider one.
    """
    rng = np.random.default_rng(seed)
    if source == 'random-tensor':
        return rng.standard_normal((tokens, experts))

    proj_rng = np.random.default_rng(7)
    vocab = 512
    embeddings = proj_rng.standard_normal((vocab, HIDDEN))
    gate = proj_rng.standard_normal((HIDDEN, experts))
    if source == 'random-tokens':
        ids = rng.integers(0, vocab, tokens)
    elif source == 'structured':
        ranks = np.arange(1, 33)
        probs = 1.0 / ranks ** 1.2
        ids = rng.choice(32, size=tokens, p=probs / probs.sum()) * 16 + 3
    else:
        raise RoutingError('unknown-source', f"unknown gate source: {source}")
    return embeddings[ids] @ gate
