# tests/test_dag.py

import numpy as np
import pytest

from src.config.suite import standard_task_nodes
from src.core.errors import HarnessError
from src.core.models import TaskNode
from src.harness.dag import register_task_graph, resolve_closure, resolve_composition


def _nodes():
    return [
        TaskNode('rmsnorm', 'rmsnorm', 1),
        TaskNode('linear', 'linear', 1),
        TaskNode('mlp', 'mlp', 2, frozenset({'linear', 'rmsnorm'})),
        TaskNode('block', 'block', 3, frozenset({'mlp'})),
    ]


def test_order_by_level_then_id():
    assert register_task_graph(_nodes()).order() == ['linear', 'rmsnorm', 'mlp', 'block']


def test_level_violation():
    nodes = [TaskNode('a', 'a', 2), TaskNode('b', 'b', 2, frozenset({'a'}))]
    with pytest.raises(HarnessError) as e:
        register_task_graph(nodes)
    assert e.value.code == 'level-violation'


def test_dangling_dependency():
    with pytest.raises(HarnessError) as e:
        register_task_graph([TaskNode('mlp', 'mlp', 2, frozenset({'linear'}))])
    assert e.value.code == 'dangling-dependency'


def test_duplicate_task():
    with pytest.raises(HarnessError) as e:
        register_task_graph([TaskNode('a', 'a', 1), TaskNode('a', 'a', 1)])
    assert e.value.code == 'duplicate-id'


def test_all_reference_bindings():
    dag = register_task_graph(_nodes())
    assert resolve_composition(dag, 'mlp') == {'linear': 'linear', 'rmsnorm': 'rmsnorm'}


def test_optimized_kernel_is_reused():
    dag = register_task_graph(_nodes())
    dag.set_best_kernel('linear', 'linear_tiled')
    assert resolve_composition(dag, 'mlp') == {'linear': 'linear_tiled', 'rmsnorm': 'rmsnorm'}
    assert resolve_closure(dag, 'block') == {'linear': 'linear_tiled', 'mlp': 'mlp', 'rmsnorm': 'rmsnorm'}


def test_rebinding_is_picked_up():
    dag = register_task_graph(_nodes())
    dag.set_best_kernel('linear', 'linear_tiled')
    dag.set_best_kernel('linear', None)
    assert resolve_composition(dag, 'mlp')['linear'] == 'linear'


def test_unknown_task():
    with pytest.raises(HarnessError) as e:
        resolve_composition(register_task_graph(_nodes()), 'attention')
    assert e.value.code == 'unknown-task'


def test_standard_graph():
    dag = register_task_graph(standard_task_nodes())
    assert dag.order()[-1] == 'toy_model'
    assert set(resolve_closure(dag, 'toy_model')) == {'block', 'gelu', 'linear', 'mlp', 'rmsnorm'}


def _reachable(deps, start):
    seen, stack = set(), list(deps[start])
    while stack:
        task = stack.pop()
        if task not in seen:
            seen.add(task)
            stack.extend(deps[task])
    return seen


def test_random_graphs_register_only_when_levels_strictly_drop():
    rng = np.random.default_rng(7)
    for _ in range(200):
        count = int(rng.integers(2, 9))
        levels = {f"t{i}": int(rng.integers(1, 5)) for i in range(count)}
        deps = {t: {d for d in levels if d != t and rng.random() < 0.3} for t in levels}
        nodes = [TaskNode(t, t, levels[t], frozenset(deps[t])) for t in levels]
        layered = all(levels[d] < levels[t] for t in deps for d in deps[t])
        if not layered:
            with pytest.raises(HarnessError) as e:
                register_task_graph(nodes)
            assert e.value.code == 'level-violation'
            continue
        dag = register_task_graph(nodes)
        # no task can reach itself through its dependencies
        assert all(t not in _reachable(deps, t) for t in deps)
        position = {t: i for i, t in enumerate(dag.order())}
        assert all(position[d] < position[t] for t in deps for d in deps[t])
        for t in deps:
            assert set(resolve_closure(dag, t)) == _reachable(deps, t)
