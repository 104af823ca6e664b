# src/harness/dag.py

from dataclasses import replace
from typing import Dict, Iterable, List, Mapping, Optional

import networkx as nx
import structlog

from src.core.errors import HarnessError
from src.core.models import TaskNode

logger = structlog.get_logger()


class TaskGraph:
    """validated L1-L4 task DAG; edges run from a dependency to the task that uses it"""

    def __init__(self, graph: nx.DiGraph, runners: Mapping[str, str]):
        self.graph = graph
        self.runners = dict(runners)

    def node(self, task_id: str) -> TaskNode:
        if task_id not in self.graph:
            raise HarnessError('unknown-task', f"task {task_id} is not registered")
        return self.graph.nodes[task_id]['node']

    def order(self) -> List[str]:
        """lowest level first, ties by task_id"""
        return list(nx.lexicographical_topological_sort(
            self.graph, key=lambda t: (self.graph.nodes[t]['node'].level, t)))

    def runner_for(self, task_id: str) -> str:
        node = self.node(task_id)
        return node.best_kernel or self.runners.get(node.item_id, node.item_id)

    def set_best_kernel(self, task_id: str, locator: Optional[str]) -> None:
        node = self.node(task_id)
        self.graph.nodes[task_id]['node'] = replace(node, best_kernel=locator)
        logger.info("updated best kernel", task_id=task_id, best_kernel=locator)

    def nodes(self) -> List[TaskNode]:
        return [self.node(t) for t in self.order()]


def register_task_graph(nodes: Iterable[TaskNode], runners: Optional[Mapping[str, str]] = None) -> TaskGraph:
    """
    runners maps item_id to its reference runner; an item missing there runs
    the built-in kernel of the same name
    """
    by_id: Dict[str, TaskNode] = {}
    for node in nodes:
        if node.task_id in by_id:
            raise HarnessError('duplicate-id', f"task {node.task_id} registered twice")
        by_id[node.task_id] = node

    graph = nx.DiGraph()
    for task_id, node in by_id.items():
        graph.add_node(task_id, node=node)
    for task_id, node in by_id.items():
        for dep in sorted(node.dependencies):
            if dep not in by_id:
                raise HarnessError('dangling-dependency', f"{task_id} depends on unregistered {dep}")
            if by_id[dep].level >= node.level:
                raise HarnessError('level-violation',
                                   f"{task_id} (L{node.level}) depends on {dep} (L{by_id[dep].level})")
            graph.add_edge(dep, task_id)

    dag = TaskGraph(graph, runners or {})
    logger.debug("registered task graph", task_count=len(by_id), order=dag.order())
    return dag


def resolve_composition(dag: TaskGraph, task_id: str) -> Dict[str, str]:
    """bindings for each direct dependency: its best kernel if one is set, else its reference"""
    node = dag.node(task_id)
    return {dep: dag.runner_for(dep) for dep in sorted(node.dependencies)}


def resolve_closure(dag: TaskGraph, task_id: str) -> Dict[str, str]:
    """bindings for every transitive dependency, so nested slots resolve too"""
    dag.node(task_id)
    return {dep: dag.runner_for(dep) for dep in sorted(nx.ancestors(dag.graph, task_id))}
