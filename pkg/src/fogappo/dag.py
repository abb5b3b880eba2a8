"""Service DAGs: validation, upward ranks, execution order, critical path.

A service is a DAG of tasks with CPU/RAM/deadline demands and weighted data
edges.  Ranks follow the classic HEFT recurrence using server-averaged
computation and communication costs, so they depend only on the pool, not on
any particular placement.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .scenario import ServerPool


class DagError(ValueError):
    """Base class for malformed service graphs."""


class EmptyDag(DagError):
    pass


class CycleDetected(DagError):
    pass


class DanglingEdge(DagError):
    pass


class InvalidWeight(DagError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    id: int
    cpu_cycles: float       # cycles required to process the task
    ram_bytes: float        # resident memory while running
    deadline_s: float       # maximum tolerable delay for the task


@dataclass(frozen=True)
class DagEdge:
    src: int
    dst: int
    data_bytes: float       # input data dst receives from src


@dataclass
class ServiceDag:
    id: str
    tasks: list[TaskSpec]
    edges: list[DagEdge]

    def task_by_id(self) -> dict[int, TaskSpec]:
        return {t.id: t for t in self.tasks}

    def parents_map(self) -> dict[int, list[int]]:
        p: dict[int, list[int]] = {t.id: [] for t in self.tasks}
        for e in self.edges:
            p[e.dst].append(e.src)
        return p

    def children_map(self) -> dict[int, list[int]]:
        c: dict[int, list[int]] = {t.id: [] for t in self.tasks}
        for e in self.edges:
            c[e.src].append(e.dst)
        return c

    def edge_map(self) -> dict[tuple[int, int], DagEdge]:
        return {(e.src, e.dst): e for e in self.edges}


@dataclass
class RankedPlan:
    order: list[int]                 # execution order (descending rank)
    rank: dict[int, float]           # upward rank per task, seconds
    critical_path: set[int]
    cp_indicator: dict[int, int]     # 1 iff task is on the critical path


def validate_dag(dag: ServiceDag) -> None:
    """Raise the first invariant violation, or return silently if valid."""
    if not dag.tasks:
        raise EmptyDag(f"service {dag.id!r} has no tasks")
    ids = [t.id for t in dag.tasks]
    if len(set(ids)) != len(ids):
        raise DagError(f"service {dag.id!r} has duplicate task ids")
    for t in dag.tasks:
        if t.cpu_cycles <= 0:
            raise InvalidWeight(f"task {t.id}: cpu_cycles must be > 0")
        if t.ram_bytes <= 0:
            raise InvalidWeight(f"task {t.id}: ram_bytes must be > 0")
        if t.deadline_s <= 0:
            raise InvalidWeight(f"task {t.id}: deadline_s must be > 0")
    known = set(ids)
    seen_pairs: set[tuple[int, int]] = set()
    for e in dag.edges:
        if e.src not in known or e.dst not in known:
            raise DanglingEdge(f"edge {e.src}->{e.dst} references an unknown task")
        if e.src == e.dst:
            raise DagError(f"edge {e.src}->{e.dst} is a self loop")
        if e.data_bytes <= 0:
            raise InvalidWeight(f"edge {e.src}->{e.dst}: data_bytes must be > 0")
        if (e.src, e.dst) in seen_pairs:
            raise DagError(f"duplicate edge {e.src}->{e.dst}")
        seen_pairs.add((e.src, e.dst))
    # Kahn's algorithm; anything left over sits on a cycle.  In an acyclic
    # graph every task's ancestor chain terminates at an entry, so
    # reachability from entries is implied.
    topological_ids(dag)


def topological_ids(dag: ServiceDag) -> list[int]:
    """Deterministic topological order (ready tasks by ascending id)."""
    indeg = {t.id: 0 for t in dag.tasks}
    children = dag.children_map()
    for e in dag.edges:
        indeg[e.dst] += 1
    ready = sorted(tid for tid, d in indeg.items() if d == 0)
    out: list[int] = []
    while ready:
        v = ready.pop(0)
        out.append(v)
        changed = False
        for c in children[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
                changed = True
        if changed:
            ready.sort()
    if len(out) != len(dag.tasks):
        raise CycleDetected(f"service {dag.id!r} contains a dependency cycle")
    return out


def avg_comp_time(task: TaskSpec, pool: "ServerPool") -> float:
    """Mean processing time of `task` over every server in the pool."""
    return task.cpu_cycles * pool.mean_inv_speed


def avg_comm_time(edge: DagEdge, pool: "ServerPool") -> float:
    """Mean transfer time of `edge` over all ordered server pairs.

    Same-server pairs transfer nothing and enter the mean as zero cost, so
    the denominator is M^2 while only distinct pairs contribute.
    """
    return edge.data_bytes * pool.pair_mean_inv_bandwidth + pool.pair_mean_latency


def upward_rank(dag: ServiceDag, pool: "ServerPool") -> dict[int, float]:
    """HEFT upward rank: avg compute plus the costliest child path."""
    validate_dag(dag)
    order = topological_ids(dag)
    children = dag.children_map()
    emap = dag.edge_map()
    tasks = dag.task_by_id()
    rank: dict[int, float] = {}
    for v in reversed(order):
        best_child = 0.0
        for c in children[v]:
            cand = avg_comm_time(emap[(v, c)], pool) + rank[c]
            if cand > best_child:
                best_child = cand
        rank[v] = avg_comp_time(tasks[v], pool) + best_child
    return rank


def execution_order(dag: ServiceDag, rank: dict[int, float]) -> list[int]:
    """Tasks by descending rank, ties by ascending id.

    Because a parent's rank strictly exceeds each child's (compute times are
    positive), this is always a valid topological order.
    """
    missing = [t.id for t in dag.tasks if t.id not in rank]
    if missing:
        raise DagError(f"rank missing for tasks {missing}")
    return sorted((t.id for t in dag.tasks), key=lambda tid: (-rank[tid], tid))


def critical_path(
    dag: ServiceDag, rank: dict[int, float], pool: "ServerPool"
) -> tuple[set[int], dict[int, int]]:
    """Greedy walk from the max-rank entry along the costliest child edges."""
    parents = dag.parents_map()
    children = dag.children_map()
    emap = dag.edge_map()
    entries = sorted(tid for tid, ps in parents.items() if not ps)
    start = max(entries, key=lambda tid: (rank[tid], -tid))
    path = [start]
    v = start
    while children[v]:
        best = None
        best_cost = -1.0
        for c in sorted(children[v]):
            cost = avg_comm_time(emap[(v, c)], pool) + rank[c]
            if cost > best_cost:
                best, best_cost = c, cost
        path.append(best)
        v = best
    cp = set(path)
    indicator = {t.id: 1 if t.id in cp else 0 for t in dag.tasks}
    return cp, indicator


def make_plan(dag: ServiceDag, pool: "ServerPool") -> RankedPlan:
    """Pre-scheduling step: rank, order and critical path in one pass."""
    rank = upward_rank(dag, pool)
    order = execution_order(dag, rank)
    cp, ind = critical_path(dag, rank, pool)
    return RankedPlan(order=order, rank=rank, critical_path=cp, cp_indicator=ind)


# --- on-disk format -------------------------------------------------------
# {id, tasks:[{id, cycles, ram, deadline_ms}], edges:[{src, dst, bytes}]}

def dag_to_dict(dag: ServiceDag) -> dict:
    return {
        "id": dag.id,
        "tasks": [
            {
                "id": t.id,
                "cycles": t.cpu_cycles,
                "ram": t.ram_bytes,
                "deadline_ms": t.deadline_s * 1e3,
            }
            for t in dag.tasks
        ],
        "edges": [
            {"src": e.src, "dst": e.dst, "bytes": e.data_bytes} for e in dag.edges
        ],
    }


def dag_from_dict(doc: dict) -> ServiceDag:
    tasks = [
        TaskSpec(
            id=int(t["id"]),
            cpu_cycles=t["cycles"],
            ram_bytes=t["ram"],
            deadline_s=t["deadline_ms"] / 1e3,
        )
        for t in doc["tasks"]
    ]
    edges = [
        DagEdge(src=int(e["src"]), dst=int(e["dst"]), data_bytes=e["bytes"])
        for e in doc["edges"]
    ]
    return ServiceDag(id=str(doc["id"]), tasks=tasks, edges=edges)


def save_dag(dag: ServiceDag, path: str | Path) -> None:
    Path(path).write_text(json.dumps(dag_to_dict(dag)))


def load_dag(path: str | Path) -> ServiceDag:
    return dag_from_dict(json.loads(Path(path).read_text()))
