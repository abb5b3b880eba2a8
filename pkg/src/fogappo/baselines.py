"""Reference placement policies sharing the environment cost model.

`exhaustive_best` enumerates every assignment depth-first in execution
order, keeping the cheapest constraint-satisfying placement (and, as a
fallback, the cheapest overall when nothing is feasible).  Partial
critical-path cost only accumulates, so a branch is pruned as soon as its
partial cost reaches the feasible incumbent — pruning never compares
against infeasible incumbents, which keeps the feasibility flag exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dag import RankedPlan, ServiceDag
from .env import service_exec_time, task_exec_time
from .scenario import ServerPool


class BudgetExceeded(RuntimeError):
    pass


@dataclass
class OracleResult:
    assignment: dict[int, int]
    objective: float
    feasible: bool
    nodes: int


def exhaustive_best(
    dag: ServiceDag,
    pool: ServerPool,
    plan: RankedPlan,
    budget: int = 10_000_000,
    prune: bool = True,
) -> OracleResult:
    """Optimal placement by depth-first enumeration over M^L assignments."""
    order = plan.order
    m = pool.size
    n = len(order)
    if m ** n > budget:
        raise BudgetExceeded(f"{m}^{n} states exceed budget {budget}")
    tasks = dag.task_by_id()
    parents = dag.parents_map()
    ebytes = {(e.src, e.dst): e.data_bytes for e in dag.edges}
    on_cp = plan.critical_path
    ram_cap = pool.ram
    assign: dict[int, int] = {}
    ram_used = np.zeros(m)
    state = {
        "nodes": 0,
        "best_ok_obj": np.inf, "best_ok": None,
        "best_any_obj": np.inf, "best_any": None,
    }

    def recurse(depth: int, partial_cp: float, ok: bool) -> None:
        if depth == n:
            if ok and partial_cp < state["best_ok_obj"]:
                state["best_ok_obj"] = partial_cp
                state["best_ok"] = dict(assign)
            if partial_cp < state["best_any_obj"]:
                state["best_any_obj"] = partial_cp
                state["best_any"] = dict(assign)
            return
        tid = order[depth]
        task = tasks[tid]
        for s in range(m):
            state["nodes"] += 1
            t = task_exec_time(task, pool, s, assign, dag, parents[tid], ebytes)
            new_cp = partial_cp + (t if tid in on_cp else 0.0)
            if prune and new_cp >= state["best_ok_obj"]:
                continue
            new_ok = (ok and t <= task.deadline_s
                      and ram_used[s] + task.ram_bytes <= ram_cap[s])
            assign[tid] = s
            ram_used[s] += task.ram_bytes
            recurse(depth + 1, new_cp, new_ok)
            ram_used[s] -= task.ram_bytes
            del assign[tid]

    recurse(0, 0.0, True)
    feasible = state["best_ok"] is not None
    chosen = state["best_ok"] if feasible else state["best_any"]
    return OracleResult(
        assignment=chosen,
        objective=service_exec_time(dag, chosen, plan, pool),
        feasible=feasible,
        nodes=state["nodes"],
    )


def random_assignment(
    dag: ServiceDag,
    pool: ServerPool,
    plan: RankedPlan,
    seed: int | np.random.Generator,
) -> tuple[dict[int, int], float]:
    """Uniform server per task; the evaluation floor."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    assign = {tid: int(rng.integers(pool.size)) for tid in plan.order}
    return assign, service_exec_time(dag, assign, plan, pool)


def greedy_assignment(
    dag: ServiceDag,
    pool: ServerPool,
    plan: RankedPlan,
) -> tuple[dict[int, int], float]:
    """Myopic placement: each task (in execution order) takes the server with
    the lowest execution time given earlier placements, skipping servers
    whose remaining RAM cannot hold it; ties go to the lowest server id.
    When no server has room the RAM limit is ignored for that task.
    """
    tasks = dag.task_by_id()
    parents = dag.parents_map()
    ebytes = {(e.src, e.dst): e.data_bytes for e in dag.edges}
    residual = pool.ram.copy()
    assign: dict[int, int] = {}
    for tid in plan.order:
        task = tasks[tid]
        fits = [s for s in range(pool.size) if residual[s] >= task.ram_bytes]
        candidates = fits if fits else range(pool.size)
        best_s, best_t = None, np.inf
        for s in candidates:
            t = task_exec_time(task, pool, s, assign, dag, parents[tid], ebytes)
            if t < best_t:
                best_s, best_t = s, t
        assign[tid] = best_s
        residual[best_s] -= task.ram_bytes
    return assign, service_exec_time(dag, assign, plan, pool)
