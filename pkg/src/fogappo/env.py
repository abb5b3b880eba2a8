"""Simulated fog environment: execution-time model, constraints, MDP surface.

A task's execution time is its processing time on the assigned server plus
the time for all predecessor data to arrive there; a service's cost is the
sum of execution times over critical-path tasks only.  The environment
places one task per step (in upward-rank order), rewards -time on success
and a flat failure penalty when the deadline or the server's RAM budget is
violated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO

import numpy as np

from .dag import RankedPlan, ServiceDag, TaskSpec, make_plan, validate_dag
from .scenario import FeatureBounds, Scenario, ServerPool

N_SERVER_FEATURES = 8
N_TASK_FEATURES = 7     # plus one input-ready feature per server


class UnassignedPredecessor(KeyError):
    pass


class IncompleteAssignment(ValueError):
    pass


class EpisodeFinished(RuntimeError):
    pass


class InvalidAction(ValueError):
    pass


# --- execution-time model -------------------------------------------------

def proc_time(task: TaskSpec, pool: ServerPool, server: int) -> float:
    """Processing time: required cycles over the server's speed."""
    return task.cpu_cycles / pool.freq[server]


def latency(a: int, b: int, pool: ServerPool) -> float:
    """Propagation delay: Euclidean distance over the medium speed."""
    return float(pool.latency[a, b])


def comm_time(data_bytes: float, a: int, b: int, pool: ServerPool) -> float:
    """Transfer plus propagation for one edge; zero on the same server."""
    if a == b:
        return 0.0
    return data_bytes / pool.bandwidth[a, b] + pool.latency[a, b]


def input_ready_time(
    task: TaskSpec,
    assignment: dict[int, int],
    dag: ServiceDag,
    pool: ServerPool,
    server: int,
    parents: list[int] | None = None,
    edge_bytes: dict[tuple[int, int], float] | None = None,
) -> float:
    """Worst-case arrival time of the task's inputs at `server`."""
    if parents is None:
        parents = dag.parents_map()[task.id]
    if edge_bytes is None:
        edge_bytes = {(e.src, e.dst): e.data_bytes for e in dag.edges}
    worst = 0.0
    for p in parents:
        if p not in assignment:
            raise UnassignedPredecessor(f"predecessor {p} of task {task.id} unplaced")
        t = comm_time(edge_bytes[(p, task.id)], assignment[p], server, pool)
        if t > worst:
            worst = t
    return worst


def task_exec_time(
    task: TaskSpec,
    pool: ServerPool,
    server: int,
    assignment: dict[int, int],
    dag: ServiceDag,
    parents: list[int] | None = None,
    edge_bytes: dict[tuple[int, int], float] | None = None,
) -> float:
    return proc_time(task, pool, server) + input_ready_time(
        task, assignment, dag, pool, server, parents, edge_bytes
    )


def service_exec_time(
    dag: ServiceDag,
    assignment: dict[int, int],
    plan: RankedPlan,
    pool: ServerPool,
) -> float:
    """Total cost of a full placement: execution times of critical-path tasks."""
    missing = [t.id for t in dag.tasks if t.id not in assignment]
    if missing:
        raise IncompleteAssignment(f"tasks {missing} have no server")
    tasks = dag.task_by_id()
    parents = dag.parents_map()
    ebytes = {(e.src, e.dst): e.data_bytes for e in dag.edges}
    total = 0.0
    for tid in sorted(plan.critical_path):
        total += task_exec_time(
            tasks[tid], pool, assignment[tid], assignment, dag, parents[tid], ebytes
        )
    return total


def completion_times(
    dag: ServiceDag, assignment: dict[int, int], pool: ServerPool
) -> dict[int, float]:
    """Cumulative finish time per task under the precedence recursion."""
    from .dag import topological_ids

    tasks = dag.task_by_id()
    parents = dag.parents_map()
    ebytes = {(e.src, e.dst): e.data_bytes for e in dag.edges}
    done: dict[int, float] = {}
    for tid in topological_ids(dag):
        ready = 0.0
        for p in parents[tid]:
            arrive = done[p] + comm_time(ebytes[(p, tid)], assignment[p], assignment[tid], pool)
            ready = max(ready, arrive)
        done[tid] = ready + proc_time(tasks[tid], pool, assignment[tid])
    return done


@dataclass(frozen=True)
class Violation:
    constraint: str      # "CS1" | "CS2" | "CS3" | "CS4"
    subject: str         # task or server name
    detail: str


def check_constraints(
    dag: ServiceDag,
    assignment: dict[int, int],
    pool: ServerPool,
    exec_times: dict[int, float],
) -> list[Violation]:
    """All constraint violations of a full placement (empty list = feasible)."""
    out: list[Violation] = []
    for t in dag.tasks:
        if t.id not in assignment:
            out.append(Violation("CS1", f"task {t.id}", "no server assigned"))
        elif not 0 <= assignment[t.id] < pool.size:
            out.append(Violation("CS1", f"task {t.id}", "server id out of range"))
    if out:
        return out
    done = completion_times(dag, assignment, pool)
    for e in dag.edges:
        if done[e.dst] < done[e.src]:  # impossible by construction; asserted anyway
            out.append(Violation("CS2", f"edge {e.src}->{e.dst}", "precedence broken"))
    ram_used = np.zeros(pool.size)
    for t in dag.tasks:
        ram_used[assignment[t.id]] += t.ram_bytes
    for s in range(pool.size):
        if ram_used[s] > pool.ram[s]:
            out.append(
                Violation("CS3", pool.servers[s].name,
                          f"ram {ram_used[s]:.0f} > {pool.ram[s]:.0f}")
            )
    for t in dag.tasks:
        if exec_times[t.id] > t.deadline_s:
            out.append(
                Violation("CS4", f"task {t.id}",
                          f"time {exec_times[t.id]:.6f}s > deadline {t.deadline_s:.6f}s")
            )
    return out


# --- MDP surface ----------------------------------------------------------

@dataclass
class StepOutcome:
    next_state: np.ndarray
    reward: float
    done: bool
    info: dict


class OffloadEnv:
    """One service episode at a time; actions pick the server for the
    current task in execution order."""

    def __init__(self, scenario: Scenario, pool: ServerPool | None = None,
                 trace: IO[str] | None = None):
        self.scenario = scenario
        self.pool = pool if pool is not None else scenario.pool()
        self.phi = scenario.phi
        self.bounds = scenario.normalization
        self.trace = trace
        m = self.pool.size
        self.state_dim = m * N_SERVER_FEATURES + N_TASK_FEATURES + m
        self._static_server_raw = self._build_static_server_features()
        self._lo, self._hi = self._bound_vectors()
        self._dag: ServiceDag | None = None

    # feature layout: [server block (M x 8)] + [task block (7)] + [input-ready (M)]
    def _build_static_server_features(self) -> np.ndarray:
        pool = self.pool
        feat = np.zeros((pool.size, N_SERVER_FEATURES))
        feat[:, 0] = pool.positions[:, 0]
        feat[:, 1] = pool.positions[:, 1]
        feat[:, 2] = pool.freq
        feat[:, 3] = pool.cores
        feat[:, 4] = pool.ram
        # column 5 (residual ram) is dynamic
        feat[:, 6] = pool.mean_bandwidth
        feat[:, 7] = pool.latency[:, pool.iot_index]
        return feat

    def _bound_vectors(self) -> tuple[np.ndarray, np.ndarray]:
        b = self.bounds
        lo, hi = [], []
        for _ in range(self.pool.size):
            lo.extend(p[0] for p in b.server)
            hi.extend(p[1] for p in b.server)
        lo.extend(p[0] for p in b.task)
        hi.extend(p[1] for p in b.task)
        lo.extend([b.input_ready[0]] * self.pool.size)
        hi.extend([b.input_ready[1]] * self.pool.size)
        return np.array(lo), np.array(hi)

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        span = self._hi - self._lo
        scaled = np.where(span > 0, (raw - self._lo) / np.where(span > 0, span, 1.0), 0.0)
        return np.clip(scaled, 0.0, 1.0)

    def reset(self, dag: ServiceDag) -> np.ndarray:
        validate_dag(dag)
        self._dag = dag
        self.plan = make_plan(dag, self.pool)
        self._tasks = dag.task_by_id()
        self._parents = dag.parents_map()
        self._ebytes = {(e.src, e.dst): e.data_bytes for e in dag.edges}
        self.assignment: dict[int, int] = {}
        self.exec_times: dict[int, float] = {}
        self.deadline_met: dict[int, bool] = {}
        self.residual_ram = self.pool.ram.copy()
        self.cursor = 0
        self.done = False
        return self._state()

    @property
    def current_task(self) -> TaskSpec:
        return self._tasks[self.plan.order[self.cursor]]

    def _input_ready_vector(self, task: TaskSpec) -> np.ndarray:
        """Input-ready time of `task` for every candidate server."""
        pool = self.pool
        worst = np.zeros(pool.size)
        for p in self._parents[task.id]:
            src = self.assignment[p]
            t = self._ebytes[(p, task.id)] / pool.bandwidth[src] + pool.latency[src]
            t[src] = 0.0
            np.maximum(worst, t, out=worst)
        return worst

    def _state(self) -> np.ndarray:
        if self.done:
            return np.zeros(self.state_dim)
        task = self.current_task
        m = self.pool.size
        raw = np.empty(self.state_dim)
        server = self._static_server_raw.copy()
        server[:, 5] = self.residual_ram
        raw[: m * N_SERVER_FEATURES] = server.ravel()
        preds = self._parents[task.id]
        in_bytes = sum(self._ebytes[(p, task.id)] for p in preds)
        raw[m * N_SERVER_FEATURES: m * N_SERVER_FEATURES + N_TASK_FEATURES] = (
            task.cpu_cycles,
            task.ram_bytes,
            task.deadline_s,
            self.plan.cp_indicator[task.id],
            in_bytes,
            len(preds),
            self.cursor / len(self.plan.order),
        )
        raw[m * N_SERVER_FEATURES + N_TASK_FEATURES:] = self._input_ready_vector(task)
        return self.normalize(raw)

    def action_mask(self) -> np.ndarray:
        """Servers whose residual RAM can hold the current task."""
        return self.residual_ram >= self.current_task.ram_bytes

    def step(self, action: int) -> StepOutcome:
        if self._dag is None or self.done:
            raise EpisodeFinished("reset() the environment before stepping")
        if not 0 <= int(action) < self.pool.size:
            raise InvalidAction(f"server id {action} outside [0, {self.pool.size})")
        action = int(action)
        task = self.current_task
        t_exec = float(task_exec_time(
            task, self.pool, action, self.assignment, self._dag,
            self._parents[task.id], self._ebytes,
        ))
        deadline_ok = bool(t_exec <= task.deadline_s)
        ram_ok = bool(self.residual_ram[action] >= task.ram_bytes)
        success = deadline_ok and ram_ok
        reward = -t_exec if success else self.phi
        if success:
            self.residual_ram[action] -= task.ram_bytes
        self.assignment[task.id] = action
        self.exec_times[task.id] = t_exec
        self.deadline_met[task.id] = deadline_ok
        self.cursor += 1
        self.done = self.cursor == len(self.plan.order)
        violation = None if success else ("CS4" if not deadline_ok else "CS3")
        info = {
            "task": task.id,
            "server": action,
            "exec_time": t_exec,
            "deadline_met": deadline_ok,
            "violation": violation,
        }
        if self.done:
            info["total"] = sum(self.exec_times[tid] for tid in sorted(self.plan.critical_path))
        out = StepOutcome(next_state=self._state(), reward=reward, done=self.done, info=info)
        if self.trace is not None:
            rec = dict(info)
            rec["reward"] = reward
            rec["done"] = self.done
            self.trace.write(json.dumps(rec) + "\n")
        return out


def write_trace_line(path: str | Path, record: dict) -> None:
    with Path(path).open("a") as fh:
        fh.write(json.dumps(record) + "\n")
