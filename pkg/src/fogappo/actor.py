"""Actor side: environment interaction, rollout batching, orchestration.

Each actor owns an environment and a shuffled cycle over the training
services.  At every rollout boundary it adopts the newest policy snapshot,
collects a fixed number of transitions (episodes straddle rollouts), and
ships the batch to the learner tagged with the snapshot version.

`run_training` wires A actors to one learner either serially on the calling
thread (round-robin, bit-reproducible, wall times omitted) or as forked
worker processes around queues (throughput mode).
"""

from __future__ import annotations

import json
import multiprocessing as mp
import queue as queue_mod
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Sequence

import numpy as np

from .dag import ServiceDag
from .env import OffloadEnv
from .learner import ApoHyper, ExperienceBatch, Learner
from .nn import MlpParams, forward, load_checkpoint, log_softmax, save_checkpoint
from .scenario import Scenario

_ACTION_STREAM = 301
_QUEUE_STREAM = 302
_INIT_STREAM = 303


@dataclass(frozen=True)
class PolicySnapshot:
    version: int
    params: MlpParams


class ServiceQueue:
    """Endless shuffled cycle over a fixed set of services."""

    def __init__(self, dags: Sequence[ServiceDag], seed):
        if not dags:
            raise ValueError("service queue needs at least one service")
        self._dags = list(dags)
        self._rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        self._order: list[int] = []

    def next(self) -> ServiceDag:
        if not self._order:
            self._order = list(self._rng.permutation(len(self._dags)))
        return self._dags[self._order.pop()]


def sample_action(
    policy: MlpParams,
    state: np.ndarray,
    rng: np.random.Generator | None,
    mask: np.ndarray | None = None,
    greedy: bool = False,
) -> tuple[int, float]:
    """Draw a server from the policy's categorical distribution.

    Returns the action and its exact log-probability.  With `greedy` the
    argmax is taken and no randomness is consumed.  A mask (when provided
    and not all-False) restricts the distribution to allowed actions.
    """
    logits, _ = forward(policy, state)
    if mask is not None and mask.any() and not mask.all():
        logits = np.where(mask, logits, -np.inf)
    logp_all = log_softmax(logits)
    probs = np.exp(logp_all)
    if greedy:
        action = int(np.argmax(probs))
    else:
        cdf = np.cumsum(probs)
        cdf[-1] = 1.0
        action = int(np.searchsorted(cdf, rng.random(), side="right"))
    return action, float(logp_all[action])


@dataclass
class _EpisodeTally:
    service: str = ""
    tasks: int = 0
    hits: int = 0
    successes: int = 0


class Actor:
    """Collects fixed-length experience batches from one environment."""

    def __init__(
        self,
        actor_id: int,
        scenario: Scenario,
        train_dags: Sequence[ServiceDag],
        master_seed: int,
    ):
        self.actor_id = actor_id
        self.env = OffloadEnv(scenario)
        self.mask_actions = scenario.mask_infeasible
        # per-actor streams: one for the service shuffle, one for sampling
        self.queue = ServiceQueue(train_dags, (master_seed, _QUEUE_STREAM, actor_id))
        self.rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence((master_seed, _ACTION_STREAM, actor_id))))
        self._state: np.ndarray | None = None
        self._tally = _EpisodeTally()

    def rollout(self, snapshot: PolicySnapshot, n: int) -> ExperienceBatch:
        env = self.env
        dim = env.state_dim
        m = env.pool.size
        states = np.empty((n, dim))
        actions = np.empty(n, dtype=np.int64)
        rewards = np.empty(n)
        next_states = np.empty((n, dim))
        behavior_logp = np.empty(n)
        dones = np.empty(n, dtype=bool)
        masks = np.ones((n, m), dtype=bool) if self.mask_actions else None
        completed: list[dict] = []
        for i in range(n):
            if self._state is None:
                dag = self.queue.next()
                self._state = env.reset(dag)
                self._tally = _EpisodeTally(service=dag.id)
            mask = env.action_mask() if self.mask_actions else None
            if mask is not None and not mask.any():
                mask = None     # nothing fits; sample unrestricted
            action, logp = sample_action(snapshot.params, self._state, self.rng, mask)
            out = env.step(action)
            states[i] = self._state
            actions[i] = action
            rewards[i] = out.reward
            next_states[i] = out.next_state
            behavior_logp[i] = logp
            dones[i] = out.done
            if masks is not None and mask is not None:
                masks[i] = mask
            t = self._tally
            t.tasks += 1
            t.hits += bool(out.info["deadline_met"])
            t.successes += out.info["violation"] is None
            if out.done:
                completed.append({
                    "service": t.service,
                    "tasks": t.tasks,
                    "deadline_hits": t.hits,
                    "successes": t.successes,
                    "total_exec_time_s": out.info["total"],
                })
                self._state = None
            else:
                self._state = out.next_state
        return ExperienceBatch(
            actor_id=self.actor_id,
            policy_version=snapshot.version,
            states=states,
            actions=actions,
            rewards=rewards,
            next_states=next_states,
            behavior_logp=behavior_logp,
            dones=dones,
            masks=masks,
            completed=completed,
        )


def evaluate_policy(
    policy: MlpParams,
    scenario: Scenario,
    dags: Sequence[ServiceDag],
    greedy: bool = True,
    rng: np.random.Generator | None = None,
) -> dict:
    """Run each service once under the policy; aggregate cost and hit rate."""
    env = OffloadEnv(scenario)
    totals, hits, tasks, ok_services = [], 0, 0, 0
    for dag in dags:
        state = env.reset(dag)
        service_ok = True
        while True:
            mask = env.action_mask() if scenario.mask_infeasible else None
            if mask is not None and not mask.any():
                mask = None
            action, _ = sample_action(policy, state, rng, mask, greedy=greedy)
            out = env.step(action)
            hits += bool(out.info["deadline_met"])
            tasks += 1
            service_ok = service_ok and out.info["violation"] is None
            state = out.next_state
            if out.done:
                totals.append(out.info["total"])
                break
        ok_services += service_ok
    return {
        "n_services": len(dags),
        "mean_exec_time_s": float(np.mean(totals)),
        "deadline_hit_rate": hits / tasks,
        "success_rate": ok_services / len(dags),
    }


# --- orchestration --------------------------------------------------------

@dataclass
class RunConfig:
    scenario: Scenario
    train_dags: list[ServiceDag]
    eval_dags: list[ServiceDag]
    hyper: ApoHyper = field(default_factory=ApoHyper)
    num_actors: int = 1
    total_steps: int = 4096
    seed: int = 0
    serial: bool = True
    eval_every: int = 10            # learner versions between greedy evals
    metrics_path: str | Path | None = None
    checkpoint_path: str | Path | None = None
    train_log_path: str | Path | None = None
    init_checkpoint: str | Path | None = None   # resume networks from here

    def validate(self) -> None:
        if self.num_actors < 1:
            raise ValueError("need at least one actor")
        if self.total_steps < self.hyper.rollout_len:
            raise ValueError("step budget smaller than one rollout")
        if not self.train_dags or not self.eval_dags:
            raise ValueError("empty train or eval split")


@dataclass
class TrainResult:
    learner: Learner
    metrics: list[dict]
    env_steps: int
    wall_seconds: float | None


def init_networks(cfg: RunConfig) -> tuple[MlpParams, MlpParams]:
    if cfg.init_checkpoint is not None:
        ck = load_checkpoint(cfg.init_checkpoint)
        return ck["policy"], ck["value"]
    dim = OffloadEnv(cfg.scenario).state_dim
    m = cfg.scenario.pool().size
    seed = int(np.random.SeedSequence((cfg.seed, _INIT_STREAM)).generate_state(1)[0])
    policy = MlpParams.init(dim, cfg.hyper.hidden, m, seed)
    value = MlpParams.init(dim, cfg.hyper.hidden, 1, seed + 1)
    return policy, value


def _open_maybe(path: str | Path | None) -> IO[str] | None:
    return open(path, "w") if path is not None else None


def _eval_row(cfg: RunConfig, learner: Learner, env_steps: int,
              wall_start: float | None) -> dict:
    ev = evaluate_policy(learner.policy, cfg.scenario, cfg.eval_dags, greedy=True)
    return {
        "wall_time": (time.perf_counter() - wall_start) if wall_start is not None else None,
        "env_steps": env_steps,
        "version": learner.version,
        "eval_mean_exec_time_s": ev["mean_exec_time_s"],
        "deadline_hit_rate": ev["deadline_hit_rate"],
        "success_rate": ev["success_rate"],
    }


def run_training(cfg: RunConfig) -> TrainResult:
    cfg.validate()
    if cfg.serial:
        return _run_serial(cfg)
    return _run_parallel(cfg)


def _run_serial(cfg: RunConfig) -> TrainResult:
    """All actors and the learner interleaved on this thread, round-robin.

    Wall-clock fields are omitted (null) so repeated runs produce identical
    metrics files.
    """
    policy, value = init_networks(cfg)
    log = _open_maybe(cfg.train_log_path)
    learner = Learner(policy, value, cfg.hyper, log=log, record_wall_time=False)
    actors = [Actor(i, cfg.scenario, cfg.train_dags, cfg.seed)
              for i in range(cfg.num_actors)]
    metrics_fh = _open_maybe(cfg.metrics_path)
    metrics: list[dict] = []
    env_steps = 0
    try:
        row = _eval_row(cfg, learner, env_steps, None)   # round-0 reference point
        metrics.append(row)
        if metrics_fh:
            metrics_fh.write(json.dumps(row) + "\n")
        last_eval_version = 0
        while env_steps < cfg.total_steps:
            for actor in actors:
                snap = PolicySnapshot(learner.version, learner.policy)
                eb = actor.rollout(snap, cfg.hyper.rollout_len)
                env_steps += len(eb)
                trained = learner.ingest(eb)
                if trained and (learner.version - last_eval_version >= cfg.eval_every):
                    last_eval_version = learner.version
                    row = _eval_row(cfg, learner, env_steps, None)
                    metrics.append(row)
                    if metrics_fh:
                        metrics_fh.write(json.dumps(row) + "\n")
                if env_steps >= cfg.total_steps:
                    break
        if learner.version != last_eval_version or not metrics:
            row = _eval_row(cfg, learner, env_steps, None)
            metrics.append(row)
            if metrics_fh:
                metrics_fh.write(json.dumps(row) + "\n")
        if cfg.checkpoint_path is not None:
            save_checkpoint(cfg.checkpoint_path, learner.version, learner.policy,
                            learner.value, learner.adam_policy, learner.adam_value)
    finally:
        if metrics_fh:
            metrics_fh.close()
        if log:
            log.close()
    return TrainResult(learner=learner, metrics=metrics,
                       env_steps=env_steps, wall_seconds=None)


def _actor_worker(actor_id, scenario, train_dags, seed, rollout_len,
                  init_snapshot, eb_queue, snap_queue, stop_event):
    try:
        actor = Actor(actor_id, scenario, train_dags, seed)
        snapshot = init_snapshot
        while not stop_event.is_set():
            try:
                while True:
                    snapshot = snap_queue.get_nowait()
            except queue_mod.Empty:
                pass
            eb = actor.rollout(snapshot, rollout_len)
            eb_queue.put(eb)
    finally:
        eb_queue.put(("exit", actor_id))


def _publish_snapshot(snap_queues, snapshot: PolicySnapshot) -> None:
    for q in snap_queues:
        try:
            q.get_nowait()
        except queue_mod.Empty:
            pass
        try:
            q.put_nowait(snapshot)
        except queue_mod.Full:
            pass


def _run_parallel(cfg: RunConfig) -> TrainResult:
    """A forked actor processes feeding one learner in this process."""
    ctx = mp.get_context("fork")
    policy, value = init_networks(cfg)
    log = _open_maybe(cfg.train_log_path)
    learner = Learner(policy, value, cfg.hyper, log=log, record_wall_time=True)
    eb_queue = ctx.Queue(maxsize=4 * cfg.num_actors)
    snap_queues = [ctx.Queue(maxsize=1) for _ in range(cfg.num_actors)]
    stop_event = ctx.Event()
    snapshot = PolicySnapshot(0, learner.policy)
    procs = [
        ctx.Process(
            target=_actor_worker,
            args=(i, cfg.scenario, cfg.train_dags, cfg.seed, cfg.hyper.rollout_len,
                  snapshot, eb_queue, snap_queues[i], stop_event),
            daemon=True,
        )
        for i in range(cfg.num_actors)
    ]
    t0 = time.perf_counter()
    for p in procs:
        p.start()
    metrics_fh = _open_maybe(cfg.metrics_path)
    metrics: list[dict] = []
    env_steps = 0
    last_eval_version = 0
    exited = 0
    try:
        row = _eval_row(cfg, learner, env_steps, t0)
        metrics.append(row)
        if metrics_fh:
            metrics_fh.write(json.dumps(row) + "\n")
        while env_steps < cfg.total_steps:
            try:
                item = eb_queue.get(timeout=10.0)
            except queue_mod.Empty:
                dead = [p for p in procs if not p.is_alive()]
                if dead:
                    raise RuntimeError(
                        f"actor process(es) died: exit codes "
                        f"{[p.exitcode for p in dead]}") from None
                continue
            if isinstance(item, tuple) and item and item[0] == "exit":
                exited += 1
                continue
            env_steps += len(item)
            trained = learner.ingest(item)
            if trained:
                _publish_snapshot(snap_queues, PolicySnapshot(learner.version, learner.policy))
                if learner.version - last_eval_version >= cfg.eval_every:
                    last_eval_version = learner.version
                    row = _eval_row(cfg, learner, env_steps, t0)
                    metrics.append(row)
                    if metrics_fh:
                        metrics_fh.write(json.dumps(row) + "\n")
        stop_event.set()
        while exited < cfg.num_actors:
            item = eb_queue.get(timeout=30.0)
            if isinstance(item, tuple) and item and item[0] == "exit":
                exited += 1
        for p in procs:
            p.join(timeout=30.0)
        wall = time.perf_counter() - t0
        if learner.version != last_eval_version or not metrics:
            row = _eval_row(cfg, learner, env_steps, t0)
            metrics.append(row)
            if metrics_fh:
                metrics_fh.write(json.dumps(row) + "\n")
        if cfg.checkpoint_path is not None:
            save_checkpoint(cfg.checkpoint_path, learner.version, learner.policy,
                            learner.value, learner.adam_policy, learner.adam_value)
    finally:
        stop_event.set()
        for p in procs:
            if p.is_alive():
                p.terminate()
                p.join(timeout=5.0)
        # Unread snapshots would leave feeder threads flushing into pipes
        # nobody drains, blocking interpreter shutdown.
        for q in (eb_queue, *snap_queues):
            q.close()
            q.cancel_join_thread()
        if metrics_fh:
            metrics_fh.close()
        if log:
            log.close()
    return TrainResult(learner=learner, metrics=metrics,
                       env_steps=env_steps, wall_seconds=wall)
