"""Learner side of the actor-learner loop.

Experience batches arrive from actors tagged with the behaviour policy that
produced them.  Training batches are whole batches popped FIFO from the
master buffer; each optimisation round runs a configurable number of
gradient steps, recomputing values, clipped importance weights and V-trace
advantages against the current networks every step (the recorded behaviour
log-probs stay fixed).  The policy ascends the clipped surrogate, the value
net descends the squared error against the advantage-plus-value targets.
"""

from __future__ import annotations

import json
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from .nn import (
    AdamState,
    MlpParams,
    NonFiniteGradient,
    adam_step,
    backward,
    forward,
    log_softmax,
    softmax,
)


class NonFiniteRatio(FloatingPointError):
    pass


class ChannelClosed(Exception):
    """Inbox producer went away; the learner loop exits cleanly."""


@dataclass
class ApoHyper:
    lr: float = 0.01
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    rho_bar: float = 1.0
    c_bar: float = 1.0
    gradient_steps: int = 2
    rollout_len: int = 64
    train_batch: int = 512
    entropy_coef: float = 0.0
    hidden: int = 128
    buffer_limit: int = 1 << 16          # master-buffer cap, transitions
    max_version_lag: int | None = None   # drop staler batches if set


@dataclass
class ExperienceBatch:
    actor_id: int
    policy_version: int
    states: np.ndarray        # (N, D)
    actions: np.ndarray       # (N,) int
    rewards: np.ndarray       # (N,)
    next_states: np.ndarray   # (N, D)
    behavior_logp: np.ndarray # (N,)
    dones: np.ndarray         # (N,) bool
    masks: np.ndarray | None = None  # (N, M) action masks, if masking enabled
    completed: list = field(default_factory=list)  # per-service summaries

    def __len__(self) -> int:
        return len(self.actions)


@dataclass
class TrainingBatch:
    segments: list[ExperienceBatch]

    def __len__(self) -> int:
        return sum(len(s) for s in self.segments)

    def concat(self, attr: str) -> np.ndarray:
        return np.concatenate([getattr(s, attr) for s in self.segments])

    def concat_masks(self, n_actions: int) -> np.ndarray | None:
        if all(s.masks is None for s in self.segments):
            return None
        parts = []
        for s in self.segments:
            parts.append(s.masks if s.masks is not None
                         else np.ones((len(s), n_actions), dtype=bool))
        return np.concatenate(parts)

    def bounds(self) -> list[tuple[int, int]]:
        out, start = [], 0
        for s in self.segments:
            out.append((start, start + len(s)))
            start += len(s)
        return out


class MasterBuffer:
    """FIFO queue of experience batches awaiting training."""

    def __init__(self, limit_transitions: int = 1 << 16):
        self.limit = limit_transitions
        self._q: deque[ExperienceBatch] = deque()
        self._size = 0
        self.dropped = 0

    def __len__(self) -> int:
        return self._size

    def add(self, eb: ExperienceBatch) -> None:
        self._q.append(eb)
        self._size += len(eb)
        while self._size > self.limit and len(self._q) > 1:
            old = self._q.popleft()
            self._size -= len(old)
            self.dropped += len(old)

    def can_build(self, train_batch: int) -> bool:
        return self._size >= train_batch

    def build(self, train_batch: int) -> TrainingBatch:
        """Pop whole batches, oldest first, until the target size is reached."""
        segs: list[ExperienceBatch] = []
        total = 0
        while total < train_batch:
            eb = self._q.popleft()
            self._size -= len(eb)
            segs.append(eb)
            total += len(eb)
        return TrainingBatch(segs)


# --- V-trace / PPO math ---------------------------------------------------

def apply_mask(logits: np.ndarray, masks: np.ndarray | None) -> np.ndarray:
    if masks is None:
        return logits
    return np.where(masks, logits, -np.inf)


def target_log_probs(policy: MlpParams, states: np.ndarray, actions: np.ndarray,
                     masks: np.ndarray | None = None):
    logits, cache = forward(policy, states)
    logp = log_softmax(apply_mask(logits, masks))
    taken = logp[np.arange(len(actions)), actions]
    return taken, logits, cache


def is_weights(
    tb: TrainingBatch, policy: MlpParams, rho_bar: float = 1.0, c_bar: float = 1.0
) -> tuple[np.ndarray, np.ndarray]:
    """Clipped importance weights of the current policy over the behaviour
    policy, computed in log space."""
    states = tb.concat("states")
    actions = tb.concat("actions")
    behavior = tb.concat("behavior_logp")
    masks = tb.concat_masks(policy.out_dim)
    taken, _, _ = target_log_probs(policy, states, actions, masks)
    ratio = np.exp(taken - behavior)
    if not np.all(np.isfinite(ratio)):
        raise NonFiniteRatio("importance ratio overflowed; behaviour prob underflow")
    return np.minimum(rho_bar, ratio), np.minimum(c_bar, ratio)


def vtrace_td(
    rewards: np.ndarray,
    dones: np.ndarray,
    v_s: np.ndarray,
    v_next: np.ndarray,
    rho: np.ndarray,
    gamma: float,
) -> np.ndarray:
    """Importance-sampled TD errors; terminal bootstraps are zeroed."""
    boot = np.where(dones, 0.0, v_next)
    return rho * (rewards + gamma * boot - v_s)


def vtrace_gae(
    delta: np.ndarray,
    c: np.ndarray,
    dones: np.ndarray,
    seg_bounds: Iterable[tuple[int, int]],
    gamma: float,
    lam: float,
) -> np.ndarray:
    """Discounted sum of TD errors with importance-sampling products,
    by backward recursion: A_t = delta_t + lam*gamma*c_t * A_{t+1}.

    The accumulation restarts at every episode end and at every rollout
    (segment) boundary.
    """
    adv = np.zeros_like(delta)
    lg = lam * gamma
    for start, stop in seg_bounds:
        tail = 0.0
        for t in range(stop - 1, start - 1, -1):
            if dones[t]:
                tail = 0.0
            tail = delta[t] + lg * c[t] * tail
            adv[t] = tail
    return adv


def ppo_policy_gradient(
    policy: MlpParams,
    states: np.ndarray,
    actions: np.ndarray,
    behavior_logp: np.ndarray,
    adv: np.ndarray,
    clip_eps: float,
    entropy_coef: float = 0.0,
    masks: np.ndarray | None = None,
) -> tuple[MlpParams, dict]:
    """Gradient of the clipped surrogate objective w.r.t. the policy.

    The gradient flows through the probability ratio only; advantages are
    treated as constants.  Where the clipped branch of the min() is active
    the sample contributes nothing.
    """
    n = len(actions)
    taken, logits, cache = target_log_probs(policy, states, actions, masks)
    masked = apply_mask(logits, masks)
    probs = softmax(masked)
    ratio = np.exp(taken - behavior_logp)
    if not np.all(np.isfinite(ratio)):
        raise NonFiniteRatio("importance ratio overflowed")
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    unclipped_term = ratio * adv
    clipped_term = clipped * adv
    objective = float(np.mean(np.minimum(unclipped_term, clipped_term)))
    active = unclipped_term <= clipped_term      # ties go to the pass-through branch
    coeff = np.where(active, adv * ratio, 0.0) / n
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), actions] = 1.0
    d_logits = coeff[:, None] * (onehot - probs)
    if entropy_coef > 0.0:
        logp = log_softmax(masked)
        plogp = np.where(probs > 0.0, probs * logp, 0.0)
        ent = -np.sum(plogp, axis=1)
        safe_logp = np.where(probs > 0.0, logp, 0.0)
        d_logits += entropy_coef * (-probs * (safe_logp + ent[:, None])) / n
        objective += entropy_coef * float(np.mean(ent))
    grads = backward(policy, cache, d_logits)
    stats = {
        "policy_objective": objective,
        "clip_fraction": float(np.mean(~active)),
        "mean_ratio": float(np.mean(ratio)),
    }
    return grads, stats


def value_gradient(
    value: MlpParams, states: np.ndarray, targets: np.ndarray
) -> tuple[MlpParams, dict]:
    """Gradient of the mean squared half-error against fixed targets."""
    out, cache = forward(value, states)
    residual = out[:, 0] - targets
    n = len(targets)
    grads = backward(value, cache, (residual / n)[:, None])
    return grads, {"value_loss": float(0.5 * np.mean(residual ** 2))}


def optimize_model(
    tb: TrainingBatch,
    policy: MlpParams,
    value: MlpParams,
    adam_policy: AdamState,
    adam_value: AdamState,
    hyper: ApoHyper,
) -> tuple[MlpParams, MlpParams, dict]:
    """Run the configured gradient steps on one training batch.

    Every step recomputes values, importance weights, TD errors and
    advantages under the current networks; the behaviour log-probs recorded
    by the actors stay fixed.
    """
    states = tb.concat("states")
    actions = tb.concat("actions")
    rewards = tb.concat("rewards")
    next_states = tb.concat("next_states")
    behavior = tb.concat("behavior_logp")
    dones = tb.concat("dones")
    masks = tb.concat_masks(policy.out_dim)
    bounds = tb.bounds()
    stats: dict = {
        "batch_size": len(tb),
        "mean_reward": float(np.mean(rewards)),
    }
    for _ in range(hyper.gradient_steps):
        taken, _, _ = target_log_probs(policy, states, actions, masks)
        ratio = np.exp(taken - behavior)
        if not np.all(np.isfinite(ratio)):
            raise NonFiniteRatio("importance ratio overflowed")
        rho = np.minimum(hyper.rho_bar, ratio)
        c = np.minimum(hyper.c_bar, ratio)
        v_s_out, _ = forward(value, states)
        v_n_out, _ = forward(value, next_states)
        v_s = v_s_out[:, 0]
        v_next = v_n_out[:, 0]
        delta = vtrace_td(rewards, dones, v_s, v_next, rho, hyper.gamma)
        adv = vtrace_gae(delta, c, dones, bounds, hyper.gamma, hyper.lam)
        targets = adv + v_s
        pg, pstats = ppo_policy_gradient(
            policy, states, actions, behavior, adv, hyper.clip_eps,
            hyper.entropy_coef, masks,
        )
        vg, vstats = value_gradient(value, states, targets)
        policy = adam_step(policy, pg, adam_policy, maximize=True)
        value = adam_step(value, vg, adam_value)
        stats.update(pstats)
        stats.update(vstats)
        stats["mean_abs_adv"] = float(np.mean(np.abs(adv)))
    return policy, value, stats


# --- learner driver -------------------------------------------------------

class Learner:
    """Owns the networks and the master buffer; one ingest() per batch."""

    def __init__(
        self,
        policy: MlpParams,
        value: MlpParams,
        hyper: ApoHyper,
        log: IO[str] | None = None,
        record_wall_time: bool = True,
    ):
        self.policy = policy
        self.value = value
        self.hyper = hyper
        self.adam_policy = AdamState.for_params(policy, lr=hyper.lr)
        self.adam_value = AdamState.for_params(value, lr=hyper.lr)
        self.version = 0
        self.buffer = MasterBuffer(hyper.buffer_limit)
        self.log = log
        self.record_wall_time = record_wall_time
        self.stale_dropped = 0
        self.completed_services: list = []
        self._t0 = time.perf_counter()

    def ingest(self, eb: ExperienceBatch) -> bool:
        """Queue one batch; train if the buffer can fill a training batch.

        Returns True when a training round ran (the policy version bumped).
        """
        lag = self.hyper.max_version_lag
        if lag is not None and self.version - eb.policy_version > lag:
            self.stale_dropped += len(eb)
            return False
        self.completed_services.extend(eb.completed)
        self.buffer.add(eb)
        if not self.buffer.can_build(self.hyper.train_batch):
            return False
        tb = self.buffer.build(self.hyper.train_batch)
        t0 = time.perf_counter()
        self.policy, self.value, stats = optimize_model(
            tb, self.policy, self.value, self.adam_policy, self.adam_value, self.hyper
        )
        self.version += 1
        if self.log is not None:
            row = {
                "version": self.version,
                "mean_reward": stats["mean_reward"],
                "mean_abs_adv": stats.get("mean_abs_adv"),
                "policy_loss": stats.get("policy_objective"),
                "value_loss": stats.get("value_loss"),
                "wall_time": (time.perf_counter() - self._t0) if self.record_wall_time else None,
                "train_seconds": (time.perf_counter() - t0) if self.record_wall_time else None,
            }
            self.log.write(json.dumps(row) + "\n")
        return True


def learner_loop(
    inbox,
    learner: Learner,
    publish,
    checkpoint_path: str | Path | None = None,
    checkpoint_every: int = 50,
) -> None:
    """Consume experience batches until the channel closes.

    `inbox.get()` must block and raise ChannelClosed (or return None) when
    producers are done; `publish(version, policy)` distributes snapshots.
    """
    from .nn import save_checkpoint

    while True:
        try:
            eb = inbox.get()
        except ChannelClosed:
            eb = None
        if eb is None:
            break
        if learner.ingest(eb):
            publish(learner.version, learner.policy)
            if checkpoint_path is not None and learner.version % checkpoint_every == 0:
                save_checkpoint(
                    checkpoint_path, learner.version, learner.policy, learner.value,
                    learner.adam_policy, learner.adam_value,
                )
    if checkpoint_path is not None:
        save_checkpoint(
            checkpoint_path, learner.version, learner.policy, learner.value,
            learner.adam_policy, learner.adam_value,
        )
