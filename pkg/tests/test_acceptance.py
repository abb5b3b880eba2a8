"""Acceptance gate: one test per release criterion, at the stated tolerance.

Every numeric criterion is checked against an implementation-independent
reference built inside this module: a textbook advantage recursion, an
explicit discounted double sum, central finite differences, a from-scratch
cost evaluator and an exhaustive path enumeration.  Each test prints a
single [PASS]/[FAIL] line with the measured numbers.

The long-running criteria (7 and 8) drive the real experiment protocols
end-to-end and together take about 90 seconds.
"""

import itertools
import math
import os
import time

import numpy as np
import pytest

from fogappo.actor import Actor, PolicySnapshot, RunConfig, run_training
from fogappo.baselines import exhaustive_best, greedy_assignment, random_assignment
from fogappo.dag import make_plan
from fogappo.env import OffloadEnv, service_exec_time
from fogappo.harness import ExperimentSpec, run_convergence, run_optimality, run_speedup
from fogappo.learner import (
    ApoHyper,
    TrainingBatch,
    is_weights,
    ppo_policy_gradient,
    target_log_probs,
    value_gradient,
    vtrace_gae,
    vtrace_td,
)
from fogappo.nn import MlpParams, forward, softmax
from fogappo.scenario import scaled_scenario
from fogappo.workload import TopologyParams, WeightRanges, assign_weights, generate_topology

from conftest import random_instance


def _report(num: int, name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion-{num:02d} {name}: {detail}"
    print(line, flush=True)
    assert ok, line


# --- criterion 1 -----------------------------------------------------------

def _plain_gae(rewards, dones, v_s, v_next, gamma, lam):
    adv = np.zeros_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        cont = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * v_next[t] * cont - v_s[t]
        acc = delta + gamma * lam * cont * acc
        adv[t] = acc
    return adv


def test_criterion_01_vtrace_reduces_to_gae_on_policy():
    """On-policy (target == behaviour), the off-policy correction must equal
    textbook GAE on 100 real rollouts of length <= 64, to 1e-10, within 5 s."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    scenario = scaled_scenario(4, seed=0)
    dags = []
    for i in range(4):
        topo = generate_topology(TopologyParams(
            num_tasks=5 + i, fat=0.6, density=0.6, seed=50 + i))
        dags.append(assign_weights(topo, WeightRanges(), 60 + i))
    actor = Actor(0, scenario, dags, master_seed=3)
    dim = actor.env.state_dim
    policy = MlpParams.init(dim, 32, 4, seed=1)
    value = MlpParams.init(dim, 32, 1, seed=2)
    gamma, lam = 0.99, 0.95
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(8, 65))
        eb = actor.rollout(PolicySnapshot(0, policy), n)
        tb = TrainingBatch([eb])
        rho, c = is_weights(tb, policy)
        assert np.max(np.abs(rho - 1.0)) <= 1e-12      # on-policy premise
        v_s = forward(value, eb.states)[0][:, 0]
        v_next = forward(value, eb.next_states)[0][:, 0]
        delta = vtrace_td(eb.rewards, eb.dones, v_s, v_next, rho, gamma)
        adv = vtrace_gae(delta, c, eb.dones, [(0, n)], gamma, lam)
        ref = _plain_gae(eb.rewards, eb.dones, v_s, v_next, gamma, lam)
        worst = max(worst, float(np.max(np.abs(adv - ref))))
    took = time.perf_counter() - t0
    _report(1, "vtrace-equals-gae-on-policy", worst < 1e-10 and took < 5.0,
            f"max |diff| {worst:.3e} over 100 rollouts in {took:.2f}s")


# --- criterion 2 -----------------------------------------------------------

def test_criterion_02_recursion_equals_double_sum():
    """The backward recursion must match the explicit discounted double sum
    with importance-weight products on every segment of length <= 8, to 1e-12."""
    rng = np.random.default_rng(202)
    gamma, lam = 0.99, 0.95
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 9))
        delta = rng.normal(size=n)
        c = rng.uniform(0.0, 1.0, size=n)
        dones = rng.random(n) < 0.3
        got = vtrace_gae(delta, c, dones, [(0, n)], gamma, lam)
        want = np.zeros(n)
        for t in range(n):
            acc, coef = 0.0, 1.0
            for j in range(t, n):
                acc += coef * delta[j]
                if dones[j]:
                    break
                coef *= gamma * lam * c[j]
            want[t] = acc
        worst = max(worst, float(np.max(np.abs(got - want))))
    _report(2, "recursion-equals-double-sum", worst < 1e-12,
            f"max |diff| {worst:.3e} over 100 short segments")


# --- criterion 3 -----------------------------------------------------------

def _surrogate(policy, states, actions, behavior, adv, eps, entropy_coef):
    taken, logits, _ = target_log_probs(policy, states, actions)
    ratio = np.exp(taken - behavior)
    obj = np.mean(np.minimum(ratio * adv,
                             np.clip(ratio, 1 - eps, 1 + eps) * adv))
    if entropy_coef > 0:
        probs = softmax(logits)
        ent = -np.sum(probs * np.log(probs), axis=1)
        obj += entropy_coef * np.mean(ent)
    return float(obj)


def _fd(fun, params, h=1e-5):
    out = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            up = fun()
            arr[idx] = orig - h
            dn = fun()
            arr[idx] = orig
            g[idx] = (up - dn) / (2 * h)
        out[name] = g
    return out


def test_criterion_03_analytic_gradients_match_finite_differences():
    """Policy-surrogate and value-loss gradients vs central differences at
    h=1e-5 on 10 random small networks: max guarded relative error < 1e-4,
    all inside 30 s."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)
    eps = 0.2
    worst = 0.0
    for trial in range(10):
        d = int(rng.integers(3, 7))
        hidden = int(rng.integers(4, 9))
        m = int(rng.integers(2, 5))
        entropy_coef = 0.05 if trial % 2 else 0.0
        policy = MlpParams.init(d, hidden, m, seed=int(rng.integers(1 << 30)))
        n = 8
        states = rng.normal(size=(n, d))
        probs = softmax(forward(policy, states)[0])
        actions = np.array([rng.choice(m, p=pr) for pr in probs])
        taken, _, _ = target_log_probs(policy, states, actions)
        ratios = rng.uniform(0.5, 1.6, size=n)
        for edge in (1 - eps, 1 + eps):
            ratios = np.where(np.abs(ratios - edge) < 0.02, edge + 0.05, ratios)
        behavior = taken - np.log(ratios)
        adv = rng.normal(size=n)

        grads, _ = ppo_policy_gradient(policy, states, actions, behavior, adv,
                                       eps, entropy_coef)
        fd = _fd(lambda: _surrogate(policy, states, actions, behavior, adv,
                                    eps, entropy_coef), policy)
        for name, g in grads.items():
            err = np.abs(g - fd[name]) / np.maximum(np.abs(fd[name]), 1e-6)
            worst = max(worst, float(err.max()))

        vnet = MlpParams.init(d, hidden, 1, seed=int(rng.integers(1 << 30)))
        targets = rng.normal(size=n)
        vgrads, _ = value_gradient(vnet, states, targets)
        vloss = lambda: float(
            0.5 * np.mean((forward(vnet, states)[0][:, 0] - targets) ** 2))
        vfd = _fd(vloss, vnet)
        for name, g in vgrads.items():
            err = np.abs(g - vfd[name]) / np.maximum(np.abs(vfd[name]), 1e-6)
            worst = max(worst, float(err.max()))
    took = time.perf_counter() - t0
    _report(3, "analytic-gradients-vs-central-fd",
            worst < 1e-4 and took < 30.0,
            f"max rel err {worst:.3e} over 10 nets in {took:.2f}s")


# --- criteria 4 and 5 ------------------------------------------------------

def _naive_service_time(dag, assignment, pool, cp):
    parents = {t.id: [] for t in dag.tasks}
    data = {}
    for e in dag.edges:
        parents[e.dst].append(e.src)
        data[(e.src, e.dst)] = e.data_bytes
    total = 0.0
    for t in dag.tasks:
        if t.id not in cp:
            continue
        s = assignment[t.id]
        ready = 0.0
        for p in parents[t.id]:
            sp = assignment[p]
            if sp == s:
                arrive = 0.0
            else:
                d = math.dist(pool.positions[sp], pool.positions[s])
                arrive = (data[(p, t.id)] / pool.bandwidth[sp, s]
                          + d / pool.propagation_speed)
            ready = max(ready, arrive)
        total += t.cpu_cycles / pool.freq[s] + ready
    return total


def _all_path_costs(dag, pool):
    """Every entry-to-exit path with its pool-averaged cost."""
    m = pool.size
    mis = float(np.sum(1.0 / pool.freq) / m)
    off = ~np.eye(m, dtype=bool)
    pmib = float(np.sum(1.0 / pool.bandwidth[off]) / m ** 2)
    pml = float(np.sum(pool.latency) / m ** 2)
    children = {t.id: [] for t in dag.tasks}
    data = {}
    indeg = {t.id: 0 for t in dag.tasks}
    for e in dag.edges:
        children[e.src].append(e.dst)
        data[(e.src, e.dst)] = e.data_bytes
        indeg[e.dst] += 1
    comp = {t.id: t.cpu_cycles * mis for t in dag.tasks}
    paths = []

    def walk(node, path, cost):
        if not children[node]:
            paths.append((list(path), cost))
            return
        for ch in children[node]:
            path.append(ch)
            walk(ch, path, cost + data[(node, ch)] * pmib + pml + comp[ch])
            path.pop()

    for entry in [tid for tid, k in indeg.items() if k == 0]:
        walk(entry, [entry], comp[entry])
    return paths


def _hundred_instances():
    rng = np.random.default_rng(404)
    return [random_instance(rng) for _ in range(100)]


def test_criterion_04_cost_model_vs_brute_force():
    """service_exec_time must match a from-scratch evaluator to 1e-12 on 100
    instances with M <= 4, L <= 6, and the chosen critical path must agree
    with exhaustive enumeration of every entry-to-exit path."""
    rng = np.random.default_rng(405)
    worst = 0.0
    for _, dag, pool, plan in _hundred_instances():
        assign = {t.id: int(rng.integers(pool.size)) for t in dag.tasks}
        got = service_exec_time(dag, assign, plan, pool)
        want = _naive_service_time(dag, assign, pool, plan.critical_path)
        worst = max(worst, abs(got - want))

        paths = _all_path_costs(dag, pool)
        best = max(cost for _, cost in paths)
        arg_sets = [set(p) for p, cost in paths if abs(cost - best) <= 1e-9 * max(1.0, best)]
        assert plan.critical_path in arg_sets, (
            f"critical path {sorted(plan.critical_path)} not among max-cost paths")
    _report(4, "cost-model-vs-brute-force", worst < 1e-12,
            f"max |diff| {worst:.3e}; critical paths all matched enumeration")


def test_criterion_05_oracle_dominance():
    """On the same instance family: exhaustive oracle <= greedy <= the mean
    of random placements."""
    rng = np.random.default_rng(505)
    violations = []
    n_oracle_beaten = 0
    for k, (_, dag, pool, plan) in enumerate(_hundred_instances()):
        res = exhaustive_best(dag, pool, plan)
        _, greedy_cost = greedy_assignment(dag, pool, plan)
        rand_mean = float(np.mean(
            [random_assignment(dag, pool, plan, rng)[1] for _ in range(20)]))
        if res.objective > greedy_cost + 1e-12:
            n_oracle_beaten += 1
        if greedy_cost > rand_mean + 1e-12:
            violations.append(k)
    ok = n_oracle_beaten == 0 and not violations
    _report(5, "oracle<=greedy<=mean(random)", ok,
            f"oracle beaten {n_oracle_beaten}x, greedy above random mean "
            f"{len(violations)}x over 100 instances")


# --- criterion 6 -----------------------------------------------------------

def _repro_config(tmp_path, tag):
    rng = np.random.default_rng(606)
    dags = []
    for i in range(6):
        topo = generate_topology(TopologyParams(
            num_tasks=int(rng.integers(4, 7)), fat=0.6, density=0.6,
            seed=int(rng.integers(1 << 30))))
        dags.append(assign_weights(topo, WeightRanges(), int(rng.integers(1 << 30))))
    return RunConfig(
        scenario=scaled_scenario(4, seed=0),
        train_dags=dags[:4],
        eval_dags=dags[4:],
        hyper=ApoHyper(rollout_len=64, train_batch=256, hidden=32),
        total_steps=1024,
        seed=9,
        serial=True,
        eval_every=1,
        metrics_path=tmp_path / f"metrics-{tag}.jsonl",
        checkpoint_path=tmp_path / f"ck-{tag}.json",
    )


def test_criterion_06_serial_runs_are_byte_identical(tmp_path):
    """Two serial runs from the same seed must write byte-identical metrics
    and checkpoints."""
    run_training(_repro_config(tmp_path, "a"))
    run_training(_repro_config(tmp_path, "b"))
    same_metrics = ((tmp_path / "metrics-a.jsonl").read_bytes()
                    == (tmp_path / "metrics-b.jsonl").read_bytes())
    same_ck = ((tmp_path / "ck-a.json").read_bytes()
               == (tmp_path / "ck-b.json").read_bytes())
    _report(6, "serial-reproducibility", same_metrics and same_ck,
            f"metrics identical: {same_metrics}, checkpoint identical: {same_ck}")


# --- criterion 7 -----------------------------------------------------------

def test_criterion_07_optimality_gap_within_5pct(tmp_path):
    """Training on the 4-server protocol must land the greedy policy within
    5% of the exhaustive oracle inside 50 rounds and 10 minutes."""
    t0 = time.perf_counter()
    spec = ExperimentSpec(kind="optimality", out_dir=str(tmp_path / "opt"),
                          seed=0, serial=True)
    result = run_optimality(spec)
    took = time.perf_counter() - t0
    gap = result.rows[-1]["gap"]
    failed = [c for c in result.checks if c["status"] == "fail"]
    _report(7, "optimality-gap",
            not failed and took < 600.0,
            f"final gap {gap * 100:.2f}% after {len(result.rows) - 1} evals "
            f"in {took:.1f}s; " + "; ".join(
                f"{c['name']}={c['status']}" for c in result.checks))


# --- criterion 8 -----------------------------------------------------------

def test_criterion_08_convergence_leave_one_length_out(tmp_path):
    """Leave-one-length-out training must finish at or below 70% of the
    stochastic untrained policy's mean execution time, with a strictly
    higher deadline hit rate."""
    t0 = time.perf_counter()
    spec = ExperimentSpec(kind="convergence", out_dir=str(tmp_path / "conv"),
                          seed=0, serial=True)
    result = run_convergence(spec)
    took = time.perf_counter() - t0
    last = result.rows[-1]
    ratio = last["eval_mean_exec_time_s"] / last["random_level_exec_time_s"]
    failed = [c for c in result.checks if c["status"] == "fail"]
    _report(8, "convergence-vs-untrained-level", not failed,
            f"final/untrained ratio {ratio:.3f} (need <=0.70), hit rate "
            f"{last['random_level_hit_rate']:.3f} -> {last['deadline_hit_rate']:.3f} "
            f"in {took:.1f}s")


# --- criterion 9 -----------------------------------------------------------

def test_criterion_09_actor_speedup(tmp_path):
    """With four actor processes the 150k-step collection must run at least
    2.5x faster than one actor, and two actors faster than one.  The
    threshold is defined for hosts with >= 8 cores."""
    cores = os.cpu_count() or 1
    if cores < 8:
        print(f"[SKIP] criterion-09 actor-speedup: host has {cores} core(s); "
              "the threshold is defined for >= 8", flush=True)
        pytest.skip(f"host has {cores} core(s); speedup threshold needs >= 8")
    spec = ExperimentSpec(kind="speedup", out_dir=str(tmp_path / "sp"),
                          seed=0, actor_counts=(1, 2, 4), steps=150_000)
    result = run_speedup(spec)
    by_a = {r["actors"]: r for r in result.rows}
    failed = [c for c in result.checks if c["status"] == "fail"]
    _report(9, "actor-speedup", not failed,
            f"SP(2)={by_a[2]['speedup']:.2f}, SP(4)={by_a[4]['speedup']:.2f} "
            f"(need >= 2.5) on {cores} cores")


# --- criterion 10 ----------------------------------------------------------

def test_criterion_10_full_scale_results_out_of_scope():
    """Full-scale training outcomes (50-server fleets, hour-long budgets and
    the headline numbers that come with them) are not validated at desk
    scale; the optimality-gap and convergence protocols above are the
    stand-ins.  Recorded as an explicit skip rather than silently omitted."""
    print("[SKIP] criterion-10 full-scale-results: desk-scale stand-ins are "
          "criterion-07 (optimality gap) and criterion-08 (convergence)",
          flush=True)
    pytest.skip("full-scale result levels are out of scope by design; "
                "criteria 7 and 8 are the desk-scale stand-ins")
