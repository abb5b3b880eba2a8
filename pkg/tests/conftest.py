"""Shared fixtures: small hand-checkable instances and random generators.

The hand-built two-server / three-task instance below is small enough that
every quantity (latency, transfer times, execution times) can be computed
on paper; several test modules verify against those numbers.
"""

import numpy as np
import pytest

from fogappo.dag import DagEdge, ServiceDag, TaskSpec, make_plan
from fogappo.scenario import (
    FeatureBounds,
    Scenario,
    Server,
    ServerPool,
    default_bounds,
    scaled_scenario,
)
from fogappo.workload import (
    DatasetSpec,
    TopologyParams,
    WeightRanges,
    assign_weights,
    generate_topology,
)


def two_server_pool() -> ServerPool:
    """1 GHz IoT at the origin, 2 GHz FS 500 m away, 10 MB/s link."""
    servers = [
        Server("iot", 0, cores=1, freq_hz=1e9, ram_bytes=1e9, x=0.0, y=0.0),
        Server("fs", 0, cores=4, freq_hz=2e9, ram_bytes=1e9, x=300.0, y=400.0),
    ]
    bw = np.array([[1.0, 1e7], [1e7, 1.0]])
    return ServerPool(servers, bw)


def two_server_scenario() -> Scenario:
    servers = [
        Server("iot", 0, cores=1, freq_hz=1e9, ram_bytes=1e9, x=0.0, y=0.0),
        Server("fs", 0, cores=4, freq_hz=2e9, ram_bytes=1e9, x=300.0, y=400.0),
    ]
    return Scenario(
        servers=servers,
        bandwidth_ranges={"edge": (1e7, 1e7), "cloud": (1e7, 1e7)},
        propagation_speed=2e8,
        phi=-1.0,
        normalization=default_bounds(servers),
        seed=0,
    )


def diamond_dag() -> ServiceDag:
    """0 -> {1, 2} -> 3 with easy weights; deadlines loose by default."""
    tasks = [
        TaskSpec(0, cpu_cycles=2e8, ram_bytes=5e7, deadline_s=10.0),
        TaskSpec(1, cpu_cycles=1e8, ram_bytes=5e7, deadline_s=10.0),
        TaskSpec(2, cpu_cycles=3e8, ram_bytes=5e7, deadline_s=10.0),
        TaskSpec(3, cpu_cycles=2e8, ram_bytes=5e7, deadline_s=10.0),
    ]
    edges = [
        DagEdge(0, 1, 1e6),
        DagEdge(0, 2, 2e6),
        DagEdge(1, 3, 5e5),
        DagEdge(2, 3, 1e6),
    ]
    return ServiceDag(id="diamond", tasks=tasks, edges=edges)


def chain_dag() -> ServiceDag:
    tasks = [
        TaskSpec(0, cpu_cycles=2e8, ram_bytes=5e7, deadline_s=10.0),
        TaskSpec(1, cpu_cycles=1e8, ram_bytes=5e7, deadline_s=10.0),
        TaskSpec(2, cpu_cycles=2e8, ram_bytes=5e7, deadline_s=10.0),
    ]
    edges = [DagEdge(0, 1, 1e6), DagEdge(0, 2, 2e6), DagEdge(1, 2, 5e5)]
    return ServiceDag(id="tri", tasks=tasks, edges=edges)


def random_instance(rng: np.random.Generator, m: int | None = None,
                    length: int | None = None,
                    ranges: WeightRanges | None = None):
    """Random (scenario, dag, pool, plan) with M <= 4 and L <= 6."""
    m = m if m is not None else int(rng.integers(3, 5))
    length = length if length is not None else int(rng.integers(2, 7))
    sc = scaled_scenario(m, seed=int(rng.integers(1000)))
    pool = sc.pool()
    topo = generate_topology(TopologyParams(
        num_tasks=length,
        fat=float(rng.uniform(0.4, 0.8)),
        density=float(rng.uniform(0.3, 0.8)),
        seed=int(rng.integers(1 << 30)),
    ))
    dag = assign_weights(topo, ranges or WeightRanges(), int(rng.integers(1 << 30)))
    return sc, dag, pool, make_plan(dag, pool)


@pytest.fixture
def pool2():
    return two_server_pool()


@pytest.fixture
def scenario2():
    return two_server_scenario()


@pytest.fixture
def rng():
    return np.random.default_rng(20260823)
