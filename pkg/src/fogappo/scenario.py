"""Servers, network model and scenario configuration.

A scenario bundles the server fleet (IoT device, fog servers, cloud servers),
bandwidth ranges per link class, the propagation speed, the failure penalty
and the feature normalization bounds.  The concrete bandwidth matrix is
sampled deterministically from the scenario seed, so a scenario file pins the
whole environment.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KB = 1e3
MB = 1e6
GB = 1e9

IOT = "iot"
FS = "fs"
CS = "cs"

# stream tags for seed splitting (see workload.py for the dataset streams)
_BW_STREAM = 101
_PLACE_STREAM = 102
_HW_STREAM = 103


@dataclass(frozen=True)
class Server:
    kind: str               # "iot" | "fs" | "cs"
    index: int              # index within its kind
    cores: int
    freq_hz: float          # per-core processing speed, cycles/s
    ram_bytes: float
    x: float                # metres, Cartesian plane
    y: float

    @property
    def name(self) -> str:
        return f"{self.kind}-{self.index}"


class ServerPool:
    """Immutable server fleet plus pairwise bandwidth and latency."""

    def __init__(
        self,
        servers: list[Server],
        bandwidth: np.ndarray,
        propagation_speed: float = 2e8,
    ):
        if len(servers) < 2:
            raise ValueError("a pool needs at least two servers")
        bandwidth = np.asarray(bandwidth, dtype=float).copy()
        m = len(servers)
        if bandwidth.shape != (m, m):
            raise ValueError(f"bandwidth matrix must be {m}x{m}")
        off = ~np.eye(m, dtype=bool)
        if not np.all(bandwidth[off] > 0):
            raise ValueError("bandwidth must be positive for distinct pairs")
        if not np.allclose(bandwidth, bandwidth.T):
            raise ValueError("bandwidth must be symmetric")
        np.fill_diagonal(bandwidth, np.inf)  # same-server transfer is free

        self.servers = list(servers)
        self.bandwidth = bandwidth
        self.propagation_speed = float(propagation_speed)

        self.size = m
        self.freq = np.array([s.freq_hz for s in servers])
        self.cores = np.array([s.cores for s in servers], dtype=float)
        self.ram = np.array([s.ram_bytes for s in servers])
        self.positions = np.array([[s.x, s.y] for s in servers])

        diff = self.positions[:, None, :] - self.positions[None, :, :]
        dist = np.sqrt((diff ** 2).sum(axis=2))
        self.latency = dist / self.propagation_speed

        # Pool-averaged quantities used by the upward-rank recurrence.  The
        # communication means run over all M^2 ordered pairs with same-server
        # pairs contributing zero.
        self.mean_inv_speed = float(np.mean(1.0 / self.freq))
        inv_bw = np.where(off, 1.0 / bandwidth, 0.0)
        self.pair_mean_inv_bandwidth = float(inv_bw.sum() / m ** 2)
        self.pair_mean_latency = float(self.latency.sum() / m ** 2)

        iot_ids = [i for i, s in enumerate(servers) if s.kind == IOT]
        self.iot_index = iot_ids[0] if iot_ids else 0
        with np.errstate(invalid="ignore"):
            bw_masked = np.where(off, bandwidth, np.nan)
        self.mean_bandwidth = np.nanmean(bw_masked, axis=1)


@dataclass
class FeatureBounds:
    """Fixed min/max bounds for min-max feature scaling.

    `server` holds one (lo, hi) pair per of the 8 per-server features,
    `task` one pair per of the 7 task-level features, and `input_ready`
    is shared by the per-server input-ready-time features.
    """

    server: list[tuple[float, float]]
    task: list[tuple[float, float]]
    input_ready: tuple[float, float]


@dataclass
class Scenario:
    servers: list[Server]
    bandwidth_ranges: dict[str, tuple[float, float]]  # "edge" and "cloud" links
    propagation_speed: float
    phi: float
    normalization: FeatureBounds
    seed: int
    mask_infeasible: bool = False   # ablation: mask RAM-infeasible actions

    def pool(self) -> ServerPool:
        return ServerPool(
            self.servers,
            sample_bandwidth(self.servers, self.bandwidth_ranges, self.seed),
            self.propagation_speed,
        )


def sample_bandwidth(
    servers: list[Server], ranges: dict[str, tuple[float, float]], seed: int
) -> np.ndarray:
    """Symmetric bandwidth matrix: cloud links are slow, edge links fast."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, _BW_STREAM))))
    m = len(servers)
    bw = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            key = "cloud" if CS in (servers[i].kind, servers[j].kind) else "edge"
            lo, hi = ranges[key]
            bw[i, j] = bw[j, i] = rng.uniform(lo, hi)
    np.fill_diagonal(bw, 1.0)  # placeholder; pool sets the diagonal to inf
    return bw


def default_bounds(servers: list[Server]) -> FeatureBounds:
    """Bounds derived from the fleet plus the standard workload ranges."""
    xs = [s.x for s in servers]
    ys = [s.y for s in servers]
    span = max(max(map(abs, xs)), max(map(abs, ys)), 1.0)
    max_ram = max(s.ram_bytes for s in servers)
    max_lat = 2.0 * math.hypot(span, span) / 2e8 + 1e-6
    return FeatureBounds(
        server=[
            (-span, span),               # x
            (-span, span),               # y
            (0.5e9, 3.5e9),              # freq
            (1.0, 8.0),                  # cores
            (0.0, max_ram),              # total ram
            (0.0, max_ram),              # residual ram
            (0.0, 15 * MB),              # mean bandwidth to others
            (0.0, max_lat),              # latency to the IoT source
        ],
        task=[
            (0.0, 3e8),                  # cpu cycles
            (0.0, 100 * MB),             # ram
            (0.0, 0.5),                  # deadline, s
            (0.0, 1.0),                  # critical-path flag
            (0.0, 10 * MB),              # total input bytes
            (0.0, 10.0),                 # predecessor count
            (0.0, 1.0),                  # fraction of tasks placed
        ],
        input_ready=(0.0, 1.0),          # seconds, per candidate server
    )


def default_scenario(
    num_fs: int = 30,
    num_cs: int = 20,
    seed: int = 0,
    phi: float = -1.0,
    iot_ram_bytes: float = 1 * GB,
) -> Scenario:
    """The reference fleet: one 1 GHz IoT device, edge FSs, remote CSs.

    FSs have 4 cores at 1.5-2 GHz with 1-4 GB RAM; CSs 8 cores at 2-3 GHz
    with 16-24 GB.  IoT and FSs sit in a 1 km x 1 km region; CSs are placed
    100-500 km away.  Edge links run at 10-12 MB/s, links touching a CS at
    4-8 MB/s.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, _HW_STREAM))))
    servers: list[Server] = [
        Server(IOT, 0, cores=1, freq_hz=1e9, ram_bytes=iot_ram_bytes,
               x=rng.uniform(0, 1000.0), y=rng.uniform(0, 1000.0))
    ]
    for z in range(num_fs):
        servers.append(
            Server(FS, z, cores=4,
                   freq_hz=rng.uniform(1.5e9, 2.0e9),
                   ram_bytes=rng.uniform(1 * GB, 4 * GB),
                   x=rng.uniform(0, 1000.0), y=rng.uniform(0, 1000.0))
        )
    for z in range(num_cs):
        d = rng.uniform(100e3, 500e3)
        ang = rng.uniform(0.0, 2.0 * math.pi)
        servers.append(
            Server(CS, z, cores=8,
                   freq_hz=rng.uniform(2.0e9, 3.0e9),
                   ram_bytes=rng.uniform(16 * GB, 24 * GB),
                   x=d * math.cos(ang), y=d * math.sin(ang))
        )
    return Scenario(
        servers=servers,
        bandwidth_ranges={"edge": (10 * MB, 12 * MB), "cloud": (4 * MB, 8 * MB)},
        propagation_speed=2e8,
        phi=phi,
        normalization=default_bounds(servers),
        seed=seed,
    )


def scaled_scenario(total_servers: int, seed: int = 0, phi: float = -1.0) -> Scenario:
    """System-size variant: one IoT plus FS/CS split 3:2 like the default."""
    if total_servers < 3:
        raise ValueError("need at least one IoT, one FS and one CS")
    rest = total_servers - 1
    num_fs = round(rest * 3 / 5)
    num_cs = rest - num_fs
    return default_scenario(num_fs=num_fs, num_cs=num_cs, seed=seed, phi=phi)


# --- scenario files -------------------------------------------------------

def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "seed": sc.seed,
        "propagation_speed": sc.propagation_speed,
        "phi": sc.phi,
        "mask_infeasible": sc.mask_infeasible,
        "bandwidth_ranges": {k: list(v) for k, v in sc.bandwidth_ranges.items()},
        "servers": [
            {"kind": s.kind, "index": s.index, "cores": s.cores,
             "freq_hz": s.freq_hz, "ram_bytes": s.ram_bytes, "x": s.x, "y": s.y}
            for s in sc.servers
        ],
        "normalization": {
            "server": [list(b) for b in sc.normalization.server],
            "task": [list(b) for b in sc.normalization.task],
            "input_ready": list(sc.normalization.input_ready),
        },
    }


def scenario_from_dict(doc: dict) -> Scenario:
    servers = [
        Server(kind=s["kind"], index=int(s["index"]), cores=int(s["cores"]),
               freq_hz=s["freq_hz"], ram_bytes=s["ram_bytes"], x=s["x"], y=s["y"])
        for s in doc["servers"]
    ]
    norm = doc["normalization"]
    return Scenario(
        servers=servers,
        bandwidth_ranges={k: (v[0], v[1]) for k, v in doc["bandwidth_ranges"].items()},
        propagation_speed=doc["propagation_speed"],
        phi=doc["phi"],
        normalization=FeatureBounds(
            server=[(b[0], b[1]) for b in norm["server"]],
            task=[(b[0], b[1]) for b in norm["task"]],
            input_ready=(norm["input_ready"][0], norm["input_ready"][1]),
        ),
        seed=int(doc["seed"]),
        mask_infeasible=bool(doc.get("mask_infeasible", False)),
    )


def save_scenario(sc: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(sc), indent=1))


def load_scenario(path: str | Path) -> Scenario:
    return scenario_from_dict(json.loads(Path(path).read_text()))
