"""Synthetic service-DAG dataset generation.

Topologies follow the layered construction common in DAG-scheduling
benchmarks: ``fat`` controls the width/height trade-off (number of levels
approx. round(sqrt(L)/fat)), ``density`` the probability of optional edges
from earlier levels.  Each topology is re-weighted several times with
uniformly sampled task and edge weights to form the dataset, then split
80/20 into train/eval stratified by service length L.

All randomness derives from per-DAG streams seeded by
(master seed, stream tag, grid coordinates), so regeneration — serial or
parallel — reproduces the dataset byte for byte.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dag import DagEdge, ServiceDag, TaskSpec, save_dag, validate_dag

_TOPO_STREAM = 201
_WEIGHT_STREAM = 202
_SPLIT_STREAM = 203

DEFAULT_LENGTHS = tuple(range(5, 51, 5))
DEFAULT_FATS = (0.4, 0.5, 0.6, 0.7, 0.8)
DEFAULT_DENSITIES = (0.4, 0.5, 0.6, 0.7, 0.8)


class ParameterClamped(UserWarning):
    pass


@dataclass(frozen=True)
class TopologyParams:
    num_tasks: int
    fat: float
    density: float
    seed: int = 0

    def clamped(self) -> "TopologyParams":
        """Force parameters into their valid ranges, warning on changes."""
        n = max(1, int(self.num_tasks))
        fat = min(max(self.fat, 1e-9), 1.0)
        density = min(max(self.density, 0.0), 1.0)
        if (n, fat, density) != (self.num_tasks, self.fat, self.density):
            warnings.warn(
                f"topology params clamped to L={n}, fat={fat}, density={density}",
                ParameterClamped,
                stacklevel=3,
            )
        return TopologyParams(n, fat, density, self.seed)


@dataclass(frozen=True)
class WeightRanges:
    """Uniform sampling ranges, SI units (cycles, bytes, seconds)."""

    cycles: tuple[float, float] = (1e7, 3e8)
    ram_bytes: tuple[float, float] = (25e6, 100e6)
    edge_bytes: tuple[float, float] = (50e3, 2000e3)
    deadline_s: tuple[float, float] = (25e-3, 100e-3)

    def validate(self) -> None:
        for name in ("cycles", "ram_bytes", "edge_bytes", "deadline_s"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ValueError(f"bad {name} range ({lo}, {hi})")


def num_levels(num_tasks: int, fat: float) -> int:
    return min(max(1, round(math.sqrt(num_tasks) / fat)), num_tasks)


def _level_sizes(num_tasks: int, levels: int, rng: np.random.Generator) -> list[int]:
    """Near-even split of tasks over levels, jittered but never emptied."""
    sizes = [num_tasks // levels] * levels
    for i in range(num_tasks % levels):
        sizes[i] += 1
    for _ in range(levels):
        i = int(rng.integers(levels))
        j = int(rng.integers(levels))
        if i != j and sizes[i] > 1:
            sizes[i] -= 1
            sizes[j] += 1
    return sizes


def generate_topology(p: TopologyParams) -> ServiceDag:
    """Build a unit-weight layered DAG skeleton.

    Every non-entry task gets one mandatory parent drawn uniformly from the
    earlier levels, then each remaining (earlier task -> task) pair becomes
    an edge independently with probability ``density``.
    """
    p = p.clamped()
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((p.seed, _TOPO_STREAM))))
    levels = num_levels(p.num_tasks, p.fat)
    sizes = _level_sizes(p.num_tasks, levels, rng)
    level_of: list[int] = []
    for lvl, count in enumerate(sizes):
        level_of.extend([lvl] * count)

    tasks = [TaskSpec(id=i, cpu_cycles=1.0, ram_bytes=1.0, deadline_s=1.0)
             for i in range(p.num_tasks)]
    edges: list[DagEdge] = []
    for tid in range(p.num_tasks):
        if level_of[tid] == 0:
            continue
        earlier = [u for u in range(p.num_tasks) if level_of[u] < level_of[tid]]
        mandatory = int(earlier[rng.integers(len(earlier))])
        edges.append(DagEdge(src=mandatory, dst=tid, data_bytes=1.0))
        for u in earlier:
            if u != mandatory and rng.random() < p.density:
                edges.append(DagEdge(src=u, dst=tid, data_bytes=1.0))

    dag = ServiceDag(id=f"L{p.num_tasks}-f{p.fat}-d{p.density}-s{p.seed}",
                     tasks=tasks, edges=edges)
    validate_dag(dag)
    return dag


def assign_weights(skeleton: ServiceDag, r: WeightRanges, seed: int) -> ServiceDag:
    """Re-weight a skeleton: uniform draws per task (cycles, ram, deadline)
    in ascending id order, then per edge (bytes) in edge-list order."""
    r.validate()
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((seed, _WEIGHT_STREAM))))
    tasks = []
    for t in sorted(skeleton.tasks, key=lambda t: t.id):
        cycles = rng.uniform(*r.cycles)
        ram = rng.uniform(*r.ram_bytes)
        deadline = rng.uniform(*r.deadline_s)
        tasks.append(TaskSpec(id=t.id, cpu_cycles=cycles, ram_bytes=ram,
                              deadline_s=deadline))
    edges = [DagEdge(src=e.src, dst=e.dst, data_bytes=rng.uniform(*r.edge_bytes))
             for e in skeleton.edges]
    return ServiceDag(id=skeleton.id, tasks=tasks, edges=edges)


# --- dataset --------------------------------------------------------------

@dataclass
class DatasetSpec:
    lengths: tuple[int, ...] = DEFAULT_LENGTHS
    fats: tuple[float, ...] = DEFAULT_FATS
    densities: tuple[float, ...] = DEFAULT_DENSITIES
    topologies_per_point: int = 1
    weightings_per_topology: int = 100
    train_fraction: float = 0.8
    ranges: WeightRanges = field(default_factory=WeightRanges)
    seed: int = 0

    def validate(self) -> None:
        if not (0 < self.train_fraction < 1):
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.topologies_per_point < 1 or self.weightings_per_topology < 1:
            raise ValueError("counts must be >= 1")
        if not self.lengths or not self.fats or not self.densities:
            raise ValueError("grid axes must be non-empty")
        self.ranges.validate()


def _grid_key(x: float) -> int:
    # grid coordinates folded into integer seed material
    return round(x * 1000)


def dag_seed(master: int, length: int, fat: float, density: float,
             topo_idx: int, weight_idx: int) -> int:
    """Stable per-DAG seed from grid coordinates (order-independent)."""
    ss = np.random.SeedSequence(
        (master, length, _grid_key(fat), _grid_key(density), topo_idx, weight_idx))
    return int(ss.generate_state(1, np.uint64)[0])


def iter_grid(spec: DatasetSpec):
    for length in spec.lengths:
        for fat in spec.fats:
            for density in spec.densities:
                for topo_idx in range(spec.topologies_per_point):
                    yield length, fat, density, topo_idx


def build_dataset(spec: DatasetSpec, out_dir: str | Path) -> dict:
    """Generate every DAG on the grid, write files + manifest, return manifest.

    Layout: <out_dir>/manifest.json and <out_dir>/dags/<id>.json.  The split
    is by DAG, stratified by L: within each length stratum the DAG ids are
    shuffled once and the first round(train_fraction * n) go to train.
    """
    spec.validate()
    out = Path(out_dir)
    dag_dir = out / "dags"
    dag_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    for length, fat, density, topo_idx in iter_grid(spec):
        topo_seed = dag_seed(spec.seed, length, fat, density, topo_idx, 0)
        skeleton = generate_topology(
            TopologyParams(length, fat, density, seed=topo_seed))
        for w in range(spec.weightings_per_topology):
            wseed = dag_seed(spec.seed, length, fat, density, topo_idx, w + 1)
            dag_id = f"L{length}-f{fat}-d{density}-t{topo_idx}-w{w}"
            dag = assign_weights(skeleton, spec.ranges, wseed)
            dag = ServiceDag(id=dag_id, tasks=dag.tasks, edges=dag.edges)
            rel = f"dags/{dag_id}.json"
            save_dag(dag, out / rel)
            entries.append({
                "id": dag_id, "L": length, "fat": fat, "density": density,
                "topology": topo_idx, "weighting": w, "file": rel,
            })

    split_rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((spec.seed, _SPLIT_STREAM))))
    by_length: dict[int, list[dict]] = {}
    for e in entries:
        by_length.setdefault(e["L"], []).append(e)
    for length in sorted(by_length):
        stratum = by_length[length]
        order = split_rng.permutation(len(stratum))
        n_train = int(round(spec.train_fraction * len(stratum)))
        train_pos = set(order[:n_train].tolist())
        for pos, e in enumerate(stratum):
            e["split"] = "train" if pos in train_pos else "eval"

    manifest = {
        "format": 1,
        "seed": spec.seed,
        "grid": {"lengths": list(spec.lengths), "fats": list(spec.fats),
                 "densities": list(spec.densities)},
        "topologies_per_point": spec.topologies_per_point,
        "weightings_per_topology": spec.weightings_per_topology,
        "train_fraction": spec.train_fraction,
        "ranges": {
            "cycles": list(spec.ranges.cycles),
            "ram_bytes": list(spec.ranges.ram_bytes),
            "edge_bytes": list(spec.ranges.edge_bytes),
            "deadline_s": list(spec.ranges.deadline_s),
        },
        "dags": entries,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return manifest


def load_manifest(dataset_dir: str | Path) -> dict:
    return json.loads((Path(dataset_dir) / "manifest.json").read_text())


def select_entries(
    manifest: dict,
    split: str | None = None,
    only_lengths: set[int] | None = None,
    exclude_lengths: set[int] | None = None,
) -> list[dict]:
    """Filter manifest rows; leave-one-L-out = exclude for train, only for eval."""
    out = []
    for e in manifest["dags"]:
        if split is not None and e["split"] != split:
            continue
        if only_lengths is not None and e["L"] not in only_lengths:
            continue
        if exclude_lengths is not None and e["L"] in exclude_lengths:
            continue
        out.append(e)
    return out
