"""Synthetic DAG generation: topology shape, weighting, dataset plumbing."""

import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fogappo.dag import load_dag, topological_ids, validate_dag
from fogappo.workload import (
    DatasetSpec,
    ParameterClamped,
    TopologyParams,
    WeightRanges,
    assign_weights,
    build_dataset,
    dag_seed,
    generate_topology,
    load_manifest,
    num_levels,
    select_entries,
)

# A pinned skeleton; regenerating it must reproduce this exact edge set.
GOLDEN_EDGES = [
    (0, 3), (0, 4), (0, 5), (0, 6), (0, 7), (0, 8), (0, 9),
    (1, 3), (1, 4), (1, 5), (1, 6), (1, 7), (1, 8),
    (2, 3), (2, 4), (2, 5), (2, 6), (2, 7), (2, 9),
    (3, 7), (3, 8), (3, 9),
    (4, 7), (4, 8), (4, 9),
    (5, 7), (5, 8), (5, 9),
    (6, 7), (6, 9),
    (7, 9), (8, 9),
]


def test_golden_topology_is_stable():
    dag = generate_topology(TopologyParams(10, 0.8, 0.8, seed=42))
    assert sorted((e.src, e.dst) for e in dag.edges) == GOLDEN_EDGES


def test_num_levels_extremes():
    assert num_levels(1, 0.5) == 1
    assert num_levels(25, 1.0) == 5          # sqrt(L)
    assert num_levels(4, 1e-9) == 4          # capped at L
    assert num_levels(49, 0.7) == 10


@settings(max_examples=40, deadline=None)
@given(
    length=st.integers(min_value=1, max_value=30),
    fat=st.floats(min_value=0.1, max_value=1.0),
    density=st.floats(min_value=0.0, max_value=1.0),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_topologies_are_valid_layered_dags(length, fat, density, seed):
    dag = generate_topology(TopologyParams(length, fat, density, seed))
    validate_dag(dag)
    assert len(dag.tasks) == length
    order = topological_ids(dag)
    pos = {tid: i for i, tid in enumerate(order)}
    parents = dag.parents_map()
    entry_count = sum(not parents[t.id] for t in dag.tasks)
    assert entry_count >= 1
    for e in dag.edges:
        assert e.src < e.dst          # level order == id order by construction
        assert pos[e.src] < pos[e.dst]


def test_every_non_entry_task_has_a_parent():
    dag = generate_topology(TopologyParams(20, 0.6, 0.0, seed=7))
    parents = dag.parents_map()
    levels0 = [t.id for t in dag.tasks if not parents[t.id]]
    # with density 0 each later task keeps exactly its one mandatory parent
    for t in dag.tasks:
        if t.id not in levels0:
            assert len(parents[t.id]) == 1


def test_clamping_warns_and_fixes():
    with pytest.warns(ParameterClamped):
        p = TopologyParams(0, 2.0, -0.5, seed=1).clamped()
    assert p.num_tasks == 1 and p.fat == 1.0 and p.density == 0.0


def test_same_seed_same_topology_different_seed_differs():
    a = generate_topology(TopologyParams(12, 0.5, 0.5, seed=3))
    b = generate_topology(TopologyParams(12, 0.5, 0.5, seed=3))
    c = generate_topology(TopologyParams(12, 0.5, 0.5, seed=4))
    ea = sorted((e.src, e.dst) for e in a.edges)
    assert ea == sorted((e.src, e.dst) for e in b.edges)
    assert ea != sorted((e.src, e.dst) for e in c.edges)


def test_weights_fall_in_ranges_and_are_reproducible():
    skel = generate_topology(TopologyParams(15, 0.6, 0.5, seed=11))
    r = WeightRanges()
    d1 = assign_weights(skel, r, seed=99)
    d2 = assign_weights(skel, r, seed=99)
    d3 = assign_weights(skel, r, seed=100)
    assert d1.tasks == d2.tasks and d1.edges == d2.edges
    assert d1.tasks != d3.tasks
    for t in d1.tasks:
        assert r.cycles[0] <= t.cpu_cycles <= r.cycles[1]
        assert r.ram_bytes[0] <= t.ram_bytes <= r.ram_bytes[1]
        assert r.deadline_s[0] <= t.deadline_s <= r.deadline_s[1]
    for e in d1.edges:
        assert r.edge_bytes[0] <= e.data_bytes <= r.edge_bytes[1]
    # skeleton structure untouched
    assert [(e.src, e.dst) for e in d1.edges] == [(e.src, e.dst) for e in skel.edges]


def test_weight_ranges_validation():
    with pytest.raises(ValueError):
        WeightRanges(cycles=(0.0, 1.0)).validate()
    with pytest.raises(ValueError):
        WeightRanges(deadline_s=(0.2, 0.1)).validate()


def test_dag_seed_depends_on_every_coordinate():
    base = dag_seed(0, 10, 0.6, 0.6, 0, 0)
    assert dag_seed(0, 10, 0.6, 0.6, 0, 0) == base
    assert dag_seed(1, 10, 0.6, 0.6, 0, 0) != base
    assert dag_seed(0, 15, 0.6, 0.6, 0, 0) != base
    assert dag_seed(0, 10, 0.7, 0.6, 0, 0) != base
    assert dag_seed(0, 10, 0.6, 0.7, 0, 0) != base
    assert dag_seed(0, 10, 0.6, 0.6, 1, 0) != base
    assert dag_seed(0, 10, 0.6, 0.6, 0, 1) != base


def test_build_dataset_layout_split_and_determinism(tmp_path):
    spec = DatasetSpec(lengths=(5, 10), fats=(0.6,), densities=(0.5,),
                       topologies_per_point=2, weightings_per_topology=5,
                       seed=123)
    man = build_dataset(spec, tmp_path / "a")
    assert len(man["dags"]) == 2 * 2 * 5
    for e in man["dags"]:
        dag = load_dag(tmp_path / "a" / e["file"])
        assert dag.id == e["id"]
        assert len(dag.tasks) == e["L"]
        validate_dag(dag)
    # split is stratified by L at the configured fraction
    for length in (5, 10):
        stratum = [e for e in man["dags"] if e["L"] == length]
        n_train = sum(e["split"] == "train" for e in stratum)
        assert n_train == round(0.8 * len(stratum))
    # regeneration is byte-identical, manifest included
    build_dataset(spec, tmp_path / "b")
    ma = (tmp_path / "a" / "manifest.json").read_bytes()
    mb = (tmp_path / "b" / "manifest.json").read_bytes()
    assert ma == mb
    for e in man["dags"]:
        assert ((tmp_path / "a" / e["file"]).read_bytes()
                == (tmp_path / "b" / e["file"]).read_bytes())
    assert load_manifest(tmp_path / "a") == man


def test_select_entries_filters(tmp_path):
    spec = DatasetSpec(lengths=(5, 10, 15), fats=(0.6,), densities=(0.5,),
                       topologies_per_point=1, weightings_per_topology=4,
                       seed=5)
    man = build_dataset(spec, tmp_path)
    train = select_entries(man, split="train")
    assert all(e["split"] == "train" for e in train)
    only = select_entries(man, only_lengths={10})
    assert {e["L"] for e in only} == {10}
    excl = select_entries(man, split="train", exclude_lengths={10})
    assert {e["L"] for e in excl} == {5, 15}
    # leave-one-out partitions the training split
    assert len(excl) + len(select_entries(man, split="train", only_lengths={10})) \
        == len(train)


def test_dataset_spec_validation():
    with pytest.raises(ValueError):
        DatasetSpec(train_fraction=1.0).validate()
    with pytest.raises(ValueError):
        DatasetSpec(lengths=()).validate()
    with pytest.raises(ValueError):
        DatasetSpec(topologies_per_point=0).validate()
