"""Knowledge-store ingestion, canonicalization, derived gains, persistence."""

from __future__ import annotations

import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import full_random_store, make_space, partial_random_store
from mdesign.space import DesignDimension, DesignSpace
from mdesign.store import (
    IngestError,
    KnowledgeStore,
    StoreError,
    StoreFormatError,
    TaskRecord,
    ingest_benchmark,
    load_store,
)

SPACE_TEXT = "width: [64, 128]\ndepth: [2, 4]\n"

RECORDS = """task_id,width,depth,performance
cifar10,64,2,0.71
cifar10,64,4,0.74
cifar10,128,2,0.77
cifar10,128,4,0.80
svhn,64,2,0.90
svhn,64,4,0.92
svhn,128,2,0.93
svhn,128,4,0.95
"""

STATS = """task_id,n_classes,input_px
cifar10,10,32
svhn,10,32
"""


@pytest.fixture
def space2x2():
    return DesignSpace(
        [
            DesignDimension("width", ("64", "128")),
            DesignDimension("depth", ("2", "4")),
        ]
    )


@pytest.fixture
def store2x2(space2x2):
    return ingest_benchmark(space2x2, RECORDS, STATS)


# ------------------------------------------------------------------- ingestion


def test_ingest_counts(store2x2):
    assert store2x2.task_ids == ("cifar10", "svhn")
    assert store2x2.arch_count == 4
    assert len(store2x2.performances("cifar10")) == 4
    assert len(store2x2.performances("svhn")) == 4
    assert store2x2.stat_names == ("n_classes", "input_px")
    assert store2x2.stats_vector("cifar10") == (10.0, 32.0)


def test_ingest_column_order_is_free(space2x2, store2x2):
    reordered = """task_id,depth,width,performance
cifar10,2,64,0.71
cifar10,4,64,0.74
cifar10,2,128,0.77
cifar10,4,128,0.80
svhn,2,64,0.90
svhn,4,64,0.92
svhn,2,128,0.93
svhn,4,128,0.95
"""
    assert ingest_benchmark(space2x2, reordered, STATS) == store2x2


def test_ingest_row_order_is_free(space2x2, store2x2, tmp_path):
    lines = RECORDS.strip().splitlines()
    shuffled = "\n".join([lines[0]] + lines[:0:-1]) + "\n"
    again = ingest_benchmark(space2x2, shuffled, STATS)
    assert again == store2x2
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    store2x2.persist(p1)
    again.persist(p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_ingest_unknown_label_names_row(space2x2):
    bad = "task_id,width,depth,performance\ncifar10,96,2,0.7\n"
    with pytest.raises(IngestError, match="row 2"):
        ingest_benchmark(space2x2, bad)


def test_ingest_duplicate_measurement_rejected(space2x2):
    bad = (
        "task_id,width,depth,performance\n"
        "cifar10,64,2,0.71\n"
        "cifar10,64,2,0.72\n"
    )
    with pytest.raises(IngestError, match="duplicate"):
        ingest_benchmark(space2x2, bad)


def test_ingest_non_numeric_performance_rejected(space2x2):
    bad = "task_id,width,depth,performance\ncifar10,64,2,high\n"
    with pytest.raises(IngestError, match="row 2"):
        ingest_benchmark(space2x2, bad)


def test_ingest_non_finite_performance_rejected(space2x2):
    bad = "task_id,width,depth,performance\ncifar10,64,2,nan\n"
    with pytest.raises(IngestError, match="finite"):
        ingest_benchmark(space2x2, bad)


def test_ingest_wrong_dimension_columns_rejected(space2x2):
    bad = "task_id,width,performance\ncifar10,64,0.7\n"
    with pytest.raises(IngestError, match="dimensions"):
        ingest_benchmark(space2x2, bad)


def test_ingest_ragged_row_rejected(space2x2):
    bad = "task_id,width,depth,performance\ncifar10,64,0.7\n"
    with pytest.raises(IngestError, match="row 2"):
        ingest_benchmark(space2x2, bad)


def test_ingest_empty_csv_rejected(space2x2):
    with pytest.raises(IngestError, match="empty"):
        ingest_benchmark(space2x2, "")
    with pytest.raises(IngestError, match="no data rows"):
        ingest_benchmark(space2x2, "task_id,width,depth,performance\n")


def test_ingest_stats_must_cover_exactly_the_tasks(space2x2):
    with pytest.raises(IngestError, match="missing"):
        ingest_benchmark(space2x2, RECORDS, "task_id,n_classes,input_px\ncifar10,10,32\n")
    extra = STATS + "mnist,10,28\n"
    with pytest.raises(IngestError, match="unknown"):
        ingest_benchmark(space2x2, RECORDS, extra)


def test_ingest_min_direction_negates(space2x2):
    manifest = json.dumps(
        {
            "space_size": 4,
            "tasks": {
                "cifar10": {"metric": "top1", "direction": "max"},
                "svhn": {"metric": "latency_ms", "direction": "min"},
            },
        }
    )
    store = ingest_benchmark(space2x2, RECORDS, STATS, manifest)
    assert store.performance_of("svhn", (0, 0)) == -0.90
    assert store.performance_of("cifar10", (0, 0)) == 0.71
    assert store.tasks["svhn"].direction == "min"
    assert store.tasks["svhn"].metric == "latency_ms"
    # best architecture on a negated task is the lowest raw value
    best_id, best = store.best_architecture("svhn")
    assert store.arch_tuple(best_id) == (0, 0)
    assert best == -0.90


def test_manifest_space_size_mismatch_rejected(space2x2):
    manifest = json.dumps({"space_size": 5, "tasks": {}})
    with pytest.raises(IngestError, match="space size"):
        ingest_benchmark(space2x2, RECORDS, STATS, manifest)


def test_manifest_bad_direction_rejected(space2x2):
    manifest = json.dumps(
        {"space_size": 4, "tasks": {"cifar10": {"direction": "up"}}}
    )
    with pytest.raises(IngestError, match="direction"):
        ingest_benchmark(space2x2, RECORDS, STATS, manifest)


def test_manifest_invalid_json_rejected(space2x2):
    with pytest.raises(IngestError, match="JSON"):
        ingest_benchmark(space2x2, RECORDS, STATS, "{not json")


# --------------------------------------------------------------------- queries


def test_performance_lookup(store2x2):
    assert store2x2.performance_of("cifar10", (1, 1)) == 0.80
    assert store2x2.performance_of("cifar10", (0, 1)) == 0.74


def test_unknown_task_rejected(store2x2):
    with pytest.raises(StoreError, match="unknown task"):
        store2x2.performances("mnist")


def test_best_architecture(store2x2):
    best_id, best = store2x2.best_architecture("cifar10")
    assert store2x2.arch_tuple(best_id) == (1, 1)
    assert best == 0.80


def test_best_architecture_tie_takes_lowest_id():
    space = make_space(2, 2)
    rows = [
        ("t", (0, 0), 0.5),
        ("t", (0, 1), 0.9),
        ("t", (1, 0), 0.9),
        ("t", (1, 1), 0.1),
    ]
    store = KnowledgeStore.build(space, [TaskRecord("t")], rows)
    best_id, best = store.best_architecture("t")
    assert best == 0.9
    # (0, 1) sorts before (1, 0), so its id is lower
    assert store.arch_tuple(best_id) == (0, 1)


def test_arch_ids_follow_sorted_tuple_order(store2x2):
    assert store2x2.arch_tuples == ((0, 0), (0, 1), (1, 0), (1, 1))
    assert store2x2.arch_id_of((1, 0)) == 2
    assert store2x2.arch_id_of((9, 9)) is None


def test_build_rejects_duplicate_task_ids(space2x2):
    with pytest.raises(StoreError, match="duplicate task"):
        KnowledgeStore.build(
            space2x2, [TaskRecord("t"), TaskRecord("t")], [("t", (0, 0), 1.0)]
        )


def test_build_rejects_unknown_task_rows(space2x2):
    with pytest.raises(StoreError, match="unknown task"):
        KnowledgeStore.build(space2x2, [TaskRecord("t")], [("u", (0, 0), 1.0)])


def test_build_rejects_stat_arity_mismatch(space2x2):
    with pytest.raises(StoreError, match="statistics"):
        KnowledgeStore.build(
            space2x2, [TaskRecord("t", stats=(1.0,))], [], stat_names=("a", "b")
        )


def test_subset_keeps_only_named_tasks(store2x2):
    sub = store2x2.subset(["svhn"])
    assert sub.task_ids == ("svhn",)
    assert sub.performance_of("svhn", (1, 1)) == 0.95
    with pytest.raises(StoreError, match="unknown"):
        store2x2.subset(["svhn", "mnist"])


# ----------------------------------------------------------------------- gains


def test_gain_between_neighbors():
    space = make_space(2, 2)
    rows = [("t", (0, 0), 0.80), ("t", (0, 1), 0.85)]
    store = KnowledgeStore.build(space, [TaskRecord("t")], rows)
    a = store.arch_id_of((0, 0))
    b = store.arch_id_of((0, 1))
    assert store.lookup_gain("t", a, b) == pytest.approx(0.05)
    assert store.lookup_gain("t", b, a) == -store.lookup_gain("t", a, b)


def test_gain_missing_endpoint_is_none(space2x2):
    rows = [
        ("t", (0, 0), 0.80),
        ("t", (0, 1), 0.85),
        ("t", (1, 1), 0.90),
    ]
    store = KnowledgeStore.build(space2x2, [TaskRecord("t")], rows)
    a = store.arch_id_of((0, 1))
    b = store.arch_id_of((1, 1))
    missing = store.arch_id_of((1, 0))
    assert missing is None  # (1, 0) never measured, so it has no id at all
    assert store.lookup_gain("t", a, b) == pytest.approx(0.05)


def test_gain_non_neighbor_rejected(store2x2):
    a = store2x2.arch_id_of((0, 0))
    b = store2x2.arch_id_of((1, 1))
    with pytest.raises(StoreError, match="one modification"):
        store2x2.lookup_gain("cifar10", a, b)


def test_derive_gains_three_candidate_chain():
    space = make_space(3)
    rows = [("t", (0,), 0.1), ("t", (1,), 0.2), ("t", (2,), 0.4)]
    store = KnowledgeStore.build(space, [TaskRecord("t")], rows)
    gains = {(g.arch_from, g.arch_to): g.gain for g in store.derive_gains("t")}
    assert gains == {
        (0, 1): pytest.approx(0.1),
        (0, 2): pytest.approx(0.3),
        (1, 2): pytest.approx(0.2),
    }


def test_derive_gains_canonical_direction(store2x2):
    for g in store2x2.derive_gains("cifar10"):
        assert g.arch_from < g.arch_to
        assert g.task_id == "cifar10"


def test_derive_gains_needs_two_measurements(space2x2):
    store = KnowledgeStore.build(space2x2, [TaskRecord("t")], [("t", (0, 0), 1.0)])
    assert store.derive_gains("t") == []


def test_derive_gains_skips_unmeasured_neighbors(space2x2):
    rows = [("t", (0, 0), 0.1), ("t", (1, 1), 0.2)]  # diagonal: no shared edge
    store = KnowledgeStore.build(space2x2, [TaskRecord("t")], rows)
    assert store.derive_gains("t") == []


def test_antisymmetry_is_exact_not_approximate():
    # Values chosen so the difference is not representable cleanly.
    space = make_space(2)
    rows = [("t", (0,), 0.1), ("t", (1,), 0.3)]
    store = KnowledgeStore.build(space, [TaskRecord("t")], rows)
    forward = store.lookup_gain("t", 0, 1)
    backward = store.lookup_gain("t", 1, 0)
    assert forward == -backward  # bitwise, not approx


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10_000))
def test_antisymmetry_holds_for_random_stores(seed):
    space = make_space(3, 2, 2)
    store = partial_random_store(space, n_tasks=2, coverage=0.7, seed=seed)
    for tid in store.task_ids:
        for g in store.derive_gains(tid):
            assert store.lookup_gain(tid, g.arch_to, g.arch_from) == -g.gain
            assert store.lookup_gain(tid, g.arch_from, g.arch_to) == g.gain


def test_cycle_sums_vanish_around_squares():
    store = full_random_store(make_space(4, 4), n_tasks=3, seed=7)
    space = store.space
    for tid in store.task_ids:
        for w0 in range(3):
            for d0 in range(3):
                a = store.arch_id_of((w0, d0))
                b = store.arch_id_of((w0 + 1, d0))
                c = store.arch_id_of((w0 + 1, d0 + 1))
                d = store.arch_id_of((w0, d0 + 1))
                loop = (
                    store.lookup_gain(tid, a, b)
                    + store.lookup_gain(tid, b, c)
                    + store.lookup_gain(tid, c, d)
                    + store.lookup_gain(tid, d, a)
                )
                assert abs(loop) <= 1e-12


# ----------------------------------------------------------------- persistence


def test_persist_load_round_trip(store2x2, tmp_path):
    path = tmp_path / "store.json"
    store2x2.persist(path)
    loaded = load_store(path)
    assert loaded == store2x2
    assert loaded.space == store2x2.space
    assert loaded.performance_of("svhn", (1, 0)) == 0.93
    # determinism: loading and re-persisting reproduces the bytes
    path2 = tmp_path / "again.json"
    loaded.persist(path2)
    assert path.read_bytes() == path2.read_bytes()


def test_load_rejects_corrupt_file(tmp_path):
    path = tmp_path / "store.json"
    path.write_text("{truncated", encoding="utf-8")
    with pytest.raises(StoreFormatError, match="corrupt"):
        load_store(path)


def test_load_rejects_foreign_json(tmp_path):
    path = tmp_path / "store.json"
    path.write_text(json.dumps({"hello": 1}), encoding="utf-8")
    with pytest.raises(StoreFormatError, match="not a knowledge-store"):
        load_store(path)


def test_load_rejects_version_mismatch(store2x2, tmp_path):
    path = tmp_path / "store.json"
    store2x2.persist(path)
    payload = json.loads(path.read_text(encoding="utf-8"))
    payload["version"] = 99
    path.write_text(json.dumps(payload), encoding="utf-8")
    with pytest.raises(StoreFormatError, match="version"):
        load_store(path)


def test_load_rejects_mangled_payload(store2x2, tmp_path):
    path = tmp_path / "store.json"
    store2x2.persist(path)
    payload = json.loads(path.read_text(encoding="utf-8"))
    del payload["archs"]
    path.write_text(json.dumps(payload), encoding="utf-8")
    with pytest.raises(StoreFormatError, match="corrupt"):
        load_store(path)


def test_task_record_validation():
    with pytest.raises(StoreError):
        TaskRecord("")
    with pytest.raises(StoreError):
        TaskRecord("t", direction="sideways")


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10_000))
def test_round_trip_preserves_everything(seed, tmp_path_factory):
    tmp = tmp_path_factory.mktemp("roundtrip")
    store = partial_random_store(make_space(3, 3), n_tasks=3, coverage=0.8, seed=seed)
    path = tmp / f"s{seed}.json"
    store.persist(path)
    loaded = load_store(path)
    assert loaded == store
    for tid in store.task_ids:
        assert loaded.performances(tid) == store.performances(tid)
        assert loaded.stats_vector(tid) == store.stats_vector(tid)
