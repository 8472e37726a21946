from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.cluster import KMeans

from oracles import brute_force_match_accuracy
from quickselection.data import Dataset
from quickselection.evaluation import (
    EvalReport,
    MethodScoreTable,
    best_match_accuracy,
    clustering_accuracy,
    estimate_energy,
    extra_trees_fit_predict,
    kmeans,
    score1,
    score2,
    write_json,
)


def blobs(centers, n_per, spread, seed):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(c, spread, (n_per, len(c))) for c in centers])
    return X, np.repeat(np.arange(len(centers)), n_per)


# -- k-means --------------------------------------------------------------------------

def test_kmeans_separable_blobs():
    X, y = blobs([(0, 0), (20, 20)], 30, 0.5, 0)
    labels, _ = kmeans(X, 2, rng_seed=0)
    assert best_match_accuracy(labels, y) == 100.0


def test_kmeans_one_cluster_per_point():
    X = np.random.default_rng(0).standard_normal((7, 3))
    labels, inertia = kmeans(X, 7, rng_seed=0)
    assert sorted(labels.tolist()) == list(range(7))
    assert inertia == pytest.approx(0.0, abs=1e-12)


def test_kmeans_near_best_of_many_restarts():
    X, _ = blobs([(0, 0), (4, 0), (2, 3.5)], 20, 1.2, 1)
    best = KMeans(3, n_init=100, random_state=0).fit(X).inertia_
    _, inertia = kmeans(X, 3, rng_seed=0)
    assert inertia <= best * 1.01


def test_kmeans_handles_duplicate_points():
    X = np.vstack([np.zeros((10, 2)), np.ones((2, 2))])
    labels, _ = kmeans(X, 3, rng_seed=0)
    assert np.unique(labels).size == 3


def test_kmeans_bad_cluster_count():
    with pytest.raises(ValueError):
        kmeans(np.zeros((3, 2)), 4)


# -- clustering accuracy --------------------------------------------------------------

def test_match_accuracy_renaming():
    assert best_match_accuracy([1, 1, 0, 0], [0, 0, 1, 1]) == 100.0
    assert best_match_accuracy([2, 0, 1, 1], [5, 7, 9, 9]) == 100.0


def test_match_accuracy_brute_force_8_points():
    clusters = [0, 0, 1, 1, 2, 2, 2, 0]
    labels = [1, 1, 0, 2, 2, 2, 0, 1]
    assert best_match_accuracy(clusters, labels) == brute_force_match_accuracy(clusters, labels)


@given(st.integers(1, 9).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 2), min_size=n, max_size=n),
    st.lists(st.integers(0, 2), min_size=n, max_size=n))))
def test_match_accuracy_equals_exhaustive(pair):
    c, t = pair
    assert best_match_accuracy(c, t) == pytest.approx(brute_force_match_accuracy(c, t))


@given(st.lists(st.integers(0, 3), min_size=2, max_size=30), st.permutations(range(4)))
def test_match_accuracy_permutation_invariant(labels, perm):
    clusters = np.random.default_rng(len(labels)).integers(0, 3, len(labels))
    relabeled = [perm[v] for v in labels]
    assert best_match_accuracy(clusters, labels) == best_match_accuracy(clusters, relabeled)
    assert best_match_accuracy(labels, clusters) == best_match_accuracy(relabeled, clusters)


def test_match_accuracy_length_mismatch():
    with pytest.raises(ValueError):
        best_match_accuracy([0, 1], [0])


def test_clustering_accuracy_repeats():
    X, y = blobs([(0, 0), (10, 0)], 25, 0.5, 2)
    mean, std = clustering_accuracy(X, y, repeats=10, rng_seed=0)
    assert mean == 100.0 and std == 0.0
    assert clustering_accuracy(X, y, repeats=3, rng_seed=5) == clustering_accuracy(X, y, 3, 5)


# -- extra trees ------------------------------------------------------------------------

def test_extra_trees_memorizes():
    X, y = blobs([(0, 0), (3, 3)], 40, 1.0, 3)
    d = Dataset(X, y)
    acc, flag = extra_trees_fit_predict(d, d, rng_seed=0)
    assert acc == 100.0 and not flag


def test_extra_trees_chance_level():
    rng = np.random.default_rng(4)
    tr = Dataset(rng.standard_normal((1000, 5)), rng.integers(0, 2, 1000))
    te = Dataset(rng.standard_normal((1000, 5)), rng.integers(0, 2, 1000))
    acc, _ = extra_trees_fit_predict(tr, te, rng_seed=0)
    assert 45 <= acc <= 55


def test_extra_trees_single_class_flagged():
    tr = Dataset(np.random.default_rng(0).standard_normal((10, 2)), np.zeros(10, int))
    te = Dataset(np.zeros((4, 2)), np.array([0, 0, 1, 1]))
    acc, flag = extra_trees_fit_predict(tr, te)
    assert flag and acc == 50.0


def test_extra_trees_deterministic_and_shape_checked():
    X, y = blobs([(0, 0), (1, 1)], 30, 1.0, 5)
    d = Dataset(X, y)
    assert extra_trees_fit_predict(d, d, rng_seed=3) == extra_trees_fit_predict(d, d, rng_seed=3)
    with pytest.raises(ValueError):
        extra_trees_fit_predict(d, Dataset(X[:, :1], y))


# -- energy --------------------------------------------------------------------------

def test_energy():
    assert estimate_energy(3600, 1000) == 1.0
    assert estimate_energy(0, 85) == 0.0
    assert estimate_energy(7200, 85) == pytest.approx(0.17)
    with pytest.raises(ValueError):
        estimate_energy(-1, 10)


# -- score tables ----------------------------------------------------------------------

def full_cell(table, ds, k, method, ca, cl, t, m):
    table.add(ds, k, method, clustering_accuracy=ca, classification_accuracy=cl,
              wall_time=t, peak_memory=m)


def hand_table():
    t = MethodScoreTable()
    full_cell(t, "d1", 10, "A", 80, 90, 5, 100)
    full_cell(t, "d1", 10, "B", 70, 95, 2, 300)
    full_cell(t, "d1", 10, "C", 60, 85, 9, 200)
    return t


def test_score1_two_methods():
    t = MethodScoreTable()
    full_cell(t, "d", 5, "A", 1, 2, 3, 4)
    full_cell(t, "d", 5, "B", 4, 3, 2, 1)
    totals, skipped = score1(t)
    assert totals == {"A": 4, "B": 4} and skipped == []


def test_score1_hand_ranking():
    # clustering: A, B | classification: B, A | time: B, A | memory: A, C
    totals, _ = score1(hand_table())
    assert totals == {"A": 4, "B": 3, "C": 1}


def test_score1_ties_share():
    t = MethodScoreTable()
    full_cell(t, "d", 5, "A", 80, 80, 1, 1)
    full_cell(t, "d", 5, "B", 70, 70, 1, 1)
    full_cell(t, "d", 5, "C", 70, 60, 1, 1)
    totals, _ = score1(t)
    assert totals == {"A": 4, "B": 4, "C": 3}


def test_score1_dominated_method_changes_nothing():
    base, _ = score1(hand_table())
    t = hand_table()
    full_cell(t, "d1", 10, "D", 0, 0, 99, 999)
    totals, _ = score1(t)
    assert totals["D"] == 0
    assert {m: totals[m] for m in base} == base


def test_score2_hand_normalization():
    totals, _ = score2(hand_table())
    expected = {
        "A": 1.0 + 0.5 + 4 / 7 + 1.0,
        "B": 0.5 + 1.0 + 1.0 + 0.0,
        "C": 0.0 + 0.0 + 0.0 + 0.5,
    }
    for m, v in expected.items():
        assert totals[m] == pytest.approx(v, abs=1e-12)


def test_score2_two_methods_and_best_everywhere():
    t = MethodScoreTable()
    full_cell(t, "d", 5, "A", 90, 90, 1, 1)
    full_cell(t, "d", 5, "B", 50, 40, 3, 8)
    totals, _ = score2(t)
    assert totals == {"A": 4.0, "B": 0.0}


def test_score2_zero_range_gives_one():
    t = MethodScoreTable()
    full_cell(t, "d", 5, "A", 50, 50, 1, 1)
    full_cell(t, "d", 5, "B", 50, 50, 1, 1)
    assert score2(t)[0] == {"A": 4.0, "B": 4.0}


def test_missing_cells_reported():
    t = hand_table()
    t.add("d2", 10, "A", clustering_accuracy=50)
    totals, skipped = score1(t)
    assert ("d2", 10, "clustering_accuracy") in skipped
    assert len(skipped) == 4
    assert score2(t)[1] == skipped


@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 100), st.floats(0, 1e3),
                          st.floats(0, 1e6)), min_size=2, max_size=5))
def test_score_bounds(rows):
    t = MethodScoreTable()
    for i, r in enumerate(rows):
        full_cell(t, "d", 1, f"m{i}", *r)
    s1, _ = score1(t)
    s2, _ = score2(t)
    assert all(0 <= v <= 4 for v in s1.values())
    assert all(-1e-12 <= v <= 4 + 1e-12 for v in s2.values())


def test_unknown_metric_rejected():
    with pytest.raises(ValueError):
        MethodScoreTable().add("d", 1, "A", speed=3)


def test_exports(tmp_path):
    t = hand_table()
    t.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "dataset,k,method,clustering_accuracy,classification_accuracy,wall_time,peak_memory"
    assert len(lines) == 4
    write_json(t.to_dict(), tmp_path / "t.json")
    assert len(json.loads((tmp_path / "t.json").read_text())["cells"]) == 3


def test_eval_report_timing_split():
    r = EvalReport(k_selected=5, clustering_accuracy=50.0, wall_time=1.5, peak_memory=10)
    d = r.to_dict()
    assert d["timing"] == {"wall_time": 1.5, "peak_memory": 10, "estimated_energy": None}
    assert "wall_time" not in d
