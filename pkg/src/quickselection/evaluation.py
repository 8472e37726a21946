"""Evaluation harness: clustering and classification accuracy, scores, energy."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.ensemble import ExtraTreesClassifier

from .sparse_matrix import as_rng

HIGHER_IS_BETTER = {
    "clustering_accuracy": True,
    "classification_accuracy": True,
    "wall_time": False,
    "peak_memory": False,
}
METRICS = tuple(HIGHER_IS_BETTER)


# -- K-means -------------------------------------------------------------------

def _sq_dist(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    closest = _sq_dist(X, centers[:1]).ravel()
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            j = rng.integers(n)
        else:
            j = min(int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right")), n - 1)
        centers[i] = X[j]
        closest = np.minimum(closest, _sq_dist(X, centers[i:i + 1]).ravel())
    return centers


def kmeans(X: np.ndarray, n_clusters: int, rng_seed=0, max_iters: int = 300
           ) -> tuple[np.ndarray, float]:
    """Lloyd iterations from k-means++ seeds; returns ``(labels, inertia)``.

    A cluster that empties is re-seeded at the point farthest from its
    currently assigned centroid.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if not 1 <= n_clusters <= n:
        raise ValueError(f"n_clusters must lie in [1, {n}], got {n_clusters}")
    rng = as_rng(rng_seed)
    centers = _kmeans_pp(X, n_clusters, rng)
    labels = None
    for _ in range(max_iters):
        d = _sq_dist(X, centers)
        new = d.argmin(axis=1)
        counts = np.bincount(new, minlength=n_clusters)
        for c in np.flatnonzero(counts == 0):
            far = int(d[np.arange(n), new].argmax())
            new[far] = c
            d[far] = np.inf
            d[far, c] = 0.0
            counts = np.bincount(new, minlength=n_clusters)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(n_clusters):
            centers[c] = X[labels == c].mean(axis=0)
    inertia = float(((X - centers[labels]) ** 2).sum())
    return labels, inertia


def best_match_accuracy(cluster_labels, true_labels) -> float:
    """Percentage agreement under the best one-to-one cluster/class matching."""
    cl = np.asarray(cluster_labels)
    tl = np.asarray(true_labels)
    if cl.shape != tl.shape:
        raise ValueError("label vectors differ in length")
    cu, ci = np.unique(cl, return_inverse=True)
    tu, ti = np.unique(tl, return_inverse=True)
    if max(cu.size, tu.size) > cl.size:
        raise ValueError("more labels than samples")
    overlap = np.zeros((cu.size, tu.size), dtype=np.int64)
    np.add.at(overlap, (ci, ti), 1)
    r, c = linear_sum_assignment(overlap, maximize=True)
    return 100.0 * overlap[r, c].sum() / cl.size


def clustering_accuracy(X: np.ndarray, true_labels, repeats: int = 10, rng_seed=0,
                        max_iters: int = 300) -> tuple[float, float]:
    """Mean and std of best-match accuracy over ``repeats`` seeded K-means runs."""
    true_labels = np.asarray(true_labels)
    k = np.unique(true_labels).size
    if k > len(true_labels):
        raise ValueError("more classes than samples")
    seeds = np.random.SeedSequence(rng_seed).spawn(repeats)
    scores = [best_match_accuracy(kmeans(X, k, np.random.default_rng(s), max_iters)[0], true_labels)
              for s in seeds]
    return float(np.mean(scores)), float(np.std(scores))


# -- ExtraTrees -----------------------------------------------------------------

def extra_trees_fit_predict(train, test, n_trees: int = 50, rng_seed=0) -> tuple[float, bool]:
    """Test accuracy (percent) of a fully grown extremely-randomized-trees ensemble.

    Returns ``(accuracy, single_class)``; with a single training class the
    model degenerates to a constant prediction and the flag is set.
    """
    Xtr, ytr = np.asarray(train.X), np.asarray(train.y)
    Xte, yte = np.asarray(test.X), np.asarray(test.y)
    if Xtr.shape[1] != Xte.shape[1]:
        raise ValueError("train and test feature counts differ")
    classes = np.unique(ytr)
    if classes.size == 1:
        return 100.0 * float(np.mean(yte == classes[0])), True
    clf = ExtraTreesClassifier(n_estimators=n_trees,
                               max_features=math.ceil(math.sqrt(Xtr.shape[1])),
                               min_samples_split=2, bootstrap=False, random_state=rng_seed)
    clf.fit(Xtr, ytr)
    return 100.0 * float(clf.score(Xte, yte)), False


def estimate_energy(wall_time: float, device_power_watts: float) -> float:
    """kWh drawn running at full device power for ``wall_time`` seconds."""
    if wall_time < 0 or device_power_watts < 0:
        raise ValueError("inputs must be non-negative")
    return wall_time * device_power_watts / 3.6e6


# -- reports and scores ------------------------------------------------------------

@dataclass
class EvalReport:
    k_selected: int
    clustering_accuracy: float | None = None
    clustering_std: float | None = None
    classification_accuracy: float | None = None
    repeats: int = 10
    seeds: dict = field(default_factory=dict)
    parameter_count: int | None = None
    estimated_energy: float | None = None
    flags: list[str] = field(default_factory=list)
    wall_time: float | None = None
    peak_memory: int | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        timing = {k: d.pop(k) for k in ("wall_time", "peak_memory", "estimated_energy")}
        d["timing"] = timing
        return d


@dataclass
class MethodScoreTable:
    """Metric cells keyed by ``(dataset, k, method)``."""
    cells: dict = field(default_factory=dict)

    def add(self, dataset: str, k: int, method: str, **metrics) -> None:
        unknown = set(metrics) - set(METRICS)
        if unknown:
            raise ValueError(f"unknown metrics {sorted(unknown)}")
        self.cells[(dataset, k, method)] = dict(metrics)

    @property
    def methods(self) -> list[str]:
        return sorted({m for _, _, m in self.cells})

    def groups(self) -> dict:
        out: dict = {}
        for (ds, k, m), metrics in self.cells.items():
            out.setdefault((ds, k), {})[m] = metrics
        return out

    def to_dict(self) -> dict:
        return {"cells": [{"dataset": ds, "k": k, "method": m, **v}
                          for (ds, k, m), v in sorted(self.cells.items(), key=lambda t: str(t[0]))]}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["dataset", "k", "method", *METRICS])
            for (ds, k, m), v in sorted(self.cells.items(), key=lambda t: str(t[0])):
                out.writerow([ds, k, m, *(v.get(x, "") for x in METRICS)])


def _cell_values(group: dict, metric: str) -> dict:
    return {m: v[metric] for m, v in group.items() if v.get(metric) is not None}


def score1(table: MethodScoreTable) -> tuple[dict, list]:
    """One point to the best and second-best method of every (dataset, k, metric).

    Ties at the cut-off share the award.  Returns ``(totals, skipped)`` where
    ``skipped`` lists cells with fewer than two reported methods.
    """
    totals = {m: 0 for m in table.methods}
    skipped = []
    for key, group in sorted(table.groups().items(), key=str):
        for metric in METRICS:
            vals = _cell_values(group, metric)
            if len(vals) < 2:
                skipped.append((*key, metric))
                continue
            sign = 1 if HIGHER_IS_BETTER[metric] else -1
            ordered = sorted((sign * v for v in vals.values()), reverse=True)
            cut = ordered[1]
            for m, v in vals.items():
                if sign * v >= cut:
                    totals[m] += 1
    return totals, skipped


def score2(table: MethodScoreTable) -> tuple[dict, list]:
    """Sum of per-cell min-max normalised metrics, 1 meaning best.

    A cell whose values are all equal gives every method 1.
    """
    totals = {m: 0.0 for m in table.methods}
    skipped = []
    for key, group in sorted(table.groups().items(), key=str):
        for metric in METRICS:
            vals = _cell_values(group, metric)
            if len(vals) < 2:
                skipped.append((*key, metric))
                continue
            lo, hi = min(vals.values()), max(vals.values())
            for m, v in vals.items():
                if hi == lo:
                    totals[m] += 1.0
                elif HIGHER_IS_BETTER[metric]:
                    totals[m] += (v - lo) / (hi - lo)
                else:
                    totals[m] += (hi - v) / (hi - lo)
    return totals, skipped


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True))
