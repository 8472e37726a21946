"""Dataset container, CSV ingestion, preprocessing and synthetic generators."""
from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Malformed or unusable input data."""


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray | None = None
    feature_names: list[str] | None = None
    split_tag: str = "train"
    preprocessing: dict | None = None
    ground_truth: dict | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise DataError(f"X must be 2-D, got shape {self.X.shape}")
        if not np.all(np.isfinite(self.X)):
            r, c = np.argwhere(~np.isfinite(self.X))[0]
            raise DataError(f"non-finite value at row {r}, column {c}")
        if self.y is not None:
            self.y = np.asarray(self.y)
            if self.y.shape != (self.X.shape[0],):
                raise DataError(f"{self.y.size} labels for {self.X.shape[0]} rows")

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def has_labels(self) -> bool:
        return self.y is not None

    def subset(self, features) -> Dataset:
        features = np.asarray(features, dtype=np.int64)
        names = None if self.feature_names is None else [self.feature_names[i] for i in features]
        return replace(self, X=self.X[:, features], feature_names=names)

    def metadata(self) -> dict:
        meta = {"shape": [self.n_samples, self.n_features], "split": self.split_tag,
                "preprocessing": self.preprocessing}
        if self.y is not None:
            labels, counts = np.unique(self.y, return_counts=True)
            meta["class_counts"] = {str(l): int(c) for l, c in zip(labels.tolist(), counts)}
        if self.ground_truth is not None:
            meta["ground_truth"] = self.ground_truth
        return meta


def _parse_float(cell: str, row: int, col: int) -> float:
    try:
        return float(cell)
    except ValueError:
        raise DataError(f"non-numeric cell {cell!r} at row {row}, column {col}") from None


def load_csv(path, has_labels: bool = False, label_column: int = -1,
             header: bool = False) -> Dataset:
    """Read a numeric CSV; row/column numbers in errors are 1-based file positions."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    names = None
    start = 1
    if header and rows:
        names = rows[0]
        rows = rows[1:]
        start = 2
    rows = [r for r in rows if r]
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(rows[0])
    values = np.empty((len(rows), width))
    for i, r in enumerate(rows):
        if len(r) != width:
            raise DataError(f"{path}: row {i + start} has {len(r)} cells, expected {width}")
        for j, cell in enumerate(r):
            values[i, j] = _parse_float(cell.strip(), i + start, j + 1)
    y = None
    if has_labels:
        col = label_column % width
        y = values[:, col]
        if np.all(y == np.round(y)):
            y = y.astype(np.int64)
        values = np.delete(values, col, axis=1)
        if names is not None:
            names = names[:col] + names[col + 1:]
    try:
        return Dataset(values, y, names)
    except DataError as e:
        raise DataError(f"{path}: {e}") from None


def save_csv(data: Dataset, path, with_labels: bool = True, header: bool = False) -> None:
    """Write features (labels last, when present) with round-trip float precision."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        labelled = with_labels and data.y is not None
        if header:
            names = data.feature_names or [f"f{i}" for i in range(data.n_features)]
            out.writerow(names + (["label"] if labelled else []))
        for i, row in enumerate(data.X):
            cells = [repr(float(v)) for v in row]
            if labelled:
                cells.append(str(data.y[i]))
            out.writerow(cells)


def fit_transform(data: Dataset, mode: str = "zscore") -> tuple[Dataset, dict]:
    """Standardise (``zscore``) or rescale to [0, 1] (``minmax``) column-wise.

    Constant columns are only shifted (zscore) or left as they are (minmax).
    """
    X = data.X
    if mode == "zscore":
        if data.n_samples < 2:
            raise DataError("zscore needs at least 2 samples")
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        state = {"mode": "zscore", "mean": mean.tolist(), "std": std.tolist()}
    elif mode == "minmax":
        if data.n_samples < 1:
            raise DataError("minmax needs at least 1 sample")
        state = {"mode": "minmax", "min": X.min(axis=0).tolist(), "max": X.max(axis=0).tolist()}
    else:
        raise ValueError(f"unknown preprocessing mode {mode!r}")
    return apply_transform(data, state), state


def apply_transform(data: Dataset, state: dict) -> Dataset:
    """Apply a fitted state; statistics never come from ``data`` itself."""
    X = data.X
    if state["mode"] == "zscore":
        shift = np.asarray(state["mean"])
        scale = np.asarray(state["std"])
    else:
        shift = np.asarray(state["min"])
        scale = np.asarray(state["max"]) - shift
    if shift.size != data.n_features:
        raise DataError(f"state fitted on {shift.size} features, data has {data.n_features}")
    if state["mode"] == "minmax":
        shift = np.where(scale > 0, shift, 0.0)
    scale = np.where(scale > 0, scale, 1.0)
    return replace(data, X=(X - shift) / scale, preprocessing=state)


def train_test_split(data: Dataset, test_fraction: float = 0.2, rng_seed=0
                     ) -> tuple[Dataset, Dataset]:
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = data.n_samples
    n_test = int(round(n * test_fraction))
    perm = np.random.default_rng(rng_seed).permutation(n)
    te, tr = np.sort(perm[:n_test]), np.sort(perm[n_test:])

    def part(idx, tag):
        return replace(data, X=data.X[idx], y=None if data.y is None else data.y[idx],
                       split_tag=tag)

    return part(tr, "train"), part(te, "test")


@dataclass
class SyntheticSpec:
    n_samples: int = 2600
    n_informative: int = 5
    n_redundant: int = 15
    n_noise: int = 480
    n_classes: int = 2
    class_separation: float = 1.0
    n_clusters_per_class: int | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be at least 2")
        if self.n_informative < 1 or self.n_redundant < 0 or self.n_noise < 0:
            raise ValueError("feature counts must be non-negative with at least one informative")
        if self.n_samples < self.n_classes:
            raise ValueError("fewer samples than classes")
        if self.n_clusters_per_class is None:
            self.n_clusters_per_class = max(1, min(16, 2 ** min(self.n_informative, 30) // self.n_classes))
        if self.n_clusters_per_class < 1:
            raise ValueError("n_clusters_per_class must be positive")
        if self.n_classes * self.n_clusters_per_class > 2 ** min(self.n_informative, 30):
            raise ValueError("not enough hypercube vertices for the requested clusters")

    @property
    def n_features(self) -> int:
        return self.n_informative + self.n_redundant + self.n_noise


def generate_madelon_like(spec: SyntheticSpec) -> Dataset:
    """Gaussian clusters on hypercube vertices plus redundant and noise columns.

    Each class owns ``n_clusters_per_class`` distinct vertices of the
    ``n_informative``-cube with side ``2 * class_separation``; every cluster
    gets a random linear distortion.  Redundant columns are unit-norm random
    mixes of the informative ones, noise columns are i.i.d. ``N(0, 1)``.
    Columns are shuffled; ``ground_truth`` maps each role to its indices.
    """
    rng = np.random.default_rng(spec.rng_seed)
    n_inf = spec.n_informative
    n_clusters = spec.n_classes * spec.n_clusters_per_class
    if n_inf <= 20:
        vertices = np.array(list(itertools.product((0, 1), repeat=n_inf)), dtype=float)
        pick = rng.choice(len(vertices), size=n_clusters, replace=False)
        centroids = vertices[pick]
    else:
        centroids = np.unique(rng.integers(0, 2, size=(4 * n_clusters, n_inf)), axis=0)
        centroids = rng.permutation(centroids)[:n_clusters].astype(float)
    centroids = (2 * centroids - 1) * spec.class_separation

    # near-equal cluster sizes, cluster c belongs to class c % n_classes
    sizes = np.full(n_clusters, spec.n_samples // n_clusters)
    sizes[: spec.n_samples % n_clusters] += 1
    X_inf = np.empty((spec.n_samples, n_inf))
    y = np.empty(spec.n_samples, dtype=np.int64)
    lo = 0
    for c, m in enumerate(sizes):
        pts = rng.standard_normal((m, n_inf))
        mix = 2 * rng.random((n_inf, n_inf)) - 1
        X_inf[lo:lo + m] = pts @ mix + centroids[c]
        y[lo:lo + m] = c % spec.n_classes
        lo += m

    coef = 2 * rng.random((n_inf, spec.n_redundant)) - 1
    coef /= np.linalg.norm(coef, axis=0, keepdims=True)
    X_red = X_inf @ coef
    X_noise = rng.standard_normal((spec.n_samples, spec.n_noise))
    X = np.hstack([X_inf, X_red, X_noise])

    cols = rng.permutation(spec.n_features)
    rows = rng.permutation(spec.n_samples)
    X = X[rows][:, cols]
    y = y[rows]
    where = np.argsort(cols)  # where[j] is the new position of original column j
    roles = {
        "informative": np.sort(where[:n_inf]).tolist(),
        "redundant": np.sort(where[n_inf:n_inf + spec.n_redundant]).tolist(),
        "noise": np.sort(where[n_inf + spec.n_redundant:]).tolist(),
    }
    roles["redundant_coefficients"] = coef.T.tolist()
    roles["redundant_sources"] = where[:n_inf].tolist()
    roles["redundant_targets"] = where[n_inf:n_inf + spec.n_redundant].tolist()
    return Dataset(X, y, ground_truth=roles)


def relevant_features(data: Dataset) -> np.ndarray:
    """Informative plus redundant column indices of a synthetic dataset."""
    gt = data.ground_truth
    if gt is None:
        raise DataError("dataset carries no ground truth")
    return np.sort(np.array(gt["informative"] + gt["redundant"], dtype=np.int64))


def generate_gaussian_matrix(n_samples: int, n_features: int, rng_seed=0) -> Dataset:
    if n_samples < 1 or n_features < 1:
        raise ValueError("dimensions must be positive")
    X = np.random.default_rng(rng_seed).standard_normal((n_samples, n_features))
    return Dataset(X)


def write_metadata(data: Dataset, path, **extra) -> None:
    meta = data.metadata()
    meta.update(extra)
    Path(path).write_text(json.dumps(meta, indent=2))
