"""Neuron strength, feature ranking and top-K selection."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sparse_matrix import SparseWeights


def neuron_strength(first_layer: SparseWeights) -> np.ndarray:
    """Sum of absolute outgoing weights of every input neuron."""
    return np.bincount(first_layer.rows, weights=np.abs(first_layer.values),
                       minlength=first_layer.n_in).astype(np.float64)


def _descending_order(strengths: np.ndarray) -> np.ndarray:
    # stable sort on the negated values keeps lower indices first among ties
    return np.argsort(-strengths, kind="stable")


@dataclass
class FeatureRanking:
    strengths: np.ndarray
    order: np.ndarray = None
    epoch_tag: int = 0

    def __post_init__(self):
        self.strengths = np.asarray(self.strengths, dtype=np.float64)
        if self.order is None:
            self.order = _descending_order(self.strengths)
        self.order = np.asarray(self.order, dtype=np.int64)

    @property
    def n_features(self) -> int:
        return self.strengths.size

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["rank", "feature_index", "strength"])
            for rank, idx in enumerate(self.order):
                out.writerow([rank, int(idx), repr(float(self.strengths[idx]))])

    @classmethod
    def from_csv(cls, path) -> FeatureRanking:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        rows.sort(key=lambda r: int(r["rank"]))
        order = np.array([int(r["feature_index"]) for r in rows])
        strengths = np.empty(order.size)
        strengths[order] = [float(r["strength"]) for r in rows]
        return cls(strengths, order)


def select_top_k(ranking: FeatureRanking, k: int) -> np.ndarray:
    """Indices of the ``k`` strongest features, in rank order."""
    if not 1 <= k <= ranking.n_features:
        raise ValueError(f"k must lie in [1, {ranking.n_features}], got {k}")
    return ranking.order[:k].copy()


def rank_all(model) -> FeatureRanking:
    """Rank every input feature of a trained model by strength."""
    first = model.layers[0].weights
    if first.nnz == 0:
        raise ValueError("model has no input connections to rank")
    return FeatureRanking(neuron_strength(first))


@dataclass
class StrengthHistory:
    epochs: list[int] = field(default_factory=list)
    strengths: list[np.ndarray] = field(default_factory=list)

    def append(self, epoch: int, strengths: np.ndarray) -> None:
        if self.epochs and epoch <= self.epochs[-1]:
            raise ValueError(f"epoch {epoch} does not follow {self.epochs[-1]}")
        self.epochs.append(int(epoch))
        self.strengths.append(np.asarray(strengths, dtype=np.float64).copy())

    def __len__(self) -> int:
        return len(self.epochs)

    def at(self, epoch: int) -> np.ndarray:
        return self.strengths[self.epochs.index(epoch)]

    def trajectories(self, features) -> np.ndarray:
        """``(len(features), len(self))`` matrix of strength over time."""
        return np.stack(self.strengths, axis=1)[np.asarray(features)]

    def to_dict(self) -> dict:
        return {"epochs": list(self.epochs),
                "strengths": [s.tolist() for s in self.strengths]}

    @classmethod
    def from_dict(cls, d: dict) -> StrengthHistory:
        h = cls()
        for e, s in zip(d["epochs"], d["strengths"]):
            h.append(e, np.array(s, dtype=np.float64))
        return h


def snapshot_strength(model, epoch: int, history: StrengthHistory) -> StrengthHistory:
    history.append(epoch, neuron_strength(model.layers[0].weights))
    return history


def strength_map(strengths: np.ndarray, height: int, width: int) -> list[list[float]]:
    """Row-major grid of strengths for image-shaped inputs."""
    strengths = np.asarray(strengths, dtype=np.float64)
    if strengths.size != height * width:
        raise ValueError(f"{strengths.size} strengths cannot fill a {height}x{width} grid")
    return strengths.reshape(height, width).tolist()


def write_strength_map(strengths: np.ndarray, height: int, width: int, path) -> None:
    Path(path).write_text(json.dumps({"height": height, "width": width,
                                      "strength": strength_map(strengths, height, width)}))
