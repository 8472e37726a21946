"""Epoch-level SET topology update: prune the weakest weights, regrow at random."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sparse_matrix import as_rng, magnitude_partition, random_regrow, remove_entries


@dataclass
class LayerEvolution:
    epoch: int
    layer: int
    removed: int
    added: int
    density: float
    overlap: float
    regrown_into_removed: int

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "layer": self.layer,
            "removed": self.removed,
            "added": self.added,
            "density": float(self.density),
            "overlap": float(self.overlap),
            "regrown_into_removed": self.regrown_into_removed,
        }


@dataclass
class EvolutionLog:
    entries: list[LayerEvolution] = field(default_factory=list)

    def for_layer(self, layer: int) -> list[LayerEvolution]:
        return [e for e in self.entries if e.layer == layer]

    @property
    def collision_rate(self) -> float:
        """Fraction of regrown connections that landed on a cell pruned in the same step."""
        added = sum(e.added for e in self.entries)
        return sum(e.regrown_into_removed for e in self.entries) / added if added else 0.0

    def to_dict(self) -> dict:
        return {"collision_rate": self.collision_rate,
                "entries": [e.to_dict() for e in self.entries]}


def evolve(model, zeta: float, rng=None, *, log: EvolutionLog | None = None,
           epoch: int = 0, regrow_scale: float | None = None) -> EvolutionLog:
    """Rewire every layer of ``model`` in place.

    Each layer loses the ``zeta`` fraction of its smallest positive and of its
    negative-closest-to-zero weights and regains exactly as many connections
    at uniformly random empty cells, initialised from ``N(0, regrow_scale**2)``
    (the model's own setting when omitted).  A freshly vacated cell is
    eligible for regrowth.  Biases are not touched.
    """
    if not 0 <= zeta < 1:
        raise ValueError(f"zeta must lie in [0, 1), got {zeta}")
    rng = model.rng if rng is None else as_rng(rng)
    log = EvolutionLog() if log is None else log
    if regrow_scale is None:
        regrow_scale = model.hyperparams.regrow_scale
    for i, layer in enumerate(model.layers):
        w = layer.weights
        removed, _ = magnitude_partition(w, zeta)
        if removed.size:
            before = w.linear_index()
            pruned = remove_entries(w, removed)
            grown, new = random_regrow(pruned, removed.size, rng, scale=regrow_scale)
            overlap = np.intersect1d(before, grown.linear_index(), assume_unique=True).size / w.nnz
            collisions = np.intersect1d(before[removed], new, assume_unique=True).size
            layer.weights = grown
        else:
            overlap, collisions = 1.0, 0
        log.entries.append(LayerEvolution(epoch, i, int(removed.size), int(removed.size),
                                          layer.weights.density, overlap, int(collisions)))
    return log
