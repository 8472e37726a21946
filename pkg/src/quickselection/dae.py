"""Sparse denoising autoencoder trained with plain SGD and SET evolution."""
from __future__ import annotations

import io
import resource
import struct
import sys
import time
from dataclasses import asdict, dataclass, field
from typing import BinaryIO, Sequence

import numpy as np

from .sparse_matrix import (
    DEFAULT_INIT_SCALE,
    SparseWeights,
    accumulate_gradients,
    as_rng,
    erdos_renyi_init,
    spmv_forward,
    spmv_transpose,
)

ACTIVATIONS = ("sigmoid", "tanh", "linear")
CLAMP = 30.0

SDAE_MAGIC = b"SDAE"
SDAE_VERSION = 1
_HYPER_FIELDS = ("learning_rate", "zeta", "epsilon", "noise_factor", "epochs",
                 "batch_size", "rng_seed", "init_scale", "regrow_scale")


class NonFiniteLossError(FloatingPointError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


def activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "sigmoid":
        return 1.0 / (1.0 + np.exp(-np.clip(z, -CLAMP, CLAMP)))
    if kind == "tanh":
        return np.tanh(np.clip(z, -CLAMP, CLAMP))
    if kind == "linear":
        return z
    raise ValueError(f"unknown activation {kind!r}")


def activation_slope(a: np.ndarray, kind: str) -> np.ndarray:
    """Derivative of the activation, written in terms of its output ``a``."""
    if kind == "sigmoid":
        return a * (1.0 - a)
    if kind == "tanh":
        return 1.0 - a * a
    return np.ones_like(a)


@dataclass
class Hyperparams:
    learning_rate: float = 0.01
    zeta: float = 0.2
    epsilon: float = 13.0
    noise_factor: float = 0.2
    epochs: int = 100
    batch_size: int = 32
    rng_seed: int = 0
    init_scale: float = DEFAULT_INIT_SCALE
    # std of regrown weights; 1.0 gives standard-normal regrowth
    regrow_scale: float = DEFAULT_INIT_SCALE


@dataclass
class SparseLayer:
    weights: SparseWeights
    bias: np.ndarray
    activation: str

    def __post_init__(self):
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.bias.shape != (self.weights.n_out,):
            raise ValueError(f"bias has shape {self.bias.shape}, expected ({self.weights.n_out},)")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_params(self) -> int:
        return self.weights.nnz + self.bias.size


@dataclass
class SparseDae:
    layers: list[SparseLayer]
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    rng: np.random.Generator | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("model needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.weights.n_out != b.weights.n_in:
                raise ValueError("consecutive layer dimensions do not chain")
        if self.layers[0].weights.n_in != self.layers[-1].weights.n_out:
            raise ValueError("autoencoder input and output widths differ")
        if self.rng is None:
            self.rng = np.random.default_rng(self.hyperparams.rng_seed)

    @classmethod
    def build(cls, n_features: int, hidden: Sequence[int] = (1000,), *,
              hidden_activation: str = "sigmoid", output_activation: str = "linear",
              **hyper) -> SparseDae:
        """Erdős–Rényi initialised autoencoder ``n_features -> hidden... -> n_features``.

        Weights and biases come from one generator seeded with ``rng_seed``;
        the same generator then drives noise, shuffling and evolution.
        """
        hp = Hyperparams(**hyper)
        rng = np.random.default_rng(hp.rng_seed)
        sizes = [n_features, *hidden, n_features]
        layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
            act = output_activation if i == len(sizes) - 2 else hidden_activation
            w = erdos_renyi_init(n_in, n_out, hp.epsilon, rng, init_scale=hp.init_scale)
            layers.append(SparseLayer(w, np.zeros(n_out), act))
        return cls(layers, hp, rng)

    @property
    def n_features(self) -> int:
        return self.layers[0].weights.n_in

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    @property
    def activations(self) -> list[str]:
        return [layer.activation for layer in self.layers]

    def copy(self) -> SparseDae:
        layers = [SparseLayer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers]
        rng = np.random.default_rng()
        rng.bit_generator.state = self.rng.bit_generator.state
        return SparseDae(layers, Hyperparams(**asdict(self.hyperparams)), rng)

    # -- checkpoint --------------------------------------------------------

    def write(self, fh: BinaryIO) -> None:
        hp = self.hyperparams
        fh.write(SDAE_MAGIC)
        fh.write(struct.pack("<HI", SDAE_VERSION, len(self.layers)))
        fh.write(bytes(ACTIVATIONS.index(a) for a in self.activations))
        fh.write(struct.pack(f"<{len(_HYPER_FIELDS)}d",
                             *(float(getattr(hp, f)) for f in _HYPER_FIELDS)))
        for layer in self.layers:
            layer.weights.write_chunk(fh)
            fh.write(layer.bias.astype("<f4").tobytes())

    @classmethod
    def read(cls, fh: BinaryIO) -> SparseDae:
        if fh.read(4) != SDAE_MAGIC:
            raise ValueError("not a sparse DAE checkpoint")
        version, n_layers = struct.unpack("<HI", fh.read(6))
        if version != SDAE_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        acts = [ACTIVATIONS[b] for b in fh.read(n_layers)]
        raw = struct.unpack(f"<{len(_HYPER_FIELDS)}d", fh.read(8 * len(_HYPER_FIELDS)))
        hp = dict(zip(_HYPER_FIELDS, raw))
        for f in ("epochs", "batch_size", "rng_seed"):
            hp[f] = int(hp[f])
        layers = []
        for act in acts:
            w = SparseWeights.read_chunk(fh)
            bias = np.frombuffer(fh.read(4 * w.n_out), dtype="<f4").astype(np.float64)
            layers.append(SparseLayer(w, bias, act))
        return cls(layers, Hyperparams(**hp))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            self.write(fh)

    @classmethod
    def load(cls, path) -> SparseDae:
        with open(path, "rb") as fh:
            return cls.read(fh)

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        self.write(buf)
        return buf.getvalue()


def corrupt(x: np.ndarray, nf: float, rng) -> np.ndarray:
    """Additive Gaussian corruption ``x + nf * N(0, 1)``."""
    if nf < 0:
        raise ValueError("noise factor must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    if nf == 0:
        return x.copy()
    return x + nf * as_rng(rng).standard_normal(x.shape)


def forward(model: SparseDae, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Return the activations of every layer (input first) and the output."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.n_features:
        raise ValueError(f"input has {x.shape[-1]} features, model expects {model.n_features}")
    acts = [x]
    for layer in model.layers:
        acts.append(activate(spmv_forward(layer.weights, acts[-1]) + layer.bias, layer.activation))
    return acts, acts[-1]


def mse_loss(z: np.ndarray, x: np.ndarray) -> float:
    """Squared error summed over features; averaged over rows for a batch."""
    z = np.asarray(z, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if z.shape != x.shape:
        raise ValueError(f"shape mismatch {z.shape} vs {x.shape}")
    sq = np.square(z - x)
    return float(sq.sum()) if sq.ndim == 1 else float(sq.sum(axis=1).mean())


def gradients(model: SparseDae, x_clean: np.ndarray, x_input: np.ndarray
              ) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Loss and its gradients w.r.t. every existing weight and every bias.

    ``x_input`` is what the network sees (possibly corrupted); the target is
    always ``x_clean``.
    """
    x_clean = np.atleast_2d(x_clean)
    acts, out = forward(model, np.atleast_2d(x_input))
    loss = mse_loss(out, x_clean)
    delta = 2.0 * (out - x_clean) / x_clean.shape[0]
    grad_w: list[np.ndarray] = [None] * len(model.layers)
    grad_b: list[np.ndarray] = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        delta = delta * activation_slope(acts[i + 1], layer.activation)
        grad_w[i] = accumulate_gradients(layer.weights, delta, acts[i], np.zeros(layer.weights.nnz))
        grad_b[i] = delta.sum(axis=0)
        if i:
            delta = spmv_transpose(layer.weights, delta)
    return loss, grad_w, grad_b


def sgd_step(model: SparseDae, batch: np.ndarray, rng=None) -> float:
    """One corrupted-input SGD update on ``batch``; returns the batch loss."""
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    rng = model.rng if rng is None else as_rng(rng)
    noisy = corrupt(batch, model.hyperparams.noise_factor, rng)
    loss, grad_w, grad_b = gradients(model, batch, noisy)
    lr = model.hyperparams.learning_rate
    if lr:
        for layer, gw, gb in zip(model.layers, grad_w, grad_b):
            layer.weights.values -= lr * gw
            layer.bias -= lr * gb
    return loss


def peak_rss_bytes() -> int:
    """Process resident-set high-water mark."""
    peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    return int(peak if sys.platform == "darwin" else peak * 1024)


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    epoch_times: list[float] = field(default_factory=list)
    history: "StrengthHistory" = None
    evolution: "EvolutionLog" = None
    n_params: list[int] = field(default_factory=list)
    peak_memory: int = 0
    memory_method: str = "getrusage ru_maxrss sampled at epoch boundaries"

    @property
    def parameter_count(self) -> int:
        return self.n_params[-1]

    def to_dict(self) -> dict:
        """Deterministic content first; wall-clock figures under ``timing``."""
        return {
            "epochs": len(self.losses),
            "losses": [float(v) for v in self.losses],
            "parameter_count": self.parameter_count,
            "parameter_count_per_epoch": list(self.n_params),
            "strength_history": self.history.to_dict(),
            "evolution": self.evolution.to_dict(),
            "timing": {
                "epoch_seconds": [float(t) for t in self.epoch_times],
                "total_seconds": float(sum(self.epoch_times)),
                "peak_memory_bytes": self.peak_memory,
                "memory_method": self.memory_method,
            },
        }


def train(model: SparseDae, data, *, snapshot_epochs: Sequence[int] | None = None,
          callback=None) -> TrainReport:
    """Run the full epoch loop: shuffle, SGD over minibatches, evolve topology.

    ``data`` is a :class:`~quickselection.data.Dataset` or a plain 2-D array.
    A strength snapshot is taken before training (epoch 0) and after each
    epoch listed in ``snapshot_epochs`` (every epoch when omitted).
    """
    from .evolution import EvolutionLog, evolve
    from .selection import StrengthHistory, snapshot_strength

    X = np.asarray(getattr(data, "X", data), dtype=np.float64)
    hp = model.hyperparams
    if hp.epochs < 1:
        raise ValueError("epochs must be at least 1")
    if hp.batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValueError(f"data shape {X.shape} does not match {model.n_features} features")
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    wanted = None if snapshot_epochs is None else set(snapshot_epochs)
    report = TrainReport(history=StrengthHistory(), evolution=EvolutionLog())
    snapshot_strength(model, 0, report.history)
    rng = model.rng
    n = X.shape[0]
    for epoch in range(1, hp.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, hp.batch_size):
            idx = order[lo:lo + hp.batch_size]
            total += sgd_step(model, X[idx], rng) * idx.size
        loss = total / n
        if not np.isfinite(loss):
            raise NonFiniteLossError(epoch, loss)
        evolve(model, hp.zeta, rng, log=report.evolution, epoch=epoch)
        report.epoch_times.append(time.perf_counter() - t0)
        report.losses.append(loss)
        report.n_params.append(model.n_params)
        report.peak_memory = max(report.peak_memory, peak_rss_bytes())
        if wanted is None or epoch in wanted or epoch == hp.epochs:
            snapshot_strength(model, epoch, report.history)
        if callback is not None:
            callback(epoch, model, report)
    return report


def extract_features(model: SparseDae, x: np.ndarray, layer_index: int) -> np.ndarray:
    """Activation of hidden layer ``layer_index`` (1 = first hidden layer)."""
    if not 1 <= layer_index <= len(model.layers) - 1:
        raise IndexError(f"layer_index must name a hidden layer in [1, {len(model.layers) - 1}]")
    acts, _ = forward(model, x)
    return acts[layer_index]
