"""Pipeline commands behind the command-line interface.

Every ``cmd_*`` function takes a :class:`RunConfig`, writes its artifacts to
``config.output_dir`` and returns the JSON-ready report it wrote.  Reports
keep wall-clock measurements under a ``timing`` key so the rest of the
document is reproducible byte for byte.
"""
from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .dae import SparseDae, peak_rss_bytes, train
from .data import (
    DataError,
    Dataset,
    SyntheticSpec,
    apply_transform,
    fit_transform,
    generate_gaussian_matrix,
    generate_madelon_like,
    load_csv,
    save_csv,
    train_test_split,
)
from .evaluation import clustering_accuracy, estimate_energy, extra_trees_fit_predict, EvalReport
from .selection import FeatureRanking, rank_all, select_top_k, write_strength_map
from .sparse_matrix import connection_probability, expected_density_with_replacement

OUTPUT_ENV = "QS_OUTPUT_DIR"


class UsageError(ValueError):
    """Invalid command-line or configuration input."""


def default_output_dir() -> str:
    return os.environ.get(OUTPUT_ENV, "qs_runs")


@dataclass
class RunConfig:
    data: str | None = None
    synthetic: dict | None = None
    has_labels: bool = True
    label_column: int = -1
    header: bool = False
    test_data: str | None = None
    test_fraction: float = 0.2
    preprocessing: str = "zscore"
    hidden: list[int] = field(default_factory=lambda: [1000])
    hidden_activation: str = "sigmoid"
    output_activation: str = "linear"
    epsilon: float = 13.0
    zeta: float = 0.2
    noise_factor: float = 0.2
    learning_rate: float = 0.01
    epochs: int = 100
    snapshot_epochs: list[int] = field(default_factory=lambda: [10])
    batch_size: int = 32
    init_scale: float = 0.1
    regrow_scale: float = 0.1
    k: list[int] = field(default_factory=lambda: [50])
    seeds: list[int] = field(default_factory=lambda: [0])
    repeats: int = 10
    n_trees: int = 50
    device_watts: float | None = None
    image_shape: list[int] | None = None
    output_dir: str = field(default_factory=default_output_dir)

    @property
    def seed(self) -> int:
        return self.seeds[0]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise UsageError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> RunConfig:
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as e:
            raise UsageError(f"{path}: invalid JSON ({e})") from None

    def validate(self) -> None:
        if (self.data is None) == (self.synthetic is None):
            raise UsageError("exactly one of 'data' and 'synthetic' must be set")
        if self.epochs < 1:
            raise UsageError("epochs must be at least 1")
        if not self.seeds:
            raise UsageError("at least one seed is required")
        if not 0 <= self.zeta < 1:
            raise UsageError("zeta must lie in [0, 1)")
        if self.epsilon <= 0:
            raise UsageError("epsilon must be positive")
        if self.noise_factor < 0:
            raise UsageError("noise factor must be non-negative")
        if any(k < 1 for k in self.k):
            raise UsageError("k values must be positive")


def _out(config: RunConfig, *parts) -> Path:
    path = Path(config.output_dir, *parts)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create output directory {path.parent}: {e}") from None
    return path


def _write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2))


def _write_markdown(path, title: str, rows: list[tuple[str, object]], table: str = "") -> None:
    lines = [f"# {title}", ""]
    lines += [f"- **{k}**: {v}" for k, v in rows]
    if table:
        lines += ["", table]
    Path(path).write_text("\n".join(lines) + "\n")


def _md_table(header: list[str], rows: list[list]) -> str:
    out = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    out += ["| " + " | ".join("" if v is None else (f"{v:.4g}" if isinstance(v, float) else str(v))
                              for v in r) + " |" for r in rows]
    return "\n".join(out)


def load_splits(config: RunConfig) -> tuple[Dataset, Dataset, Dataset | None]:
    """Return ``(train, test, raw)`` with preprocessing fitted on train only.

    ``raw`` is the synthetic dataset (with ground truth) when one was
    generated, otherwise ``None``.
    """
    raw = None
    if config.synthetic is not None:
        raw = generate_madelon_like(SyntheticSpec(**config.synthetic))
        tr, te = train_test_split(raw, config.test_fraction, config.seed)
    else:
        full = load_csv(config.data, config.has_labels, config.label_column, config.header)
        if config.test_data:
            tr = full
            te = load_csv(config.test_data, config.has_labels, config.label_column, config.header)
            te.split_tag = "test"
            if te.n_features != tr.n_features:
                raise DataError("train and test files have different feature counts")
        else:
            tr, te = train_test_split(full, config.test_fraction, config.seed)
    tr, state = fit_transform(tr, config.preprocessing)
    te = apply_transform(te, state)
    return tr, te, raw


def build_model(config: RunConfig, n_features: int, seed: int) -> SparseDae:
    return SparseDae.build(
        n_features, config.hidden,
        hidden_activation=config.hidden_activation,
        output_activation=config.output_activation,
        learning_rate=config.learning_rate, zeta=config.zeta, epsilon=config.epsilon,
        noise_factor=config.noise_factor, epochs=config.epochs, batch_size=config.batch_size,
        rng_seed=seed, init_scale=config.init_scale, regrow_scale=config.regrow_scale)


def density_summary(model: SparseDae, epsilon: float) -> list[dict]:
    out = []
    for i, layer in enumerate(model.layers):
        w = layer.weights
        out.append({"layer": i, "shape": [w.n_in, w.n_out], "nnz": w.nnz,
                    "density": w.density,
                    "expected_density": connection_probability(w.n_in, w.n_out, epsilon),
                    "expected_density_with_replacement":
                        expected_density_with_replacement(w.n_in, w.n_out, epsilon)})
    return out


def cmd_generate(config: RunConfig) -> dict:
    """Write the configured synthetic dataset as ``data.csv`` plus metadata."""
    if config.synthetic is None:
        raise UsageError("generate needs a 'synthetic' spec")
    spec = SyntheticSpec(**config.synthetic)
    data = generate_madelon_like(spec)
    save_csv(data, _out(config, "data.csv"))
    meta = data.metadata()
    meta["spec"] = asdict(spec)
    meta["label_column"] = -1
    _write_json(meta, _out(config, "metadata.json"))
    return meta


def cmd_train(config: RunConfig) -> dict:
    """Train one sparse DAE and write checkpoint, report and config echo."""
    config.validate()
    t0 = time.perf_counter()
    tr, _, _ = load_splits(config)
    model = build_model(config, tr.n_features, config.seed)
    initial_density = density_summary(model, config.epsilon)
    snaps = sorted(set(config.snapshot_epochs) | {config.epochs})
    report = train(model, tr, snapshot_epochs=snaps)
    model.save(_out(config, "model.sdae"))
    config.save(_out(config, "config.json"))
    out = report.to_dict()
    out["initial_density"] = initial_density
    out["final_density"] = density_summary(model, config.epsilon)
    out["n_features"] = tr.n_features
    out["n_train_samples"] = tr.n_samples
    out["seed"] = config.seed
    out["timing"]["command_seconds"] = time.perf_counter() - t0
    if config.device_watts is not None:
        out["timing"]["estimated_energy_kwh"] = estimate_energy(
            out["timing"]["command_seconds"], config.device_watts)
    _write_json(out, _out(config, "train_report.json"))
    if config.image_shape:
        h, w = config.image_shape
        for epoch in report.history.epochs:
            write_strength_map(report.history.at(epoch), h, w,
                               _out(config, f"strength_map_epoch{epoch}.json"))
    _write_markdown(_out(config, "train_report.md"), "Training run", [
        ("epochs", config.epochs), ("seed", config.seed),
        ("final loss", f"{report.losses[-1]:.6g}"),
        ("parameters", report.parameter_count),
        ("wall time [s]", f"{out['timing']['total_seconds']:.2f}"),
        ("peak memory [bytes]", report.peak_memory),
        ("snapshot epochs", report.history.epochs),
    ], _md_table(["layer", "nnz", "density", "expected", "expected (with replacement)"],
                 [[d["layer"], d["nnz"], d["density"], d["expected_density"],
                   d["expected_density_with_replacement"]] for d in initial_density]))
    return out


def cmd_select(checkpoint, k_values, output_dir) -> dict:
    """Rank all features of a stored model once and cut every requested top-k."""
    model = SparseDae.load(checkpoint)
    ranking = rank_all(model)
    for k in k_values:
        if not 1 <= k <= ranking.n_features:
            raise UsageError(f"k={k} outside [1, {ranking.n_features}]")
    out_dir = Path(output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ranking.to_csv(out_dir / "ranking.csv")
    subsets = {}
    for k in k_values:
        idx = select_top_k(ranking, k).tolist()
        subsets[k] = idx
        _write_json({"k": k, "features": idx}, out_dir / f"selected_k{k}.json")
    return {"checkpoint": str(checkpoint), "n_features": ranking.n_features,
            "subsets": {str(k): v for k, v in subsets.items()}}


def read_selection(path) -> list[int]:
    d = json.loads(Path(path).read_text())
    return list(d["features"] if isinstance(d, dict) else d)


def evaluate_selection(config: RunConfig, tr: Dataset, te: Dataset, features, seed: int
                       ) -> EvalReport:
    features = np.sort(np.asarray(features, dtype=np.int64))
    if features.size == 0 or features.min() < 0 or features.max() >= tr.n_features:
        raise UsageError("selected feature indices out of range")
    rep = EvalReport(k_selected=int(features.size), repeats=config.repeats,
                     seeds={"kmeans": seed, "extra_trees": seed})
    if tr.y is None or te.y is None:
        rep.flags.append("no labels: clustering and classification skipped")
        return rep
    both = np.vstack([tr.X[:, features], te.X[:, features]])
    labels = np.concatenate([tr.y, te.y])
    rep.clustering_accuracy, rep.clustering_std = clustering_accuracy(
        both, labels, repeats=config.repeats, rng_seed=seed)
    rep.classification_accuracy, single = extra_trees_fit_predict(
        tr.subset(features), te.subset(features), n_trees=config.n_trees, rng_seed=seed)
    if single:
        rep.flags.append("single-class training data: constant classifier")
    return rep


def cmd_eval(config: RunConfig, selected=None) -> dict:
    """Clustering and ExtraTrees accuracy of a feature subset (all features by default)."""
    t0 = time.perf_counter()
    tr, te, _ = load_splits(config)
    features = np.arange(tr.n_features) if selected is None else np.asarray(selected)
    rep = evaluate_selection(config, tr, te, features, config.seed)
    rep.wall_time = time.perf_counter() - t0
    rep.peak_memory = peak_rss_bytes()
    if config.device_watts is not None:
        rep.estimated_energy = estimate_energy(rep.wall_time, config.device_watts)
    out = rep.to_dict()
    out["features"] = np.sort(features).tolist()
    _write_json(out, _out(config, "eval_report.json"))
    _write_markdown(_out(config, "eval_report.md"), "Evaluation", [
        ("k", rep.k_selected), ("repeats", rep.repeats),
        ("clustering accuracy [%]", rep.clustering_accuracy),
        ("classification accuracy [%]", rep.classification_accuracy),
        ("flags", rep.flags or "none")])
    return out


def _grid_cell(config: RunConfig, tr, te, raw, seed: int) -> list[dict]:
    t0 = time.perf_counter()
    model = build_model(config, tr.n_features, seed)
    train(model, tr, snapshot_epochs=())
    train_time = time.perf_counter() - t0
    ranking = rank_all(model)
    rows = []
    relevant = None
    if raw is not None and raw.ground_truth is not None:
        relevant = set(raw.ground_truth["informative"]) | set(raw.ground_truth["redundant"])
    for k in config.k:
        feats = select_top_k(ranking, min(k, ranking.n_features))
        rep = evaluate_selection(config, tr, te, feats, seed)
        row = {"clustering_accuracy": rep.clustering_accuracy,
               "clustering_std": rep.clustering_std,
               "classification_accuracy": rep.classification_accuracy,
               "k": int(feats.size), "seed": seed, "parameter_count": model.n_params,
               "flags": rep.flags, "train_seconds": train_time}
        if relevant is not None:
            row["relevant_in_top_k"] = len(relevant & set(feats.tolist()))
        rows.append(row)
    return rows


def cmd_grid(config: RunConfig, zeta_list, epsilon_list, nf_list) -> dict:
    """Train and evaluate one model per (zeta, epsilon, nf, seed) cell.

    A failing cell is recorded with its error and the grid carries on.
    """
    if not zeta_list or not epsilon_list or not nf_list:
        raise UsageError("grid lists must be non-empty")
    config.validate()
    tr, te, raw = load_splits(config)
    rows = []
    for zeta in zeta_list:
        for eps in epsilon_list:
            for nf in nf_list:
                for seed in config.seeds:
                    cell = RunConfig(**{**config.to_dict(), "zeta": zeta, "epsilon": eps,
                                        "noise_factor": nf})
                    base = {"zeta": zeta, "epsilon": eps, "noise_factor": nf, "seed": seed}
                    try:
                        cell.validate()
                        for r in _grid_cell(cell, tr, te, raw, seed):
                            rows.append({**base, **r, "error": None})
                    except Exception as e:  # recorded per cell, grid continues
                        rows.append({**base, "error": f"{type(e).__name__}: {e}"})
    summary = _grid_summary(rows)
    timing = {"train_seconds": [r.get("train_seconds") for r in rows]}
    for r in rows:
        r.pop("train_seconds", None)
    out = {"config": config.to_dict(), "zeta": list(zeta_list), "epsilon": list(epsilon_list),
           "noise_factor": list(nf_list), "rows": rows, "summary": summary, "timing": timing}
    _write_json(out, _out(config, "grid.json"))
    _write_grid_csv(rows, _out(config, "grid.csv"))
    _write_markdown(_out(config, "grid.md"), "Grid search", [
        ("cells", len(summary)), ("seeds", config.seeds),
        ("best classification cell", summary and max(
            summary, key=lambda s: s["classification_mean"] or -1)["cell"]),
        ("noise factor comparison", _nf_note(summary))],
        _md_table(["zeta", "epsilon", "nf", "k", "clustering %", "classification %", "failures"],
                  [[*s["cell"], s["clustering_mean"], s["classification_mean"], s["failures"]]
                   for s in summary]))
    return out


def _grid_summary(rows: list[dict]) -> list[dict]:
    cells: dict = {}
    for r in rows:
        key = (r["zeta"], r["epsilon"], r["noise_factor"], r.get("k"))
        cells.setdefault(key, []).append(r)
    out = []
    for key, rs in cells.items():
        ok = [r for r in rs if r["error"] is None and r["classification_accuracy"] is not None]
        clus = [r["clustering_accuracy"] for r in ok]
        cls_ = [r["classification_accuracy"] for r in ok]
        out.append({"cell": list(key),
                    "clustering_mean": float(np.mean(clus)) if clus else None,
                    "classification_mean": float(np.mean(cls_)) if cls_ else None,
                    "classification_std": float(np.std(cls_)) if cls_ else None,
                    "failures": len(rs) - len(ok)})
    return out


def _nf_note(summary: list[dict]) -> str:
    by_nf: dict = {}
    for s in summary:
        if s["classification_mean"] is not None:
            by_nf.setdefault(s["cell"][2], []).append(s["classification_mean"])
    if len(by_nf) < 2:
        return "single noise factor"
    means = {nf: float(np.mean(v)) for nf, v in by_nf.items()}
    best = max(means, key=means.get)
    return "highest classification accuracy at nf=" + str(best) + " (" + ", ".join(
        f"nf={nf}: {m:.2f}%" for nf, m in sorted(means.items())) + ")"


def _write_grid_csv(rows: list[dict], path) -> None:
    import csv
    cols = ["zeta", "epsilon", "noise_factor", "seed", "k", "clustering_accuracy",
            "clustering_std", "classification_accuracy", "relevant_in_top_k",
            "parameter_count", "error"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


def cmd_bench(n_features_list, hidden_list, epochs: int, *, n_samples: int = 5000,
              epsilon: float = 13.0, seed: int = 0, output_dir=None) -> dict:
    """Time training on standard-normal data for each (features, hidden) pair.

    Stops at the first ``MemoryError`` and keeps the rows gathered so far.
    """
    if not n_features_list or not hidden_list:
        raise UsageError("bench needs at least one feature count and one hidden size")
    if epochs < 1 or n_samples < 1 or min(n_features_list) < 1 or min(hidden_list) < 1:
        raise UsageError("sizes must be positive")
    rows, timing = [], []
    aborted = None
    for n in n_features_list:
        data = generate_gaussian_matrix(n_samples, n, seed)
        for h in hidden_list:
            try:
                model = SparseDae.build(n, (h,), epsilon=epsilon, epochs=epochs, rng_seed=seed)
                t0 = time.perf_counter()
                train(model, data, snapshot_epochs=())
                wall = time.perf_counter() - t0
            except MemoryError:
                aborted = f"MemoryError at n_features={n}, hidden={h}"
                break
            rows.append({"n_features": n, "hidden": h, "epochs": epochs,
                         "parameter_count": model.n_params,
                         "expected_weights": 2 * epsilon * (n + h),
                         "dense_parameter_count": 2 * n * h + n + h})
            timing.append({"wall_time": wall, "peak_memory": peak_rss_bytes()})
        if aborted:
            break
    out = {"n_samples": n_samples, "epsilon": epsilon, "seed": seed, "rows": rows,
           "aborted": aborted,
           "timing": {"rows": timing, "scaling": _scaling(rows, timing)}}
    if output_dir is not None:
        out_dir = Path(output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(out, out_dir / "bench.json")
        _write_markdown(out_dir / "bench.md", "Timing benchmark",
                        [("samples", n_samples), ("aborted", aborted or "no")],
                        _md_table(["features", "hidden", "params", "dense params", "seconds"],
                                  [[r["n_features"], r["hidden"], r["parameter_count"],
                                    r["dense_parameter_count"], t["wall_time"]]
                                   for r, t in zip(rows, timing)]))
    return out


def _scaling(rows: list[dict], timing: list[dict]) -> list[dict]:
    """Per feature count: how time grows with hidden width versus dense cost.

    ``flat`` holds when the time ratio stays below the dense-parameter ratio,
    i.e. cost follows the sparse parameter count rather than the dense one.
    """
    out = []
    by_n: dict = {}
    for r, t in zip(rows, timing):
        by_n.setdefault(r["n_features"], []).append({**r, **t})
    for n, rs in by_n.items():
        if len(rs) < 2:
            continue
        lo = min(rs, key=lambda r: r["hidden"])
        hi = max(rs, key=lambda r: r["hidden"])
        t_ratio = hi["wall_time"] / lo["wall_time"] if lo["wall_time"] > 0 else float("inf")
        p_ratio = hi["parameter_count"] / lo["parameter_count"]
        d_ratio = hi["dense_parameter_count"] / lo["dense_parameter_count"]
        out.append({"n_features": n, "hidden": [lo["hidden"], hi["hidden"]],
                    "time_ratio": t_ratio, "sparse_parameter_ratio": p_ratio,
                    "dense_parameter_ratio": d_ratio, "flat": t_ratio < d_ratio})
    return out
