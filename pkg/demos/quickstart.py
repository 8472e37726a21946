"""Rank features of a Madelon-like dataset and compare classifiers.

Trains a sparse denoising autoencoder for ten epochs (QS10), ranks the 500
inputs by the strength of their first-layer connections and checks how many
of the 20 planted features land in the top 20.  Takes about half a minute.

    python3 demos/quickstart.py [seed]
"""
from __future__ import annotations

import sys

import numpy as np

from quickselection import SparseDae, SyntheticSpec, generate_madelon_like, rank_all, train
from quickselection.data import apply_transform, fit_transform, relevant_features, train_test_split
from quickselection.evaluation import extra_trees_fit_predict

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0

data = generate_madelon_like(SyntheticSpec(rng_seed=seed))
train_set, test_set = train_test_split(data, 0.2, rng_seed=seed)
train_set, state = fit_transform(train_set)
test_set = apply_transform(test_set, state)
print(f"{data.n_samples} samples, {data.n_features} features, "
      f"{len(relevant_features(data))} of them planted")

model = SparseDae.build(data.n_features, (1000,), output_activation="tanh", epochs=10,
                        rng_seed=seed)
print(f"sparse model: {model.n_params} parameters "
      f"(a dense one would need {2 * 500 * 1000 + 1500})")

report = train(model, train_set)
print(f"loss {report.losses[0]:.1f} -> {report.losses[-1]:.1f} over {len(report.losses)} epochs")

ranking = rank_all(model)
top20 = np.sort(ranking.order[:20])
hits = len(set(top20.tolist()) & set(relevant_features(data).tolist()))
print(f"planted features in the top 20: {hits}/20")

acc_top, _ = extra_trees_fit_predict(train_set.subset(top20), test_set.subset(top20), rng_seed=seed)
acc_all, _ = extra_trees_fit_predict(train_set, test_set, rng_seed=seed)
print(f"ExtraTrees accuracy: top 20 {acc_top:.1f}%, all 500 {acc_all:.1f}%")
