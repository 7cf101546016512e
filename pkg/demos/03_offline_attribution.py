#!/usr/bin/env python3
"""Unsupervised attribution: cluster a mixed, unlabeled session corpus into
agent classes and score the grouping against the hidden generator truth.

This mirrors the offline pipeline end to end: per-trace HMMs, pairwise
Jeffreys divergences, spectral clustering on the divergence matrix.
Runs in roughly a minute.
"""

import numpy as np

from webguard.cluster import ClusterConfig, attribute, clustering_metrics
from webguard.divergence import DivergenceConfig
from webguard.hmm import TrainConfig
from webguard.preprocess import PreprocessConfig
from webguard.simulate import BASE_CLASSES, generate_corpus

traces = []
for cls in BASE_CLASSES:
    duration = 240.0 if cls == "human" else 120.0
    traces += generate_corpus([cls], per_class=6, seed=11, duration_s=duration)
truth = [t.label for t in traces]
print(f"corpus: {len(traces)} unlabeled traces from {len(BASE_CLASSES)} hidden classes")
print(f"sizes: {min(len(t) for t in traces)}..{max(len(t) for t in traces)} events")

result, artifacts = attribute(
    traces,
    preprocess_config=PreprocessConfig(bins_vx=3, bins_vy=3, bins_dt=15, max_elements=10_000),
    train_config=TrainConfig(num_states=4, max_iters=30, tol=1e-3, restarts=3, seed=0),
    divergence_config=DivergenceConfig(t=3, method="monte_carlo", mc_samples=8000, seed=0),
    cluster_config=ClusterConfig(k=5, method="spectral", sigma=9.0, seed=0),
    return_artifacts=True,
)

print("\ncluster assignment per hidden class:")
for cls in BASE_CLASSES:
    got = [int(result.labels[i]) for i, t in enumerate(traces) if t.label == cls]
    print(f"  {cls:15s} -> clusters {sorted(set(got))} {got}")

metrics = clustering_metrics(result.labels, truth)
print("\nexternal metrics vs generator truth:")
for name, value in metrics.to_json().items():
    print(f"  {name:13s} {value:.4f}")

d = artifacts.div.values
print("\ndivergence matrix: "
      f"within-class mean {np.mean([d[i, j] for i in range(len(truth)) for j in range(len(truth)) if i < j and truth[i] == truth[j]]):.1f} nats, "
      f"across-class mean {np.mean([d[i, j] for i in range(len(truth)) for j in range(len(truth)) if i < j and truth[i] != truth[j]]):.1f} nats")
