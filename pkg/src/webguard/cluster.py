"""Offline attribution: clustering over the pairwise divergence matrix,
plus the external clustering metrics used to score it.

Two clusterers are provided, both driven purely by pairwise distances:
spectral clustering (Gaussian-kernel affinity, symmetric normalized
Laplacian embedding, seeded k-means) and average-linkage agglomerative
merging. `attribute` runs the whole unsupervised pipeline end to end:
preprocess each trace, fit one HMM per trace, build the divergence matrix,
cluster.
"""

from __future__ import annotations

import json
import math
import warnings
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .divergence import DivergenceConfig, DivMatrix, pairwise_divergence
from .hmm import Hmm, TrainConfig, baum_welch_fit, with_stationary_initial
from .preprocess import PreprocessConfig, fit_quantizer, compute_kinematics, preprocess
from .trace import Trace


@dataclass(frozen=True)
class ClusterConfig:
    k: int = 5
    method: str = "spectral"  # spectral | agglomerative
    sigma: float = 9.0
    kmeans_restarts: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.method not in ("spectral", "agglomerative"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")


@dataclass(frozen=True)
class ClusterResult:
    labels: np.ndarray  # (n,) ints in [0, k-1]
    method: str
    metadata: dict

    def to_json(self) -> dict:
        meta = {
            k: (v.tolist() if isinstance(v, np.ndarray) else v)
            for k, v in self.metadata.items()
        }
        return {"labels": self.labels.tolist(), "method": self.method, "metadata": meta}


def _kmeans_once(x: np.ndarray, k: int, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    n = x.shape[0]
    # k-means++ seeding
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[c] = x[rng.integers(n)]
        else:
            centers[c] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((x - centers[c]) ** 2).sum(axis=1))
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(100):
        dists = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = dists.argmin(axis=1)
        for c in range(k):
            mask = new_labels == c
            if mask.any():
                centers[c] = x[mask].mean(axis=0)
            else:
                # revive empty cluster at the worst-fit point
                far = dists.min(axis=1).argmax()
                centers[c] = x[far]
                new_labels[far] = c
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    inertia = float(((x - centers[labels]) ** 2).sum())
    return labels, inertia


def _kmeans(x: np.ndarray, k: int, seed: int, restarts: int) -> np.ndarray:
    best_labels, best_inertia = None, np.inf
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        labels, inertia = _kmeans_once(x, k, rng)
        if inertia < best_inertia - 1e-12:
            best_labels, best_inertia = labels, inertia
    return best_labels


def spectral_cluster(div: DivMatrix, config: ClusterConfig) -> ClusterResult:
    """Spectral clustering on the divergence matrix.

    Affinity exp(-d^2 / (2 sigma^2)) with a zero diagonal, symmetric
    normalized Laplacian, embedding into the k bottom eigenvectors,
    row-normalization, then seeded k-means.
    """
    n = div.n
    if config.k > n:
        raise ValueError(f"k={config.k} exceeds n={n}")
    d = np.maximum(div.values, 0.0)  # clamp MC noise below zero
    affinity = np.exp(-(d**2) / (2.0 * config.sigma**2))
    np.fill_diagonal(affinity, 0.0)
    degrees = affinity.sum(axis=1)
    if np.any(degrees < 1e-12):
        warnings.warn("affinity graph has isolated rows; embedding may degenerate")
    with np.errstate(divide="ignore"):
        dinv_sqrt = np.where(degrees > 1e-12, 1.0 / np.sqrt(degrees), 0.0)
    lap = np.eye(n) - dinv_sqrt[:, None] * affinity * dinv_sqrt[None, :]
    eigvals, eigvecs = np.linalg.eigh(lap)
    embedding = eigvecs[:, : config.k]
    norms = np.linalg.norm(embedding, axis=1)
    safe = norms > 0
    embedding = embedding.copy()
    embedding[safe] /= norms[safe, None]
    labels = _kmeans(embedding, config.k, config.seed, config.kmeans_restarts)
    return ClusterResult(
        labels=labels,
        method="spectral",
        metadata={"eigenvalues": eigvals[: config.k]},
    )


def agglomerative_cluster(div: DivMatrix, k: int) -> ClusterResult:
    """Average-linkage hierarchical merging down to k clusters.

    Ties break on the lowest-index pair, so identical matrices always give
    identical dendrograms.
    """
    n = div.n
    if k > n:
        raise ValueError(f"k={k} exceeds n={n}")
    dist = div.values.astype(np.float64).copy()
    active = list(range(n))
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    merges: list[tuple[int, int, float]] = []
    while len(active) > k:
        best = (np.inf, -1, -1)
        for ai in range(len(active)):
            for bi in range(ai + 1, len(active)):
                i, j = active[ai], active[bi]
                d = dist[i, j]
                if d < best[0]:
                    best = (d, i, j)
        d, i, j = best
        merges.append((i, j, d))
        wi, wj = len(members[i]), len(members[j])
        for other in active:
            if other in (i, j):
                continue
            dist[i, other] = dist[other, i] = (
                wi * dist[i, other] + wj * dist[j, other]
            ) / (wi + wj)
        members[i].extend(members[j])
        del members[j]
        active.remove(j)
    # order clusters by smallest member index for stable labeling
    clusters = sorted(members.values(), key=min)
    labels = np.empty(n, dtype=np.int64)
    for c, items in enumerate(clusters):
        labels[items] = c
    return ClusterResult(labels=labels, method="agglomerative", metadata={"merges": merges})


@dataclass(frozen=True)
class AttributionArtifacts:
    """Intermediate stages of the attribution pipeline, kept for audit."""

    processed: list
    models: list[Hmm]
    div: DivMatrix


def attribute(
    traces: Sequence[Trace],
    preprocess_config: PreprocessConfig = PreprocessConfig(),
    train_config: TrainConfig = TrainConfig(),
    divergence_config: DivergenceConfig = DivergenceConfig(),
    cluster_config: ClusterConfig = ClusterConfig(),
    stationary_initial: bool = True,
    return_artifacts: bool = False,
):
    """Unsupervised end-to-end attribution of unlabeled traces.

    Quantizers are fitted on the given pool; one HMM is fitted per trace;
    the pairwise Jeffreys matrix feeds the configured clusterer. Since the
    sessions are modeled as near-stationary processes, each per-trace model
    is compared under its stationary state law (stationary_initial); the
    initial vector a single-sequence fit learns reflects only that one
    session opening and would swamp small-horizon divergences with noise.
    """
    traces = list(traces)
    if len(traces) < cluster_config.k:
        raise ValueError("need at least k traces")
    kins = [compute_kinematics(t) for t in traces]
    quantizer = fit_quantizer(kins, preprocess_config)
    processed = [preprocess(t, quantizer, preprocess_config) for t in traces]
    alphabet = preprocess_config.alphabet_size
    models = []
    for idx, p in enumerate(processed):
        cfg = TrainConfig(
            num_states=train_config.num_states,
            max_iters=train_config.max_iters,
            tol=train_config.tol,
            restarts=train_config.restarts,
            seed=train_config.seed + idx,
            floor=train_config.floor,
        )
        model = baum_welch_fit(p.symbols, cfg, alphabet_size=alphabet)
        if stationary_initial:
            model = with_stationary_initial(model)
        models.append(model)
    div = pairwise_divergence(
        models, divergence_config, trace_ids=[t.session_id for t in traces]
    )
    if cluster_config.method == "spectral":
        result = spectral_cluster(div, cluster_config)
    else:
        result = agglomerative_cluster(div, cluster_config.k)
    if return_artifacts:
        return result, AttributionArtifacts(processed=processed, models=models, div=div)
    return result


# ---------------------------------------------------------------------------
# External clustering metrics (contingency-table definitions, nats).
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClusteringMetrics:
    ari: float
    ami: float
    homogeneity: float
    completeness: float
    v_measure: float

    def to_json(self) -> dict:
        return {
            "ari": self.ari,
            "ami": self.ami,
            "homogeneity": self.homogeneity,
            "completeness": self.completeness,
            "v_measure": self.v_measure,
        }


def _comb2(n: int) -> int:
    return n * (n - 1) // 2


def _entropy(counts: Sequence[int], n: int) -> float:
    return -sum((c / n) * math.log(c / n) for c in counts if c > 0)


def _expected_mi(row_sums: list[int], col_sums: list[int], n: int) -> float:
    """Expected mutual information under the permutation model."""
    lg = math.lgamma
    emi = 0.0
    for ai in row_sums:
        for bj in col_sums:
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            for nij in range(lo, hi + 1):
                term = (nij / n) * math.log(n * nij / (ai * bj))
                weight = math.exp(
                    lg(ai + 1) + lg(bj + 1) + lg(n - ai + 1) + lg(n - bj + 1)
                    - lg(n + 1) - lg(nij + 1) - lg(ai - nij + 1)
                    - lg(bj - nij + 1) - lg(n - ai - bj + nij + 1)
                )
                emi += term * weight
    return emi


def clustering_metrics(predicted: Sequence, truth: Sequence) -> ClusteringMetrics:
    """ARI, AMI, homogeneity, completeness and V-measure of a labeling.

    All five are invariant to bijective relabeling of either side. AMI uses
    the permutation-model expected-MI correction with the arithmetic-mean
    normalizer; entropies are in nats.
    """
    predicted = list(predicted)
    truth = list(truth)
    if len(predicted) != len(truth):
        raise ValueError("predicted and truth must have equal length")
    n = len(truth)
    if n == 0:
        raise ValueError("empty labelings")
    cont = Counter(zip(truth, predicted))
    a = Counter(truth)
    b = Counter(predicted)

    # adjusted Rand index
    sum_ij = sum(_comb2(v) for v in cont.values())
    sum_a = sum(_comb2(v) for v in a.values())
    sum_b = sum(_comb2(v) for v in b.values())
    total = _comb2(n)
    if total == 0:
        ari = 1.0
    else:
        expected = sum_a * sum_b / total
        max_index = (sum_a + sum_b) / 2
        ari = 1.0 if max_index == expected else (sum_ij - expected) / (max_index - expected)

    # mutual information and entropies
    h_truth = _entropy(list(a.values()), n)
    h_pred = _entropy(list(b.values()), n)
    mi = 0.0
    for (ti, pj), nij in cont.items():
        mi += (nij / n) * math.log(n * nij / (a[ti] * b[pj]))

    homogeneity = 1.0 if h_truth == 0 else mi / h_truth
    completeness = 1.0 if h_pred == 0 else mi / h_pred
    v = 0.0 if homogeneity + completeness == 0 else (
        2 * homogeneity * completeness / (homogeneity + completeness)
    )

    emi = _expected_mi(list(a.values()), list(b.values()), n)
    denom = (h_truth + h_pred) / 2 - emi
    ami = 1.0 if denom == 0 else (mi - emi) / denom

    return ClusteringMetrics(
        ari=float(ari),
        ami=float(ami),
        homogeneity=float(homogeneity),
        completeness=float(completeness),
        v_measure=float(v),
    )


def metrics_to_json(m: ClusteringMetrics) -> str:
    return json.dumps(m.to_json(), separators=(",", ":"))
