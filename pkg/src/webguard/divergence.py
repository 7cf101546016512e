"""Jeffreys divergence between the t-letter laws of two HMMs.

The symmetrized KL divergence D_J(a, b) = E_a[log a/b] + E_b[log b/a] is
evaluated over length-t emission blocks: exactly (full enumeration of the
A^t outcomes) when the outcome space is small enough, otherwise by an
unbiased Monte-Carlo estimator that samples blocks from each model and
scores them under both.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import AlphabetMismatchError, EnumerationCapExceededError
from .hmm import Hmm, batch_forward_log_likelihood, sample_batch, t_letter_distribution


@dataclass(frozen=True)
class DivergenceConfig:
    t: int = 10
    method: str = "auto"  # exact | monte_carlo | auto
    mc_samples: int = 20_000
    seed: int = 0
    enumeration_cap: int = 1_000_000

    def __post_init__(self):
        if self.t < 1:
            raise ValueError("t must be >= 1")
        if self.method not in ("exact", "monte_carlo", "auto"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if self.enumeration_cap < 2:
            raise ValueError("enumeration_cap must cover at least one alphabet")


def _check_same_alphabet(a: Hmm, b: Hmm) -> None:
    if a.alphabet_size != b.alphabet_size:
        raise AlphabetMismatchError(
            f"alphabet sizes differ: {a.alphabet_size} vs {b.alphabet_size}"
        )


def jeffreys_exact(a: Hmm, b: Hmm, t: int, cap: int = 1_000_000) -> float:
    """Exact D_J between the two t-letter laws, in nats.

    Requires A^t within the enumeration cap and floored models (both laws
    strictly positive, so the result is finite).
    """
    _check_same_alphabet(a, b)
    pa = t_letter_distribution(a, t, cap=cap)
    pb = t_letter_distribution(b, t, cap=cap)
    log_ratio = np.log(pa) - np.log(pb)
    return float(np.dot(pa, log_ratio) - np.dot(pb, log_ratio))


def jeffreys_mc(a: Hmm, b: Hmm, t: int, m: int = 20_000, seed=0) -> tuple[float, float]:
    """Monte-Carlo estimate of D_J plus its standard error.

    m blocks are sampled from each model; log-likelihoods come from the
    scaled forward recursion. The estimator is unbiased for the exact
    t-letter Jeffreys divergence.
    """
    _check_same_alphabet(a, b)
    rng = np.random.default_rng(seed)
    xa = sample_batch(a, m, t, rng)
    terms_a = batch_forward_log_likelihood(a, xa) - batch_forward_log_likelihood(b, xa)
    xb = sample_batch(b, m, t, rng)
    terms_b = batch_forward_log_likelihood(b, xb) - batch_forward_log_likelihood(a, xb)
    est = float(terms_a.mean() + terms_b.mean())
    var = terms_a.var(ddof=1) / m + terms_b.var(ddof=1) / m
    return est, float(np.sqrt(var))


@dataclass(frozen=True)
class DivMatrix:
    """Symmetric pairwise divergence matrix with per-entry method metadata."""

    trace_ids: tuple[str, ...]
    values: np.ndarray  # (n, n)
    methods: np.ndarray = field(default=None)  # (n, n) of {"", "exact", "monte_carlo"}
    stderr: np.ndarray = field(default=None)  # (n, n), nan where exact

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        n = len(self.trace_ids)
        if v.shape != (n, n):
            raise ValueError("values must be (n, n)")
        if not np.allclose(v, v.T):
            raise ValueError("divergence matrix must be symmetric")
        if np.any(np.abs(np.diag(v)) > 0):
            raise ValueError("diagonal must be zero")
        if self.methods is None:
            object.__setattr__(self, "methods", np.full((n, n), "", dtype=object))
        if self.stderr is None:
            object.__setattr__(self, "stderr", np.full((n, n), np.nan))

    @property
    def n(self) -> int:
        return len(self.trace_ids)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "ids": list(self.trace_ids),
            "values": self.values.ravel().tolist(),
            "methods": self.methods.ravel().tolist(),
            "stderr": [None if np.isnan(s) else s for s in self.stderr.ravel()],
        }

    @classmethod
    def from_json(cls, d: dict | str) -> "DivMatrix":
        if isinstance(d, str):
            d = json.loads(d)
        n = int(d["n"])
        stderr = np.array(
            [np.nan if s is None else float(s) for s in d["stderr"]]
        ).reshape(n, n)
        return cls(
            trace_ids=tuple(d["ids"]),
            values=np.asarray(d["values"], dtype=np.float64).reshape(n, n),
            methods=np.asarray(d["methods"], dtype=object).reshape(n, n),
            stderr=stderr,
        )


def pairwise_divergence(
    models: Sequence[Hmm],
    config: DivergenceConfig = DivergenceConfig(),
    trace_ids: Sequence[str] | None = None,
) -> DivMatrix:
    """Pairwise Jeffreys divergences between trace models.

    method "auto" enumerates exactly when A^t fits the cap and falls back
    to Monte-Carlo otherwise. Per-pair MC seeds derive from (seed, i, j) so
    results do not depend on evaluation order.
    """
    models = list(models)
    n = len(models)
    for mdl in models[1:]:
        _check_same_alphabet(models[0], mdl)
    if trace_ids is None:
        trace_ids = tuple(str(i) for i in range(n))
    method = config.method
    if method == "auto":
        a = models[0].alphabet_size if models else 2
        method = "exact" if a**config.t <= config.enumeration_cap else "monte_carlo"
    values = np.zeros((n, n))
    methods = np.full((n, n), "", dtype=object)
    stderr = np.full((n, n), np.nan)
    if method == "exact":
        # each model's block law is shared across all of its pairs
        dists = [t_letter_distribution(m, config.t, cap=config.enumeration_cap) for m in models]
        logs = [np.log(d) for d in dists]
    for i in range(n):
        for j in range(i + 1, n):
            if method == "exact":
                log_ratio = logs[i] - logs[j]
                d = float(np.dot(dists[i], log_ratio) - np.dot(dists[j], log_ratio))
                se = np.nan
            else:
                d, se = jeffreys_mc(
                    models[i], models[j], config.t, m=config.mc_samples,
                    seed=[config.seed, i, j],
                )
            values[i, j] = values[j, i] = d
            methods[i, j] = methods[j, i] = method
            stderr[i, j] = stderr[j, i] = se
    return DivMatrix(trace_ids=tuple(trace_ids), values=values, methods=methods, stderr=stderr)
