"""Numerical study of how subsampling a symbol stream slows hypothesis
testing: exact identities for the subset-restricted error exponent and
Monte-Carlo estimation of type-II error slopes.

For IID observations from one of two finite distributions, the optimal
test's type-II error decays like exp(-n * KL(p||q)). When the tester only
sees the subsequence of symbols falling in a subset Y, the per-original-
symbol exponent drops to

    sum_{y in Y} p(y) log(p(y)/q(y)) + p(Y) log(q(Y)/p(Y))
    = p(Y) * KL(p|Y || q|Y),

and averaging the restricted first term over all subsets of a fixed size
gives exactly (|Y|/|X|) * KL(p||q). Both identities are implemented
exactly; `empirical_exponent_ratio` verifies the slopes by simulation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .errors import InsufficientTrialsError


@dataclass(frozen=True)
class FiniteDist:
    """Strictly positive probability vector over a finite alphabet."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", p)
        if p.ndim != 1 or p.shape[0] < 2:
            raise ValueError("need a 1-D distribution over >= 2 symbols")
        if np.any(p <= 0):
            raise ValueError("all probabilities must be strictly positive")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to 1 within 1e-12")

    @property
    def alphabet_size(self) -> int:
        return self.probs.shape[0]


def _check_pair(p: FiniteDist, q: FiniteDist) -> None:
    if p.alphabet_size != q.alphabet_size:
        raise ValueError("distributions must share an alphabet")


def kl(p: FiniteDist, q: FiniteDist) -> float:
    """Kullback-Leibler divergence in nats."""
    _check_pair(p, q)
    return float(np.dot(p.probs, np.log(p.probs) - np.log(q.probs)))


def sampled_exponent(p: FiniteDist, q: FiniteDist, subset: Iterable[int]) -> float:
    """Per-original-symbol type-II exponent of the subset-restricted test.

    Equals sum_{y in S} p_y log(p_y/q_y) + p(S) log(q(S)/p(S)); with the
    full alphabet the second term vanishes and this is kl(p, q).
    """
    _check_pair(p, q)
    s = sorted(set(int(y) for y in subset))
    if not s:
        raise ValueError("subset must be non-empty")
    if s[0] < 0 or s[-1] >= p.alphabet_size:
        raise ValueError("subset symbol outside the alphabet")
    ps, qs = p.probs[s], q.probs[s]
    p_mass, q_mass = float(ps.sum()), float(qs.sum())
    first = float(np.dot(ps, np.log(ps) - np.log(qs)))
    return first + p_mass * math.log(q_mass / p_mass)


def subset_average_first_term(p: FiniteDist, q: FiniteDist, subset_size: int) -> float:
    """Exact average of the restricted first term over all subsets of the
    given size. Equals (subset_size / |X|) * kl(p, q) by linearity."""
    _check_pair(p, q)
    a = p.alphabet_size
    if not (1 <= subset_size <= a):
        raise ValueError("subset_size must be in [1, |X|]")
    per_symbol = p.probs * (np.log(p.probs) - np.log(q.probs))
    total = 0.0
    count = 0
    for subset in combinations(range(a), subset_size):
        total += float(per_symbol[list(subset)].sum())
        count += 1
    return total / count


@dataclass(frozen=True)
class ExponentRow:
    n: int
    beta_full: float
    beta_sampled: float


@dataclass(frozen=True)
class ExponentExperiment:
    rows: tuple[ExponentRow, ...]
    exponent_full: float  # fitted -slope of log beta vs n
    exponent_sampled: float
    analytic_full: float  # kl(p, q)
    analytic_sampled: float  # sampled_exponent(p, q, subset)
    trials: int
    alpha: float

    @property
    def ratio(self) -> float:
        return self.exponent_full / self.exponent_sampled

    @property
    def analytic_ratio(self) -> float:
        return self.analytic_full / self.analytic_sampled

    def to_csv(self, path_or_stream) -> None:
        own = isinstance(path_or_stream, str) or hasattr(path_or_stream, "__fspath__")
        stream = open(path_or_stream, "w", encoding="utf-8") if own else path_or_stream
        try:
            w = csv.writer(stream, lineterminator="\n")
            w.writerow(["n", "beta_full", "beta_sampled"])
            for r in self.rows:
                w.writerow([r.n, r.beta_full, r.beta_sampled])
            w.writerow([])
            w.writerow(["exponent", "empirical", "analytic"])
            w.writerow(["full", self.exponent_full, self.analytic_full])
            w.writerow(["sampled", self.exponent_sampled, self.analytic_sampled])
            w.writerow(["ratio", self.ratio, self.analytic_ratio])
        finally:
            if own:
                stream.close()


def _fit_exponent(ns: Sequence[int], betas: Sequence[float]) -> float:
    slope = np.polyfit(np.asarray(ns, dtype=float), np.log(betas), 1)[0]
    return float(-slope)


def empirical_exponent_ratio(
    p: FiniteDist,
    q: FiniteDist,
    subset: Iterable[int],
    n_grid: Sequence[int],
    trials: int = 10_000,
    seed: int = 0,
    alpha: float = 0.1,
    method: str = "importance",
) -> ExponentExperiment:
    """Monte-Carlo type-II error slopes for the full and subsampled tests.

    At each n, `trials` IID length-n count vectors are drawn under p; the
    Neyman-Pearson threshold is the empirical alpha-quantile of the test
    statistic. The type-II rate under q is then estimated either directly
    (fresh draws from q; fails with InsufficientTrialsError when no type-II
    event is seen at the largest n) or, by default, by importance weighting
    the p-draws with exp(-LLR), which resolves rates far below 1/trials.
    Slopes are least-squares fits of log beta against n.
    """
    _check_pair(p, q)
    if method not in ("importance", "direct"):
        raise ValueError(f"unknown method {method!r}")
    s = sorted(set(int(y) for y in subset))
    if not s or s[-1] >= p.alphabet_size:
        raise ValueError("bad subset")
    if kl(p, q) <= 0:
        raise ValueError("p and q must differ")
    rng = np.random.default_rng(seed)
    w_full = np.log(p.probs) - np.log(q.probs)
    p_mass = float(p.probs[s].sum())
    q_mass = float(q.probs[s].sum())
    w_sub = np.zeros_like(w_full)
    w_sub[s] = (np.log(p.probs[s]) - math.log(p_mass)) - (
        np.log(q.probs[s]) - math.log(q_mass)
    )
    rows = []
    for n in n_grid:
        counts_p = rng.multinomial(n, p.probs, size=trials).astype(np.float64)
        stat_full_p = counts_p @ w_full
        stat_sub_p = counts_p @ w_sub
        tau_full = float(np.quantile(stat_full_p, alpha))
        tau_sub = float(np.quantile(stat_sub_p, alpha))
        if method == "importance":
            weights = np.exp(-stat_full_p)
            beta_full = float(np.mean((stat_full_p >= tau_full) * weights))
            beta_sub = float(np.mean((stat_sub_p >= tau_sub) * weights))
        else:
            counts_q = rng.multinomial(n, q.probs, size=trials).astype(np.float64)
            beta_full = float(np.mean(counts_q @ w_full >= tau_full))
            beta_sub = float(np.mean(counts_q @ w_sub >= tau_sub))
            if n == max(n_grid) and (beta_full == 0.0 or beta_sub == 0.0):
                raise InsufficientTrialsError(
                    f"no type-II events observed at n={n} with {trials} trials"
                )
        rows.append(ExponentRow(n=int(n), beta_full=beta_full, beta_sampled=beta_sub))
    ns = [r.n for r in rows]
    return ExponentExperiment(
        rows=tuple(rows),
        exponent_full=_fit_exponent(ns, [r.beta_full for r in rows]),
        exponent_sampled=_fit_exponent(ns, [r.beta_sampled for r in rows]),
        analytic_full=kl(p, q),
        analytic_sampled=sampled_exponent(p, q, s),
        trials=trials,
        alpha=alpha,
    )
