"""Discrete-emission hidden Markov models.

Covers the pieces the engine needs: scaled-forward likelihood, Baum-Welch
training over one or many symbol sequences, generative sampling, and the
exact distribution an HMM induces on length-t emission blocks.

All probabilities are kept above a small floor so any two trained models
are mutually absolutely continuous (finite divergences, finite
log-likelihood of any sequence).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .errors import EnumerationCapExceededError, SymbolOutOfRangeError

_ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class Hmm:
    """Initial/transition/emission probabilities over a finite alphabet."""

    initial: np.ndarray  # (s,)
    transition: np.ndarray  # (s, s), row-stochastic
    emission: np.ndarray  # (s, A), row-stochastic

    def __post_init__(self):
        object.__setattr__(self, "initial", np.ascontiguousarray(self.initial, dtype=np.float64))
        object.__setattr__(self, "transition", np.ascontiguousarray(self.transition, dtype=np.float64))
        object.__setattr__(self, "emission", np.ascontiguousarray(self.emission, dtype=np.float64))
        s = self.initial.shape[0]
        if self.transition.shape != (s, s):
            raise ValueError("transition must be (s, s)")
        if self.emission.shape[0] != s:
            raise ValueError("emission must have s rows")
        if abs(self.initial.sum() - 1.0) > _ROW_SUM_TOL:
            raise ValueError("initial distribution must sum to 1")
        for name, m in (("transition", self.transition), ("emission", self.emission)):
            if np.any(np.abs(m.sum(axis=1) - 1.0) > _ROW_SUM_TOL):
                raise ValueError(f"every {name} row must sum to 1")

    @property
    def num_states(self) -> int:
        return self.initial.shape[0]

    @property
    def alphabet_size(self) -> int:
        return self.emission.shape[1]

    def to_json(self) -> dict:
        return {
            "num_states": self.num_states,
            "alphabet_size": self.alphabet_size,
            "initial": self.initial.tolist(),
            "transition": self.transition.ravel().tolist(),
            "emission": self.emission.ravel().tolist(),
        }

    @classmethod
    def from_json(cls, d: dict | str) -> "Hmm":
        if isinstance(d, str):
            d = json.loads(d)
        s, a = int(d["num_states"]), int(d["alphabet_size"])
        return cls(
            initial=np.asarray(d["initial"], dtype=np.float64),
            transition=np.asarray(d["transition"], dtype=np.float64).reshape(s, s),
            emission=np.asarray(d["emission"], dtype=np.float64).reshape(s, a),
        )


@dataclass(frozen=True)
class TrainConfig:
    """Baum-Welch hyperparameters.

    Defaults: 4 hidden states, up to 100 EM iterations at log-likelihood
    tolerance 1e-4, 3 random restarts, probability floor 1e-6.
    """

    num_states: int = 4
    max_iters: int = 100
    tol: float = 1e-4
    restarts: int = 3
    seed: int = 0
    floor: float = 1e-6

    def __post_init__(self):
        if self.num_states < 1:
            raise ValueError("num_states must be >= 1")
        if self.max_iters < 1 or self.restarts < 1:
            raise ValueError("max_iters and restarts must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")
        if not (0 < self.floor < 1):
            raise ValueError("floor must be in (0, 1)")


# ---------------------------------------------------------------------------
# numba kernels. _forward_ll is deliberately built from the same init/step
# kernels the incremental classifier uses, so batch and incremental paths
# produce bit-identical log-likelihoods.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _forward_init(initial, emission, symbol, alpha_out):
    s = initial.shape[0]
    c = 0.0
    for i in range(s):
        alpha_out[i] = initial[i] * emission[i, symbol]
        c += alpha_out[i]
    for i in range(s):
        alpha_out[i] /= c
    return np.log(c)


@njit(cache=True)
def _forward_step(alpha, transition, emission, symbol, tmp):
    s = alpha.shape[0]
    c = 0.0
    for j in range(s):
        acc = 0.0
        for i in range(s):
            acc += alpha[i] * transition[i, j]
        tmp[j] = acc * emission[j, symbol]
        c += tmp[j]
    for j in range(s):
        alpha[j] = tmp[j] / c
    return np.log(c)


@njit(cache=True)
def _forward_ll(initial, transition, emission, obs):
    s = initial.shape[0]
    alpha = np.empty(s)
    tmp = np.empty(s)
    ll = _forward_init(initial, emission, obs[0], alpha)
    for t in range(1, obs.shape[0]):
        ll += _forward_step(alpha, transition, emission, obs[t], tmp)
    return ll


@njit(cache=True)
def _em_accumulate(initial, transition, emission, obs,
                   init_acc, trans_acc, trans_den, emis_acc, emis_den):
    """One E-step over one sequence; adds expected counts into the
    accumulators and returns the sequence log-likelihood."""
    n = obs.shape[0]
    s = initial.shape[0]
    alpha = np.empty((n, s))
    c = np.empty(n)
    cc = 0.0
    for i in range(s):
        alpha[0, i] = initial[i] * emission[i, obs[0]]
        cc += alpha[0, i]
    c[0] = cc
    for i in range(s):
        alpha[0, i] /= cc
    for t in range(1, n):
        cc = 0.0
        for j in range(s):
            acc = 0.0
            for i in range(s):
                acc += alpha[t - 1, i] * transition[i, j]
            alpha[t, j] = acc * emission[j, obs[t]]
            cc += alpha[t, j]
        c[t] = cc
        for j in range(s):
            alpha[t, j] /= cc
    ll = 0.0
    for t in range(n):
        ll += np.log(c[t])

    beta = np.ones(s)
    newbeta = np.empty(s)
    for i in range(s):
        g = alpha[n - 1, i]  # beta = 1 at the last step
        emis_acc[i, obs[n - 1]] += g
        emis_den[i] += g
    for t in range(n - 2, -1, -1):
        for i in range(s):
            acc = 0.0
            for j in range(s):
                term = transition[i, j] * emission[j, obs[t + 1]] * beta[j]
                trans_acc[i, j] += alpha[t, i] * term / c[t + 1]
                acc += term
            newbeta[i] = acc / c[t + 1]
        for i in range(s):
            beta[i] = newbeta[i]
            g = alpha[t, i] * beta[i]
            emis_acc[i, obs[t]] += g
            emis_den[i] += g
            trans_den[i] += g
    if n == 1:
        for i in range(s):
            init_acc[i] += alpha[0, i]
    else:
        for i in range(s):
            init_acc[i] += alpha[0, i] * beta[i]
    return ll


def _floor_rows(m: np.ndarray, floor: float) -> np.ndarray:
    """Mix each row with the uniform distribution so every entry is >= floor.

    Keeps rows exactly stochastic; requires floor < 1/row_length.
    """
    dim = m.shape[-1]
    if floor * dim >= 1.0:
        raise ValueError(f"floor {floor} too large for dimension {dim}")
    return (1.0 - floor * dim) * m + floor


def _as_obs(symbols) -> np.ndarray:
    obs = np.ascontiguousarray(symbols, dtype=np.int64)
    if obs.ndim != 1 or obs.shape[0] == 0:
        raise ValueError("symbol sequence must be non-empty and 1-D")
    return obs


def _check_symbols(obs: np.ndarray, alphabet_size: int) -> None:
    if obs.min() < 0 or obs.max() >= alphabet_size:
        raise SymbolOutOfRangeError(
            f"symbols must lie in [0, {alphabet_size - 1}]"
        )


def forward_log_likelihood(hmm: Hmm, symbols) -> float:
    """Natural-log probability of the sequence under the model.

    Computed by the scaled forward recursion; equals the log of the full
    path sum over hidden state sequences.
    """
    obs = _as_obs(symbols)
    _check_symbols(obs, hmm.alphabet_size)
    return float(_forward_ll(hmm.initial, hmm.transition, hmm.emission, obs))


def _normalize_sequences(sequences) -> list[np.ndarray]:
    """Accept one sequence or an iterable of sequences."""
    if len(sequences) == 0:
        raise ValueError("no training sequences given")
    first = sequences[0]
    if np.isscalar(first) or isinstance(first, (int, np.integer)):
        return [_as_obs(sequences)]
    return [_as_obs(s) for s in sequences]


def baum_welch_fit(
    sequences,
    config: TrainConfig,
    alphabet_size: int | None = None,
    return_history: bool = False,
):
    """Fit an HMM by expectation-maximization over one or more sequences.

    Expected counts are pooled across sequences before each M-step. Every
    restart draws fresh Dirichlet(1,..,1) rows from the seeded generator;
    the best-likelihood restart wins. With return_history=True also returns
    the per-restart list of per-iteration log-likelihoods.
    """
    seqs = _normalize_sequences(sequences)
    if alphabet_size is None:
        alphabet_size = int(max(s.max() for s in seqs)) + 1
    for s_ in seqs:
        _check_symbols(s_, alphabet_size)
    if alphabet_size < 2:
        warnings.warn("degenerate alphabet (A < 2); model carries no information")
    s = config.num_states

    best_model = None
    best_ll = -np.inf
    history: list[list[float]] = []
    for r in range(config.restarts):
        rng = np.random.default_rng([config.seed, r])
        initial = _floor_rows(rng.dirichlet(np.ones(s)), config.floor)
        transition = _floor_rows(rng.dirichlet(np.ones(s), size=s), config.floor)
        emission = _floor_rows(rng.dirichlet(np.ones(alphabet_size), size=s), config.floor)

        lls: list[float] = []
        prev_ll = None
        for _ in range(config.max_iters):
            init_acc = np.zeros(s)
            trans_acc = np.zeros((s, s))
            trans_den = np.zeros(s)
            emis_acc = np.zeros((s, alphabet_size))
            emis_den = np.zeros(s)
            ll = 0.0
            for obs in seqs:
                ll += _em_accumulate(
                    initial, transition, emission, obs,
                    init_acc, trans_acc, trans_den, emis_acc, emis_den,
                )
            lls.append(ll)

            new_initial = init_acc / init_acc.sum()
            new_transition = np.empty_like(transition)
            for i in range(s):
                if trans_den[i] > 0:
                    new_transition[i] = trans_acc[i] / trans_den[i]
                else:
                    new_transition[i] = 1.0 / s
            new_emission = emis_acc / emis_den[:, None]
            initial = _floor_rows(new_initial, config.floor)
            transition = _floor_rows(new_transition, config.floor)
            emission = _floor_rows(new_emission, config.floor)

            if prev_ll is not None and abs(ll - prev_ll) < config.tol:
                break
            prev_ll = ll
        history.append(lls)
        if lls[-1] > best_ll:
            best_ll = lls[-1]
            best_model = Hmm(initial=initial, transition=transition, emission=emission)

    if return_history:
        return best_model, history
    return best_model


def stationary_distribution(transition: np.ndarray) -> np.ndarray:
    """Stationary distribution of a row-stochastic matrix (unit left
    eigenvector). Floored transitions are irreducible, so it is unique."""
    vals, vecs = np.linalg.eig(transition.T)
    k = int(np.argmin(np.abs(vals - 1.0)))
    v = np.abs(np.real(vecs[:, k]))
    return v / v.sum()


def with_stationary_initial(hmm: Hmm) -> Hmm:
    """Same chain, but started from its stationary state law.

    Per-trace models fitted on one sequence pin their initial vector to the
    decoded first state, which is a one-sample artifact; comparing the
    models' (near-stationary) block laws wants the stationary start.
    """
    return Hmm(
        initial=stationary_distribution(hmm.transition),
        transition=hmm.transition,
        emission=hmm.emission,
    )


def sample(hmm: Hmm, n: int, seed: int) -> np.ndarray:
    """Draw one length-n emission sequence from the model's generative law."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    return sample_batch(hmm, 1, n, rng)[0]


def sample_batch(hmm: Hmm, m: int, t: int, rng: np.random.Generator) -> np.ndarray:
    """Draw m independent length-t sequences; returns an (m, t) int array."""
    cum_init = np.cumsum(hmm.initial)
    cum_trans = np.cumsum(hmm.transition, axis=1)
    cum_emis = np.cumsum(hmm.emission, axis=1)
    s = hmm.num_states
    out = np.empty((m, t), dtype=np.int64)
    states = np.searchsorted(cum_init, rng.random(m), side="right")
    states = np.minimum(states, s - 1)
    for step in range(t):
        if step > 0:
            u = rng.random(m)
            new_states = np.empty(m, dtype=np.int64)
            for st in range(s):
                mask = states == st
                if mask.any():
                    new_states[mask] = np.searchsorted(cum_trans[st], u[mask], side="right")
            states = np.minimum(new_states, s - 1)
        u = rng.random(m)
        for st in range(s):
            mask = states == st
            if mask.any():
                out[mask, step] = np.searchsorted(cum_emis[st], u[mask], side="right")
    np.clip(out, 0, hmm.alphabet_size - 1, out=out)
    return out


def batch_forward_log_likelihood(hmm: Hmm, sequences: np.ndarray) -> np.ndarray:
    """Vectorized scaled forward over an (m, t) batch of sequences."""
    X = np.asarray(sequences, dtype=np.int64)
    if X.ndim != 2:
        raise ValueError("expected an (m, t) array")
    _check_symbols(X.ravel(), hmm.alphabet_size)
    alpha = hmm.initial[None, :] * hmm.emission[:, X[:, 0]].T
    c = alpha.sum(axis=1)
    ll = np.log(c)
    alpha /= c[:, None]
    for step in range(1, X.shape[1]):
        alpha = (alpha @ hmm.transition) * hmm.emission[:, X[:, step]].T
        c = alpha.sum(axis=1)
        ll += np.log(c)
        alpha /= c[:, None]
    return ll


def t_letter_distribution(hmm: Hmm, t: int, cap: int = 1_000_000) -> np.ndarray:
    """Exact probability vector over all A^t length-t outcome blocks.

    Outcome x_1..x_t sits at index x_1*A^(t-1) + ... + x_t. Raises
    EnumerationCapExceededError when A^t would exceed the cap; callers
    should fall back to Monte-Carlo divergence estimation then.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    a = hmm.alphabet_size
    if a**t > cap:
        raise EnumerationCapExceededError(
            f"A^t = {a}^{t} exceeds enumeration cap {cap}"
        )
    # M[prefix, state] = P(prefix emitted, chain in state)
    m = hmm.initial[None, :] * hmm.emission.T  # (A, s) after first letter
    m = np.ascontiguousarray(m)
    for _ in range(1, t):
        nxt = m @ hmm.transition  # (P, s)
        m = np.einsum("ps,sx->pxs", nxt, hmm.emission)
        m = m.reshape(-1, hmm.num_states)
    return m.sum(axis=1)


def outcome_index(outcome: Sequence[int], alphabet_size: int) -> int:
    """Index of a length-t outcome in the t_letter_distribution vector."""
    idx = 0
    for x in outcome:
        idx = idx * alphabet_size + int(x)
    return idx
