"""Real-time sequential multiclass classification over a bank of class HMMs.

A session keeps one scaled forward vector per class; each arriving symbol
advances every class by a single recursion step, so per-class
log-likelihoods are always available incrementally and match a batch
recomputation of the prefix bit for bit.

Two stopping rules wrap the likelihood race:

    margin  stop once the top class leads the runner-up by more than a
            threshold gamma (in nats)
    repeat  stop once the per-symbol argmax label has repeated q times in
            a row
"""

from __future__ import annotations

import csv
import json
import statistics
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, Sequence

import numpy as np
from numba import njit

from .errors import SymbolOutOfRangeError
from .hmm import Hmm, TrainConfig, _forward_init, _forward_step, baum_welch_fit
from .preprocess import (
    PreprocessConfig,
    QuantizerModel,
    compute_kinematics,
    fit_quantizer,
    preprocess,
)
from .trace import Trace

DEFAULT_GAMMA_GRID = (0.0, 1.0, 2.0, 5.0, 10.0, 20.0)


@dataclass(frozen=True)
class ClassifierBank:
    """Ordered per-class HMMs plus the frozen preprocessing pipeline."""

    labels: tuple[str, ...]
    models: tuple[Hmm, ...]
    quantizer: QuantizerModel
    preprocess_config: PreprocessConfig

    def __post_init__(self):
        if len(self.labels) < 2:
            raise ValueError("a bank needs at least two classes")
        if len(self.labels) != len(set(self.labels)):
            raise ValueError("class labels must be unique")
        if len(self.labels) != len(self.models):
            raise ValueError("labels and models must align")
        sizes = {m.alphabet_size for m in self.models}
        if len(sizes) != 1:
            raise ValueError("all class models must share one alphabet")

    @property
    def alphabet_size(self) -> int:
        return self.models[0].alphabet_size

    @property
    def num_classes(self) -> int:
        return len(self.labels)

    def to_json(self) -> dict:
        return {
            "preprocess_config": self.preprocess_config.to_json(),
            "quantizer": self.quantizer.to_json(),
            "classes": [
                {"label": lab, "model": m.to_json()}
                for lab, m in zip(self.labels, self.models)
            ],
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f)

    @classmethod
    def from_json(cls, d: dict | str) -> "ClassifierBank":
        if isinstance(d, str):
            d = json.loads(d)
        return cls(
            labels=tuple(c["label"] for c in d["classes"]),
            models=tuple(Hmm.from_json(c["model"]) for c in d["classes"]),
            quantizer=QuantizerModel.from_json(d["quantizer"]),
            preprocess_config=PreprocessConfig.from_json(d["preprocess_config"]),
        )

    @classmethod
    def load(cls, path) -> "ClassifierBank":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(json.load(f))


def fit_bank(
    traces_by_class: dict[str, Sequence[Trace]],
    train_config: TrainConfig = TrainConfig(),
    preprocess_config: PreprocessConfig = PreprocessConfig(),
    candidates: int = 1,
) -> ClassifierBank:
    """Train one HMM per class on pooled processed sequences.

    A single quantizer is fitted on the union of all training traces and
    frozen into the bank; each class model is a multi-sequence Baum-Welch
    fit over that class's symbol sequences.

    With candidates > 1, several differently-seeded banks are fitted and
    the one whose margin-rule decisions are most accurate on its own
    training set is kept — EM restarts are scored within one class only,
    so a per-class likelihood optimum can still lose the sequential race
    between classes.
    """
    if len(traces_by_class) < 2:
        raise ValueError("need at least two classes")
    for label, traces in traces_by_class.items():
        if len(traces) == 0:
            raise ValueError(f"class {label!r} has no traces")
    all_traces = [t for traces in traces_by_class.values() for t in traces]
    quantizer = fit_quantizer(
        [compute_kinematics(t) for t in all_traces], preprocess_config
    )
    labels = tuple(traces_by_class.keys())
    seqs_by_class = {
        label: [
            preprocess(t, quantizer, preprocess_config).symbols
            for t in traces_by_class[label]
        ]
        for label in labels
    }

    best_bank = None
    best_score = -1.0
    for attempt in range(max(1, candidates)):
        models = []
        for k, label in enumerate(labels):
            cfg = replace(
                train_config, seed=train_config.seed + 7919 * k + 104_729 * attempt
            )
            models.append(
                baum_welch_fit(
                    seqs_by_class[label], cfg,
                    alphabet_size=preprocess_config.alphabet_size,
                )
            )
        bank = ClassifierBank(
            labels=labels,
            models=tuple(models),
            quantizer=quantizer,
            preprocess_config=preprocess_config,
        )
        if candidates <= 1:
            return bank
        gamma = max(DEFAULT_GAMMA_GRID)
        correct = total = 0
        for label in labels:
            for seq in seqs_by_class[label]:
                traj = likelihood_trajectory(bank, seq)
                d = _decide_margin_from_trajectory(bank, traj, gamma, None)
                correct += d.label == label
                total += 1
        score = correct / total
        if score > best_score:
            best_bank = bank
            best_score = score
    return best_bank


@dataclass
class SessionState:
    """Per-session forward state: one scaled alpha vector and accumulated
    log-likelihood per class. Single-writer; copy-on-update."""

    bank: ClassifierBank
    alphas: list[np.ndarray] = field(default_factory=list)
    log_likelihoods: np.ndarray = field(default_factory=lambda: np.zeros(0))
    symbols_seen: int = 0
    elapsed_ms: float = 0.0

    @classmethod
    def fresh(cls, bank: ClassifierBank) -> "SessionState":
        return cls(
            bank=bank,
            alphas=[np.zeros(m.num_states) for m in bank.models],
            log_likelihoods=np.zeros(bank.num_classes),
            symbols_seen=0,
        )


def update(state: SessionState, symbol: int, elapsed_ms: float | None = None) -> SessionState:
    """Advance every class by one forward step; returns a new state."""
    bank = state.bank
    if not (0 <= symbol < bank.alphabet_size):
        raise SymbolOutOfRangeError(f"symbol {symbol} outside alphabet")
    alphas = []
    lls = state.log_likelihoods.copy()
    for k, model in enumerate(bank.models):
        alpha = state.alphas[k].copy()
        if state.symbols_seen == 0:
            logc = _forward_init(model.initial, model.emission, symbol, alpha)
        else:
            tmp = np.empty_like(alpha)
            logc = _forward_step(alpha, model.transition, model.emission, symbol, tmp)
        lls[k] += logc
        alphas.append(alpha)
    return SessionState(
        bank=bank,
        alphas=alphas,
        log_likelihoods=lls,
        symbols_seen=state.symbols_seen + 1,
        elapsed_ms=state.elapsed_ms if elapsed_ms is None else float(elapsed_ms),
    )


def margin(state: SessionState) -> float:
    """Gap between the best and second-best class log-likelihoods (nats).

    This is max_j min_{i != j} (l_j - l_i); with i = j allowed the quantity
    is identically zero, so the runner-up gap is the operative reading.
    """
    if state.symbols_seen < 1:
        raise ValueError("no symbols consumed yet")
    lls = np.sort(state.log_likelihoods)
    return float(lls[-1] - lls[-2])


def _argmax_label(state: SessionState) -> str:
    return state.bank.labels[int(np.argmax(state.log_likelihoods))]


@dataclass(frozen=True)
class Decision:
    """Outcome of a sequential test on one session."""

    label: str
    stop_symbol_index: int  # 1-based count of symbols consumed
    stop_time_ms: float | None
    margin: float  # final gap (margin rule) or run length (repeat rule)
    rule: str
    timeout: bool = False

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "stop_symbol_index": self.stop_symbol_index,
            "stop_time_ms": self.stop_time_ms,
            "margin": self.margin,
            "rule": self.rule,
            "timeout": self.timeout,
        }


def _stream_with_times(symbols, times_ms):
    if times_ms is None:
        for s in symbols:
            yield int(s), None
    else:
        for s, t in zip(symbols, times_ms):
            yield int(s), float(t)


def classify_margin(
    symbols: Iterable[int],
    bank: ClassifierBank,
    gamma: float,
    times_ms: Sequence[float] | None = None,
) -> Decision:
    """Consume symbols until the likelihood margin exceeds gamma.

    If the stream runs out first, the current argmax is returned with the
    timeout flag set.
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    state = SessionState.fresh(bank)
    consumed = False
    for symbol, t in _stream_with_times(symbols, times_ms):
        state = update(state, symbol, elapsed_ms=t)
        consumed = True
        delta = margin(state)
        if delta > gamma:
            return Decision(
                label=_argmax_label(state),
                stop_symbol_index=state.symbols_seen,
                stop_time_ms=state.elapsed_ms if times_ms is not None else None,
                margin=delta,
                rule="margin",
            )
    if not consumed:
        raise ValueError("empty symbol stream")
    return Decision(
        label=_argmax_label(state),
        stop_symbol_index=state.symbols_seen,
        stop_time_ms=state.elapsed_ms if times_ms is not None else None,
        margin=margin(state),
        rule="margin",
        timeout=True,
    )


def classify_repeat(
    symbols: Iterable[int],
    bank: ClassifierBank,
    q: int,
    times_ms: Sequence[float] | None = None,
) -> Decision:
    """Consume symbols until the argmax label repeats q times in a row."""
    if q < 1:
        raise ValueError("q must be >= 1")
    state = SessionState.fresh(bank)
    run_label = None
    run = 0
    for symbol, t in _stream_with_times(symbols, times_ms):
        state = update(state, symbol, elapsed_ms=t)
        label = _argmax_label(state)
        run = run + 1 if label == run_label else 1
        run_label = label
        if run >= q:
            return Decision(
                label=label,
                stop_symbol_index=state.symbols_seen,
                stop_time_ms=state.elapsed_ms if times_ms is not None else None,
                margin=float(run),
                rule="repeat",
            )
    if run_label is None:
        raise ValueError("empty symbol stream")
    return Decision(
        label=run_label,
        stop_symbol_index=state.symbols_seen,
        stop_time_ms=state.elapsed_ms if times_ms is not None else None,
        margin=float(run),
        rule="repeat",
        timeout=True,
    )


@njit(cache=True)
def _bank_ll_trajectory(initials, transitions, emissions, obs):
    """(n, k) matrix of per-class log-likelihoods after each symbol."""
    k = initials.shape[0]
    s = initials.shape[1]
    n = obs.shape[0]
    out = np.empty((n, k))
    alpha = np.empty((k, s))
    tmp = np.empty(s)
    for c in range(k):
        ll = _forward_init(initials[c], emissions[c], obs[0], alpha[c])
        out[0, c] = ll
    for t in range(1, n):
        for c in range(k):
            logc = _forward_step(alpha[c], transitions[c], emissions[c], obs[t], tmp)
            out[t, c] = out[t - 1, c] + logc
    return out


def likelihood_trajectory(bank: ClassifierBank, symbols) -> np.ndarray:
    """Per-prefix class log-likelihoods, vectorized over the whole stream."""
    obs = np.ascontiguousarray(symbols, dtype=np.int64)
    if obs.size == 0:
        raise ValueError("empty symbol stream")
    if obs.min() < 0 or obs.max() >= bank.alphabet_size:
        raise SymbolOutOfRangeError("symbol outside bank alphabet")
    initials = np.stack([m.initial for m in bank.models])
    transitions = np.stack([m.transition for m in bank.models])
    emissions = np.stack([m.emission for m in bank.models])
    return _bank_ll_trajectory(initials, transitions, emissions, obs)


def _decide_margin_from_trajectory(
    bank: ClassifierBank, traj: np.ndarray, gamma: float, times_ms
) -> Decision:
    part = np.partition(traj, traj.shape[1] - 2, axis=1)
    deltas = part[:, -1] - part[:, -2]
    hits = np.nonzero(deltas > gamma)[0]
    if len(hits):
        t = int(hits[0])
        timeout = False
    else:
        t = traj.shape[0] - 1
        timeout = True
    return Decision(
        label=bank.labels[int(np.argmax(traj[t]))],
        stop_symbol_index=t + 1,
        stop_time_ms=None if times_ms is None else float(times_ms[t]),
        margin=float(deltas[t]),
        rule="margin",
        timeout=timeout,
    )


@dataclass(frozen=True)
class EvaluationRow:
    rule: str
    param: float
    accuracy: float
    mean_stop_symbols: float
    median_stop_symbols: float
    mean_stop_ms: float
    median_stop_ms: float
    timeout_fraction: float
    n: int


def evaluate_detector(
    bank: ClassifierBank,
    test_traces: Sequence[Trace],
    rule: str = "margin",
    grid: Sequence[float] = DEFAULT_GAMMA_GRID,
    max_symbols: int | None = None,
) -> list[EvaluationRow]:
    """Accuracy-versus-time table over a parameter grid.

    Test traces must carry labels and be disjoint from the training set.
    One likelihood trajectory per trace serves every grid point, which also
    makes the stop-time monotonicity in the threshold exact.
    """
    if rule not in ("margin", "repeat"):
        raise ValueError(f"unknown rule {rule!r}")
    prepared = []
    for tr in test_traces:
        if tr.label is None:
            raise ValueError(f"test trace {tr.session_id} has no label")
        pt = preprocess(tr, bank.quantizer, bank.preprocess_config)
        symbols = pt.symbols
        times = pt.symbol_times_ms()
        if max_symbols is not None:
            symbols = symbols[:max_symbols]
            times = times[:max_symbols]
        traj = likelihood_trajectory(bank, symbols)
        prepared.append((tr.label, traj, times))
    rows = []
    for param in grid:
        decisions = []
        for label, traj, times in prepared:
            if rule == "margin":
                d = _decide_margin_from_trajectory(bank, traj, float(param), times)
            else:
                d = _decide_repeat_from_trajectory(bank, traj, int(param), times)
            decisions.append((label, d))
        correct = [truth == d.label for truth, d in decisions]
        stops = [d.stop_symbol_index for _, d in decisions]
        stop_ms = [d.stop_time_ms for _, d in decisions]
        rows.append(
            EvaluationRow(
                rule=rule,
                param=float(param),
                accuracy=float(np.mean(correct)),
                mean_stop_symbols=float(np.mean(stops)),
                median_stop_symbols=float(statistics.median(stops)),
                mean_stop_ms=float(np.mean(stop_ms)),
                median_stop_ms=float(statistics.median(stop_ms)),
                timeout_fraction=float(np.mean([d.timeout for _, d in decisions])),
                n=len(decisions),
            )
        )
    return rows


def _decide_repeat_from_trajectory(
    bank: ClassifierBank, traj: np.ndarray, q: int, times_ms
) -> Decision:
    labels = np.argmax(traj, axis=1)
    run = 0
    prev = -1
    for t in range(len(labels)):
        run = run + 1 if labels[t] == prev else 1
        prev = labels[t]
        if run >= q:
            return Decision(
                label=bank.labels[int(labels[t])],
                stop_symbol_index=t + 1,
                stop_time_ms=None if times_ms is None else float(times_ms[t]),
                margin=float(run),
                rule="repeat",
            )
    t = len(labels) - 1
    return Decision(
        label=bank.labels[int(labels[t])],
        stop_symbol_index=t + 1,
        stop_time_ms=None if times_ms is None else float(times_ms[t]),
        margin=float(run),
        rule="repeat",
        timeout=True,
    )


def evaluation_to_csv(rows: Sequence[EvaluationRow], path_or_stream) -> None:
    """Write the evaluation table as CSV."""
    own = isinstance(path_or_stream, (str,)) or hasattr(path_or_stream, "__fspath__")
    stream: IO = open(path_or_stream, "w", encoding="utf-8") if own else path_or_stream
    try:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(
            [
                "rule", "param", "accuracy", "mean_stop_symbols",
                "median_stop_symbols", "mean_stop_ms", "median_stop_ms",
                "timeout_fraction", "n",
            ]
        )
        for r in rows:
            w.writerow(
                [
                    r.rule, r.param, r.accuracy, r.mean_stop_symbols,
                    r.median_stop_symbols, r.mean_stop_ms, r.median_stop_ms,
                    r.timeout_fraction, r.n,
                ]
            )
    finally:
        if own:
            stream.close()
