"""Spatio-temporal preprocessing: kinematics, equal-frequency quantization,
inter-arrival replication, and scalarization into a finite symbol alphabet.

The pipeline turns a raw event trace into a discrete symbol sequence:

    events -> (velocity, inter-arrival) -> quantized bins -> one scalar
    symbol per event -> each symbol replicated (dt bin + 1) times.

A symbol packs (event_index, quantized vx, quantized vy) bijectively, so the
alphabet size is 43 * bins_vx * bins_vy. Quantizer cut points are fitted once
on a training pool and frozen; evaluation traces reuse the frozen edges.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InsufficientDataError
from .trace import NUM_EVENTS, EventRecord, Trace


@dataclass(frozen=True)
class PreprocessConfig:
    """Bin counts for the velocity/inter-arrival quantizers.

    Defaults mirror the clustering configuration (3 velocity bins per axis,
    15 inter-arrival bins, traces truncated at 10,000 records).
    """

    bins_vx: int = 3
    bins_vy: int = 3
    bins_dt: int = 15
    max_elements: int = 10_000

    def __post_init__(self):
        if min(self.bins_vx, self.bins_vy, self.bins_dt) < 1:
            raise ValueError("bin counts must be >= 1")
        if self.max_elements < 1:
            raise ValueError("max_elements must be >= 1")

    @property
    def alphabet_size(self) -> int:
        return NUM_EVENTS * self.bins_vx * self.bins_vy

    def to_json(self) -> dict:
        return {
            "bins_vx": self.bins_vx,
            "bins_vy": self.bins_vy,
            "bins_dt": self.bins_dt,
            "max_elements": self.max_elements,
        }

    @classmethod
    def from_json(cls, d: dict) -> "PreprocessConfig":
        return cls(**d)


@dataclass(frozen=True)
class KinematicSequence:
    """Per-event parallel arrays of kinematic features.

    The first element always has vx = vy = 0 and dt = 0; coincident
    timestamps (dt = 0) also yield zero velocity.
    """

    event_index: np.ndarray  # int64
    vx: np.ndarray  # px/s
    vy: np.ndarray  # px/s
    dt: np.ndarray  # seconds, >= 0
    x: np.ndarray  # backfilled int64
    y: np.ndarray  # backfilled int64

    def __len__(self) -> int:
        return len(self.event_index)

    def elapsed_ms(self) -> np.ndarray:
        """Milliseconds since the first event, per element."""
        return np.round(np.cumsum(self.dt) * 1000.0)


def compute_kinematics(trace: Trace) -> KinematicSequence:
    """Velocities and inter-arrival times from a sorted trace.

    Missing coordinates are backfilled with the most recent available mouse
    location; events before any location was seen sit at (0, 0). Velocities
    are computed between consecutive backfilled positions; a zero inter-
    arrival time yields zero velocity.
    """
    n = len(trace.records)
    ev = np.empty(n, dtype=np.int64)
    xs = np.empty(n, dtype=np.int64)
    ys = np.empty(n, dtype=np.int64)
    ts = np.empty(n, dtype=np.int64)
    last_x, last_y = 0, 0
    for k, rec in enumerate(trace.records):
        ev[k] = rec.event_index
        ts[k] = rec.timestamp_ms
        if rec.x is not None:
            last_x, last_y = rec.x, rec.y
        xs[k] = last_x
        ys[k] = last_y
    dt = np.zeros(n, dtype=np.float64)
    vx = np.zeros(n, dtype=np.float64)
    vy = np.zeros(n, dtype=np.float64)
    if n > 1:
        dt[1:] = (ts[1:] - ts[:-1]) / 1000.0
        nz = dt > 0
        nz[0] = False
        dxs = np.diff(xs).astype(np.float64)
        dys = np.diff(ys).astype(np.float64)
        vx[1:][nz[1:]] = dxs[nz[1:]] / dt[1:][nz[1:]]
        vy[1:][nz[1:]] = dys[nz[1:]] / dt[1:][nz[1:]]
    return KinematicSequence(event_index=ev, vx=vx, vy=vy, dt=dt, x=xs, y=ys)


def _equal_frequency_edges(values: np.ndarray, bins: int) -> np.ndarray:
    """Cut points at empirical fractions j/B, j = 1..B-1.

    When j*N/B lands exactly between two order statistics the edge is their
    midpoint; otherwise it is the order statistic the fraction falls inside.
    """
    n = len(values)
    if n < bins:
        raise InsufficientDataError(
            f"need at least {bins} pooled values to fit {bins} bins, got {n}"
        )
    if bins == 1:
        return np.empty(0, dtype=np.float64)
    v = np.sort(values.astype(np.float64))
    edges = np.empty(bins - 1, dtype=np.float64)
    for j in range(1, bins):
        num = j * n
        if num % bins == 0:
            p = num // bins
            edges[j - 1] = 0.5 * (v[p - 1] + v[p])
        else:
            edges[j - 1] = v[num // bins]
    return edges


@dataclass(frozen=True)
class QuantizerModel:
    """Frozen equal-frequency cut points for the vx, vy and dt channels."""

    edges_vx: np.ndarray
    edges_vy: np.ndarray
    edges_dt: np.ndarray
    fitted_on: int

    def to_json(self) -> dict:
        return {
            "edges_vx": self.edges_vx.tolist(),
            "edges_vy": self.edges_vy.tolist(),
            "edges_dt": self.edges_dt.tolist(),
            "fitted_on": self.fitted_on,
        }

    @classmethod
    def from_json(cls, d: dict) -> "QuantizerModel":
        return cls(
            edges_vx=np.asarray(d["edges_vx"], dtype=np.float64),
            edges_vy=np.asarray(d["edges_vy"], dtype=np.float64),
            edges_dt=np.asarray(d["edges_dt"], dtype=np.float64),
            fitted_on=int(d["fitted_on"]),
        )


def fit_quantizer(
    kinematics: Iterable[KinematicSequence], config: PreprocessConfig
) -> QuantizerModel:
    """Fit equal-frequency edges on the pooled elements of many sequences."""
    seqs = list(kinematics)
    if not seqs:
        raise InsufficientDataError("no sequences to fit on")
    pool_vx = np.concatenate([s.vx for s in seqs])
    pool_vy = np.concatenate([s.vy for s in seqs])
    pool_dt = np.concatenate([s.dt for s in seqs])
    return QuantizerModel(
        edges_vx=_equal_frequency_edges(pool_vx, config.bins_vx),
        edges_vy=_equal_frequency_edges(pool_vy, config.bins_vy),
        edges_dt=_equal_frequency_edges(pool_dt, config.bins_dt),
        fitted_on=len(pool_vx),
    )


def quantize(value, edges: np.ndarray):
    """Bin index = number of edges strictly below the value.

    Values exactly on an edge fall in the lower bin; works on scalars and
    arrays alike and is monotone non-decreasing in the value.
    """
    return np.searchsorted(np.asarray(edges), value, side="left")


def scalarize(event_index: int, qvx: int, qvy: int, config: PreprocessConfig) -> int:
    """Pack (event, vx bin, vy bin) into one symbol, bijectively."""
    if not (0 <= event_index < NUM_EVENTS):
        raise ValueError(f"event_index {event_index} out of range")
    if not (0 <= qvx < config.bins_vx) or not (0 <= qvy < config.bins_vy):
        raise ValueError("velocity bin out of range")
    direction = qvx * config.bins_vy + qvy
    return event_index * (config.bins_vx * config.bins_vy) + direction


def decompose(symbol: int, config: PreprocessConfig) -> tuple[int, int, int]:
    """Inverse of scalarize: symbol -> (event_index, qvx, qvy)."""
    per_event = config.bins_vx * config.bins_vy
    if not (0 <= symbol < NUM_EVENTS * per_event):
        raise ValueError(f"symbol {symbol} out of range")
    event_index, direction = divmod(symbol, per_event)
    qvx, qvy = divmod(direction, config.bins_vy)
    return event_index, qvx, qvy


def replicate_by_interarrival(
    symbols: Sequence[int] | np.ndarray, dt_bins: Sequence[int] | np.ndarray
) -> np.ndarray:
    """Copy each symbol (dt bin + 1) times, preserving order.

    The count is 1-based so every event survives replication.
    """
    symbols = np.asarray(symbols, dtype=np.int64)
    reps = np.asarray(dt_bins, dtype=np.int64) + 1
    if len(symbols) != len(reps):
        raise ValueError("symbols and dt_bins must have equal length")
    return np.repeat(symbols, reps)


@dataclass(frozen=True)
class ProcessedTrace:
    """Discrete symbol sequence plus the kinematics it came from.

    source_index maps each (replicated) symbol back to the element of `raw`
    that produced it, which is what ties symbols to trace timestamps.
    """

    symbols: np.ndarray
    raw: KinematicSequence
    alphabet_size: int
    source_index: np.ndarray

    def __len__(self) -> int:
        return len(self.symbols)

    def symbol_times_ms(self) -> np.ndarray:
        """Per-symbol milliseconds since the first event of the trace."""
        return self.raw.elapsed_ms()[self.source_index]


def preprocess(
    trace: Trace, quantizer: QuantizerModel, config: PreprocessConfig
) -> ProcessedTrace:
    """Full pipeline: kinematics -> quantize -> scalarize -> replicate.

    The trace is truncated to config.max_elements records before processing.
    """
    if len(trace.records) > config.max_elements:
        trace = Trace(
            trace.session_id, trace.records[: config.max_elements], trace.label
        )
    kin = compute_kinematics(trace)
    qvx = quantize(kin.vx, quantizer.edges_vx)
    qvy = quantize(kin.vy, quantizer.edges_vy)
    qdt = quantize(kin.dt, quantizer.edges_dt)
    per_event = config.bins_vx * config.bins_vy
    symbols = kin.event_index * per_event + qvx * config.bins_vy + qvy
    reps = qdt + 1
    return ProcessedTrace(
        symbols=np.repeat(symbols, reps),
        raw=kin,
        alphabet_size=config.alphabet_size,
        source_index=np.repeat(np.arange(len(symbols)), reps),
    )


def save_pipeline(quantizer: QuantizerModel, config: PreprocessConfig) -> str:
    """Serialize a fitted pipeline (config + quantizer) to a JSON document."""
    return json.dumps(
        {"config": config.to_json(), "quantizer": quantizer.to_json()},
        separators=(",", ":"),
    )


def load_pipeline(doc: str | dict) -> tuple[QuantizerModel, PreprocessConfig]:
    d = json.loads(doc) if isinstance(doc, str) else doc
    return (
        QuantizerModel.from_json(d["quantizer"]),
        PreprocessConfig.from_json(d["config"]),
    )


class StreamingPreprocessor:
    """Incremental, per-event version of `preprocess` for live sessions.

    Feeding events one at a time yields exactly the symbols the batch
    pipeline would produce on the same prefix (truncation aside).
    """

    def __init__(self, quantizer: QuantizerModel, config: PreprocessConfig):
        self.quantizer = quantizer
        self.config = config
        self._last_x = 0
        self._last_y = 0
        self._prev_ts: int | None = None
        self._first_ts: int | None = None

    def push(self, record: EventRecord) -> tuple[np.ndarray, float]:
        """Consume one event; return (replicated symbols, elapsed ms)."""
        if record.x is not None:
            x, y = record.x, record.y
        else:
            x, y = self._last_x, self._last_y
        if self._prev_ts is None:
            dt = 0.0
            vx = vy = 0.0
            self._first_ts = record.timestamp_ms
        else:
            dt = (record.timestamp_ms - self._prev_ts) / 1000.0
            if dt > 0:
                vx = (x - self._last_x) / dt
                vy = (y - self._last_y) / dt
            else:
                vx = vy = 0.0
        self._last_x, self._last_y = x, y
        self._prev_ts = record.timestamp_ms
        qvx = int(quantize(vx, self.quantizer.edges_vx))
        qvy = int(quantize(vy, self.quantizer.edges_vy))
        qdt = int(quantize(dt, self.quantizer.edges_dt))
        symbol = scalarize(record.event_index, qvx, qvy, self.config)
        elapsed = float(record.timestamp_ms - self._first_ts)
        return np.full(qdt + 1, symbol, dtype=np.int64), elapsed
