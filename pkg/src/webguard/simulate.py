"""Seeded synthetic agent generators.

Each generator emits a Trace statistically shaped like one agent class,
differing in the same dimensions the learning pipeline exploits: event-type
mix, movement kinematics, and inter-arrival structure.

    random_naive    fast straight-line moves to Gaussian screen targets,
                    jittery per-step speed, occasional clicks
    random_delayed  the naive bot with exponential pauses injected between
                    movements (default mean 500 ms)
    ui_fuzzer       stochastic event soup: teleporting moves, random clicks,
                    key and form events at a fixed cadence
    scanner         form-focused bursts (focus, keydowns, change, submit)
                    with near-zero intra-burst delay
    humanlike       smooth accelerate/decelerate movements, short and long
                    dwells, interleaved typing and scrolling
    crawler         systematic raster traversal: smooth move, click, page
                    load, repeat

`replay` streams any trace to a running ingest service over WebSocket or
HTTP, batching the way a live collector would.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .trace import EventRecord, Trace

BASE_EPOCH_MS = 1_700_000_000_000

# catalog indices used by the generators
MOUSEMOVE, CLICK, KEYDOWN, KEYUP = 2, 14, 11, 12
SCROLL, CHANGE, SELECT, SUBMIT = 16, 17, 18, 19
MOUSEOVER, MOUSEOUT = 3, 4
LOAD, FOCUS = 25, 29

FORM_TARGETS = ("input#user", "input#pass", "input#search", "form#login", "textarea#note")


@dataclass(frozen=True)
class SimConfig:
    duration_s: float = 10.0
    viewport: tuple[int, int] = (1280, 800)
    seed: int = 0
    session_id: str | None = None
    rate: float = 80.0  # base event cadence, events per second

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError("duration must be > 0")
        if self.viewport[0] <= 0 or self.viewport[1] <= 0:
            raise ValueError("viewport must be positive")
        if self.rate <= 0:
            raise ValueError("rate must be > 0")


class _Builder:
    def __init__(self, config: SimConfig, label: str):
        self.config = config
        self.label = label
        self.sid = config.session_id or f"sim-{label.replace(':', '-')}-{config.seed}"
        self.records: list[EventRecord] = []
        self.t = 0.0  # seconds since session start

    def clamp(self, x: float, y: float) -> tuple[int, int]:
        w, h = self.config.viewport
        return (
            int(min(max(round(x), 0), w - 1)),
            int(min(max(round(y), 0), h - 1)),
        )

    def emit(self, event_index: int, pos=None, dom_target=None):
        x = y = None
        if pos is not None:
            x, y = self.clamp(pos[0], pos[1])
        self.records.append(
            EventRecord(
                session_id=self.sid,
                event_index=event_index,
                timestamp_ms=BASE_EPOCH_MS + int(round(self.t * 1000)),
                x=x,
                y=y,
                dom_target=dom_target,
            )
        )

    def done(self) -> bool:
        return self.t >= self.config.duration_s

    def build(self) -> Trace:
        return Trace.from_records(self.records, label=self.label)


def _gaussian_target(rng, config: SimConfig) -> np.ndarray:
    w, h = config.viewport
    sigma = np.array([w / 6.0, h / 6.0])
    center = np.array([w / 2.0, h / 2.0])
    raw = rng.normal(center, sigma)
    return np.clip(raw, 0, [w - 1, h - 1])


def _random_mover(
    config: SimConfig,
    label: str,
    pause_mean_s: float | None,
    stutter_prob: float = 0.0,
    stutter_mean_s: float = 0.25,
) -> Trace:
    """Shared core of the naive and artificially delayed random bots."""
    rng = np.random.default_rng(config.seed)
    b = _Builder(config, label)
    tick = 1.0 / config.rate
    speed = 800.0  # px/s, roughly constant with jittery steps
    b.emit(LOAD)
    pos = np.array([config.viewport[0] / 2.0, config.viewport[1] / 2.0])
    while not b.done():
        target = _gaussian_target(rng, config)
        dist = float(np.linalg.norm(target - pos))
        steps = max(1, int(math.ceil(dist / (speed * tick))))
        direction = (target - pos) / steps
        for _ in range(steps):
            b.t += tick
            if stutter_prob > 0 and rng.random() < stutter_prob:
                # mid-move sleep; the next reported move arrives late, so
                # its inter-arrival lands well above the tick cadence
                b.t += 0.02 + float(rng.exponential(stutter_mean_s))
            if b.done():
                break
            pos = pos + direction * (0.5 + rng.random())  # crude per-step speed noise
            b.emit(MOUSEMOVE, pos)
        pos = target
        if b.done():
            break
        if rng.random() < 0.3:
            b.t += tick
            if not b.done():
                b.emit(CLICK, pos, dom_target="div#page")
        if pause_mean_s is not None:
            b.t += float(rng.exponential(pause_mean_s))
    return b.build()


def gen_random_naive(config: SimConfig) -> Trace:
    """Random mouse bot: Gaussian screen targets, straight fast moves."""
    return _random_mover(config, "random_naive", pause_mean_s=None)


def gen_random_delayed(config: SimConfig) -> Trace:
    """The naive bot with artificial delays layered on: exponential pauses
    between movement bursts (mean 500 ms) plus frequent short stutter
    sleeps mid-movement. Event count per unit time lands around half the
    naive bot's, and a quarter of the inter-arrivals sit far above the
    tick cadence."""
    return _random_mover(
        config,
        "random_delayed",
        pause_mean_s=0.5,
        stutter_prob=0.25,
        stutter_mean_s=0.012,
    )


def gen_ui_fuzzer(config: SimConfig) -> Trace:
    """Monkey-testing style fuzzer: per tick, draw an event type from a
    fixed categorical mix; pointer positions are uniform (teleporting)."""
    rng = np.random.default_rng(config.seed)
    b = _Builder(config, "ui_fuzzer")
    tick = 1.0 / config.rate
    w, h = config.viewport
    kinds = (MOUSEMOVE, CLICK, KEYDOWN, KEYUP, SCROLL, CHANGE, SELECT)
    probs = (0.4, 0.2, 0.1, 0.1, 0.1, 0.05, 0.05)
    while True:
        b.t += tick
        if b.done():
            break
        kind = kinds[rng.choice(len(kinds), p=probs)]
        if kind in (MOUSEMOVE, CLICK):
            pos = (rng.random() * w, rng.random() * h)
            b.emit(kind, pos, dom_target="div#page" if kind == CLICK else None)
        elif kind in (CHANGE, SELECT):
            b.emit(kind, dom_target=str(rng.choice(FORM_TARGETS)))
        else:
            b.emit(kind)
    return b.build()


def gen_scanner(config: SimConfig) -> Trace:
    """Vulnerability-scanner stand-in: rapid form-filling bursts
    (focus, keydown xN, change, submit) separated by longer gaps."""
    rng = np.random.default_rng(config.seed)
    b = _Builder(config, "scanner")
    gap_mean = 0.25 * (80.0 / config.rate)
    while not b.done():
        target = str(rng.choice(FORM_TARGETS))
        if rng.random() < 0.15:
            b.emit(MOUSEMOVE, (rng.random() * config.viewport[0], rng.random() * config.viewport[1]))
            b.t += 0.002
        b.emit(FOCUS, dom_target=target)
        for _ in range(int(rng.integers(6, 16))):
            b.t += float(rng.uniform(0.001, 0.004))
            if b.done():
                break
            b.emit(KEYDOWN, dom_target=target)
        if b.done():
            break
        b.t += 0.002
        b.emit(CHANGE, dom_target=target)
        b.t += 0.002
        b.emit(SUBMIT, dom_target="form#login")
        b.t += float(rng.exponential(gap_mean)) + 0.03
    return b.build()


def _smooth_move(
    b: _Builder, rng, pos, target, peak_speed: float, jitter_px: float,
    hover_prob: float = 0.0,
):
    """Point-to-point move with a bell-shaped speed profile.

    With hover_prob > 0, elements crossed along the way fire
    mouseover/mouseout pairs, the way dense link traversal does."""
    tick = 1.0 / b.config.rate
    dist = float(np.linalg.norm(target - pos))
    if dist < 1.0:
        return target
    # mean of sin profile is 2/pi of the peak
    steps = max(2, int(math.ceil(dist / (peak_speed * (2 / math.pi) * tick))))
    direction = (target - pos) / dist
    perp = np.array([-direction[1], direction[0]])
    weights = np.sin(math.pi * (np.arange(steps) + 0.5) / steps)
    weights = weights / weights.sum() * dist
    cur = pos.astype(float).copy()
    hovering = False
    for k in range(steps):
        b.t += tick
        if b.done():
            return cur
        cur = cur + direction * weights[k]
        wobble = perp * rng.normal(0.0, jitter_px)
        b.emit(MOUSEMOVE, cur + wobble)
        if hover_prob > 0 and rng.random() < hover_prob:
            b.emit(MOUSEOUT if hovering else MOUSEOVER, cur, dom_target="a#link")
            hovering = not hovering
    if hovering and not b.done():
        b.emit(MOUSEOUT, cur, dom_target="a#link")
    return target


def gen_humanlike(config: SimConfig) -> Trace:
    """Human stand-in: smooth asymmetric movements, dwell pauses with both
    short (100-300 ms) and long (1-5 s) components, typing and scrolling."""
    rng = np.random.default_rng(config.seed)
    b = _Builder(config, "human")
    w, h = config.viewport
    tick = 1.0 / config.rate
    pos = np.array([w / 2.0, h / 2.0])
    action = 0
    while not b.done():
        action += 1
        if action % 4 == 0:
            # reading pause; guarantees >1 s dwells in any multi-action run
            b.t += float(rng.uniform(1.0, 5.0))
            continue
        roll = rng.random()
        if roll < 0.55:
            target = np.array([rng.uniform(0.05, 0.95) * w, rng.uniform(0.05, 0.95) * h])
            pos = _smooth_move(b, rng, pos, target, peak_speed=float(rng.uniform(600, 1400)), jitter_px=1.5)
            if b.done():
                break
            b.t += float(rng.uniform(0.1, 0.3))
            if rng.random() < 0.4 and not b.done():
                b.emit(CLICK, pos, dom_target="a#link")
                b.t += tick
        elif roll < 0.75:
            for _ in range(int(rng.integers(2, 8))):
                if b.done():
                    break
                b.emit(KEYDOWN)
                b.t += float(rng.uniform(0.03, 0.09))
                if b.done():
                    break
                b.emit(KEYUP)
                b.t += float(rng.uniform(0.03, 0.09))
        else:
            for _ in range(int(rng.integers(3, 10))):
                if b.done():
                    break
                b.emit(SCROLL)
                b.t += float(rng.uniform(0.03, 0.06))
            b.t += float(rng.uniform(0.1, 0.3))
    return b.build()


def gen_crawler(config: SimConfig) -> Trace:
    """Crawler stand-in: raster-order link traversal with slow smooth moves.

    Each stop hovers the link (mouseover), dwells briefly, clicks, leaves
    (mouseout), and triggers a page load — the element-walking signature of
    a link-following agent."""
    rng = np.random.default_rng(config.seed)
    b = _Builder(config, "crawler")
    w, h = config.viewport
    grid = [
        np.array([w * (0.15 + 0.35 * gx), h * (0.2 + 0.3 * gy)])
        for gy in range(3)
        for gx in range(3)
    ]
    pos = np.array([w / 2.0, h / 2.0])
    b.emit(LOAD)
    idx = 0
    while not b.done():
        target = grid[idx % len(grid)] + rng.normal(0, 8, size=2)
        idx += 1
        pos = _smooth_move(b, rng, pos, target, peak_speed=900.0, jitter_px=0.4, hover_prob=0.12)
        if b.done():
            break
        b.emit(MOUSEOVER, pos, dom_target="a#link")
        b.t += float(rng.uniform(0.2, 0.4))
        b.emit(CLICK, pos, dom_target="a#link")
        b.t += 0.02
        if b.done():
            break
        b.emit(MOUSEOUT, pos, dom_target="a#link")
        b.t += float(rng.uniform(0.3, 0.8))
        if b.done():
            break
        b.emit(LOAD)
        if rng.random() < 0.4:
            for _ in range(int(rng.integers(1, 4))):
                b.t += float(rng.uniform(0.04, 0.08))
                if b.done():
                    break
                b.emit(SCROLL)
    return b.build()


GENERATORS: dict[str, Callable[[SimConfig], Trace]] = {
    "human": gen_humanlike,
    "crawler": gen_crawler,
    "ui_fuzzer": gen_ui_fuzzer,
    "scanner": gen_scanner,
    "random_naive": gen_random_naive,
    "random_delayed": gen_random_delayed,
}

# The five-class corpus mirrors the base attribution regime; the delayed bot
# joins as a sixth class for trend-discovery experiments.
BASE_CLASSES = ("human", "crawler", "ui_fuzzer", "scanner", "random_naive")
TREND_CLASS = "random_delayed"


def generate_corpus(
    classes,
    per_class: int,
    seed: int = 0,
    duration_s: float = 10.0,
    rate: float = 80.0,
    viewport: tuple[int, int] = (1280, 800),
) -> list[Trace]:
    """Labeled multi-class corpus: per_class traces per listed class."""
    traces = []
    for c, cls in enumerate(classes):
        gen = GENERATORS[cls]
        for k in range(per_class):
            cfg = SimConfig(
                duration_s=duration_s,
                viewport=viewport,
                seed=seed * 1_000_003 + c * 1009 + k,
                session_id=f"{cls}-{seed}-{k}",
                rate=rate,
            )
            traces.append(gen(cfg))
    return traces


def replay(trace: Trace, endpoint: str, mode: str = "websocket", time_compressed: bool = True):
    """Stream a trace to an ingest endpoint as wire batches.

    Events are batched the way the live collector flushes: every 150 ms of
    trace time or 32 events, whichever comes first. Returns a transmission
    report with byte counts. With time_compressed the batches go out as
    fast as the wire allows; server-side timestamps always come from the
    client payloads either way.
    """
    from .ingest import replay_trace  # local import; ingest pulls in asyncio stack

    return replay_trace(trace, endpoint, mode=mode, time_compressed=time_compressed)
