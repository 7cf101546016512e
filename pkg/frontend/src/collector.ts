/**
 * Browser-side instrumentation: listens for all 43 catalog events, records
 * (event index, timestamp, coordinates, target), batches them, and streams
 * WireBatch JSON to the ingest service over WebSocket with an HTTP-polling
 * fallback.
 *
 * Usage:
 *   const handle = install({ endpoint: "ws://collector.example/ws" });
 *   ...
 *   handle.detach();
 *
 * Batches flush every 150 ms or 32 events, whichever comes first. On
 * connection loss events keep buffering (bounded, oldest dropped beyond
 * 10k) and the socket reconnects with the sequence numbering resumed.
 */

import { EVENT_CATALOG, POINTER_EVENTS } from "./catalog";
import {
  CollectorConfig,
  CollectorHandle,
  FlushReport,
  WS_OPEN,
  WebSocketLike,
  WireBatch,
  WireEvent,
} from "./types";

const DEFAULT_FLUSH_MS = 150;
const DEFAULT_MAX_BATCH = 32;
const DEFAULT_MAX_QUEUED = 10_000;
const DEFAULT_RECONNECT_MS = 1_000;

export function randomSessionId(): string {
  const bytes = new Uint8Array(16);
  const c = (globalThis as { crypto?: Crypto }).crypto;
  if (c && typeof c.getRandomValues === "function") {
    c.getRandomValues(bytes);
  } else {
    for (let i = 0; i < bytes.length; i++) {
      bytes[i] = Math.floor(Math.random() * 256);
    }
  }
  return Array.from(bytes, (b) => b.toString(16).padStart(2, "0")).join("");
}

function describeTarget(target: unknown): string | undefined {
  const el = target as { tagName?: string; id?: string; classList?: { item(i: number): string | null } };
  if (!el || typeof el.tagName !== "string") return undefined;
  let desc = el.tagName.toLowerCase();
  if (el.id) desc += `#${el.id}`;
  else if (el.classList && el.classList.item(0)) desc += `.${el.classList.item(0)}`;
  return desc;
}

function pointerCoordinates(ev: unknown): { x: number; y: number } | undefined {
  const e = ev as {
    clientX?: number;
    clientY?: number;
    touches?: ArrayLike<{ clientX: number; clientY: number }>;
    changedTouches?: ArrayLike<{ clientX: number; clientY: number }>;
  };
  if (typeof e.clientX === "number" && typeof e.clientY === "number") {
    return { x: Math.round(e.clientX), y: Math.round(e.clientY) };
  }
  const touch = (e.touches && e.touches[0]) || (e.changedTouches && e.changedTouches[0]);
  if (touch) return { x: Math.round(touch.clientX), y: Math.round(touch.clientY) };
  return undefined;
}

class Transport {
  private ws: WebSocketLike | null = null;
  private queue: string[] = [];
  private queuedEvents = 0;
  private queuedEventCounts: number[] = [];
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;
  private reconnectDelay: number;
  private closed = false;
  private sendChain: Promise<unknown> = Promise.resolve();

  constructor(private config: Required<Pick<CollectorConfig, "endpoint" | "mode" | "maxQueuedEvents" | "reconnectDelayMs">> & CollectorConfig) {
    this.reconnectDelay = config.reconnectDelayMs;
    if (config.mode === "websocket") this.connect();
  }

  private connect(): void {
    if (this.closed) return;
    const factory =
      this.config.webSocketFactory ??
      ((url: string) => new (globalThis as { WebSocket: new (u: string) => WebSocketLike }).WebSocket(url));
    try {
      this.ws = factory(this.config.endpoint);
    } catch {
      this.scheduleReconnect();
      return;
    }
    this.ws.onopen = () => {
      this.reconnectDelay = this.config.reconnectDelayMs;
      this.drainQueue();
    };
    this.ws.onclose = () => this.scheduleReconnect();
    this.ws.onerror = () => {
      /* onclose follows; nothing to do */
    };
  }

  private scheduleReconnect(): void {
    this.ws = null;
    if (this.closed || this.reconnectTimer) return;
    this.reconnectTimer = setTimeout(() => {
      this.reconnectTimer = null;
      this.connect();
    }, this.reconnectDelay);
    this.reconnectDelay = Math.min(this.reconnectDelay * 2, this.config.reconnectDelayMs * 8);
  }

  private drainQueue(): void {
    while (this.queue.length && this.ws && this.ws.readyState === WS_OPEN) {
      const payload = this.queue.shift()!;
      this.queuedEvents -= this.queuedEventCounts.shift()!;
      this.ws.send(payload);
    }
  }

  /** Returns true when sent immediately, false when queued. */
  dispatch(batch: WireBatch, payload: string): boolean {
    if (this.config.mode === "http") {
      const fetchFn = this.config.fetchFn ?? (globalThis.fetch as CollectorConfig["fetchFn"]);
      if (fetchFn) {
        // fire-and-forget, but strictly ordered
        this.sendChain = this.sendChain.then(() =>
          fetchFn(this.config.endpoint, {
            method: "POST",
            body: payload,
            headers: { "Content-Type": "application/json" },
          }).catch(() => undefined)
        );
      }
      return true;
    }
    if (this.ws && this.ws.readyState === WS_OPEN) {
      this.drainQueue();
      this.ws.send(payload);
      return true;
    }
    this.queue.push(payload);
    this.queuedEvents += batch.ev.length;
    this.queuedEventCounts.push(batch.ev.length);
    while (this.queuedEvents > this.config.maxQueuedEvents && this.queue.length > 1) {
      this.queue.shift();
      this.queuedEvents -= this.queuedEventCounts.shift()!;
    }
    return false;
  }

  close(): void {
    this.closed = true;
    if (this.reconnectTimer) {
      clearTimeout(this.reconnectTimer);
      this.reconnectTimer = null;
    }
    if (this.ws) {
      this.ws.close();
      this.ws = null;
    }
  }
}

export function encodeBatch(batch: WireBatch): string {
  // field order is part of the golden wire format: sid, seq, ev; each
  // event i, t, x, y, p, d with absent keys omitted
  const events = batch.ev.map((e) => {
    const out: WireEvent = { i: e.i, t: e.t };
    if (e.x !== undefined) {
      out.x = e.x;
      out.y = e.y;
    }
    if (e.p !== undefined) out.p = e.p;
    if (e.d !== undefined) out.d = e.d;
    return out;
  });
  return JSON.stringify({ sid: batch.sid, seq: batch.seq, ev: events });
}

export function install(config: CollectorConfig): CollectorHandle {
  const mode = config.mode ?? "websocket";
  const flushMs = config.flushIntervalMs ?? DEFAULT_FLUSH_MS;
  const maxBatch = config.maxBatchSize ?? DEFAULT_MAX_BATCH;
  if (flushMs <= 0) throw new Error("flushIntervalMs must be > 0");
  if (maxBatch < 1) throw new Error("maxBatchSize must be >= 1");
  const sessionId = config.sessionId ?? randomSessionId();
  const now = config.now ?? Date.now;
  const pathProvider =
    config.pathProvider ??
    (() => (globalThis as { location?: { pathname?: string } }).location?.pathname);
  const doc = config.documentTarget ?? (globalThis as { document?: EventTarget }).document;
  const win = config.windowTarget ?? (globalThis as unknown as EventTarget);
  if (!doc) throw new Error("no document target available");

  const transport = new Transport({
    ...config,
    endpoint: config.endpoint,
    mode,
    maxQueuedEvents: config.maxQueuedEvents ?? DEFAULT_MAX_QUEUED,
    reconnectDelayMs: config.reconnectDelayMs ?? DEFAULT_RECONNECT_MS,
  });

  let buffer: WireEvent[] = [];
  let seq = 0;
  let detached = false;

  const flush = (): FlushReport | null => {
    if (!buffer.length) return null;
    const batch: WireBatch = { sid: sessionId, seq: seq++, ev: buffer };
    buffer = [];
    const payload = encodeBatch(batch);
    const sent = transport.dispatch(batch, payload);
    return { seq: batch.seq, events: batch.ev.length, bytes: payload.length, queued: !sent };
  };

  const record = (index: number, name: string) => (ev: unknown) => {
    if (detached) return;
    const entry: WireEvent = { i: index, t: Math.round(now()) };
    if (POINTER_EVENTS.has(name)) {
      const pos = pointerCoordinates(ev);
      if (pos) {
        entry.x = pos.x;
        entry.y = pos.y;
      }
    }
    const path = pathProvider();
    if (path) entry.p = path;
    const desc = describeTarget((ev as { target?: unknown }).target);
    if (desc) entry.d = desc;
    buffer.push(entry);
    if (buffer.length >= maxBatch) flush();
  };

  const installed = new Map<string, "document" | "window">();
  const handlers: Array<{ target: EventTarget; name: string; fn: EventListener }> = [];
  for (const { index, name, domain } of EVENT_CATALOG) {
    const target = domain === "document" ? doc : win;
    const fn = record(index, name) as EventListener;
    target.addEventListener(name, fn);
    handlers.push({ target, name, fn });
    installed.set(name, domain);
  }

  const timer = setInterval(() => {
    if (buffer.length) flush();
  }, flushMs);

  return {
    sessionId,
    flush,
    installedListeners: () => installed,
    detach() {
      if (detached) return;
      detached = true;
      clearInterval(timer);
      for (const { target, name, fn } of handlers) {
        target.removeEventListener(name, fn);
      }
      flush();
      transport.close();
    },
  };
}
