/** Wire and configuration types shared across the collector. */

/** One recorded event in the trace-file field schema (sid hoisted out). */
export interface WireEvent {
  i: number;
  t: number;
  x?: number;
  y?: number;
  p?: string;
  d?: string;
}

/** One transmission unit; seq is strictly increasing per session. */
export interface WireBatch {
  sid: string;
  seq: number;
  ev: WireEvent[];
}

/** Minimal WebSocket surface the collector needs (injectable in tests). */
export interface WebSocketLike {
  readyState: number;
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export const WS_OPEN = 1;

export interface CollectorConfig {
  /** ws:// or http(s):// endpoint receiving WireBatch JSON. */
  endpoint: string;
  mode?: "websocket" | "http";
  /** Flush cadence in milliseconds (default 150). */
  flushIntervalMs?: number;
  /** Maximum events per batch (default 32). */
  maxBatchSize?: number;
  /** Session id; default is a fresh random 128-bit hex per install. */
  sessionId?: string;
  /** Cap on events buffered while disconnected; oldest drop first. */
  maxQueuedEvents?: number;
  /** Reconnect delay in milliseconds (doubles up to 8x). */
  reconnectDelayMs?: number;

  // injection points for tests and non-browser hosts
  documentTarget?: EventTarget;
  windowTarget?: EventTarget;
  webSocketFactory?: (url: string) => WebSocketLike;
  fetchFn?: (url: string, init: { method: string; body: string; headers: Record<string, string> }) => Promise<unknown>;
  now?: () => number;
  pathProvider?: () => string | undefined;
}

export interface FlushReport {
  seq: number;
  events: number;
  bytes: number;
  queued: boolean;
}

export interface CollectorHandle {
  /** Force a flush of the current buffer; no-op when empty. */
  flush(): FlushReport | null;
  /** Remove every listener, flush what remains, close the transport. */
  detach(): void;
  /** Session id in use. */
  readonly sessionId: string;
  /** (event name -> domain) table actually installed, for audits. */
  installedListeners(): ReadonlyMap<string, "document" | "window">;
}
