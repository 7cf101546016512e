/** Test doubles: fake DOM targets, elements, clock, and WebSocket. */

import { WS_OPEN, WebSocketLike } from "../src/types";

export class FakeElement {
  constructor(
    public tagName: string,
    public id = "",
    public classes: string[] = []
  ) {}
  get classList() {
    const classes = this.classes;
    return { item: (i: number) => classes[i] ?? null };
  }
}

export function dispatch(
  target: EventTarget,
  name: string,
  props: Record<string, unknown> = {},
  element?: FakeElement
): void {
  const ev = new Event(name);
  Object.assign(ev, props);
  if (element) {
    Object.defineProperty(ev, "target", { value: element, configurable: true });
  }
  target.dispatchEvent(ev);
}

export class FakeClock {
  constructor(public t = 1_700_000_000_000) {}
  now = () => this.t;
  advance(ms: number): void {
    this.t += ms;
  }
}

export class FakeSocket implements WebSocketLike {
  readyState = 0; // CONNECTING
  sent: string[] = [];
  onopen: ((ev?: unknown) => void) | null = null;
  onclose: ((ev?: unknown) => void) | null = null;
  onerror: ((ev?: unknown) => void) | null = null;

  send(data: string): void {
    if (this.readyState !== WS_OPEN) throw new Error("socket not open");
    this.sent.push(data);
  }
  close(): void {
    this.readyState = 3;
  }
  open(): void {
    this.readyState = WS_OPEN;
    this.onopen?.();
  }
  drop(): void {
    this.readyState = 3;
    this.onclose?.();
  }
}
