/**
 * The 43-entry event catalog, mirrored from the ingest side.
 *
 * Indices 0-24 attach to the document, 25-42 to the window. Index values
 * ride on the wire, so this table must stay in lockstep with the server's
 * catalog.
 */

export type EventDomain = "document" | "window";

export interface CatalogEntry {
  index: number;
  name: string;
  domain: EventDomain;
}

export const EVENT_CATALOG: readonly CatalogEntry[] = [
  { index: 0, name: "mousedown", domain: "document" },
  { index: 1, name: "mouseup", domain: "document" },
  { index: 2, name: "mousemove", domain: "document" },
  { index: 3, name: "mouseover", domain: "document" },
  { index: 4, name: "mouseout", domain: "document" },
  { index: 5, name: "mousewheel", domain: "document" },
  { index: 6, name: "wheel", domain: "document" },
  { index: 7, name: "touchstart", domain: "document" },
  { index: 8, name: "touchend", domain: "document" },
  { index: 9, name: "touchmove", domain: "document" },
  { index: 10, name: "deviceorientation", domain: "document" },
  { index: 11, name: "keydown", domain: "document" },
  { index: 12, name: "keyup", domain: "document" },
  { index: 13, name: "keypress", domain: "document" },
  { index: 14, name: "click", domain: "document" },
  { index: 15, name: "dblclick", domain: "document" },
  { index: 16, name: "scroll", domain: "document" },
  { index: 17, name: "change", domain: "document" },
  { index: 18, name: "select", domain: "document" },
  { index: 19, name: "submit", domain: "document" },
  { index: 20, name: "reset", domain: "document" },
  { index: 21, name: "contextmenu", domain: "document" },
  { index: 22, name: "cut", domain: "document" },
  { index: 23, name: "copy", domain: "document" },
  { index: 24, name: "paste", domain: "document" },
  { index: 25, name: "load", domain: "window" },
  { index: 26, name: "unload", domain: "window" },
  { index: 27, name: "beforeunload", domain: "window" },
  { index: 28, name: "blur", domain: "window" },
  { index: 29, name: "focus", domain: "window" },
  { index: 30, name: "resize", domain: "window" },
  { index: 31, name: "error", domain: "window" },
  { index: 32, name: "abort", domain: "window" },
  { index: 33, name: "online", domain: "window" },
  { index: 34, name: "offline", domain: "window" },
  { index: 35, name: "storage", domain: "window" },
  { index: 36, name: "popstate", domain: "window" },
  { index: 37, name: "hashchange", domain: "window" },
  { index: 38, name: "pagehide", domain: "window" },
  { index: 39, name: "pageshow", domain: "window" },
  { index: 40, name: "message", domain: "window" },
  { index: 41, name: "beforeprint", domain: "window" },
  { index: 42, name: "afterprint", domain: "window" },
] as const;

/** Event names whose DOM events carry pointer coordinates. */
export const POINTER_EVENTS: ReadonlySet<string> = new Set([
  "mousedown",
  "mouseup",
  "mousemove",
  "mouseover",
  "mouseout",
  "mousewheel",
  "wheel",
  "click",
  "dblclick",
  "contextmenu",
  "touchstart",
  "touchend",
  "touchmove",
]);
