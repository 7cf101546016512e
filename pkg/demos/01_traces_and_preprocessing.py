#!/usr/bin/env python3
"""Walk through the event catalog, the trace format, and the preprocessing
pipeline that turns raw browser events into a discrete symbol stream."""

import io

import numpy as np

from webguard.preprocess import (
    PreprocessConfig,
    compute_kinematics,
    decompose,
    fit_quantizer,
    preprocess,
)
from webguard.trace import (
    EVENT_CATALOG,
    EventRecord,
    Trace,
    catalog_lookup,
    parse_trace_file,
    serialize_trace_file,
)

print("=== the 43-event catalog ===")
print(f"{len(EVENT_CATALOG)} events; examples:")
for name in ("mousemove", "click", "submit", "afterprint"):
    print(f"  {name!r} -> index {catalog_lookup(name)}")

print("\n=== a small login-like session ===")
records = [
    EventRecord("demo", catalog_lookup("mousemove"), 0, x=456, y=490),
    EventRecord("demo", catalog_lookup("click"), 335, x=482, y=425, dom_target="input#user"),
    EventRecord("demo", catalog_lookup("keypress"), 530),
    EventRecord("demo", catalog_lookup("keypress"), 605),
    EventRecord("demo", catalog_lookup("submit"), 605, dom_target="form#login"),
]
trace = Trace.from_records(records)

buf = io.StringIO()
serialize_trace_file([trace], buf)
print("serialized trace file:")
print(buf.getvalue())
(back,) = parse_trace_file(io.StringIO(buf.getvalue()))
assert back.records == trace.records
print("round-trip: ok")

print("=== kinematics ===")
kin = compute_kinematics(trace)
print("event indices:", kin.event_index.tolist())
print("backfilled x:  ", kin.x.tolist())
print("vx (px/s):     ", np.round(kin.vx, 2).tolist())
print("vy (px/s):     ", np.round(kin.vy, 2).tolist())
print("dt (s):        ", kin.dt.tolist())
print("note: keypresses backfill to the last pointer location -> zero velocity")

print("\n=== quantization and scalarization ===")
config = PreprocessConfig(bins_vx=2, bins_vy=2, bins_dt=3, max_elements=10_000)
quantizer = fit_quantizer([kin], config)
print("vx cut points:", quantizer.edges_vx.tolist())
print("dt cut points:", quantizer.edges_dt.tolist())
processed = preprocess(trace, quantizer, config)
print(f"alphabet size = 43 * {config.bins_vx} * {config.bins_vy} = {processed.alphabet_size}")
print("symbols:", processed.symbols.tolist())
print("decoded:", [decompose(int(s), config) for s in processed.symbols])
print("slow inter-arrivals replicate their symbols, so the stream is\n"
      "longer than the trace:", len(processed), ">=", len(trace))
