#!/usr/bin/env python3
"""Run the ingestion service, stream a session to it over WebSocket and
HTTP, and account for every wire byte.

The recurring WebSocket cost is just the frame header (6-8 bytes per
masked client message at telemetry payload sizes); HTTP pays a full header
block per request. The comparison uses 770-byte request and 330-byte
response headers for the HTTP side.
"""

import json
import urllib.request

from webguard.detect import fit_bank
from webguard.hmm import TrainConfig
from webguard.ingest import IngestServer, export_sessions, measure_overhead
from webguard.preprocess import PreprocessConfig
from webguard.simulate import SimConfig, gen_humanlike, gen_scanner, replay

print("=== plain ingestion round-trip ===")
server = IngestServer().start()
trace = gen_humanlike(SimConfig(seed=3, duration_s=10.0, rate=28.0, session_id="demo"))
print(f"replaying {len(trace)} events over websocket to 127.0.0.1:{server.port} ...")
report = replay(trace, f"127.0.0.1:{server.port}", mode="websocket")
print(f"  {report.batches} batches, {report.payload_bytes} payload bytes, "
      f"{report.overhead_bytes} recurring framing bytes, handshake {report.handshake_bytes}")

stored = server.store.events("demo")
print(f"store now holds {len(stored)} events; identical to the source: {stored == list(trace.records)}")

ws_entries = [e for e in server.transcript if e.mode == "websocket"]
ws = measure_overhead(ws_entries, "websocket")
http = measure_overhead(
    [e.payload_bytes for e in ws_entries], "http",
    http_request_header_bytes=770, http_response_header_bytes=330,
)
print("\n=== overhead comparison (same payloads) ===")
print(f"  websocket framing: {ws.framing_bytes} bytes over {ws.messages} messages "
      f"(max {max(e.framing_bytes for e in ws_entries)} per message)")
print(f"  http headers:      {http.header_bytes} bytes")
reduction = 1 - ws.recurrent_overhead_bytes / http.recurrent_overhead_bytes
print(f"  recurring overhead reduction: {reduction:.2%}")
server.stop()

print("\n=== live detection while ingesting ===")
train = {
    "human": [gen_humanlike(SimConfig(seed=s, duration_s=20.0)) for s in range(4)],
    "scanner": [gen_scanner(SimConfig(seed=s, duration_s=20.0)) for s in range(4)],
}
bank = fit_bank(
    train,
    TrainConfig(num_states=4, max_iters=20, restarts=2, seed=0),
    PreprocessConfig(bins_vx=2, bins_vy=2, bins_dt=8),
)
server = IngestServer(bank=bank, gamma=5.0).start()
intruder = gen_scanner(SimConfig(seed=77, duration_s=10.0, session_id="intruder"))
replay(intruder, f"127.0.0.1:{server.port}", mode="websocket")
with urllib.request.urlopen(f"http://127.0.0.1:{server.port}/sessions/intruder/verdict") as resp:
    verdict = json.loads(resp.read())
print("verdict endpoint says:", verdict)
server.stop()
