"""Command-line entrypoint wiring the pipeline stages together.

    simulate        generate a labeled synthetic corpus + label sidecar
    preprocess      fit a quantizer on a trace file, emit pipeline JSON
    train-bank      fit per-class HMMs from a labeled corpus
    cluster         unsupervised attribution of a trace file
    classify        sequential classification of traces against a bank
    evaluate        accuracy-vs-time table over a parameter grid
    serve           run the ingestion service (blocks until interrupted)
    overhead-bench  replay a trace over WebSocket and compare against
                    fixed-size HTTP header blocks, byte-exactly
    lemma-check     error-exponent slope experiment with pass/fail verdict

Seeds resolve as: explicit flag > config file > WEBGUARD_SEED env > 0.
Outputs are machine-readable (JSON/CSV); a human summary goes to stdout.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cluster import ClusterConfig, attribute, clustering_metrics
from .detect import (
    DEFAULT_GAMMA_GRID,
    ClassifierBank,
    classify_margin,
    classify_repeat,
    evaluate_detector,
    evaluation_to_csv,
    fit_bank,
)
from .divergence import DivergenceConfig
from .errors import WebGuardError
from .hmm import TrainConfig
from .preprocess import (
    PreprocessConfig,
    compute_kinematics,
    fit_quantizer,
    preprocess,
    save_pipeline,
)
from .simulate import GENERATORS, SimConfig, generate_corpus, replay
from .theory import FiniteDist, empirical_exponent_ratio
from .trace import apply_labels, parse_trace_file, read_labels, serialize_trace_file, write_labels

EXIT_BAD_FLAGS = 2
EXIT_IO = 3
EXIT_DOMAIN = 4


def _resolve_seed(args, file_config: dict) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    if "seed" in file_config:
        return int(file_config["seed"])
    return int(os.environ.get("WEBGUARD_SEED", "0"))


def _load_file_config(args) -> dict:
    path = getattr(args, "config", None)
    if not path:
        return {}
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _merged_config(args, file_config: dict, fields: dict) -> dict:
    """flag > config file > default, per field."""
    out = {}
    for name, default in fields.items():
        flag = getattr(args, name.replace("-", "_"), None)
        if flag is not None:
            out[name] = flag
        elif name in file_config:
            out[name] = file_config[name]
        else:
            out[name] = default
    return out


def _emit(args, payload: dict, default_name: str) -> None:
    out = getattr(args, "out", None)
    if out:
        out_path = Path(out)
        if out_path.suffix == "" or out_path.is_dir():
            out_path.mkdir(parents=True, exist_ok=True)
            out_path = out_path / default_name
        out_path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        print(f"wrote {out_path}")


def _read_corpus(path: str):
    p = Path(path)
    traces_file = p / "traces.jsonl" if p.is_dir() else p
    traces = parse_trace_file(traces_file)
    labels_file = (p if p.is_dir() else p.parent) / "labels.csv"
    if labels_file.exists():
        traces = apply_labels(traces, read_labels(labels_file))
    return traces


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    fc = _load_file_config(args)
    seed = _resolve_seed(args, fc)
    cfg = _merged_config(args, fc, {"duration": 10.0, "rate": 80.0, "per_class": 10})
    classes = list(GENERATORS) if args.classes == "all" else args.classes.split(",")
    for c in classes:
        if c not in GENERATORS:
            raise WebGuardError(f"unknown agent class {c!r}; choose from {sorted(GENERATORS)}")
    traces = generate_corpus(
        classes, per_class=int(cfg["per_class"]), seed=seed,
        duration_s=float(cfg["duration"]), rate=float(cfg["rate"]),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_bytes = serialize_trace_file(traces, out / "traces.jsonl")
    write_labels(traces, out / "labels.csv")
    print(f"{len(traces)} traces ({sum(len(t) for t in traces)} events, {n_bytes} bytes) -> {out}")
    return 0


def cmd_preprocess(args) -> int:
    fc = _load_file_config(args)
    cfg = _merged_config(
        args, fc, {"bins_vx": 3, "bins_vy": 3, "bins_dt": 15, "max_elements": 10_000}
    )
    pcfg = PreprocessConfig(
        bins_vx=int(cfg["bins_vx"]), bins_vy=int(cfg["bins_vy"]),
        bins_dt=int(cfg["bins_dt"]), max_elements=int(cfg["max_elements"]),
    )
    traces = _read_corpus(args.inp)
    quantizer = fit_quantizer([compute_kinematics(t) for t in traces], pcfg)
    doc = save_pipeline(quantizer, pcfg)
    out = Path(args.out)
    if out.is_dir():
        out = out / "pipeline.json"
    out.write_text(doc + "\n", encoding="utf-8")
    lengths = [len(preprocess(t, quantizer, pcfg)) for t in traces]
    print(f"fitted on {quantizer.fitted_on} elements; symbol lengths {min(lengths)}..{max(lengths)}")
    print(f"wrote {out}")
    return 0


def cmd_train_bank(args) -> int:
    fc = _load_file_config(args)
    seed = _resolve_seed(args, fc)
    cfg = _merged_config(
        args, fc,
        {"s": 4, "bins_vx": 3, "bins_vy": 3, "bins_dt": 15, "max_elements": 10_000,
         "max_iters": 100, "tol": 1e-4, "restarts": 3},
    )
    traces = _read_corpus(args.inp)
    by_class: dict[str, list] = {}
    for t in traces:
        if t.label and t.label != "unknown":
            by_class.setdefault(t.label, []).append(t)
    bank = fit_bank(
        by_class,
        train_config=TrainConfig(
            num_states=int(cfg["s"]), max_iters=int(cfg["max_iters"]),
            tol=float(cfg["tol"]), restarts=int(cfg["restarts"]), seed=seed,
        ),
        preprocess_config=PreprocessConfig(
            bins_vx=int(cfg["bins_vx"]), bins_vy=int(cfg["bins_vy"]),
            bins_dt=int(cfg["bins_dt"]), max_elements=int(cfg["max_elements"]),
        ),
    )
    bank.save(args.out)
    print(f"bank with classes {list(bank.labels)} -> {args.out}")
    return 0


def cmd_cluster(args) -> int:
    fc = _load_file_config(args)
    seed = _resolve_seed(args, fc)
    cfg = _merged_config(
        args, fc,
        {"k": 5, "s": 4, "t": 10, "sigma": 9.0, "method": "spectral",
         "bins_vx": 3, "bins_vy": 3, "bins_dt": 15, "max_elements": 10_000,
         "mc_samples": 10_000, "max_iters": 30, "restarts": 3},
    )
    traces = _read_corpus(args.inp)
    t0 = time.time()
    result, artifacts = attribute(
        traces,
        preprocess_config=PreprocessConfig(
            bins_vx=int(cfg["bins_vx"]), bins_vy=int(cfg["bins_vy"]),
            bins_dt=int(cfg["bins_dt"]), max_elements=int(cfg["max_elements"]),
        ),
        train_config=TrainConfig(
            num_states=int(cfg["s"]), max_iters=int(cfg["max_iters"]),
            tol=1e-3, restarts=int(cfg["restarts"]), seed=seed,
        ),
        divergence_config=DivergenceConfig(
            t=int(cfg["t"]), method="auto", mc_samples=int(cfg["mc_samples"]), seed=seed,
        ),
        cluster_config=ClusterConfig(
            k=int(cfg["k"]), method=str(cfg["method"]), sigma=float(cfg["sigma"]), seed=seed,
        ),
        return_artifacts=True,
    )
    out = Path(args.out) if args.out else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "assignments.csv", "w", encoding="utf-8") as f:
        f.write("sid,cluster\n")
        for t, c in zip(traces, result.labels):
            f.write(f"{t.session_id},{c}\n")
    (out / "divmat.json").write_text(json.dumps(artifacts.div.to_json()) + "\n")
    payload = {"clusters": int(cfg["k"]), "method": cfg["method"], "n": len(traces)}
    truth = [t.label for t in traces]
    if all(lab is not None and lab != "unknown" for lab in truth):
        metrics = clustering_metrics(result.labels, truth)
        payload["metrics"] = metrics.to_json()
        print(f"ARI={metrics.ari:.4f} AMI={metrics.ami:.4f} V={metrics.v_measure:.4f}")
    (out / "metrics.json").write_text(json.dumps(payload, indent=2) + "\n")
    print(f"clustered {len(traces)} traces in {time.time()-t0:.1f}s -> {out}")
    return 0


def cmd_classify(args) -> int:
    bank = ClassifierBank.load(args.bank)
    traces = _read_corpus(args.inp)
    for t in traces:
        pt = preprocess(t, bank.quantizer, bank.preprocess_config)
        times = pt.symbol_times_ms()
        if args.rule == "margin":
            d = classify_margin(pt.symbols, bank, gamma=args.gamma, times_ms=times)
        else:
            d = classify_repeat(pt.symbols, bank, q=int(args.q), times_ms=times)
        print(json.dumps({"sid": t.session_id, **d.to_json()}, separators=(",", ":")))
    return 0


def cmd_evaluate(args) -> int:
    bank = ClassifierBank.load(args.bank)
    traces = _read_corpus(args.inp)
    grid = [float(x) for x in args.grid.split(",")] if args.grid else list(DEFAULT_GAMMA_GRID)
    rows = evaluate_detector(bank, traces, rule=args.rule, grid=grid)
    out = args.out or "evaluation.csv"
    evaluation_to_csv(rows, out)
    for r in rows:
        print(
            f"{r.rule} {r.param:g}: accuracy={r.accuracy:.3f} "
            f"median_stop={r.median_stop_symbols:.0f} symbols / {r.median_stop_ms:.0f} ms"
        )
    print(f"wrote {out}")
    return 0


def cmd_serve(args) -> int:
    from .ingest import IngestServer, export_sessions

    bank = ClassifierBank.load(args.bank) if args.bank else None
    host, _, port = args.bind.partition(":")
    server = IngestServer(host=host or "127.0.0.1", port=int(port or 0), bank=bank, gamma=args.gamma)
    server.start()
    print(f"listening on {server.host}:{server.port} (ws: /ws, http: POST /collect)")
    if bank:
        print(f"live detection on; verdicts at /sessions/<sid>/verdict (gamma={args.gamma})")
    try:
        while True:
            time.sleep(0.5)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
        if args.store:
            store_dir = Path(args.store)
            store_dir.mkdir(parents=True, exist_ok=True)
            out = store_dir / "sessions.jsonl"
            n = export_sessions(server.store, out)
            print(f"exported {n} bytes -> {out}")
    return 0


def cmd_overhead_bench(args) -> int:
    from .ingest import IngestServer, measure_overhead
    from .simulate import gen_humanlike

    fc = _load_file_config(args)
    seed = _resolve_seed(args, fc)
    server = IngestServer().start()
    try:
        trace = gen_humanlike(SimConfig(seed=seed, duration_s=args.duration, rate=args.events / args.duration))
        report = replay(trace, f"127.0.0.1:{server.port}", mode="websocket")
        ws_entries = [e for e in server.transcript if e.mode == "websocket"]
        ws = measure_overhead(ws_entries, "websocket")
        http = measure_overhead(
            [e.payload_bytes for e in ws_entries], "http",
            http_request_header_bytes=args.http_request_bytes,
            http_response_header_bytes=args.http_response_bytes,
        )
        reduction = 1.0 - ws.recurrent_overhead_bytes / http.recurrent_overhead_bytes
        payload = {
            "events": len(trace),
            "replay": report.to_json(),
            "websocket": ws.to_json(),
            "http_shaped": http.to_json(),
            "max_framing_per_message": max(e.framing_bytes for e in ws_entries),
            "recurrent_reduction": reduction,
        }
        print(json.dumps(payload, indent=2))
        _emit(args, payload, "overhead.json")
    finally:
        server.stop()
    return 0


def cmd_lemma_check(args) -> int:
    fc = _load_file_config(args)
    seed = _resolve_seed(args, fc)
    import math

    c, r, m = 0.05, 0.3, 1e-5
    big = (1.0 - r - m) / 2.0
    p = np.array([big, big, m, r])
    q = np.array([big * math.exp(-c), big * math.exp(-c), 0.0, r * math.exp(-c)])
    q[2] = 1.0 - q.sum()
    exp = empirical_exponent_ratio(
        FiniteDist(p / p.sum()), FiniteDist(q / q.sum()), [0, 1, 2],
        n_grid=(1000, 1500, 2000), trials=args.trials, seed=seed,
    )
    err_full = abs(exp.exponent_full - exp.analytic_full) / exp.analytic_full
    err_sub = abs(exp.exponent_sampled - exp.analytic_sampled) / exp.analytic_sampled
    ok = err_full <= 0.15 and err_sub <= 0.15
    out = args.out or "lemma_check.csv"
    exp.to_csv(out)
    print(f"full exponent: empirical {exp.exponent_full:.6f} analytic {exp.analytic_full:.6f} (err {err_full:.1%})")
    print(f"sampled exponent: empirical {exp.exponent_sampled:.6f} analytic {exp.analytic_sampled:.6f} (err {err_sub:.1%})")
    print(f"slope ratio: empirical {exp.ratio:.4f} analytic {exp.analytic_ratio:.4f}")
    print(f"wrote {out}")
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def _dump_config(args) -> int:
    fc = _load_file_config(args)
    merged = dict(fc)
    for k, v in vars(args).items():
        if k in ("func", "config", "dump_config") or v is None:
            continue
        merged[k] = v
    merged.setdefault("seed", _resolve_seed(args, fc))
    print(json.dumps(merged, indent=2, default=str))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="webguard",
        description="Behavioral forensics engine for browser-event traces",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="global seed (default: WEBGUARD_SEED or 0)")
        p.add_argument("--config", help="optional JSON config file (flag > file > default)")
        p.add_argument("--dump-config", action="store_true", help="print the merged config and exit")

    p = sub.add_parser("simulate", help="generate a labeled synthetic corpus")
    p.add_argument("--classes", default="all", help="comma list or 'all'")
    p.add_argument("--per-class", type=int, dest="per_class", default=None)
    p.add_argument("--duration", type=float, default=None, help="seconds per trace")
    p.add_argument("--rate", type=float, default=None, help="base events/second")
    p.add_argument("--out", required=True, help="output directory")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("preprocess", help="fit a quantizer and emit pipeline JSON")
    p.add_argument("--in", dest="inp", required=True, help="trace file or corpus dir")
    p.add_argument("--bins-vx", type=int, dest="bins_vx", default=None)
    p.add_argument("--bins-vy", type=int, dest="bins_vy", default=None)
    p.add_argument("--bins-dt", type=int, dest="bins_dt", default=None)
    p.add_argument("--max-elements", type=int, dest="max_elements", default=None)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train-bank", help="fit per-class HMMs from a labeled corpus")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--s", type=int, default=None, help="hidden states per model")
    p.add_argument("--bins-vx", type=int, dest="bins_vx", default=None)
    p.add_argument("--bins-vy", type=int, dest="bins_vy", default=None)
    p.add_argument("--bins-dt", type=int, dest="bins_dt", default=None)
    p.add_argument("--max-iters", type=int, dest="max_iters", default=None)
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--out", required=True, help="bank JSON path")
    common(p)
    p.set_defaults(func=cmd_train_bank)

    p = sub.add_parser("cluster", help="unsupervised attribution of a corpus")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--s", type=int, default=None)
    p.add_argument("--t", type=int, default=None, help="divergence horizon")
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--method", choices=("spectral", "agglomerative"), default=None)
    p.add_argument("--mc-samples", type=int, dest="mc_samples", default=None)
    p.add_argument("--out", default=None, help="output directory")
    common(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("classify", help="sequential classification against a bank")
    p.add_argument("--bank", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--rule", choices=("margin", "repeat"), default="margin")
    p.add_argument("--gamma", type=float, default=5.0)
    p.add_argument("--q", type=int, default=5)
    common(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="accuracy-vs-time table over a grid")
    p.add_argument("--bank", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--rule", choices=("margin", "repeat"), default="margin")
    p.add_argument("--grid", help="comma-separated parameter values")
    p.add_argument("--out", default=None)
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve", help="run the ingestion service")
    p.add_argument("--bind", default="127.0.0.1:8787")
    p.add_argument("--bank", default=None, help="enable live detection with this bank")
    p.add_argument("--gamma", type=float, default=5.0)
    p.add_argument("--store", default=None, help="directory to export sessions on shutdown")
    common(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("overhead-bench", help="byte-exact transport overhead comparison")
    p.add_argument("--events", type=int, default=280)
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--http-request-bytes", type=int, dest="http_request_bytes", default=770)
    p.add_argument("--http-response-bytes", type=int, dest="http_response_bytes", default=330)
    p.add_argument("--out", default=None)
    common(p)
    p.set_defaults(func=cmd_overhead_bench)

    p = sub.add_parser("lemma-check", help="error-exponent slope verification")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--out", default=None)
    common(p)
    p.set_defaults(func=cmd_lemma_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "dump_config", False):
            return _dump_config(args)
        return args.func(args)
    except (OSError, IOError) as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO
    except (WebGuardError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
