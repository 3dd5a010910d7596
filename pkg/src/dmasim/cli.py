"""Command-line client: batch simulations, sweeps, legalization, estimates.

Thin wrapper over the same functions the HTTP service exposes.  Exit
codes: 0 success, 1 configuration error, 2 simulation contract violation
or deadlock.
"""

from __future__ import annotations

import argparse
import json
import sys

from pydantic import ValidationError

from .config import load_config
from .core import InvalidConfigError
from .costmodel import TimingModel, estimate_area, estimate_timing, latency_model
from .engine import ConfigError
from .legalizer import legalize_side
from .memsys import UnknownPreset
from .metrics import emit_csv, emit_trace_csv, report_row
from .protocol import ProtocolId
from .runner import run_simulation, run_sweep
from .service import PRESET_NAMES, load_preset

_CONFIG_ERRORS = (ConfigError, InvalidConfigError, UnknownPreset,
                  ValidationError, ValueError, KeyError, OSError,
                  json.JSONDecodeError)


def _write(text: str, out: str | None):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _int(value: str) -> int:
    return int(value, 0)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dmasim")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one configuration")
    sim.add_argument("--config", required=True)
    sim.add_argument("--out")
    sim.add_argument("--trace", help="write a cycle trace CSV to this path")
    sim.add_argument("--seed", type=_int)
    sim.add_argument("--format", choices=("csv", "json"), default="json")

    sw = sub.add_parser("sweep", help="run one configuration over a parameter")
    sw.add_argument("--config", required=True)
    sw.add_argument("--param", required=True)
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.add_argument("--out")
    sw.add_argument("--seed", type=_int)
    sw.add_argument("--workers", type=int)
    sw.add_argument("--format", choices=("csv", "json"), default="csv")

    leg = sub.add_parser("legalize", help="print the burst table of a transfer")
    leg.add_argument("--src", type=_int, required=True)
    leg.add_argument("--dst", type=_int, required=True)
    leg.add_argument("--len", type=_int, required=True, dest="length")
    leg.add_argument("--proto", default="axi", help="protocol for both sides")
    leg.add_argument("--src-proto")
    leg.add_argument("--dst-proto")
    leg.add_argument("--dw", type=int, default=32)
    leg.add_argument("--cap", type=_int, help="user burst cap in bytes")
    leg.add_argument("--out")

    est = sub.add_parser("estimate", help="area/timing/latency cost models")
    est.add_argument("--config", required=True)
    est.add_argument("kind", choices=("area", "timing", "latency"))
    est.add_argument("--out")
    est.add_argument("--format", choices=("csv", "json"), default="json")

    pre = sub.add_parser("presets", help="list or print shipped presets")
    pre.add_argument("--name")
    pre.add_argument("--out")

    srv = sub.add_parser("serve", help="start the HTTP service")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8000)
    return p


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    result = run_simulation(cfg, seed=args.seed, trace=args.trace is not None)
    report = result.report
    if args.format == "csv":
        _write(emit_csv([report]), args.out)
    else:
        _write(json.dumps(report.to_dict(), indent=2) + "\n", args.out)
    if args.trace:
        with open(args.trace, "w") as fh:
            fh.write(emit_trace_csv(result.trace))
    if report.contract_violations or report.deadlock:
        for v in report.contract_violations:
            print(f"contract violation: {v}", file=sys.stderr)
        if report.deadlock:
            print(f"deadlock: {report.deadlock}", file=sys.stderr)
        return 2
    return 0


def _cmd_sweep(args) -> int:
    with open(args.config) as fh:
        data = json.load(fh)
    values = []
    for chunk in args.values.split(","):
        chunk = chunk.strip()
        values.append(int(chunk, 0))
    reports = run_sweep(data, args.param, values, seed=args.seed,
                        workers=args.workers)
    if args.format == "json":
        _write(json.dumps([report_row(r) for r in reports], indent=2) + "\n",
               args.out)
    else:
        _write(emit_csv(reports), args.out)
    bad = any(r.contract_violations or r.deadlock for r in reports)
    return 2 if bad else 0


def _cmd_legalize(args) -> int:
    src_proto = ProtocolId(args.src_proto or args.proto)
    dst_proto = ProtocolId(args.dst_proto or args.proto)
    rows = ["side,seq,addr,len"]
    for b in legalize_side(args.src, args.length, src_proto, args.dw,
                           args.cap, "read"):
        rows.append(f"read,{b.seq},{b.addr:#x},{b.length}")
    for b in legalize_side(args.dst, args.length, dst_proto, args.dw,
                           args.cap, "write"):
        rows.append(f"write,{b.seq},{b.addr:#x},{b.length}")
    _write("\n".join(rows) + "\n", args.out)
    return 0


def _cmd_estimate(args) -> int:
    cfg_model = load_config(args.config)
    cfg = cfg_model.engine.to_config()
    if args.kind == "area":
        breakdown = estimate_area(cfg)
        if args.format == "csv":
            rows = ["unit,gate_equivalents"]
            rows += [f"{u},{v:.1f}" for u, v in breakdown.units.items()]
            rows.append(f"total,{breakdown.total:.1f}")
            _write("\n".join(rows) + "\n", args.out)
        else:
            _write(json.dumps(breakdown.to_dict(), indent=2) + "\n", args.out)
    elif args.kind == "timing":
        path, fmax = estimate_timing(cfg, TimingModel.synthetic())
        payload = {"longest_path_ns": path, "f_max_ghz": fmax,
                   "model": "synthetic"}
        _write(json.dumps(payload, indent=2) + "\n", args.out)
    else:
        cycles = latency_model(cfg, [m.latency for m in cfg_model.midends])
        _write(json.dumps({"cycles": cycles}, indent=2) + "\n", args.out)
    return 0


def _cmd_presets(args) -> int:
    if args.name:
        _write(json.dumps(load_preset(args.name), indent=2) + "\n", args.out)
    else:
        _write("\n".join(PRESET_NAMES) + "\n", args.out)
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import app
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "simulate": _cmd_simulate,
        "sweep": _cmd_sweep,
        "legalize": _cmd_legalize,
        "estimate": _cmd_estimate,
        "presets": _cmd_presets,
        "serve": _cmd_serve,
    }
    try:
        return handlers[args.command](args)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
