"""Command-line entry point ``gps``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from .encodings import compute_encodings, save_encodings
from .experiments import (AXES, ablation_grid, doubling_ratios, expressivity_suite,
                          format_table, load_config, run_config, timing_benchmark)
from .graph import SCHEMAS, GraphError, load_graphs, summarize
from .model import ConfigError


def _sizes(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.out_dir:
        cfg = replace(cfg, out_dir=args.out_dir)
    rec = run_config(cfg, log=_log)
    print(json.dumps({k: v for k, v in rec.items() if k != "config"}, indent=2))
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    if args.out_dir:
        cfg = replace(cfg, out_dir=args.out_dir)
    rows = ablation_grid(cfg, args.axis, seeds=args.seeds, workers=args.workers,
                        log=_log)
    print(format_table(rows))
    return 0


def cmd_expressivity(args) -> int:
    rep = expressivity_suite()
    print(rep.format())
    return 0 if rep.passed else 1


def cmd_bench(args) -> int:
    rows = timing_benchmark(args.sizes, d=args.dim, heads=args.heads, m_feat=args.m_feat,
                            repeats=args.repeats)
    print(format_table(rows))
    if len(rows) > 1:
        full = ", ".join(f"{r:.2f}" for r in doubling_ratios(rows, "t_full"))
        perf = ", ".join(f"{r:.2f}" for r in doubling_ratios(rows, "t_perf"))
        print(f"step ratios  full: {full}  performer: {perf}")
    return 0


def cmd_graphs_validate(args) -> int:
    graphs = load_graphs(args.path, args.schema)
    for k, v in summarize(graphs).items():
        print(f"{k}: {v}")
    return 0


def cmd_encode(args) -> int:
    if not (args.lap_k or args.rwse_m):
        raise ConfigError("lap-k / rwse-m: give at least one of them")
    graphs = load_graphs(args.graphs, args.schema)
    encs = [compute_encodings(g, lap_k=args.lap_k, rwse_m=args.rwse_m) for g in graphs]
    save_encodings(args.out, encs)
    print(f"wrote encodings for {len(encs)} graphs to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gps", description="GPS graph transformer experiments")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one config")
    t.add_argument("--config", required=True)
    t.add_argument("--out-dir")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablate", help="sweep one axis of a config")
    a.add_argument("--config", required=True)
    a.add_argument("--axis", required=True, choices=tuple(AXES))
    a.add_argument("--seeds", type=int, default=1)
    a.add_argument("--workers", type=int, default=1, help="run grid cells in parallel")
    a.add_argument("--out-dir")
    a.set_defaults(func=cmd_ablate)

    e = sub.add_parser("expressivity", help="CSL and decalin separation checks")
    e.set_defaults(func=cmd_expressivity)

    b = sub.add_parser("bench-attn", help="full vs Performer attention timing")
    b.add_argument("--sizes", type=_sizes, default=[256, 512, 1024, 2048, 4096])
    b.add_argument("--dim", type=int, default=64)
    b.add_argument("--heads", type=int, default=4)
    b.add_argument("--m-feat", type=int, default=64)
    b.add_argument("--repeats", type=int, default=5)
    b.set_defaults(func=cmd_bench)

    g = sub.add_parser("graphs", help="graph file utilities")
    gsub = g.add_subparsers(dest="graphs_command", required=True)
    v = gsub.add_parser("validate", help="check a JSON-lines graph file")
    v.add_argument("path")
    v.add_argument("--schema", default="generic", choices=tuple(SCHEMAS))
    v.set_defaults(func=cmd_graphs_validate)

    c = sub.add_parser("encode", help="precompute LapPE / RWSE for a graph file")
    c.add_argument("graphs")
    c.add_argument("--lap-k", type=int, default=0)
    c.add_argument("--rwse-m", type=int, default=0)
    c.add_argument("--schema", default="generic", choices=tuple(SCHEMAS))
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_encode)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, GraphError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
