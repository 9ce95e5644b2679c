"""Command line entry point: batch runs, sweeps, the control service and catalog generation."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .catalog import generate_synthetic_catalog, save_catalog
from .config import OUTPUT_DIR_ENV, PRESETS, load_config
from .errors import CdnSliceError
from .sweep import AXES, run_sweep, solver_timing, write_sweep_tables

log = logging.getLogger("cdnslice")


def _output_dir(cfg, override: str | None) -> Path:
    return Path(override) if override else cfg.resolved_output_dir()


def cmd_run(args) -> int:
    from .engine import run_scenario
    from .report import emit_outputs

    cfg = load_config(args.config)
    report = run_scenario(cfg)
    out = _output_dir(cfg, args.out)
    paths = emit_outputs(report, out)
    for p in paths:
        print(p)
    for v in report.violations:
        print(f"invariant violated: {v}", file=sys.stderr)
    if report.failure:
        print(f"run failed: {report.failure}", file=sys.stderr)
    return 0 if report.ok else 1


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    out = _output_dir(cfg, args.out)
    t0 = time.perf_counter()
    result = run_sweep(cfg, args.axis, replications=args.reps)
    for p in write_sweep_tables(result, out, with_timing=args.timing):
        print(p)
    if args.timing:
        times = solver_timing(cfg)
        path = out / "solver_timing.csv"
        with path.open("w") as fh:
            fh.write("n,wall_s\n")
            for n, wall in times.items():
                fh.write(f"{n},{wall:.6f}\n")
        print(path)
    log.info("sweep %s finished in %.1f s", args.axis, time.perf_counter() - t0)
    return 0


def cmd_serve(args) -> int:
    from .api import SliceStore, serve_control_api

    cfg = load_config(args.config)
    store = SliceStore(cfg.catalog, cfg.timing, cfg.solver)
    server = serve_control_api(store, args.host, args.port)
    print(f"serving on {server.url}", flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return 0


def cmd_gen_catalog(args) -> int:
    catalog = generate_synthetic_catalog(args.seed, n_clouds=args.clouds, total_flavors=args.flavors,
                                         capacity_vcpus=args.capacity)
    if args.out == "-":
        import json
        json.dump(catalog.to_dict(), sys.stdout, indent=1)
        sys.stdout.write("\n")
    else:
        save_catalog(catalog, args.out)
        print(args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdnslice", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    cfg_help = f"scenario JSON file or preset name ({', '.join(PRESETS)})"

    p = sub.add_parser("run", help="run one scenario and write timeseries, decision log and summary")
    p.add_argument("config", help=cfg_help)
    p.add_argument("--out", help=f"output directory (default: ${OUTPUT_DIR_ENV} or the config's output_dir)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="replicated cost sweep over slice size and one constraint axis")
    p.add_argument("config", help=cfg_help)
    p.add_argument("--axis", choices=AXES, default="q_min")
    p.add_argument("--reps", type=int, default=None, help="replications (default from config)")
    p.add_argument("--out")
    p.add_argument("--timing", action="store_true", help="also record solver wall times")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("serve", help="start the control API")
    p.add_argument("config", help=cfg_help)
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("gen-catalog", help="write a synthetic multi-cloud flavor catalog")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--clouds", type=int, default=45)
    p.add_argument("--flavors", type=int, default=1417)
    p.add_argument("--capacity", type=int, default=20, help="vCPUs per cloud")
    p.add_argument("--out", default="-", help="output file, '-' for stdout")
    p.set_defaults(func=cmd_gen_catalog)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CdnSliceError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
