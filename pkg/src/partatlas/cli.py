"""Command line interface: ``partatlas unwrap``, ``partatlas bench``, ``partatlas suite``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import multiprocessing as mp
import os
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from .mesh import MeshError, load_obj, write_obj
from .pack import DEFAULT_PADDING
from .pipeline import strip_timing, unwrap  # noqa: F401  (re-exported)
from .search import SearchConfig, SearchInvariantError
from .tree import FeatureFileError

logger = logging.getLogger("partatlas")

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_TAU = 2
EXIT_INVARIANT = 3

BENCH_SCHEMA = "partatlas.bench/1"
BENCH_COLUMNS = ["name", "status", "faces", "charts", "seam_length", "angular", "area_distortion",
                 "overall_area_distortion", "efficiency", "chart_distortion_p95", "time_s"]


class _Parser(argparse.ArgumentParser):
    # usage errors share the exit code of unreadable input
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_PARSE, f"{self.prog}: error: {message}\n")


def _default_threads() -> int:
    env = os.environ.get("PARTATLAS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            logger.warning("ignoring PARTATLAS_THREADS=%r", env)
    return 1


def _add_run_flags(p):
    p.add_argument("--tau", type=float, default=1.25, help="distortion threshold (default 1.25)")
    p.add_argument("--t", type=int, default=10, help="normal-clustering ladder size")
    p.add_argument("--features", default="normals",
                   help="'normals' or a per-face feature file")
    p.add_argument("--solver", choices=["abf", "lscm"], default="abf")
    p.add_argument("--atlases", type=int, default=1)
    p.add_argument("--padding", type=float, default=DEFAULT_PADDING,
                   help="gap between charts in UV units (default 2/1024)")
    p.add_argument("--resolution", type=int, default=1024, help="atlas image size")
    p.add_argument("--timeout", type=float, default=300.0, help="per-mesh limit in seconds (bench)")
    p.add_argument("--threads", type=int, default=None,
                   help="search threads (default $PARTATLAS_THREADS or 1)")
    p.add_argument("--no-merge", action="store_true")
    p.add_argument("--no-recursion", action="store_true")
    p.add_argument("--no-surrogate", action="store_true")
    p.add_argument("--render", action="store_true", help="write atlas PNGs")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="partatlas", description="Part-aligned UV unwrapping.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    u = sub.add_parser("unwrap", help="unwrap one OBJ")
    u.add_argument("input")
    u.add_argument("-o", "--output", help="output OBJ (default <input>_uv.obj)")
    u.add_argument("--report", help="metrics JSON path (default <output>.json)")
    _add_run_flags(u)

    b = sub.add_parser("bench", help="unwrap every OBJ in a directory")
    b.add_argument("directory")
    b.add_argument("--out", default="bench", help="output prefix for .csv and .json")
    b.add_argument("--jobs", type=int, default=1, help="meshes processed concurrently")
    _add_run_flags(b)

    s = sub.add_parser("suite", help="write the generated test shapes as OBJ files")
    s.add_argument("directory")
    return parser


def config_from_args(args) -> SearchConfig:
    return SearchConfig(
        tau=args.tau, t=args.t, solver=args.solver,
        use_merge=not args.no_merge,
        use_recursion_refinement=not args.no_recursion,
        use_surrogate=not args.no_surrogate,
        thread_budget=args.threads or _default_threads(),
    )


def _features_arg(value):
    return "normals" if value == "normals" else Path(value)


# -- unwrap ------------------------------------------------------------------


def cmd_unwrap(args) -> int:
    t0 = time.perf_counter()
    try:
        mesh, load_report = load_obj(args.input, return_report=True)
        cfg = config_from_args(args)
    except (OSError, MeshError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    load_s = time.perf_counter() - t0
    try:
        res = unwrap(mesh, cfg, features=_features_arg(args.features),
                     n_atlases=args.atlases, padding=args.padding)
    except (FeatureFileError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except SearchInvariantError as exc:
        _dump_diagnostic(exc, args)
        return EXIT_INVARIANT

    out = Path(args.output) if args.output else Path(args.input).with_name(
        Path(args.input).stem + "_uv.obj")
    t1 = time.perf_counter()
    written = res.write(out)
    report = res.report(str(args.input))
    report["load"] = load_report.as_dict()
    if args.render:
        from .pack import render_atlas
        for k, img in enumerate(render_atlas(res.packing, res.search.part_of, args.resolution)):
            png = out.with_name(f"{out.stem}_atlas{k}.png")
            img.save(png)
            written.append(png)
    res.timings["load"] = load_s
    res.timings["emit"] = time.perf_counter() - t1
    report["timings"] = dict(res.timings)
    report["time_s"] = float(sum(res.timings.values()))
    report_path = Path(args.report) if args.report else out.with_suffix(".json")
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")

    n_obj = _count_obj_charts(out)
    if n_obj != res.n_charts:
        _dump_diagnostic(SearchInvariantError(f"OBJ has {n_obj} charts, search {res.n_charts}"), args)
        return EXIT_INVARIANT
    print(f"{args.input}: {res.n_charts} charts, distortion {report['area_distortion']:.4f}, "
          f"efficiency {report['efficiency']:.3f}, {report['time_s']:.2f}s -> {out}")
    if res.tau_violations:
        print(f"error: {len(res.tau_violations)} charts exceed tau={cfg.tau}", file=sys.stderr)
        return EXIT_TAU
    return EXIT_OK


def _count_obj_charts(path) -> int:
    names = set()
    with open(path) as fh:
        for line in fh:
            if line.startswith("usemtl "):
                names.add(line.split(None, 1)[1].strip())
    return len(names)


def _dump_diagnostic(exc, args):
    diag = {"error": type(exc).__name__, "message": str(exc), "args": vars(args),
            "traceback": traceback.format_exc()}
    print(json.dumps(diag, indent=2, default=str), file=sys.stderr)


# -- bench -------------------------------------------------------------------


def _bench_one(path: str, cfg: SearchConfig, features, n_atlases: int, padding: float, conn):
    try:
        mesh = load_obj(path)
        res = unwrap(mesh, cfg, features=features, n_atlases=n_atlases, padding=padding)
        rep = res.report(Path(path).name)
        status = "ok" if not res.tau_violations else "tau-violation"
        conn.send((status, rep))
    except Exception as exc:  # reported as a failed row
        conn.send((f"error: {type(exc).__name__}: {exc}", None))
    finally:
        conn.close()


def _row(name, status, rep):
    row = {"name": name, "status": status}
    if rep is None:
        return row
    d = [c["distortion"] for c in rep["per_chart"]]
    row.update({
        "faces": rep["faces"], "charts": rep["charts"], "seam_length": rep["seam_length"],
        "angular": rep["angular"], "area_distortion": rep["area_distortion"],
        "overall_area_distortion": rep["overall_area_distortion"],
        "efficiency": rep["efficiency"],
        "chart_distortion_p95": float(np.percentile(d, 95)),
        "time_s": rep["time_s"],
    })
    return row


def aggregate(rows) -> dict:
    """Dataset summary over successful rows; the success rate counts every row."""
    ok = [r for r in rows if r["status"] == "ok"]
    agg = {"meshes": len(rows), "succeeded": len(ok),
           "success_rate": len(ok) / len(rows) if rows else 0.0}
    if not ok:
        return agg

    def col(k):
        return np.array([r[k] for r in ok], dtype=np.float64)

    agg.update({
        "mean_charts": float(col("charts").mean()),
        "median_charts": float(np.median(col("charts"))),
        "median_seam_length": float(np.median(col("seam_length"))),
        "mean_angular": float(col("angular").mean()),
        "mean_area_distortion": float(col("area_distortion").mean()),
        "mean_overall_area_distortion": float(col("overall_area_distortion").mean()),
        "mean_efficiency": float(col("efficiency").mean()),
        "area_distortion_p95_shape": float(np.percentile(col("area_distortion"), 95)),
        "mean_chart_distortion_p95": float(col("chart_distortion_p95").mean()),
        "time_s": float(col("time_s").mean()),
    })
    return agg


def run_bench(paths, cfg, features="normals", n_atlases=1, padding=DEFAULT_PADDING,
              timeout=300.0, jobs=1):
    """Unwrap each path in its own process; returns (rows, reports)."""
    pending = list(enumerate(paths))
    running = {}
    results = {}
    while pending or running:
        while pending and len(running) < max(jobs, 1):
            i, p = pending.pop(0)
            recv, send = mp.Pipe(duplex=False)
            proc = mp.Process(target=_bench_one, args=(str(p), cfg, features, n_atlases,
                                                       padding, send), daemon=True)
            proc.start()
            send.close()
            running[i] = (proc, recv, time.monotonic())
        for i in list(running):
            proc, recv, start = running[i]
            if recv.poll(0.05):
                try:
                    results[i] = recv.recv()
                except EOFError:
                    results[i] = ("error: worker exited", None)
                proc.join()
                del running[i]
            elif not proc.is_alive():
                proc.join()
                results[i] = (f"error: worker exited with code {proc.exitcode}", None)
                del running[i]
            elif time.monotonic() - start > timeout:
                proc.terminate()
                proc.join()
                results[i] = ("timeout", None)
                del running[i]
    rows, reports = [], []
    for i, p in enumerate(paths):
        status, rep = results[i]
        rows.append(_row(Path(p).name, status, rep))
        reports.append({"name": Path(p).name, "status": status, "report": rep})
    return rows, reports


def cmd_bench(args) -> int:
    d = Path(args.directory)
    paths = sorted(d.glob("*.obj")) if d.is_dir() else []
    if not paths:
        print(f"error: no OBJ files in {d}", file=sys.stderr)
        return EXIT_PARSE
    try:
        cfg = config_from_args(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    rows, reports = run_bench(paths, cfg, _features_arg(args.features), args.atlases,
                              args.padding, args.timeout, args.jobs)
    agg = aggregate(rows)
    out = Path(args.out)
    with open(out.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)
        w.writerow({"name": "__aggregate__", "status": f"{agg['success_rate']:.4f}",
                    "charts": agg.get("mean_charts"), "seam_length": agg.get("median_seam_length"),
                    "angular": agg.get("mean_angular"),
                    "area_distortion": agg.get("mean_area_distortion"),
                    "overall_area_distortion": agg.get("mean_overall_area_distortion"),
                    "efficiency": agg.get("mean_efficiency"),
                    "chart_distortion_p95": agg.get("mean_chart_distortion_p95"),
                    "time_s": agg.get("time_s")})
    summary = {"schema": BENCH_SCHEMA, "meshes": reports, "rows": rows, "aggregate": agg}
    out.with_suffix(".json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for r in rows:
        print(f"{r['name']:24s} {r['status']:8s} charts={r.get('charts', '-')}")
    print(f"success rate {agg['success_rate']:.2%}; mean charts {agg.get('mean_charts', float('nan')):.2f}")
    # per-mesh failures are data (status column, success rate), not a batch failure
    return EXIT_OK


# -- suite -------------------------------------------------------------------


def cmd_suite(args) -> int:
    from .shapes import suite

    d = Path(args.directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, mesh in suite().items():
        write_obj(d / f"{name}.obj", mesh.positions, np.zeros((0, 2)), mesh.faces, None)
        print(d / f"{name}.obj")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "unwrap":
        return cmd_unwrap(args)
    if args.command == "bench":
        return cmd_bench(args)
    return cmd_suite(args)


if __name__ == "__main__":
    sys.exit(main())
