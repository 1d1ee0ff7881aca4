"""Experiment harness: synth, fit, bench, restore, and eval subcommands.

All wall-clock measurements go to dedicated ``*timings*.csv`` files; every
other CSV emitted here is byte-identical across runs with the same seed and
a fixed thread count. Exit codes: 0 success, 2 configuration error, 3 data
error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import statistics
import sys
from pathlib import Path

import numpy as np

from . import core, metrics, synth
from ._kernels import mix_key
from .als import SolverConfig, save_factors, save_factors_csv
from .driver import fit_method
from .errors import ConfigError, DataError, NumericalError
from .ratings import read_ratings_csv, read_split_manifest, split_holdout, \
    write_split_manifest

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _fmt(x):
    return repr(float(x))


def _load_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise DataError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def _solver_config(args):
    cfg = {}
    if getattr(args, "config", None):
        cfg.update(_load_json(args.config))
    for key in ("method", "n_f", "lam", "rate", "max_iters", "tol", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "diagnostics", False):
        cfg["diagnostics"] = True
    try:
        return SolverConfig(**cfg)
    except TypeError as exc:
        raise ConfigError(f"bad solver configuration: {exc}") from exc


def _out_dir(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- synth ---------------------------------------------------------------

def cmd_synth(args):
    raw = _load_json(args.config) if args.config else {}
    raw.pop("n_entries", None)  # manifests carry it as an output echo
    for key, attr in (("dist", "dist"), ("n_users", "n_users"), ("n_items", "n_items"),
                      ("n_f", "n_f"), ("rho", "rho"), ("alpha", "alpha"),
                      ("noise_sd", "noise_sd"), ("seed", "seed")):
        val = getattr(args, attr, None)
        if val is not None:
            raw[key] = val
    try:
        cfg = synth.SyntheticConfig(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad synthetic configuration: {exc}") from exc
    paths = synth.write_dataset(cfg, _out_dir(args), stem=args.stem)
    for p in paths:
        print(p)
    return 0


# -- fit -----------------------------------------------------------------

def _write_trace_csv(path, report):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "objective", "rmse"])
        for t, (obj, rm) in enumerate(zip(report.objective_trace, report.rmse_trace), 1):
            w.writerow([t, _fmt(obj), _fmt(rm)])


def _write_fit_timings_csv(path, report):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "iters_run", "converged",
                    "wall_clock_total", "sketch_time", "solve_time"])
        w.writerow([report.method, report.iters_run, int(report.converged),
                    _fmt(report.wall_clock_total), _fmt(report.sketch_time),
                    _fmt(report.solve_time)])


def cmd_fit(args):
    cfg = _solver_config(args)
    R = read_ratings_csv(args.data)
    factors, report = fit_method(R, cfg)
    out = _out_dir(args)
    save_factors(factors, out / "factors_u.bin", out / "factors_m.bin")
    if args.factors_csv:
        save_factors_csv(factors, out / "factors_u.csv", out / "factors_m.csv")
    _write_trace_csv(out / "trace.csv", report)
    _write_fit_timings_csv(out / "fit_timings.csv", report)
    if cfg.diagnostics and report.diagnostics:
        core.write_diagnostics_csv(out / "diagnostics.csv", report.diagnostics)
    print(f"method={cfg.method} iters={report.iters_run} "
          f"converged={report.converged} outputs in {out}")
    return 0


# -- bench ---------------------------------------------------------------

GRID_DEFAULTS = dict(
    methods=["full", "core", "unif", "blev"],
    rates=[0.1, 0.15, 0.2, 0.25],
    lambdas=[0.1],
    ranks=[20],
    distributions=["normal"],
    alphas=[0.4],
    replications=1,
    seed=0,
    n_users=300,
    n_items=300,
    rho=0.6,
    noise_sd=1.0,
    max_iters=50,
    tol=0.01,
    k_hit=5,
    k_ndcg=10,
    percentile=95.0,
)


class ExperimentGrid:
    """Validated bench sweep: methods x rates x lambdas x ranks x dists x alphas."""

    def __init__(self, **raw):
        unknown = set(raw) - set(GRID_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown grid fields: {sorted(unknown)}")
        for key, default in GRID_DEFAULTS.items():
            setattr(self, key, raw.get(key, default))
        for key in ("methods", "rates", "lambdas", "ranks", "distributions", "alphas"):
            if not getattr(self, key):
                raise ConfigError(f"grid field {key!r} must be a non-empty list")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        self.methods = [str(m).lower() for m in self.methods]

    def cells(self):
        """Yield one cell per (method, rate, lambda, rank, dist, alpha)."""
        for dist in self.distributions:
            for alpha in self.alphas:
                for rank in self.ranks:
                    for lam in self.lambdas:
                        for method in self.methods:
                            rates = [1.0] if method == "full" else self.rates
                            for rate in rates:
                                yield dict(method=method, rate=float(rate),
                                           lam=float(lam), n_f=int(rank),
                                           dist=dist, alpha=float(alpha))


DISTRIBUTION_CODES = {"normal": 1, "lognormal": 2, "t4": 3}


def _dataset_seed(grid, cell, rep):
    """Dataset seed shared by all methods/rates of one replication (paired runs)."""
    return mix_key(grid.seed, DISTRIBUTION_CODES[cell["dist"]],
                   int(cell["alpha"] * 10000), cell["n_f"], rep)


def _missing_cells(R):
    obs = np.zeros((R.n_users, R.n_items), dtype=bool)
    users, items, _ = R.entries()
    obs[users, items] = True
    return np.nonzero(~obs)


def _run_cell(grid, cell, rep):
    """One replication of one grid cell: generate, fit, evaluate."""
    seed = _dataset_seed(grid, cell, rep)
    dcfg = synth.SyntheticConfig(dist=cell["dist"], n_users=grid.n_users,
                                 n_items=grid.n_items, n_f=cell["n_f"],
                                 rho=grid.rho, alpha=cell["alpha"],
                                 noise_sd=grid.noise_sd, seed=seed)
    R, truth = synth.generate_rating_matrix(dcfg)
    scfg = SolverConfig(method=cell["method"], n_f=cell["n_f"], lam=cell["lam"],
                        rate=cell["rate"], max_iters=grid.max_iters, tol=grid.tol,
                        seed=seed)
    factors, report = fit_method(R, scfg)
    miss_u, miss_i = _missing_cells(R)
    heldout = (miss_u, miss_i, truth[miss_u, miss_i])
    res = metrics.evaluate(R, heldout, factors, k_hit=grid.k_hit,
                           k_ndcg=grid.k_ndcg, percentile=grid.percentile)
    return res, report


def _run_cell_task(grid_fields, cell, rep):
    """Pickling-friendly wrapper for the parallel grid mode."""
    return _run_cell(ExperimentGrid(**grid_fields), cell, rep)


def cmd_bench(args):
    raw = dict(GRID_DEFAULTS)
    if args.grid:
        raw.update(_load_json(args.grid))
    if args.seed is not None:
        raw["seed"] = args.seed
    grid = ExperimentGrid(**{k: raw[k] for k in GRID_DEFAULTS})
    out = _out_dir(args)

    # warm-up fit: JIT compilation and allocator warm-up are discarded
    warm_cfg = synth.SyntheticConfig(n_users=40, n_items=40, n_f=4, alpha=0.8, seed=0)
    warm_R, _ = synth.generate_rating_matrix(warm_cfg)
    for method in grid.methods:
        fit_method(warm_R, SolverConfig(method=method, n_f=4, lam=0.1, rate=0.5,
                                        max_iters=2, tol=1e-9, seed=0))

    cells = list(grid.cells())
    grid_fields = {k: getattr(grid, k) for k in GRID_DEFAULTS}
    if args.parallel and args.parallel > 1:
        # timing numbers from concurrent cells are not comparable
        from concurrent.futures import ProcessPoolExecutor
        tasks = [(ci, rep) for ci in range(len(cells)) for rep in range(grid.replications)]
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            futures = [pool.submit(_run_cell_task, grid_fields, cells[ci], rep)
                       for ci, rep in tasks]
        outcomes = {}
        for (ci, rep), fut in zip(tasks, futures):
            try:
                outcomes[(ci, rep)] = (fut.result(), "")
            except (ConfigError, DataError, NumericalError) as exc:
                outcomes[(ci, rep)] = (None, f"{type(exc).__name__}: {exc}")
    else:
        outcomes = None

    results_rows = []
    timing_rows = []
    for ci, cell in enumerate(cells):
        evals, walls, sketches, solves, iters, conv = [], [], [], [], [], []
        error = ""
        for rep in range(grid.replications):
            if outcomes is not None:
                payload, error = outcomes[(ci, rep)]
                if error:
                    break
                res, report = payload
            else:
                try:
                    res, report = _run_cell(grid, cell, rep)
                except (ConfigError, DataError, NumericalError) as exc:
                    error = f"{type(exc).__name__}: {exc}"
                    break
            evals.append(res)
            walls.append(report.wall_clock_total)
            sketches.append(report.sketch_time)
            solves.append(report.solve_time)
            iters.append(report.iters_run)
            conv.append(report.converged)
        key = dict(method=cell["method"], rate=cell["rate"], lam=cell["lam"],
                   n_f=cell["n_f"], dist=cell["dist"], alpha=cell["alpha"],
                   seed=grid.seed)
        if error:
            results_rows.append((key, None, error))
            continue
        agg = metrics.aggregate(evals)
        key["replications"] = grid.replications
        key["iters_mean"] = sum(iters) / len(iters)
        key["converged_frac"] = sum(conv) / len(conv)
        results_rows.append((key, agg, ""))
        timing_rows.append((key, walls, sketches, solves))

    _write_results_csv(out / "results.csv", results_rows)
    _write_bench_timings_csv(out / "bench_timings.csv", timing_rows)
    _write_charts(out, results_rows, grid)
    print(f"bench: {len(results_rows)} cells -> {out}")
    return 0


RESULT_FIELDS = ["method", "rate", "lambda", "n_f", "dist", "alpha", "seed",
                 "replications", "iters_mean", "converged_frac",
                 "rmse", "prmse", "hit_at_k", "ndcg_at_k", "error"]


def _write_results_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_FIELDS)
        for key, agg, error in rows:
            base = [key["method"], _fmt(key["rate"]), _fmt(key["lam"]), key["n_f"],
                    key["dist"], _fmt(key["alpha"]), key["seed"]]
            if agg is None:
                w.writerow(base + ["", "", "", "", "", "", "", error])
            else:
                w.writerow(base + [key["replications"], _fmt(key["iters_mean"]),
                                   _fmt(key["converged_frac"]), _fmt(agg.rmse),
                                   _fmt(agg.prmse), _fmt(agg.hit_at_k),
                                   _fmt(agg.ndcg_at_k), ""])


def _write_bench_timings_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "rate", "lambda", "n_f", "dist", "alpha",
                    "wall_mean", "wall_median", "sketch_mean", "solve_mean"])
        for key, walls, sketches, solves in rows:
            w.writerow([key["method"], _fmt(key["rate"]), _fmt(key["lam"]),
                        key["n_f"], key["dist"], _fmt(key["alpha"]),
                        _fmt(statistics.mean(walls)), _fmt(statistics.median(walls)),
                        _fmt(statistics.mean(sketches)), _fmt(statistics.mean(solves))])


# -- charts ----------------------------------------------------------------

_CHART_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]


def _svg_chart(path, title, series, x_label, y_label):
    """Minimal SVG polyline chart; series = {name: [(x, y), ...]}."""
    width, height, pad = 480, 320, 48
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    if not xs:
        return
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<text x="{width // 2}" y="18" text-anchor="middle" '
             f'font-size="13">{title}</text>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" '
             f'y2="{height - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" '
             f'stroke="black"/>',
             f'<text x="{width // 2}" y="{height - 10}" text-anchor="middle" '
             f'font-size="11">{x_label}</text>',
             f'<text x="14" y="{height // 2}" font-size="11" '
             f'transform="rotate(-90 14 {height // 2})">{y_label}</text>']
    for k, (name, pts) in enumerate(sorted(series.items())):
        color = _CHART_COLORS[k % len(_CHART_COLORS)]
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in sorted(pts))
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        for x, y in pts:
            parts.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="2.5" '
                         f'fill="{color}"/>')
        parts.append(f'<text x="{width - pad + 4}" y="{pad + 14 * k}" font-size="10" '
                     f'fill="{color}">{name}</text>')
    parts.append(f'<text x="{pad - 4}" y="{height - pad + 12}" font-size="9" '
                 f'text-anchor="end">{x0:.3g}</text>')
    parts.append(f'<text x="{width - pad}" y="{height - pad + 12}" font-size="9" '
                 f'text-anchor="middle">{x1:.3g}</text>')
    parts.append(f'<text x="{pad - 6}" y="{height - pad}" font-size="9" '
                 f'text-anchor="end">{y0:.3g}</text>')
    parts.append(f'<text x="{pad - 6}" y="{pad + 4}" font-size="9" '
                 f'text-anchor="end">{y1:.3g}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")


def _write_charts(out, results_rows, grid):
    """One metric-vs-rate chart per (metric, dist, alpha, lambda, rank)."""
    groups = {}
    for key, agg, error in results_rows:
        if agg is None:
            continue
        gk = (key["dist"], key["alpha"], key["lam"], key["n_f"])
        groups.setdefault(gk, []).append((key, agg))
    for (dist, alpha, lam, rank), entries in groups.items():
        for metric in ("rmse", "prmse", "hit_at_k", "ndcg_at_k"):
            series = {}
            for key, agg in entries:
                val = getattr(agg, metric)
                if val is None:
                    continue
                pts = series.setdefault(key["method"], [])
                if key["method"] == "full":
                    pts.extend((r, val) for r in grid.rates)
                else:
                    pts.append((key["rate"], val))
            name = f"{metric}_{dist}_a{alpha:g}_l{lam:g}_f{rank}.svg"
            _svg_chart(out / name,
                       f"{metric} vs rate ({dist}, alpha={alpha:g}, "
                       f"lambda={lam:g}, n_f={rank})",
                       series, "subsampling rate", metric)


# -- restore -----------------------------------------------------------------

def cmd_restore(args):
    from .imaging import load_image_csv, load_pgm, mask_image, psnr, restore, save_pgm

    path = Path(args.image)
    img = load_pgm(path) if path.suffix.lower() == ".pgm" else load_image_csv(path)
    cfg = _solver_config(args)
    masked = mask_image(img, args.mask_fraction, cfg.seed)
    restored, report = restore(masked, cfg, keep_observed=args.keep_observed)
    out = _out_dir(args)
    save_pgm(out / "restored.pgm", restored)
    quality = psnr(restored, img.clamped())
    with open(out / "restore_report.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "rate", "lambda", "n_f", "seed", "mask_fraction",
                    "observed", "psnr_db", "iters_run", "converged"])
        w.writerow([cfg.method, _fmt(cfg.rate), _fmt(cfg.lam), cfg.n_f, cfg.seed,
                    _fmt(args.mask_fraction), masked.n_entries, _fmt(quality),
                    report.iters_run, int(report.converged)])
    _write_fit_timings_csv(out / "restore_timings.csv", report)
    print(f"restored {path.name}: psnr={quality:.2f} dB -> {out / 'restored.pgm'}")
    return 0


# -- eval ----------------------------------------------------------------

def cmd_eval(args):
    from .als import load_factors

    if args.manifest:
        train, (eu, ei, ev) = read_split_manifest(args.manifest)
    else:
        if not args.data:
            raise ConfigError("eval needs --data or --manifest")
        R = read_ratings_csv(args.data)
        split = split_holdout(R, args.test_fraction, args.seed if args.seed is not None else 0)
        train = split.train
        eu, ei, ev = split.test_users, split.test_items, split.test_vals
        if args.write_manifest:
            write_split_manifest(Path(args.out_dir) / "split_manifest.csv", split)
    factors = load_factors(args.user_factors, args.item_factors)
    res = metrics.evaluate(train, (eu, ei, ev), factors,
                           k_hit=args.k_hit, k_ndcg=args.k_ndcg)
    out = _out_dir(args)
    key = dict(method=args.method or "", rate="", n_f=factors.n_f,
               dist="", alpha="", seed=args.seed if args.seed is not None else "")
    key["lambda"] = ""
    metrics.write_eval_csv(out / "eval.csv", [(key, res)])
    print(f"rmse={res.rmse:.6f} prmse={res.prmse:.6f} "
          f"hit@{res.k_hit}={res.hit_at_k:.4f} ndcg@{res.k_ndcg}={res.ndcg_at_k:.4f}")
    return 0


# -- argument plumbing -----------------------------------------------------

def _add_solver_flags(p):
    p.add_argument("--config", help="JSON file with SolverConfig fields")
    p.add_argument("--method", choices=["full", "core", "fast_core", "unif", "blev"])
    p.add_argument("--n-f", dest="n_f", type=int)
    p.add_argument("--lam", type=float)
    p.add_argument("--rate", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--tol", type=float)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="override config seeds")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="cap BLAS threads (1 gives bit-reproducible runs)")
    common.add_argument("--out-dir", default=argparse.SUPPRESS,
                        help="output directory (default: out)")
    common.add_argument("--diagnostics", action="store_true", default=argparse.SUPPRESS,
                        help="collect per-regression approximation diagnostics "
                             "(method core)")

    ap = argparse.ArgumentParser(prog="coreals", parents=[common],
                                 description="Low-rank rating-matrix factorization "
                                             "with subsampled alternating solvers.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset", parents=[common])
    p.add_argument("--config", help="JSON file with SyntheticConfig fields")
    p.add_argument("--dist", choices=list(synth.DISTRIBUTIONS))
    p.add_argument("--n-users", dest="n_users", type=int)
    p.add_argument("--n-items", dest="n_items", type=int)
    p.add_argument("--n-f", dest="n_f", type=int)
    p.add_argument("--rho", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--noise-sd", dest="noise_sd", type=float)
    p.add_argument("--stem", default="synth")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit factors to a ratings CSV", parents=[common])
    p.add_argument("--data", required=True)
    p.add_argument("--factors-csv", dest="factors_csv", action="store_true",
                   help="also write factors as inspectable CSV")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("bench", help="run an accuracy/timing sweep", parents=[common])
    p.add_argument("--grid", help="JSON file with ExperimentGrid fields")
    p.add_argument("--parallel", type=int, default=0,
                   help="run grid cells in N processes (timings no longer comparable)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("restore", help="mask and restore a grayscale image", parents=[common])
    p.add_argument("--image", required=True, help="PGM (P5) or CSV image")
    p.add_argument("--mask-fraction", dest="mask_fraction", type=float, default=0.6)
    p.add_argument("--keep-observed", dest="keep_observed", action="store_true")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("eval", help="evaluate saved factors on a holdout", parents=[common])
    p.add_argument("--data", help="ratings CSV (split on the fly)")
    p.add_argument("--manifest", help="existing split manifest CSV")
    p.add_argument("--user-factors", dest="user_factors", required=True)
    p.add_argument("--item-factors", dest="item_factors", required=True)
    p.add_argument("--test-fraction", dest="test_fraction", type=float, default=0.2)
    p.add_argument("--k-hit", dest="k_hit", type=int, default=5)
    p.add_argument("--k-ndcg", dest="k_ndcg", type=int, default=10)
    p.add_argument("--method", help="label recorded in eval.csv")
    p.add_argument("--write-manifest", dest="write_manifest", action="store_true")
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    # global flags may appear before or after the subcommand
    args.seed = getattr(args, "seed", None)
    args.threads = getattr(args, "threads", None)
    args.out_dir = getattr(args, "out_dir", "out")
    args.diagnostics = getattr(args, "diagnostics", False)
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=args.threads):
                return args.func(args)
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
