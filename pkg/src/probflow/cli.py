"""Command line entry point.

Exit codes: 0 success, 1 a validation check failed, 2 bad config or input.
CSV output goes to ``--out`` when given, else to ``<out-dir>/<default name>``
when ``--out-dir`` is set, else to stdout.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import io
import sys
from pathlib import Path

import numpy as np

from . import harness as hs
from .geometry import covering_curve
from .metrics import AllPointsFlagged, tv_from_log_ratio
from .plotting import EmptyReport, emit_plots
from .sampler import run_reverse
from .schedule import InvalidScheduleParams, ScheduleParams, build_schedule
from .score_models import ExactScore, PerturbationSpec, perturb
from .validation import run_suite

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


class InputError(Exception):
    pass


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


@contextlib.contextmanager
def _sink(args, default_name):
    if getattr(args, "out", None):
        path = Path(args.out)
    elif args.out_dir:
        path = Path(args.out_dir) / default_name
    else:
        yield sys.stdout
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        yield fh


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def _load_config(path):
    if path is None:
        return hs.ExperimentConfig()
    return hs.ExperimentConfig.load(path)


def _section_config(path, fallback):
    """Config for commands that take a per-block file (``--target``, ``--perturb``)."""
    return _load_config(path or fallback)


# -- subcommands -----------------------------------------------------------------


def cmd_schedule(args):
    cfg = _load_config(args.config)
    T = args.T if args.T is not None else (cfg.schedule.T[0] if cfg.schedule.T else None)
    if T is None:
        raise InputError("--T is required")
    c0 = args.c0 if args.c0 is not None else cfg.schedule.c0
    c1 = args.c1 if args.c1 is not None else cfg.schedule.c1
    sch = build_schedule(ScheduleParams(T, c0, c1))
    with _sink(args, "schedule.csv") as fh:
        w = _writer(fh)
        w.writerow(["t", "beta", "alpha", "alpha_bar", "eta_star", "eta_simple"])
        for row in sch.rows():
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    return EXIT_OK


def _target_from(args):
    cfg = _section_config(args.target, args.config)
    spec = cfg.target
    if getattr(args, "d", None) is not None:
        spec = dataclasses.replace(spec, d=args.d)
    k = spec.k[0] if spec.k else 0
    if k > spec.d:
        raise hs.ConfigError(f"k = {k} exceeds d = {spec.d}")
    return hs.make_target(spec, k), cfg


def cmd_target(args):
    target, _ = _target_from(args)
    with _sink(args, "target.csv") as fh:
        w = _writer(fh)
        w.writerow(["index", "weight", "rank", "mean_norm", "trace_cov"])
        for i, wt, r, mn, tr in target.component_table():
            w.writerow([i, repr(float(wt)), r, repr(mn), repr(tr)])
    return EXIT_OK


def _schedule_from(args, cfg):
    T = args.T if args.T is not None else (cfg.schedule.T[0] if cfg.schedule.T else None)
    if T is None:
        raise InputError("--T is required")
    c0 = args.c0 if args.c0 is not None else cfg.schedule.c0
    c1 = args.c1 if args.c1 is not None else cfg.schedule.c1
    return build_schedule(ScheduleParams(T, c0, c1))


def cmd_sample(args):
    target, cfg = _target_from(args)
    sch = _schedule_from(args, cfg)
    pcfg = _section_config(args.perturb, args.config).perturbation
    kind = pcfg.kind[0] if pcfg.kind else "none"
    delta = pcfg.delta[0] if pcfg.delta else 0.0
    field = perturb(ExactScore(target, sch), PerturbationSpec(kind, delta, pcfg.seed))
    seed = args.seed if args.seed is not None else cfg.sampler.seed
    n = args.n if args.n is not None else cfg.sampler.n
    coeff = args.coeff or cfg.sampler.coeff[0]
    batch, diag = run_reverse(sch, target.d, field, n, seed, coeff,
                              dump_trajectory=args.dump_trajectory)
    with _sink(args, "samples.csv") as fh:
        w = _writer(fh)
        w.writerow(["point_id"] + [f"y_{j + 1}" for j in range(target.d)] + ["log_density"])
        for i, (y, lp, bad) in enumerate(zip(batch.points, batch.log_density, batch.flagged)):
            # flagged points have no trustworthy density
            w.writerow([i] + [repr(float(v)) for v in y] + ["nan" if bad else repr(float(lp))])
    if args.dump_trajectory and args.out_dir:
        np.save(Path(args.out_dir) / "trajectory.npy", np.stack(diag.trajectory))
    return EXIT_OK


def _read_numeric_csv(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(str(exc)) from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise InputError(f"{path} is empty")
    header = None
    try:
        [float(v) for v in rows[0]]
    except ValueError:
        header, rows = rows[0], rows[1:]
    try:
        data = np.array([[float(v) for v in r] for r in rows if r], dtype=float)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc
    return header, data.reshape(len(data), -1) if data.size else np.empty((0, 0))


def cmd_tv(args):
    target, cfg = _target_from(args)
    sch = _schedule_from(args, cfg)
    header, data = _read_numeric_csv(args.samples)
    if header is None or header[0] != "point_id" or header[-1] != "log_density":
        raise InputError("samples CSV must have columns point_id, y_1..y_d, log_density")
    pts, ld = data[:, 1:-1], data[:, -1]
    if pts.shape[1] != target.d:
        raise InputError(f"samples have dimension {pts.shape[1]}, target has {target.d}")
    bad = ~np.isfinite(ld)
    if bad.all():
        raise AllPointsFlagged("every point is flagged")
    mo, _ = target.moments(sch.ab(1), sch.omab(1), pts[~bad])
    est = tv_from_log_ratio(mo.log_density - ld[~bad], int(bad.sum()))
    with _sink(args, "tv.csv") as fh:
        w = _writer(fh)
        w.writerow(["tv", "stderr", "n_used", "n_flagged"])
        w.writerow([repr(est.value), repr(est.stderr), est.n_used, est.n_flagged])
    return EXIT_OK


def cmd_dim(args):
    header, data = _read_numeric_csv(args.points)
    if header is not None and any(h.startswith("y_") for h in header):
        cols = [i for i, h in enumerate(header) if h.startswith("y_")]
        data = data[:, cols]
    if data.size == 0:
        raise InputError("no points")
    eps = sorted(args.eps, reverse=True)
    curve = covering_curve(data, eps)
    with _sink(args, "dim.csv") as fh:
        w = _writer(fh)
        w.writerow(["epsilon", "net_size", "lower_bound"])
        for e, c, b in curve.rows():
            w.writerow([repr(e), c, b])
    return EXIT_OK


def cmd_validate(args):
    seed = args.seed if args.seed is not None else 0
    rows = run_suite(args.logdet_trials, args.identity_trials, seed=seed)
    with _sink(args, "validate.csv") as fh:
        w = _writer(fh)
        w.writerow(["check", "trials", "failures", "max_slack"])
        for r in rows:
            w.writerow([r.check, r.trials, r.failures, repr(float(r.max_slack))])
    failed = [r for r in rows if r.failures]
    for r in failed:
        print(f"{r.check}: {r.failures} failure(s); first: {r.first_failure}", file=sys.stderr)
    return EXIT_FAILED if failed else EXIT_OK


def cmd_sweep(args):
    if args.config is None:
        raise InputError("sweep needs --config")
    cfg = hs.ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, sampler=dataclasses.replace(cfg.sampler, seed=args.seed))
    out_dir = Path(args.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / cfg.output.csv
    if args.fresh and csv_path.exists():
        csv_path.unlink()
    report = hs.run_sweep(cfg, csv_path, threads=args.threads)
    for key, fit in sorted(report.fits.items()):
        if fit is not None:
            print(f"d={key[0]} k={key[1]} {key[2]} {key[3]} delta={key[4]:g}: "
                  f"slope={fit.slope:.3f} r2={fit.r_squared:.3f}", file=sys.stderr)
    if args.plots and report.ok_rows():
        emit_plots(report, out_dir / cfg.output.plots)
    bad = [r for r in report.rows if r["status"] != "ok"]
    return EXIT_FAILED if bad else EXIT_OK


def cmd_plot(args):
    report = hs.load_report(args.report)
    out = Path(args.out_dir or ".") / "plots"
    for p in emit_plots(report, out, which=args.which or None, c=args.c, T=args.T):
        print(p)
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def globals_(suppress):
        g = argparse.ArgumentParser(add_help=False)
        # on subcommands the defaults are suppressed so flags given before the
        # subcommand name are not overwritten
        dflt = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        g.add_argument("--config", default=dflt(None), help="experiment config (INI or .json)")
        g.add_argument("--out-dir", default=dflt(None), help="directory for output files")
        g.add_argument("--seed", type=int, default=dflt(None), help="override the seed")
        g.add_argument("--threads", type=int, default=dflt(1), help="worker processes for sweeps")
        return g

    common, sub_common = globals_(False), globals_(True)

    p = argparse.ArgumentParser(prog="probflow", parents=[common],
                                description="Probability flow sampler experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[sub_common])

    def sched_flags(sp):
        sp.add_argument("--T", type=int, default=None)
        sp.add_argument("--c0", type=float, default=None)
        sp.add_argument("--c1", type=float, default=None)

    sp = add("schedule", "dump the step-size schedule as CSV")
    sched_flags(sp)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_schedule)

    sp = add("target", "inspect a target")
    sp.add_argument("action", choices=["dump"])
    sp.add_argument("--target", default=None, help="config holding a [target] block")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_target)

    sp = add("sample", "run the sampler and write points with log-densities")
    sched_flags(sp)
    sp.add_argument("--d", type=int, default=None)
    sp.add_argument("--n", type=int, default=None)
    sp.add_argument("--coeff", choices=["star", "simple"], default=None)
    sp.add_argument("--target", default=None)
    sp.add_argument("--perturb", default=None, help="config holding a [perturbation] block")
    sp.add_argument("--dump-trajectory", action="store_true", default=False)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_sample)

    sp = add("tv", "TV between a sample CSV and the target's t=1 marginal")
    sched_flags(sp)
    sp.add_argument("--samples", required=True)
    sp.add_argument("--target", default=None)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_tv)

    sp = add("dim", "covering numbers of a point cloud")
    sp.add_argument("--points", required=True)
    sp.add_argument("--eps", type=_floats, required=True, help="comma-separated radii")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_dim)

    sp = add("validate", "run the randomized check suites")
    sp.add_argument("--logdet-trials", type=int, default=10_000)
    sp.add_argument("--identity-trials", type=int, default=1_000)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_validate)

    sp = add("sweep", "run a config's full grid, resuming an existing CSV")
    sp.add_argument("--fresh", action="store_true", default=False, help="discard an existing CSV")
    sp.add_argument("--plots", action="store_true", default=False, help="also write SVG plots")
    sp.set_defaults(func=cmd_sweep)

    sp = add("plot", "render SVG plots from a sweep CSV")
    sp.add_argument("--report", required=True)
    sp.add_argument("--which", nargs="*", default=None)
    sp.add_argument("--c", type=float, default=1.0, help="constant in the bound overlay")
    sp.add_argument("--T", type=int, default=None, help="T for the TV vs delta plot")
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (hs.ConfigError, InvalidScheduleParams, InputError, EmptyReport, OSError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AllPointsFlagged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
