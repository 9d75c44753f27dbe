"""Experiment configs, parameter sweeps and CSV reports.

A sweep walks the grid ``k x T x coeff x kind x delta`` in that order. Each
grid point builds a schedule and target, perturbs the exact score, runs the
sampler, and records the TV estimate alongside the measured score errors.
Rows are appended to the CSV as they finish; rerunning with an existing
file skips run_ids already present, so an interrupted sweep resumes to the
same bytes.

Config files are INI-style (one section per block, comma-separated lists)::

    [target]
    family = low_rank_gaussian
    d = 32
    k = 2, 4

    [schedule]
    T = 50, 100, 200

JSON with the same section/key layout is accepted too.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import math
import os
import time
import types
import typing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import targets as tg
from .geometry import covering_curve, dimension_estimate
from .metrics import DegenerateInput, rate_fit, tv_monte_carlo
from .plotting import EmptyReport, emit_plots
from .sampler import run_reverse
from .schedule import ScheduleParams, build_schedule
from .score_models import ExactScore, PerturbationSpec, average_errors, perturb

__all__ = [
    "ConfigError",
    "TargetSpec",
    "ScheduleSpec",
    "SamplerSpec",
    "PerturbationGrid",
    "TvSpec",
    "OutputSpec",
    "ExperimentConfig",
    "ExperimentReport",
    "REPORT_COLUMNS",
    "make_target",
    "run_sweep",
    "rerun_row",
    "emit_plots",
    "EmptyReport",
    "load_report",
]


class ConfigError(ValueError):
    pass


TARGET_FAMILIES = ("point_mass", "gaussian", "low_rank_gaussian", "gmm", "torus_cloud",
                   "cube_cloud")


@dataclass(frozen=True)
class TargetSpec:
    family: str = "low_rank_gaussian"
    d: int = 32
    k: tuple[int, ...] = (2,)
    sigma: float = 1.0
    mean_scale: float = 0.0
    seed: int = 1
    support_radius: float | None = None
    n_components: int = 3
    n_points: int = 64
    radius: float = 1.0


@dataclass(frozen=True)
class ScheduleSpec:
    c0: float = 2.0
    c1: float = 4.0
    T: tuple[int, ...] = (50, 100, 200, 400, 800)


@dataclass(frozen=True)
class SamplerSpec:
    n: int = 4000
    seed: int = 0
    coeff: tuple[str, ...] = ("star",)


@dataclass(frozen=True)
class PerturbationGrid:
    kind: tuple[str, ...] = ("none",)
    delta: tuple[float, ...] = (0.0,)
    seed: int = 0


@dataclass(frozen=True)
class TvSpec:
    n: int = 2000  # points of each sampler batch used for the TV estimate
    eps_n: int = 64  # forward samples per step for the score-error averages
    khat_n: int = 0  # data samples for the dimension estimate; 0 skips it
    khat_eps: tuple[float, ...] = ()


@dataclass(frozen=True)
class OutputSpec:
    csv: str = "sweep.csv"
    plots: str = "plots"


_SECTIONS = {
    "target": TargetSpec,
    "schedule": ScheduleSpec,
    "sampler": SamplerSpec,
    "perturbation": PerturbationGrid,
    "tv": TvSpec,
    "output": OutputSpec,
}


def _parse_value(text: str, hint):
    text = text.strip()
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        if text in ("", "none", "None"):
            return None
        inner = next(a for a in typing.get_args(hint) if a is not type(None))
        return _parse_value(text, inner)
    if origin is tuple:
        inner = typing.get_args(hint)[0]
        return tuple(_parse_value(p, inner) for p in text.split(",") if p.strip())
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    return text


def _coerce(value, hint):
    """Normalise a JSON value to the field's declared type."""
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        if value is None:
            return None
        inner = next(a for a in typing.get_args(hint) if a is not type(None))
        return _coerce(value, inner)
    if origin is tuple:
        inner = typing.get_args(hint)[0]
        if not isinstance(value, (list, tuple)):
            value = [value]
        return tuple(_coerce(v, inner) for v in value)
    if isinstance(value, str):
        return _parse_value(value, hint)
    return hint(value)


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _build_section(cls, items: dict):
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    unknown = set(items) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{cls.__name__}]: {sorted(unknown)}")
    try:
        return cls(**{k: _coerce(v, hints[k]) for k, v in items.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value in {cls.__name__}: {exc}") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    target: TargetSpec = field(default_factory=TargetSpec)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    perturbation: PerturbationGrid = field(default_factory=PerturbationGrid)
    tv: TvSpec = field(default_factory=TvSpec)
    output: OutputSpec = field(default_factory=OutputSpec)

    def __post_init__(self):
        t = self.target
        if t.family not in TARGET_FAMILIES:
            raise ConfigError(f"unknown target family {t.family!r}")
        if t.d < 1 or any(k < 0 or k > t.d for k in t.k):
            raise ConfigError("need d >= 1 and 0 <= k <= d")
        if self.sampler.n < 1 or not 1 <= self.tv.n:
            raise ConfigError("sample counts must be positive")
        for c in self.sampler.coeff:
            if c not in ("star", "simple"):
                raise ConfigError(f"unknown coefficient choice {c!r}")
        for kind in self.perturbation.kind:
            try:
                PerturbationSpec(kind, 0.0)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        if any(dl < 0 for dl in self.perturbation.delta):
            raise ConfigError("perturbation deltas must be nonnegative")
        for T in self.schedule.T:
            try:
                ScheduleParams(T, self.schedule.c0, self.schedule.c1)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        if self.tv.khat_n and len(self.tv.khat_eps) < 2:
            raise ConfigError("khat_n > 0 needs at least two khat_eps values")

    # -- serialisation ----------------------------------------------------------

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in _SECTIONS}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        unknown = set(data) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown sections: {sorted(unknown)}")
        parts = {name: _build_section(sc, dict(data.get(name, {})))
                 for name, sc in _SECTIONS.items()}
        return cls(**parts)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for name in _SECTIONS:
            cp[name] = {k: _format_value(v) for k, v in asdict(getattr(self, name)).items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        data = {}
        for name in cp.sections():
            sc = _SECTIONS.get(name)
            if sc is None:
                raise ConfigError(f"unknown section [{name}]")
            hints = typing.get_type_hints(sc)
            items = {}
            for key, raw in cp[name].items():
                if key not in hints:
                    raise ConfigError(f"unknown key {key!r} in [{name}]")
                try:
                    items[key] = _parse_value(raw, hints[key])
                except ValueError as exc:
                    raise ConfigError(f"[{name}] {key}: {exc}") from exc
            data[name] = items
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(str(exc)) from exc
        if path.suffix.lower() == ".json":
            try:
                return cls.from_dict(json.loads(text))
            except json.JSONDecodeError as exc:
                raise ConfigError(str(exc)) from exc
        return cls.from_ini(text)

    def config_hash(self) -> str:
        """Hash of everything that affects results (output paths excluded)."""
        d = self.to_dict()
        d.pop("output")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- targets ------------------------------------------------------------------


def make_target(spec: TargetSpec, k: int) -> tg.MixtureTarget:
    d = spec.d
    mean = spec.mean_scale * np.ones(d) / math.sqrt(d) if spec.mean_scale else None
    fam = spec.family
    if fam == "point_mass":
        target = tg.point_mass(d, at=mean)
    elif fam == "gaussian":
        target = tg.isotropic_gaussian(d, mean=mean, sigma=spec.sigma)
    elif fam == "low_rank_gaussian":
        target = tg.low_rank_gaussian(d, k, sigma=spec.sigma, seed=spec.seed, mean=mean)
    elif fam == "gmm":
        target = tg.gaussian_mixture(d, spec.n_components, rank=k, seed=spec.seed,
                                     scale=spec.sigma)
    elif fam == "torus_cloud":
        pts, frame = tg.torus_points(spec.n_points, k, d, seed=spec.seed, radius=spec.radius)
        target = tg.point_cloud(pts, info={"k": k, "frame": frame})
    elif fam == "cube_cloud":
        pts, frame = tg.cube_points(spec.n_points, k, d, seed=spec.seed)
        target = tg.point_cloud(pts, info={"k": k, "frame": frame})
    else:  # guarded by ExperimentConfig
        raise ConfigError(f"unknown target family {fam!r}")
    if spec.support_radius is not None:
        target = tg.MixtureTarget(target.components, support_radius=spec.support_radius,
                                  info=target.info)
    return target


# -- sweep ----------------------------------------------------------------------

REPORT_COLUMNS = ("run_id", "status", "T", "d", "k_nominal", "k_hat", "coeff", "kind",
                  "delta", "eps_score", "eps_jacobi", "tv", "tv_stderr", "n_flagged",
                  "seed", "config_hash", "wall_ms")


@dataclass(frozen=True)
class RunKey:
    k: int
    T: int
    coeff: str
    kind: str
    delta: float

    @property
    def run_id(self) -> str:
        return f"k{self.k}-T{self.T}-{self.coeff}-{self.kind}-{self.delta!r}"


def grid(config: ExperimentConfig):
    ks = config.target.k if config.target.family not in ("point_mass", "gaussian") \
        else config.target.k[:1]
    for k in ks:
        for T in config.schedule.T:
            for coeff in config.sampler.coeff:
                for kind in config.perturbation.kind:
                    deltas = (0.0,) if kind == "none" else config.perturbation.delta
                    for delta in deltas:
                        yield RunKey(k, T, coeff, kind, float(delta))


def run_seed(config: ExperimentConfig, key: RunKey) -> int:
    """Sampler seed of a run; shared across coeff/kind/delta at the same (k, T)."""
    ss = np.random.SeedSequence([config.sampler.seed, key.k, key.T])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def khat_for(config: ExperimentConfig, k: int) -> float:
    if not config.tv.khat_n:
        return math.nan
    target = make_target(config.target, k)
    pts = tg.sample_data(target, config.tv.khat_n, [config.target.seed, k, 7])
    eps = sorted(config.tv.khat_eps, reverse=True)
    return dimension_estimate(covering_curve(pts, eps)).k_hat


def execute_run(config: ExperimentConfig, key: RunKey, k_hat: float) -> dict:
    """Run one grid point and return its CSV row as a dict of strings."""
    t0 = time.perf_counter()
    seed = run_seed(config, key)
    row = {"run_id": key.run_id, "T": key.T, "d": config.target.d, "k_nominal": key.k,
           "k_hat": k_hat, "coeff": key.coeff, "kind": key.kind, "delta": key.delta,
           "seed": seed, "config_hash": config.config_hash()}
    try:
        sch = build_schedule(ScheduleParams(key.T, config.schedule.c0, config.schedule.c1))
        target = make_target(config.target, key.k)
        exact = ExactScore(target, sch)
        pert = PerturbationSpec(key.kind, key.delta, config.perturbation.seed)
        fieldv = perturb(exact, pert)
        batch, _ = run_reverse(sch, target.d, fieldv, config.sampler.n, seed, key.coeff)
        m = min(config.tv.n, batch.n)
        sub = type(batch)(batch.t, batch.points[:m], batch.log_density[:m],
                          batch.logdet_sum[:m], batch.flagged[:m])
        est = tv_monte_carlo(sub, target, sch)
        if key.kind == "none" or key.delta == 0.0:
            eps_s = eps_j = 0.0
        else:
            errs = average_errors(exact, fieldv, target, sch, config.tv.eps_n, seed)
            eps_s, eps_j = errs.eps_score, errs.eps_jacobi
        row.update(status="ok", eps_score=eps_s, eps_jacobi=eps_j, tv=est.value,
                   tv_stderr=est.stderr, n_flagged=est.n_flagged)
    except Exception as exc:  # recorded per row; the sweep keeps going
        row.update(status=f"error: {type(exc).__name__}: {exc}".replace("\n", " "),
                   eps_score=math.nan, eps_jacobi=math.nan, tv=math.nan,
                   tv_stderr=math.nan, n_flagged=-1)
    row["wall_ms"] = int(round(1000 * (time.perf_counter() - t0)))
    return {c: _fmt(row[c]) for c in REPORT_COLUMNS}


def _execute_packed(args):
    return execute_run(*args)


@dataclass
class ExperimentReport:
    rows: list
    fits: dict = field(default_factory=dict)
    config: ExperimentConfig | None = None

    def ok_rows(self):
        return [r for r in self.rows if r["status"] == "ok"]

    def column(self, name, rows=None):
        rows = self.ok_rows() if rows is None else rows
        return [float(r[name]) for r in rows]

    def groups(self):
        """Rows keyed by ``(d, k, coeff, kind, delta)``, each sorted by T."""
        out = {}
        for r in self.ok_rows():
            key = (int(r["d"]), int(r["k_nominal"]), r["coeff"], r["kind"], float(r["delta"]))
            out.setdefault(key, []).append(r)
        for v in out.values():
            v.sort(key=lambda r: int(r["T"]))
        return out

    def fit_rates(self):
        """Log-log rate fit per group, using only resolved TV values."""
        fits = {}
        for key, rows in self.groups().items():
            pts = [(int(r["T"]), float(r["tv"])) for r in rows
                   if float(r["tv"]) >= 2 * float(r["tv_stderr"]) and float(r["tv"]) > 0]
            try:
                fits[key] = rate_fit(pts)
            except DegenerateInput:
                fits[key] = None
        self.fits = fits
        return fits

    def to_csv(self, path):
        write_rows(path, self.rows, mode="w")


def write_rows(path, rows, mode="a"):
    path = Path(path)
    new = mode == "w" or not path.exists() or path.stat().st_size == 0
    with open(path, mode, newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        if new:
            w.writeheader()
        for r in rows:
            w.writerow(r)
        fh.flush()
        os.fsync(fh.fileno())


def _read_existing(path: Path):
    """Complete rows already on disk; a torn trailing line is cut off."""
    if not path.exists():
        return []
    raw = path.read_text()
    if raw and not raw.endswith("\n"):
        raw = raw[: raw.rfind("\n") + 1]
        path.write_text(raw)
    if not raw.strip():
        return []
    reader = csv.DictReader(io.StringIO(raw))
    if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
        raise ConfigError(f"{path} has an unexpected header; refusing to resume")
    return list(reader)


def load_report(path) -> ExperimentReport:
    rows = _read_existing(Path(path))
    rep = ExperimentReport(rows)
    rep.fit_rates()
    return rep


def run_sweep(config: ExperimentConfig, csv_path=None, threads: int = 1,
              stop_after: int | None = None) -> ExperimentReport:
    """Run every grid point of ``config``.

    With ``csv_path`` rows are appended as they complete and run_ids already
    in the file are skipped. ``stop_after`` ends the sweep after that many new
    rows (used to exercise resumption).
    """
    keys = list(grid(config))
    done = {}
    path = Path(csv_path) if csv_path is not None else None
    if path is not None:
        for r in _read_existing(path):
            done[r["run_id"]] = r
    todo = [k for k in keys if k.run_id not in done]
    if stop_after is not None:
        todo = todo[:stop_after]

    khat = {k: khat_for(config, k) for k in sorted({key.k for key in todo})}
    jobs = [(config, key, khat[key.k]) for key in todo]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = pool.map(_execute_packed, jobs)
            for row in results:
                done[row["run_id"]] = row
                if path is not None:
                    write_rows(path, [row])
    else:
        for job in jobs:
            row = execute_run(*job)
            done[row["run_id"]] = row
            if path is not None:
                write_rows(path, [row])
    if path is not None and not path.exists():
        write_rows(path, [], mode="w")

    rows = [done[k.run_id] for k in keys if k.run_id in done]
    report = ExperimentReport(rows, config=config)
    report.fit_rates()
    return report


def rerun_row(config: ExperimentConfig, row: dict) -> dict:
    """Recompute one report row from its config; checks the recorded provenance."""
    if row["config_hash"] != config.config_hash():
        raise ConfigError("row was produced by a different config")
    key = next((k for k in grid(config) if k.run_id == row["run_id"]), None)
    if key is None:
        raise ConfigError(f"run_id {row['run_id']!r} is not in the config grid")
    if run_seed(config, key) != int(row["seed"]):
        raise ConfigError("recorded seed does not match the config")
    k_hat = float(row["k_hat"])
    return execute_run(config, key, k_hat)


def strip_column(csv_text: str, column: str = "wall_ms") -> str:
    """CSV text with one column removed (for determinism comparisons)."""
    rows = list(csv.reader(io.StringIO(csv_text)))
    if not rows:
        return ""
    idx = rows[0].index(column)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow(r[:idx] + r[idx + 1:])
    return buf.getvalue()
