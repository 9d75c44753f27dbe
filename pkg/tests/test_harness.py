import csv
import io
import json
import math
import xml.etree.ElementTree as ET

import pytest
from hypothesis import given, settings, strategies as st

from probflow.harness import (
    REPORT_COLUMNS,
    ConfigError,
    EmptyReport,
    ExperimentConfig,
    ExperimentReport,
    PerturbationGrid,
    SamplerSpec,
    ScheduleSpec,
    TargetSpec,
    TvSpec,
    emit_plots,
    grid,
    load_report,
    rerun_row,
    run_sweep,
    strip_column,
)
from probflow.metrics import theorem_bound
from probflow.plotting import Axis, tv_vs_T_figure

SVG = "{http://www.w3.org/2000/svg}"


def small_config(T=(30, 60), kinds=("none",), deltas=(0.0,), **target):
    spec = dict(family="low_rank_gaussian", d=4, k=(1,), seed=3)
    spec.update(target)
    return ExperimentConfig(target=TargetSpec(**spec), schedule=ScheduleSpec(T=tuple(T)),
                            sampler=SamplerSpec(n=300, seed=5),
                            perturbation=PerturbationGrid(kind=kinds, delta=deltas, seed=2),
                            tv=TvSpec(n=300, eps_n=8))


def fake_row(T, tv, k=2, d=32, kind="none", delta=0.0, k_hat="nan", eps=0.0):
    r = dict.fromkeys(REPORT_COLUMNS, "0")
    r.update(run_id=f"k{k}-T{T}-star-{kind}-{delta!r}", status="ok", T=str(T), d=str(d),
             k_nominal=str(k), k_hat=str(k_hat), coeff="star", kind=kind, delta=repr(delta),
             tv=repr(tv), tv_stderr="0.001", eps_score=repr(eps), eps_jacobi=repr(eps))
    return r


# -- configs ------------------------------------------------------------------


def test_ini_round_trip_defaults():
    cfg = ExperimentConfig()
    assert ExperimentConfig.from_ini(cfg.to_ini()) == cfg


def test_parses_handwritten_ini():
    text = """
    [target]
    family = gmm
    d = 8
    k = 1, 2   # two ranks
    [schedule]
    T = 50, 100
    [perturbation]
    kind = tangential
    delta = 0.01, 0.1
    """
    cfg = ExperimentConfig.from_ini("\n".join(line.strip() for line in text.splitlines()))
    assert cfg.target.k == (1, 2) and cfg.schedule.T == (50, 100)
    assert cfg.perturbation.delta == (0.01, 0.1)


@settings(max_examples=40, deadline=None)
@given(d=st.integers(1, 40), T=st.lists(st.integers(20, 3000), max_size=4),
       deltas=st.lists(st.floats(0, 1, allow_subnormal=False), min_size=1, max_size=3),
       n=st.integers(1, 10_000), fam=st.sampled_from(["gmm", "low_rank_gaussian", "cube_cloud"]),
       radius=st.one_of(st.none(), st.floats(0.1, 10)))
def test_config_round_trips(d, T, deltas, n, fam, radius):
    cfg = ExperimentConfig(
        target=TargetSpec(family=fam, d=d, k=(1,), support_radius=radius),
        schedule=ScheduleSpec(T=tuple(T)), sampler=SamplerSpec(n=n),
        perturbation=PerturbationGrid(kind=("gain",), delta=tuple(deltas)))
    assert ExperimentConfig.from_ini(cfg.to_ini()) == cfg
    assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    assert ExperimentConfig.from_ini(cfg.to_ini()).config_hash() == cfg.config_hash()


def test_load_json_and_ini(tmp_path):
    cfg = small_config()
    (tmp_path / "c.json").write_text(json.dumps(cfg.to_dict()))
    (tmp_path / "c.ini").write_text(cfg.to_ini())
    assert ExperimentConfig.load(tmp_path / "c.json") == cfg
    assert ExperimentConfig.load(tmp_path / "c.ini") == cfg
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.ini")


@pytest.mark.parametrize("text", [
    "[target]\nfamily = banana\n",
    "[target]\nd = 4\nk = 9\n",
    "[schedule]\nT = 1\n",
    "[schedule]\nc0 = 0\n",
    "[sampler]\ncoeff = fancy\n",
    "[perturbation]\nkind = wobble\n",
    "[perturbation]\ndelta = -0.1\n",
    "[target]\nwat = 1\n",
    "[nonsense]\nx = 1\n",
    "[sampler]\nn = lots\n",
    "[tv]\nkhat_n = 100\nkhat_eps = 0.5\n",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_ini(text)


def test_hash_ignores_output_paths():
    a = small_config()
    b = ExperimentConfig.from_dict({**a.to_dict(), "output": {"csv": "elsewhere.csv"}})
    assert a.config_hash() == b.config_hash()
    assert small_config(T=(30,)).config_hash() != a.config_hash()


def test_grid_order_and_delta_expansion():
    cfg = small_config(T=(30, 60), kinds=("none", "gain"), deltas=(0.0, 0.1))
    ids = [k.run_id for k in grid(cfg)]
    assert ids == ["k1-T30-star-none-0.0", "k1-T30-star-gain-0.0", "k1-T30-star-gain-0.1",
                   "k1-T60-star-none-0.0", "k1-T60-star-gain-0.0", "k1-T60-star-gain-0.1"]


# -- sweeps -------------------------------------------------------------------


def test_two_T_sweep_rows_and_trend():
    rep = run_sweep(small_config(T=(20, 200)))
    assert len(rep.rows) == 2 and all(r["status"] == "ok" for r in rep.rows)
    tv = rep.column("tv")
    assert tv[0] > tv[1]
    assert rep.column("eps_score") == [0.0, 0.0]


def test_empty_T_list_gives_no_rows(tmp_path):
    path = tmp_path / "out.csv"
    rep = run_sweep(small_config(T=()), path)
    assert rep.rows == []
    assert path.read_text().strip() == ",".join(REPORT_COLUMNS)
    with pytest.raises(EmptyReport):
        emit_plots(rep, tmp_path / "plots")


def test_sweep_is_deterministic_up_to_wall_time(tmp_path):
    cfg = small_config(kinds=("none", "tangential"), deltas=(0.05,))
    run_sweep(cfg, tmp_path / "a.csv")
    run_sweep(cfg, tmp_path / "b.csv", threads=2)
    a, b = (tmp_path / "a.csv").read_text(), (tmp_path / "b.csv").read_text()
    assert strip_column(a) == strip_column(b)
    assert "wall_ms" not in strip_column(a).splitlines()[0]


def test_resume_after_stop_and_torn_line(tmp_path):
    cfg = small_config(T=(20, 30, 40))
    ref = tmp_path / "ref.csv"
    run_sweep(cfg, ref)
    path = tmp_path / "part.csv"
    run_sweep(cfg, path, stop_after=2)
    assert len(load_report(path).rows) == 2
    # simulate a crash mid-write of the second row
    text = path.read_text()
    path.write_text(text[: len(text) - 25])
    rep = run_sweep(cfg, path)
    assert [r["run_id"] for r in rep.rows] == [k.run_id for k in grid(cfg)]
    assert strip_column(path.read_text()) == strip_column(ref.read_text())


def test_resume_refuses_foreign_header(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ConfigError):
        run_sweep(small_config(), path)


def test_rerun_row_reproduces(tmp_path):
    cfg = small_config(kinds=("constant_bias",), deltas=(0.1,), T=(30,))
    rep = run_sweep(cfg)
    row = rep.rows[0]
    again = rerun_row(cfg, row)
    for col in ("tv", "tv_stderr", "eps_score", "eps_jacobi"):
        assert abs(float(again[col]) - float(row[col])) <= 1e-12
    with pytest.raises(ConfigError):
        rerun_row(small_config(T=(31,)), row)
    with pytest.raises(ConfigError):
        rerun_row(cfg, {**row, "seed": "1"})


def test_error_is_recorded_in_row(monkeypatch):
    import probflow.harness as hz

    def boom(*a, **k):
        raise hz.DegenerateInput("all zero")

    monkeypatch.setattr(hz, "tv_monte_carlo", boom)
    rep = run_sweep(small_config(T=(20, 30)))
    assert [r["status"] for r in rep.rows] == ["error: DegenerateInput: all zero"] * 2
    assert math.isnan(float(rep.rows[0]["tv"]))
    assert rep.ok_rows() == []


def test_khat_column(tmp_path):
    cfg = ExperimentConfig(target=TargetSpec(family="torus_cloud", d=8, k=(1, 2), n_points=512),
                           schedule=ScheduleSpec(T=(20,)), sampler=SamplerSpec(n=50),
                           tv=TvSpec(n=50, eps_n=4, khat_n=1500, khat_eps=(0.8, 0.6, 0.45)))
    rep = run_sweep(cfg)
    kh = [float(r["k_hat"]) for r in rep.rows]
    assert kh[0] < kh[1]
    written = emit_plots(rep, tmp_path, which=["khat_vs_k"])
    assert written[0].name == "khat_vs_k.svg"


# -- plots --------------------------------------------------------------------


def parse(path):
    return ET.parse(path).getroot()


def polylines(root, cls):
    return [p for p in root.iter(f"{SVG}polyline") if p.get("class") == cls]


def test_three_point_series_has_three_vertices(tmp_path):
    rep = ExperimentReport([fake_row(T, 0.3 / T**0.5) for T in (100, 200, 400)])
    (path,) = emit_plots(rep, tmp_path, which=["tv_vs_T"])
    (line,) = polylines(parse(path), "data")
    assert len(line.get("points").split()) == 3


def test_log_axis_tick_position(tmp_path):
    rep = ExperimentReport([fake_row(T, 0.1) for T in (50, 100, 800)] +
                           [fake_row(T, 0.05, k=4) for T in (50, 800)])
    (path,) = emit_plots(rep, tmp_path, which=["tv_vs_T"])
    root = parse(path)
    ticks = {float(g.get("data-value")): float(g.find(f"{SVG}line").get("x1"))
             for g in root.iter(f"{SVG}g") if g.get("class") == "xtick"}
    x50, x800 = ticks[50.0], ticks[800.0]
    frac = (math.log(100) - math.log(50)) / (math.log(800) - math.log(50))
    assert ticks[100.0] == pytest.approx(x50 + frac * (x800 - x50), abs=2e-3)


def test_bound_overlay_matches_theorem_bound():
    Ts = [100, 1000, 10_000, 100_000]
    rep = ExperimentReport([fake_row(T, 0.2, k=2, d=16) for T in Ts])
    fig = tv_vs_T_figure(rep, c=0.01)
    bound = [s for s in fig.series if s.kind.startswith("bound")]
    pts = {}
    for s in bound:
        pts.update(zip(s.xs, s.ys))
    for T in Ts:
        assert pts[T] == theorem_bound(2, 16, T, c=0.01).value


def test_vacuous_bound_is_dashed(tmp_path):
    Ts = [100, 1000, 10_000, 100_000]
    vals = [theorem_bound(2, 16, T).value for T in Ts]
    assert vals[0] > 1 and vals[-1] < 1
    rep = ExperimentReport([fake_row(T, 0.2, k=2, d=16) for T in Ts])
    (path,) = emit_plots(rep, tmp_path, which=["tv_vs_T"])
    root = parse(path)
    vac = polylines(root, "bound-vacuous")
    solid = polylines(root, "bound")
    assert vac and solid
    assert all(p.get("stroke-dasharray") for p in vac)
    assert not any(p.get("stroke-dasharray") for p in solid)


def test_tv_vs_delta_plot(tmp_path):
    rows = [fake_row(400, 0.02), fake_row(400, 0.05, kind="tangential", delta=0.1, eps=0.1),
            fake_row(400, 0.03, kind="tangential", delta=0.03, eps=0.03)]
    (path,) = emit_plots(ExperimentReport(rows), tmp_path, which=["tv_vs_delta"])
    (line,) = polylines(parse(path), "data")
    xs = [float(p.split(",")[0]) for p in line.get("points").split()]
    assert len(xs) == 3 and xs == sorted(xs)


def test_requested_plot_without_data_raises(tmp_path):
    rep = ExperimentReport([fake_row(100, 0.1)])
    with pytest.raises(EmptyReport):
        emit_plots(rep, tmp_path, which=["tv_vs_delta"])
    with pytest.raises(EmptyReport):
        emit_plots(ExperimentReport([]), tmp_path)
    # implicit selection skips what has no data
    written = emit_plots(rep, tmp_path)
    assert [p.name for p in written] == ["tv_vs_T.svg"]


def test_axis_validation():
    with pytest.raises(ValueError):
        Axis(0.0, 1.0, 0, 100, log=True)
    ax = Axis(2.0, 2.0, 0, 100)
    assert 0 < ax.map(2.0) < 100


def test_report_csv_round_trip(tmp_path):
    rows = [fake_row(T, 1.0 / T) for T in (100, 200, 400)]
    ExperimentReport(rows).to_csv(tmp_path / "r.csv")
    back = load_report(tmp_path / "r.csv")
    assert back.rows == rows
    (fit,) = back.fits.values()
    assert fit.slope == pytest.approx(-1.0)
    header = next(csv.reader(io.StringIO((tmp_path / "r.csv").read_text())))
    assert tuple(header) == REPORT_COLUMNS
