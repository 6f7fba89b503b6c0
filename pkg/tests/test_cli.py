"""Config handling, rendering, command tables, exit codes, manifests."""

import json
import math
import shutil

import numpy as np
import pytest

from spsim import cli
from spsim.cli import (
    RunConfig,
    build_window,
    cmd_coherence,
    cmd_hom_delay,
    cmd_mc_validate,
    cmd_mz,
    emission_gamma,
    load_config,
    main,
    parse_sweep,
    render_csv,
    render_json,
    resolve_amplitude,
    _apply_axis,
    _format_cell,
    _overrides_from_args,
)
from spsim.errors import ConfigError, EstimateError
from spsim.model import FWHM_TO_SIGMA


# ---------------------------------------------------------------------------
# configuration


def test_config_round_trip():
    cfg = RunConfig(system="lambda", fwhm=0.5, area=2.0, calibrate=False,
                    seed=7, splitter_t2=0.3, splitter_r2=0.7)
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("kwargs", [
    {"system": "three_level"},
    {"format": "yaml"},
    {"amplitude": 1.0},                      # conflicts with calibrate
    {"amplitude": 1.0, "area": 2.0, "calibrate": False},
    {"calibrate": False},                    # nothing fixes the drive
    {"fwhm": 0.0, "area": 1.0, "calibrate": False},
    {"eta": 1.5},
    {"trials": 0},
    {"sweep": "fwhm:0.1:1"},
    {"system_b": {"bogus": 1.0}},
])
def test_config_rejects(kwargs):
    with pytest.raises(ConfigError):
        RunConfig(**kwargs)


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"fhwm": 0.2})


def test_parse_sweep():
    assert parse_sweep("fwhm:0.02:0.2:10") == ("fwhm", 0.02, 0.2, 10)
    assert parse_sweep("delay:-20:20:5") == ("delay", -20.0, 20.0, 5)
    assert parse_sweep("dephasing:0:2:3") == ("dephasing", 0.0, 2.0, 3)
    for bad in ("fwhm:0.1:1", "radius:1:2:3", "fwhm:a:b:3", "fwhm:0.1:1:0",
                "fwhm:0:1:3", "fwhm:1:0.5:3"):
        with pytest.raises(ConfigError):
            parse_sweep(bad)


def test_load_config_precedence(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"fwhm": 2.0, "seed": 5, "area": 1.0,
                                "calibrate": False}))
    cfg = load_config(str(path), {"fwhm": 3.0})
    assert cfg.fwhm == 3.0 and cfg.seed == 5 and cfg.area == 1.0

    path.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ConfigError):
        load_config(str(path), {})
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(str(path), {})
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(path), {})
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"), {})


def test_override_extraction():
    parser = cli.build_parser()
    args = parser.parse_args(["coherence", "--calibrate", "--area", "2",
                              "--seed", "9"])
    ov = _overrides_from_args(args)
    # an explicit calibrate wins over any drive strength flags
    assert ov["calibrate"] is True and ov["area"] is None
    assert ov["amplitude"] is None and ov["seed"] == 9

    args = parser.parse_args(["coherence", "--area", "2"])
    ov = _overrides_from_args(args)
    assert ov["area"] == 2.0 and ov["calibrate"] is False


def test_apply_axis():
    cfg = RunConfig(fwhm=1.0, area=2.0, calibrate=False)
    assert _apply_axis(cfg, "fwhm", 0.3).fwhm == 0.3
    assert _apply_axis(cfg, "dephasing", 0.7).gamma_d == 0.7
    swept = _apply_axis(RunConfig(), "area", 1.5)
    assert swept.area == 1.5 and not swept.calibrate
    with pytest.raises(ConfigError):
        _apply_axis(cfg, "delay", 1.0)


def test_emission_gamma_per_system():
    assert emission_gamma(RunConfig(gamma=0.5)) == 0.5
    assert emission_gamma(RunConfig(system="ladder", gamma_12=2.0)) == 2.0
    assert emission_gamma(RunConfig(system="lambda", gamma_23=3.0)) == 3.0


def test_build_window_explicit_grid():
    cfg = RunConfig(grid_t=10.0, grid_n=201, center=2.0, area=1.0,
                    calibrate=False)
    center, grid = build_window(cfg)
    assert center == 2.0 and grid.t_end == 10.0 and grid.n == 201
    with pytest.raises(ConfigError):
        build_window(RunConfig(grid_t=10.0, area=1.0, calibrate=False))


def test_resolve_amplitude_from_area():
    cfg = RunConfig(fwhm=1.0, area=2.0, calibrate=False)
    center, grid = build_window(cfg)
    amp = resolve_amplitude(cfg, center, grid)
    unit = FWHM_TO_SIGMA * math.sqrt(2.0 * math.pi)
    assert amp == pytest.approx(2.0 / unit, rel=1e-12)
    fixed = RunConfig(amplitude=1.3, calibrate=False)
    assert resolve_amplitude(fixed, center, grid) == 1.3


# ---------------------------------------------------------------------------
# rendering


def test_format_cell_demotes_numpy_scalars():
    assert _format_cell(np.float64(1.5)) == "1.5"
    assert _format_cell(np.int64(3)) == "3"
    assert _format_cell(None) == ""
    assert _format_cell("ok") == "ok"
    with pytest.raises(EstimateError):
        _format_cell(float("nan"))


def test_render_csv():
    out = render_csv(("a", "b"), [{"a": 1, "b": 0.25}, {"a": None, "b": "x"}])
    assert out == "a,b\n1,0.25\n,x\n"


def test_render_json_refuses_nan():
    rows = [{"a": np.float64(2.0), "b": "ok"}]
    parsed = json.loads(render_json(("a", "b"), rows))
    assert parsed["rows"][0]["a"] == 2.0
    with pytest.raises(EstimateError):
        render_json(("a",), [{"a": float("nan")}])


# ---------------------------------------------------------------------------
# command tables


def test_coherence_single_point_table():
    cfg = RunConfig(fwhm=1.0, area=2.0, calibrate=False)
    header, rows = cmd_coherence(cfg)
    assert header[:2] == ("axis", "value") and header[-1] == "status"
    assert len(rows) == 1
    row = rows[0]
    assert row["status"] == "ok" and row["value"] == 1.0
    assert 0.0 < row["g2_zero"] < 1.0
    assert 0.0 < row["mean_photons"] < 2.0


def test_coherence_error_rows_keep_table_alive():
    # unreachable target: the row reports the failure instead of aborting
    header, rows = cmd_coherence(RunConfig(fwhm=0.05, target=3.0))
    assert len(rows) == 1
    assert rows[0]["status"].startswith("error:")
    assert rows[0]["g2_zero"] is None


def test_mz_peak_table_asymmetric_splitters():
    cfg = RunConfig(fwhm=1.0, area=2.0, calibrate=False,
                    splitter_t1=0.4, splitter_r1=0.6,
                    splitter_t2=0.3, splitter_r2=0.7)
    header, rows = cmd_mz(cfg)
    assert [r["n"] for r in rows] == [-2, -1, 0, 1, 2]
    # outer peaks scale with the second splitter only
    ratio = rows[0]["amplitude"] / rows[4]["amplitude"]
    assert ratio == pytest.approx(0.49 / 0.09, rel=1e-12)


def test_mc_validate_small_run_passes():
    cfg = RunConfig(fwhm=0.5, area=2.0, calibrate=False, trials=500, seed=4)
    header, rows = cmd_mc_validate(cfg)
    assert header[-1] == "verdict"
    assert {r["quantity"] for r in rows} == {"g2_zero", "mean_photons"}
    assert all(r["verdict"] == "PASS" for r in rows)


def test_hom_delay_requires_delay_sweep():
    with pytest.raises(ConfigError):
        cmd_hom_delay(RunConfig(fwhm=1.0, area=2.0, calibrate=False))
    with pytest.raises(ConfigError):
        cmd_hom_delay(RunConfig(fwhm=1.0, area=2.0, calibrate=False,
                                sweep="fwhm:0.1:1:3"))


def test_hom_delay_table_via_main(tmp_path):
    out = tmp_path / "hom.csv"
    code = main(["hom-delay", "--fwhm", "1.0", "--area", "2",
                 "--sweep", "delay:-5:5:5", "--out", str(out)])
    assert code == 0
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "delay,steps,g2_hom,status"
    assert len(lines) == 6
    rows = [line.split(",") for line in lines[1:]]
    assert all(r[3] == "ok" for r in rows)
    delays = [float(r[0]) for r in rows]
    values = {d: float(r[2]) for d, r in zip(delays, rows)}
    # delays snap to the grid
    for want, got in zip((-5.0, -2.5, 0.0, 2.5, 5.0), delays):
        assert abs(got - want) <= 0.05
    # identical sources: interference fills the dip at zero delay
    assert values[0.0] < min(v for d, v in values.items() if abs(d) > 1)
    near = {d: v for d, v in values.items() if abs(abs(d) - 2.5) < 0.1}
    lo, hi = min(near.values()), max(near.values())
    assert hi - lo < 1e-6  # mirror-symmetric in the delay sign


# ---------------------------------------------------------------------------
# end-to-end runs


def test_reruns_are_byte_identical(tmp_path):
    argv = ["coherence", "--fwhm", "1.0", "--area", "2", "--seed", "9"]
    out_a, out_b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(argv + ["--out", str(out_a)]) == 0
    assert main(argv + ["--out", str(out_b)]) == 0
    assert out_a.read_bytes() == out_b.read_bytes()

    man_a = json.loads((tmp_path / "a.csv.manifest.json").read_text())
    man_b = json.loads((tmp_path / "b.csv.manifest.json").read_text())
    for man in (man_a, man_b):
        man.pop("wall_time_s")
        man.pop("output")
        man["config"].pop("out")
    assert man_a == man_b
    assert man_a["command"] == "coherence"
    assert man_a["config"]["area"] == 2.0
    assert man_a["config"]["calibrate"] is False
    assert man_a["config"]["seed"] == 9


def test_mz_json_output(tmp_path):
    out = tmp_path / "mz.json"
    code = main(["mz", "--fwhm", "1.0", "--area", "2", "--format", "json",
                 "--out", str(out)])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["columns"] == ["n", "amplitude", "status"]
    assert len(doc["rows"]) == 5
    assert [r["n"] for r in doc["rows"]] == [-2, -1, 0, 1, 2]


def test_exit_code_bad_config(capsys):
    assert main(["coherence", "--fwhm", "-1", "--area", "2"]) == 1
    assert "config error" in capsys.readouterr().err


def test_exit_code_all_rows_error(monkeypatch, capsys):
    def broken(cfg):
        return ("status",), [{"status": "error: boom"}]

    monkeypatch.setitem(cli._COMMANDS, "mz", broken)
    assert main(["mz", "--fwhm", "1.0", "--area", "2"]) == 2
    capsys.readouterr()


def test_exit_code_failed_verdict(monkeypatch, capsys):
    def failing(cfg):
        return ("quantity", "verdict"), [{"quantity": "g2", "verdict": "FAIL"}]

    monkeypatch.setitem(cli._COMMANDS, "mc-validate", failing)
    assert main(["mc-validate", "--fwhm", "1.0", "--area", "2"]) == 3
    capsys.readouterr()


def test_console_script_installed():
    assert shutil.which("spsim") is not None
