import csv
import warnings

import numpy as np
import pytest

from knifecool.cli import main
from knifecool.config import load_config
from knifecool.errors import ConfigError
from knifecool.experiments import (analyse_run, calibration_drive, closed_loop_linewidths,
                                   run_axis_finding, run_gain_sweep, run_thermometry)

pytestmark = pytest.mark.filterwarnings("ignore::RuntimeWarning")

SHORT = {"duration_s": "0.1"}


def _header(path):
    with open(path) as fh:
        return next(r for r in csv.reader(fh) if r and not r[0].startswith("#"))


def _diff(a, b, err_a, err_b):
    return abs(a - b) / np.hypot(err_a, err_b)


# --- reproducibility ------------------------------------------------------------------

def test_cli_thermometry_byte_identical(tmp_path):
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        assert main(["thermometry", "--out", str(d), "--seed", "5", "--set", "duration_s=0.1"]) == 0
        outs.append(d)
    for f in ("calibration.csv", "fit.csv", "spectrum.csv"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes(), f


def test_cli_fit_axes_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["fit-axes", "--out", str(tmp_path / name)]) == 0
    for f in ("axes.csv", "image_undriven.csv", "image_drive1.csv", "image_drive2.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_sweep_independent_of_worker_count():
    gains = [0, 0.25, 0.5, 1, 2]
    serial = run_gain_sweep(load_config(overrides={**SHORT, "workers": "1"}), gains=gains)
    pooled = run_gain_sweep(load_config(overrides={**SHORT, "workers": "2"}), gains=gains)
    assert serial.rows == pooled.rows


def test_different_seeds_agree_statistically():
    cfg = load_config()
    a = run_thermometry(cfg, seed=21)
    b = run_thermometry(cfg, seed=22)
    assert a.T != b.T
    assert _diff(a.T, b.T, a.T_err, b.T_err) < 3


# --- channels and orientations ----------------------------------------------------------

def test_in_loop_and_out_loop_channels_agree_without_feedback():
    cfg = load_config()
    res = run_thermometry(cfg, seed=31, keep_record=True)
    other = analyse_run(cfg, res.record, res.slope, calibration_drive(cfg, []), "transmitted")
    assert res.channel == "reflected" and other.channel == "transmitted"
    assert _diff(res.T, other.T, res.T_err, other.T_err) < 3


def test_orientation_b_cools_both_axes():
    cfg = load_config(overrides={"orientation": "B"})
    off = run_thermometry(cfg, seed=41, gain=0.0)
    on = run_thermometry(cfg, seed=41, gain=0.5)
    assert on.axes == (0, 1)
    for k in (0, 1):
        assert on.T_eq[k] < 0.6 * off.T_eq[k]
        assert on.fit_for(k).T < 0.6 * off.fit_for(k).T


def test_closed_loop_linewidths_add_damping():
    cfg = load_config()
    bare = closed_loop_linewidths(cfg)
    np.testing.assert_allclose(bare, np.array(cfg.trap.gamma) / (2 * np.pi))
    cooled = closed_loop_linewidths(cfg, cfg.active_loops(1.0))
    # orientation A: the loop acts on axis 2 only
    assert cooled[0] == pytest.approx(bare[0]) and cooled[1] > 5 * bare[1]


def test_temperature_error_includes_calibration():
    res = run_thermometry(load_config(overrides=SHORT), seed=3)
    assert res.T_err > res.fits[-1].T_err


# --- axis finding -----------------------------------------------------------------------

def test_axis_finding_independent_of_drive_amplitude():
    cfg = load_config(overrides={"imaging.size_px": "128"})
    a1, a2, e1, e2 = run_axis_finding(cfg).angles.degrees()
    b1, b2, f1, f2 = run_axis_finding(cfg, drive_amplitude=2 * cfg.imaging["drive_amplitude"]
                                      ).angles.degrees()
    assert abs(b1 - a1) < 3 * np.hypot(e1, f1)
    assert abs(b2 - a2) < 3 * np.hypot(e2, f2)


def test_axis_finding_rejects_clipped_spot():
    cfg = load_config()
    with pytest.raises(ConfigError, match="imaging.size_px"):
        run_axis_finding(cfg, drive_amplitude=2 * cfg.imaging["drive_amplitude"])


def test_axis_finding_without_drive_gives_no_angle():
    cfg = load_config()
    res = run_axis_finding(cfg)
    assert res.fits[0].degenerate
    with pytest.raises(ConfigError, match="imaging.drive_amplitude_um"):
        run_axis_finding(cfg, drive_amplitude=0.0)


# --- saturation sweep -------------------------------------------------------------------

@pytest.mark.slow
def test_saturation_sweep_recovers_bath_parameters(saturation_sweep):
    res, _ = saturation_sweep
    cfg = load_config()
    fit = res.fit
    assert fit.T0 == pytest.approx(cfg.T0, rel=0.1)
    assert fit.rate_max == pytest.approx(cfg.optics.rate_297_max, rel=0.1)
    assert abs(fit.T0 - cfg.T0) < 3 * fit.T0_err


@pytest.mark.slow
def test_gain_sweep_columns(gain_sweep):
    res, _ = gain_sweep
    assert res.columns[:3] == ("gain", "T_K", "T_err_K")
    assert np.all(res.column("T_err_K") > 0)


# --- command line -----------------------------------------------------------------------

def test_cli_thermometry_outputs(tmp_path, capsys):
    assert main(["thermometry", "--out", str(tmp_path), "--set", "duration_s=0.1"]) == 0
    assert "T =" in capsys.readouterr().out
    for f in ("config_used.txt", "calibration.csv", "fit.csv", "spectrum.csv"):
        assert (tmp_path / f).exists()
    assert _header(tmp_path / "spectrum.csv") == ["freq_hz", "psd_raw_per_hz", "psd_m2_per_hz",
                                                   "model_m2_per_hz"]
    assert _header(tmp_path / "fit.csv") == ["key", "value"]
    # the used configuration reloads to the same run
    again = load_config(tmp_path / "config_used.txt")
    assert again.duration == 0.1


def test_cli_sweep_gain_columns(tmp_path):
    assert main(["sweep-gain", "--out", str(tmp_path), "--set", "duration_s=0.1",
                 "--set", "sweep.gains=0, 0.5, 1, 2, 4"]) == 0
    assert _header(tmp_path / "gain_sweep.csv")[:3] == ["gain", "T_K", "T_err_K"]


def test_cli_sweep_saturation_columns(tmp_path):
    assert main(["sweep-saturation", "--out", str(tmp_path), "--set", "duration_s=0.1",
                 "--set", "sweep.saturations=0.5, 1, 2, 4", "--set", "sweep.min_gains=1"]) == 0
    assert _header(tmp_path / "saturation_sweep.csv")[:5] == [
        "rate_297_per_ms", "T_nofb_K", "T_err_K", "T_min_K", "T_min_err_K"]
    assert (tmp_path / "saturation_fit.csv").exists()


def test_cli_simulate_and_calibrate(tmp_path):
    assert main(["simulate", "--out", str(tmp_path), "--set", "duration_s=0.01"]) == 0
    assert (tmp_path / "timeseries.csv").exists()
    assert main(["calibrate", "--out", str(tmp_path), "--set", "duration_s=0.1"]) == 0
    assert _header(tmp_path / "calibration.csv") == ["key", "value"]


def test_cli_config_error_exit_code(tmp_path, capsys):
    assert main(["thermometry", "--out", str(tmp_path), "--set", "trap.omega2_hz=-1"]) == 2
    assert "trap.omega2_hz" in capsys.readouterr().err
    assert main(["thermometry", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert main(["thermometry", "--out", str(tmp_path), "--set", "nonsense"]) == 2


def test_cli_short_run_is_config_error(tmp_path, capsys):
    assert main(["thermometry", "--out", str(tmp_path), "--set", "duration_s=0.001"]) == 2
    assert "duration_s" in capsys.readouterr().err


def test_cli_numerical_failure_exit_code(tmp_path, capsys):
    # a vanishing drive leaves no tone to calibrate on
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        code = main(["thermometry", "--out", str(tmp_path), "--set", "duration_s=0.1",
                     "--set", "drive.amplitude_nm=1e-6"])
    assert code == 3
    assert capsys.readouterr().err.startswith("numerical failure")
