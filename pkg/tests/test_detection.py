import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import signal

from knifecool.constants import TWO_PI
from knifecool.detection import (PhotocurrentTrace, OpticalConfig, knife_normal_coefficients,
                                 knife_reflection, knife_transmission, project_onto_knife_normal,
                                 read_photocurrent_csv, sample_photon_counts, scattering_rate,
                                 shot_noise_level, slope_matched_sigma, write_photocurrent_csv)
from knifecool.errors import ConfigError

M = 100.0
SIGMA = slope_matched_sigma(M)
A1, A2 = np.deg2rad(-28.87), np.deg2rad(60.24)

finite_d = st.floats(-1e-5, 1e-5, allow_nan=False)


# --- scattering rate --------------------------------------------------------------------

def test_rate_saturates_at_rmax():
    assert scattering_rate(np.inf, 19.04e3) == pytest.approx(19.04e3)
    assert scattering_rate(1e9, 19.04e3) == pytest.approx(19.04e3, rel=1e-8)


def test_rate_zero_and_half():
    assert scattering_rate(0, 19.04e3) == 0
    assert scattering_rate(1, 19.04e3) == pytest.approx(9.52e3)


def test_rate_rejects_negative_s():
    with pytest.raises(ValueError):
        scattering_rate(-1, 1.0)


# --- knife-normal geometry -------------------------------------------------------------------

def test_orientation_A_projections():
    a1 = A2 - np.pi / 2
    knife = A2 - np.pi / 2
    assert project_onto_knife_normal([0.0, 1.0], (a1, A2), knife) == pytest.approx(1.0)
    assert abs(project_onto_knife_normal([1.0, 0.0], (a1, A2), knife)) <= 0.02


def test_orientation_B_equal_projections():
    a1 = A2 - np.pi / 2
    knife = 0.5 * (a1 + A2) - np.pi / 2
    c = knife_normal_coefficients((a1, A2), knife)
    np.testing.assert_allclose(np.abs(c), 1 / np.sqrt(2), rtol=1e-12)


def test_measured_axes_with_normal_along_axis2():
    c = knife_normal_coefficients((A1, A2), A2 - np.pi / 2)
    assert c[0] == pytest.approx(np.cos(np.deg2rad(89.11)), abs=1e-9)
    assert c[1] == pytest.approx(1.0)


# --- knife-edge response -----------------------------------------------------------------------

def test_balanced_alignment():
    assert knife_transmission(0.0, M, SIGMA) == 0.5


def test_saturation_limits():
    assert knife_transmission(1.0, M, SIGMA) == 1.0
    assert knife_transmission(-1.0, M, SIGMA) == 0.0


def test_slope_matches_measured_value():
    h = 1e-12
    s = (knife_transmission(h, M, SIGMA) - knife_transmission(-h, M, SIGMA)) / (2 * h)
    assert s == pytest.approx(M / (SIGMA * np.sqrt(2 * np.pi)), rel=1e-6)
    assert 2 * s == pytest.approx(4.46e6, rel=1e-6)
    assert OpticalConfig().normalized_slope == pytest.approx(4.46e6, rel=1e-3)


@given(finite_d)
def test_energy_split_exact(d):
    assert knife_transmission(d, M, SIGMA) + knife_reflection(d, M, SIGMA) == 1.0


@given(finite_d)
def test_symmetry(d):
    assert knife_transmission(d, M, SIGMA) + knife_transmission(-d, M, SIGMA) == pytest.approx(
        1.0, abs=1e-15)


@given(finite_d, st.floats(1e-12, 1e-7))
def test_strictly_increasing(d, step):
    lo, hi = knife_transmission(d, M, SIGMA), knife_transmission(d + step, M, SIGMA)
    # strict where float resolution allows; never decreasing
    assert hi >= lo
    if 0.001 < lo < 0.999:
        assert hi > lo


def test_linear_regime():
    # photocurrent 1 + erf(...) against its linearisation 1 + slope * d
    d = np.linspace(-0.2, 0.2, 401) * SIGMA / M
    exact = 2 * knife_transmission(d, M, SIGMA)
    lin = 1 + 2 * M * d / (SIGMA * np.sqrt(2 * np.pi))
    assert np.max(np.abs(exact / lin - 1)) < 3e-3


# --- photon counting ------------------------------------------------------------------------------

def test_zero_rate_gives_zero_counts():
    assert np.all(sample_photon_counts(np.zeros(1000), 1e-6, np.random.default_rng(0)) == 0)


def test_poisson_mean():
    n = 10_000_000
    c = sample_photon_counts(np.full(n, 1e5), 1e-6, np.random.default_rng(1))
    assert abs(c.mean() - 0.1) < 3 * np.sqrt(0.1 / n)


def test_shot_noise_floor_flat():
    fs = 1e6
    c = sample_photon_counts(np.full(2_000_000, 1e5), 1 / fs, np.random.default_rng(2))
    f, p = signal.welch(c.astype(float), fs=fs, nperseg=4096)
    band = p[(f > 10e3) & (f < 450e3)]
    level = shot_noise_level(0.1, fs)
    n = len(band) // 16 * 16
    assert np.all(np.abs(band[:n].reshape(-1, 16).mean(axis=1) / level - 1) < 0.1)


def test_negative_rate_rejected():
    with pytest.raises(ValueError):
        sample_photon_counts([-1.0], 1e-6, np.random.default_rng(0))


def test_optical_config_names_key():
    with pytest.raises(ConfigError, match="optics.magnification"):
        OpticalConfig(magnification=-1)


def test_photocurrent_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    t = PhotocurrentTrace(5e6, rng.poisson(0.2, 1000), "transmitted")
    r = PhotocurrentTrace(5e6, rng.poisson(0.2, 1000), "reflected")
    path = tmp_path / "pc.csv"
    write_photocurrent_csv(path, t, r)
    t2, r2 = read_photocurrent_csv(path)
    assert np.array_equal(t.samples, t2.samples) and np.array_equal(r.samples, r2.samples)
    assert t2.sample_rate == pytest.approx(5e6)


def test_modulation_transfer():
    # sinusoidal motion across the edge; the count modulation scaled by the slope returns A
    fs, f0, A = 10e6, 455e3, 20e-9
    t = np.arange(4_000_000) / fs
    d = A * np.sin(TWO_PI * f0 * t)
    rate = 2.0e7 * knife_transmission(d, M, SIGMA)
    c = sample_photon_counts(rate, 1 / fs, np.random.default_rng(3))
    n = c / c.mean()
    z = 2 * np.mean(n * np.exp(-1j * TWO_PI * f0 * t))
    assert abs(z) / OpticalConfig().normalized_slope == pytest.approx(A, rel=0.05)
