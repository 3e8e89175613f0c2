import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from knifecool.errors import FitError
from knifecool.imaging import (DEFAULT_PIXEL, DEFAULT_PSF_SIGMA, IonImage, axis_angles,
                               fit_gaussian_2d, gaussian_image, read_image_csv,
                               synthesize_driven_image, write_image_csv)

A1, A2 = np.deg2rad(-28.87), np.deg2rad(60.24)
PSF = DEFAULT_PSF_SIGMA
SHAPE = (64, 64)


def _driven(angle, amp=3 * PSF, seed=0, counts=1e5):
    return synthesize_driven_image(PSF, amp, angle, counts, np.random.default_rng(seed),
                                   shape=SHAPE)


def _angle_diff(a, b):
    # difference of two axis directions modulo pi, in (-pi/2, pi/2]
    return np.pi / 2 - (np.pi / 2 - (a - b)) % np.pi


def test_noiseless_gaussian_angle_exact():
    img = gaussian_image(SHAPE, 1.5e-6, 0.6e-6, A1, 100.0, 2.0)
    fit = fit_gaussian_2d(img)
    assert abs(np.rad2deg(_angle_diff(fit.angle, A1))) < 1e-3
    assert fit.sigma_major == pytest.approx(1.5e-6, rel=1e-6)
    assert fit.sigma_minor == pytest.approx(0.6e-6, rel=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_poisson_gaussian_within_tolerance(seed):
    model = gaussian_image(SHAPE, 1.5e-6, 0.6e-6, A1, 1.0).intensities
    lam = model / model.sum() * 1e5
    img = IonImage(np.random.default_rng(seed).poisson(lam), DEFAULT_PIXEL)
    fit = fit_gaussian_2d(img)
    assert abs(np.rad2deg(_angle_diff(fit.angle, A1))) < 0.5
    assert fit.sigma_major == pytest.approx(1.5e-6, rel=0.03)
    assert fit.sigma_minor == pytest.approx(0.6e-6, rel=0.03)


def test_undriven_spot_is_isotropic_and_flagged():
    fit = fit_gaussian_2d(_driven(0.0, amp=0.0))
    assert fit.degenerate
    assert fit.sigma_major == pytest.approx(fit.sigma_minor, rel=0.03)


@pytest.mark.parametrize("seed", range(3))
def test_driven_along_axis2_recovers_angle(seed):
    fit = fit_gaussian_2d(_driven(A2, seed=seed))
    assert not fit.degenerate
    assert abs(np.rad2deg(_angle_diff(fit.angle, A2))) < 0.5


def test_quarter_turn_swaps_widths():
    f1 = fit_gaussian_2d(_driven(A2, seed=4))
    f2 = fit_gaussian_2d(_driven(A2 + np.pi / 2, seed=4))
    assert abs(np.rad2deg(_angle_diff(f2.angle, f1.angle + np.pi / 2))) < 0.5
    # the widths along the image axes trade places
    def xy_widths(f):
        c, s = np.cos(f.angle), np.sin(f.angle)
        wx = np.hypot(f.sigma_major * c, f.sigma_minor * s)
        wy = np.hypot(f.sigma_major * s, f.sigma_minor * c)
        return wx, wy
    wx1, wy1 = xy_widths(f1)
    wx2, wy2 = xy_widths(f2)
    assert wx2 == pytest.approx(wy1, rel=0.03) and wy2 == pytest.approx(wx1, rel=0.03)


@given(st.floats(-80, 80), st.floats(-80, 80))
@settings(max_examples=25, deadline=None)
def test_rotation_equivariance_model(a_deg, theta_deg):
    a, th = np.deg2rad(a_deg), np.deg2rad(theta_deg)
    f0 = fit_gaussian_2d(gaussian_image(SHAPE, 1.4e-6, 0.6e-6, a, 50.0, 1.0))
    f1 = fit_gaussian_2d(gaussian_image(SHAPE, 1.4e-6, 0.6e-6, a + th, 50.0, 1.0))
    assert abs(np.rad2deg(_angle_diff(f1.angle - f0.angle, th))) < 0.2


def test_rotation_equivariance_pixels():
    # an exact quarter turn of the pixel grid; +-90 deg agree modulo pi
    img = _driven(np.deg2rad(20.0), seed=7)
    f0 = fit_gaussian_2d(img)
    f1 = fit_gaussian_2d(IonImage(np.rot90(img.intensities), img.pixel_size))
    assert abs(abs(np.rad2deg(_angle_diff(f1.angle, f0.angle))) - 90) < 0.2


def test_flux_matches_photon_count():
    img = _driven(0.0, amp=0.0, seed=1)
    fit = fit_gaussian_2d(img)
    assert fit.flux == pytest.approx(img.total, rel=0.05)


def test_monotone_elongation():
    widths = [fit_gaussian_2d(_driven(A2, amp=a, seed=3)).sigma_major
              for a in np.array([0.5, 1.0, 2.0, 3.0, 4.0]) * PSF]
    assert np.all(np.diff(widths) > 0)


def test_axis_angles_paper_geometry():
    ang = axis_angles(fit_gaussian_2d(_driven(A1, seed=10)),
                      fit_gaussian_2d(_driven(A2, seed=11)))
    assert abs(np.rad2deg(ang.alpha1 - A1)) < 0.5
    assert abs(np.rad2deg(ang.alpha2 - A2)) < 0.5
    # alpha2 - alpha1 - 90 deg = -0.89 deg
    assert abs(np.rad2deg(ang.orthogonality_defect)) == pytest.approx(0.89, abs=0.5)


def test_axis_angles_swapped_inputs():
    f1, f2 = fit_gaussian_2d(_driven(A1, seed=10)), fit_gaussian_2d(_driven(A2, seed=11))
    a = axis_angles(f1, f2)
    b = axis_angles(f2, f1)
    assert (b.alpha1, b.alpha2) == (a.alpha2, a.alpha1)


def test_axis_angles_identical_inputs_raise():
    f = fit_gaussian_2d(_driven(A2, seed=12))
    with pytest.raises(FitError, match="orthogonal"):
        axis_angles(f, f)


def test_axis_angles_undriven_raises():
    f0 = fit_gaussian_2d(_driven(0.0, amp=0.0))
    f2 = fit_gaussian_2d(_driven(A2, seed=12))
    with pytest.raises(FitError, match="not elongated"):
        axis_angles(f0, f2)


def test_image_csv_roundtrip(tmp_path):
    img = _driven(A2, seed=2)
    write_image_csv(tmp_path / "im.csv", img)
    back = read_image_csv(tmp_path / "im.csv")
    assert np.array_equal(back.intensities, img.intensities)
    assert back.pixel_size == img.pixel_size
