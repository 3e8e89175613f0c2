"""Camera images of a (driven) ion and elliptical Gaussian fits.

Pixel coordinates: column index -> x, row index -> y, both increasing, so
angles are measured counter-clockwise from the +x (column) axis with row 0
at the bottom of the picture (``origin="lower"`` in matplotlib terms).
Positions and widths are in metres at the object plane.
"""

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import ConfigError, FitError

DEFAULT_PIXEL = 0.2e-6
DEFAULT_PSF_SIGMA = 0.6e-6


@dataclass
class IonImage:
    """Pixel intensities [ADU] on a square grid of ``pixel_size`` metres."""

    intensities: np.ndarray
    pixel_size: float = DEFAULT_PIXEL

    def __post_init__(self):
        self.intensities = np.asarray(self.intensities, dtype=float)
        if self.intensities.ndim != 2:
            raise ValueError("image must be two-dimensional")
        if not np.all(np.isfinite(self.intensities)) or np.any(self.intensities < 0):
            raise ValueError("intensities must be finite and non-negative")
        if not self.pixel_size > 0:
            raise ValueError("pixel_size must be positive")

    @property
    def shape(self):
        return self.intensities.shape

    def grid(self):
        """Pixel-center coordinates ``(x, y)`` [m], each of the image shape."""
        rows, cols = self.shape
        y, x = np.mgrid[0:rows, 0:cols].astype(float)
        return x * self.pixel_size, y * self.pixel_size

    @property
    def total(self):
        return float(self.intensities.sum())


@dataclass
class GaussianFit2D:
    """Elliptical Gaussian ``amplitude * exp(-a^2/2s_a^2 - b^2/2s_b^2) + background``.

    ``angle`` is the direction of the major axis (width ``sigma_major``) in
    (-pi/2, pi/2]. ``degenerate`` is set when the spot is too round for
    the angle to mean anything.
    """

    center: tuple
    sigma_major: float
    sigma_minor: float
    angle: float
    amplitude: float
    background: float
    angle_err: float = np.nan
    sigma_err: tuple = (np.nan, np.nan)
    degenerate: bool = False
    pixel_size: float = DEFAULT_PIXEL

    @property
    def flux(self):
        """Integrated spot counts (amplitude times area over pixel area)."""
        return 2 * np.pi * self.amplitude * self.sigma_major * self.sigma_minor / self.pixel_size ** 2


def _wrap_half(angle):
    # into (-pi/2, pi/2]
    return float(np.pi / 2 - (np.pi / 2 - angle) % np.pi)


def gaussian_model(x, y, x0, y0, sa, sb, angle, amplitude, background):
    ca, sn = np.cos(angle), np.sin(angle)
    dx, dy = x - x0, y - y0
    a = ca * dx + sn * dy
    b = -sn * dx + ca * dy
    return amplitude * np.exp(-0.5 * (a / sa) ** 2 - 0.5 * (b / sb) ** 2) + background


def gaussian_image(shape, sigma_major, sigma_minor, angle, amplitude, background=0.0,
                   center=None, pixel_size=DEFAULT_PIXEL):
    """Noiseless image of the fit model sampled at pixel centers."""
    img = IonImage(np.zeros(shape), pixel_size)
    x, y = img.grid()
    if center is None:
        center = ((shape[1] - 1) / 2 * pixel_size, (shape[0] - 1) / 2 * pixel_size)
    img.intensities = gaussian_model(x, y, center[0], center[1], sigma_major, sigma_minor,
                                     angle, amplitude, background)
    return img


def synthesize_driven_image(psf_sigma, drive_amplitude, drive_angle, counts, rng,
                            shape=(64, 64), pixel_size=DEFAULT_PIXEL, center=None,
                            background=0.0):
    """Long-exposure image of an ion oscillating along ``drive_angle``.

    Each detected photon lands at ``r0 + A sin(phase) u + PSF noise`` with
    uniformly distributed phase, so the excursion follows the arcsine law
    of a sinusoid. The photon number is Poisson with mean ``counts``;
    ``background`` adds Poisson counts per pixel.
    """
    if drive_amplitude < 0 or not np.isfinite(drive_amplitude):
        raise ConfigError("drive amplitude must be >= 0", "imaging.drive_amplitude_um")
    if not psf_sigma > 0:
        raise ConfigError("psf sigma must be positive", "imaging.psf_sigma_um")
    rows, cols = shape
    if center is None:
        center = (cols / 2 * pixel_size, rows / 2 * pixel_size)
    n = rng.poisson(counts)
    phase = rng.uniform(0, 2 * np.pi, n)
    exc = drive_amplitude * np.sin(phase)
    xy = rng.standard_normal((n, 2)) * psf_sigma
    xy[:, 0] += center[0] + exc * np.cos(drive_angle)
    xy[:, 1] += center[1] + exc * np.sin(drive_angle)
    # pixel k spans [k - 1/2, k + 1/2) so its center sits at k * pixel_size
    edges_x = (np.arange(cols + 1) - 0.5) * pixel_size
    edges_y = (np.arange(rows + 1) - 0.5) * pixel_size
    h, _, _ = np.histogram2d(xy[:, 1], xy[:, 0], bins=(edges_y, edges_x))
    if background > 0:
        h += rng.poisson(background, size=h.shape)
    return IonImage(h, pixel_size)


def _moments(img):
    x, y = img.grid()
    w = np.clip(img.intensities - np.median(img.intensities), 0, None)
    tot = w.sum()
    if not tot > 0:
        raise FitError("image has no spot above the median level")
    x0, y0 = (w * x).sum() / tot, (w * y).sum() / tot
    cxx = (w * (x - x0) ** 2).sum() / tot
    cyy = (w * (y - y0) ** 2).sum() / tot
    cxy = (w * (x - x0) * (y - y0)).sum() / tot
    ev, vec = np.linalg.eigh([[cxx, cxy], [cxy, cyy]])
    angle = np.arctan2(vec[1, 1], vec[0, 1])
    sa, sb = np.sqrt(np.maximum(ev[::-1], (0.5 * img.pixel_size) ** 2))
    return x0, y0, sa, sb, angle, w.max(), float(np.median(img.intensities))


def fit_gaussian_2d(image, weighted=False, degenerate_tol=3.0, min_ellipticity=0.05):
    """Least-squares elliptical Gaussian with constant background.

    Plain least squares by default: a driven ion is not Gaussian, and
    data-derived Poisson weights (``weighted=True``) then scatter the angle
    about three times more. The spot is flagged degenerate when
    ``sigma_major / sigma_minor - 1`` is below ``min_ellipticity``, when the
    two widths agree within ``degenerate_tol`` standard errors, or when the
    angle error exceeds 10 deg.
    """
    x, y = image.grid()
    data = image.intensities
    sig = np.sqrt(np.maximum(data, 1.0)) if weighted else np.ones_like(data)
    x0, y0, sa, sb, ang, amp, bg = _moments(image)
    if sa / sb < 1.05:
        # nearly round: the moment angle is arbitrary, seed a mild ellipse
        sb = sa / 1.05
    p0 = np.array([x0, y0, np.log(sa), np.log(sb), ang, amp, bg])
    px = image.pixel_size

    def resid(p):
        return ((gaussian_model(x, y, p[0] * px, p[1] * px, np.exp(p[2]) * px,
                                np.exp(p[3]) * px, p[4], p[5], p[6]) - data) / sig).ravel()

    # positions and widths in pixel units for conditioning
    q0 = p0.copy()
    q0[:2] /= px
    q0[2:4] -= np.log(px)
    try:
        sol = optimize.least_squares(resid, q0, method="lm", x_scale="jac", max_nfev=4000)
    except ValueError as exc:
        raise FitError(f"2-D Gaussian fit failed: {exc}") from exc
    if not sol.success or not np.all(np.isfinite(sol.x)):
        raise FitError(f"2-D Gaussian fit did not converge: {sol.message}")
    q = sol.x
    J = sol.jac
    dof = max(data.size - len(q), 1)
    chi2 = float(np.sum(sol.fun ** 2)) / dof
    try:
        cov = np.linalg.pinv(J.T @ J) * (max(chi2, 1.0) if weighted else chi2)
    except np.linalg.LinAlgError:
        cov = np.full((len(q), len(q)), np.nan)
    err = np.sqrt(np.abs(np.diag(cov)))

    sa, sb = np.exp(q[2]) * px, np.exp(q[3]) * px
    ea, eb = err[2] * sa, err[3] * sb
    angle = q[4]
    if sb > sa:
        sa, sb, ea, eb = sb, sa, eb, ea
        angle += np.pi / 2
    angle = _wrap_half(angle)
    angle_err = float(err[4])
    round_ = (sa / sb - 1 < min_ellipticity) or abs(sa - sb) < degenerate_tol * np.hypot(ea, eb)
    degenerate = bool(round_ or not angle_err < np.deg2rad(10.0))
    return GaussianFit2D((q[0] * px, q[1] * px), float(sa), float(sb), angle,
                         float(q[5]), float(q[6]), angle_err, (float(ea), float(eb)),
                         degenerate, px)


@dataclass
class AxisAngles:
    """Trap-axis directions from two driven images."""

    alpha1: float
    alpha2: float
    alpha1_err: float
    alpha2_err: float

    @property
    def orthogonality_defect(self):
        """``alpha2 - alpha1 - 90 deg`` wrapped into (-pi/2, pi/2] [rad]."""
        return _wrap_half(self.alpha2 - self.alpha1 - np.pi / 2)

    def degrees(self):
        return np.rad2deg([self.alpha1, self.alpha2, self.alpha1_err, self.alpha2_err])


def axis_angles(fit_drive1, fit_drive2, max_defect=np.deg2rad(10.0)):
    """Major-axis angles of images driven along axis 1 and axis 2.

    Raises FitError when either fit is degenerate or the two directions
    are further than ``max_defect`` from orthogonal (e.g. the same image
    passed twice).
    """
    for k, fit in enumerate((fit_drive1, fit_drive2), start=1):
        if fit.degenerate:
            raise FitError(f"image driven along axis {k} is not elongated; angle unreliable")
    out = AxisAngles(fit_drive1.angle, fit_drive2.angle, fit_drive1.angle_err,
                     fit_drive2.angle_err)
    if abs(out.orthogonality_defect) > max_defect:
        raise FitError(
            f"axes {np.rad2deg(out.alpha1):.2f} and {np.rad2deg(out.alpha2):.2f} deg are "
            f"{np.rad2deg(out.orthogonality_defect):+.2f} deg from orthogonal")
    return out


def write_image_csv(path, image):
    """Pixel matrix with a ``# rows=, cols=, pixel_size_m=`` header line."""
    rows, cols = image.shape
    header = f"rows={rows}, cols={cols}, pixel_size_m={float(image.pixel_size)!r}"
    np.savetxt(path, image.intensities, delimiter=",", header=header, fmt="%.10g")


def read_image_csv(path):
    with open(path) as fh:
        first = fh.readline().lstrip("#").strip()
    meta = dict(item.strip().split("=") for item in first.split(","))
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    rows, cols = int(meta["rows"]), int(meta["cols"])
    if data.shape != (rows, cols):
        raise ValueError(f"header says {rows}x{cols}, found {data.shape}")
    return IonImage(data, float(meta["pixel_size_m"]))
