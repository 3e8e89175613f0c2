"""Spectral estimation, spectrum calibration and Lorentzian thermometry.

Conventions
-----------
All spectra are one-sided densities per hertz. The motional model is

    S(f) = (4 k_B T / m) * g / ((w^2 - w_j^2)^2 + g^2 w^2) + offset,  w = 2 pi f

whose integral over f >= 0 (without offset) is k_B T / (m w_j^2).
A sinusoid of peak amplitude A contributes total power A^2 / 2.
"""

import re
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, signal
from scipy.ndimage import uniform_filter1d
from scipy.special import erf

from .constants import K_B, TWO_PI
from .detection import PhotocurrentTrace
from .errors import CalibrationError, FitError


@dataclass
class Spectrum:
    """One-sided PSD on a frequency grid.

    ``values`` are normalised-signal^2/Hz when raw and m^2/Hz once
    calibrated; ``scale`` is the factor already applied to the raw values.
    """

    freqs: np.ndarray
    values: np.ndarray
    rbw: float
    calibrated: bool = False
    scale: float = 1.0
    n_segments: int = 1

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.freqs.shape != self.values.shape:
            raise ValueError("freqs and values differ in shape")
        if np.any(np.diff(self.freqs) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        if np.any(self.values < 0):
            raise ValueError("PSD values must be non-negative")
        if not self.rbw > 0:
            raise ValueError("rbw must be positive")

    @property
    def df(self):
        return self.freqs[1] - self.freqs[0]

    def window(self, f_lo, f_hi):
        m = (self.freqs >= f_lo) & (self.freqs <= f_hi)
        return self.freqs[m], self.values[m]

    def integrate(self, f_lo=None, f_hi=None):
        f_lo = self.freqs[0] if f_lo is None else f_lo
        f_hi = self.freqs[-1] if f_hi is None else f_hi
        _, v = self.window(f_lo, f_hi)
        return v.sum() * self.df

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(f"# rbw_hz={float(self.rbw)!r}\n")
            fh.write(f"# calibrated={int(self.calibrated)}\n")
            fh.write(f"# scale={float(self.scale)!r}\n")
            fh.write(f"# n_segments={self.n_segments}\n")
            np.savetxt(fh, np.column_stack([self.freqs, self.values]), delimiter=",",
                       header="freq_hz,psd_value", comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path):
        meta = {}
        n_meta = 0
        with open(path) as fh:
            for line in fh:
                m = re.match(r"#\s*(\w+)=(.*)", line)
                if not m:
                    break
                meta[m.group(1)] = m.group(2).strip()
                n_meta += 1
        # metadata lines plus the column header
        data = np.loadtxt(path, delimiter=",", skiprows=n_meta + 1, ndmin=2)
        return cls(data[:, 0], data[:, 1], float(meta["rbw_hz"]),
                   bool(int(meta.get("calibrated", 0))), float(meta.get("scale", 1.0)),
                   int(meta.get("n_segments", 1)))


def welch_psd(trace, segment_length=1 << 17, overlap=0.5, window="hann",
              sample_rate=None, normalize=True):
    """Averaged-periodogram PSD of a photocurrent trace.

    A ``PhotocurrentTrace`` is normalised to its mean count (so the signal
    is the relative count rate) unless ``normalize`` is false. A plain array
    needs ``sample_rate``. Each segment has its mean removed.

    The reported ``rbw`` is the window's equivalent noise bandwidth.
    """
    if isinstance(trace, PhotocurrentTrace):
        fs = trace.sample_rate
        x = trace.normalized() if normalize else trace.samples.astype(float)
    else:
        if sample_rate is None:
            raise ValueError("sample_rate required for array input")
        fs = float(sample_rate)
        x = np.asarray(trace, dtype=float)
    n = len(x)
    if segment_length > n:
        raise ValueError(f"trace of {n} samples shorter than segment length {segment_length}")
    noverlap = int(round(overlap * segment_length))
    w = signal.get_window(window, segment_length)
    f, p = signal.welch(x, fs=fs, window=w, nperseg=segment_length, noverlap=noverlap,
                        detrend="constant", scaling="density", return_onesided=True)
    enbw = fs * np.sum(w ** 2) / np.sum(w) ** 2
    step = segment_length - noverlap
    n_seg = 1 + (n - segment_length) // step
    return Spectrum(f, p, enbw, n_segments=n_seg)


def motion_psd(f, T, omega_j, gamma_j, mass, offset=0.0):
    """Thermal position PSD of one axis [m^2/Hz] at frequencies ``f`` [Hz]."""
    w = TWO_PI * np.asarray(f, dtype=float)
    return 4 * K_B * T / mass * gamma_j / ((w ** 2 - omega_j ** 2) ** 2 + gamma_j ** 2 * w ** 2) + offset


def motion_psd_area(T, omega_j, mass):
    """Position variance k_B T / (m w_j^2), the integral of ``motion_psd`` over f >= 0."""
    return K_B * T / (mass * omega_j ** 2)


# --- first calibration step: knife-edge slope ---------------------------------

def _linear_limit(tol):
    # largest |erf(u)| for which erf(u) deviates from 2u/sqrt(pi) by < tol
    u = optimize.brentq(lambda u: (2 * u / np.sqrt(np.pi)) / erf(u) - 1 - tol, 1e-6, 3.0)
    return erf(u)


@dataclass
class SlopeResult:
    slope: float
    stderr: float
    n_points: int
    mask: np.ndarray = field(repr=False)


def _ls_slope(p, y):
    pc = p - p.mean()
    return float(pc @ (y - y.mean()) / (pc @ pc))


def measure_slope(positions, normalized_counts, scan_projection=1.0, linear_tol=0.01,
                  curvature_correction=True):
    """Slope of the focus-normalised count rate versus ion displacement.

    Only points whose normalised rate departs from 1 by less than the
    erf-linearity limit (``linear_tol`` relative) enter the straight-line
    fit. Even there the erf bends enough to pull a straight-line slope low
    by about ``linear_tol / 2``; with ``curvature_correction`` the fit is
    repeated on the erf implied by the result, sampled at the same
    positions, and the ratio divided out. ``scan_projection`` is the cosine
    between the scan direction and the direction the slope refers to; the
    fitted slope is divided by it.

    Raises
    ------
    CalibrationError
        Fewer than three points in the linear region, or a slope within
        three standard errors of zero.
    """
    p = np.asarray(positions, dtype=float)
    n = np.asarray(normalized_counts, dtype=float)
    if scan_projection == 0:
        raise CalibrationError("scan direction has no projection")
    mask = np.abs(n - 1) <= _linear_limit(linear_tol)
    if mask.sum() < 3:
        raise CalibrationError("no linear region found in the slope scan")
    coef, cov = np.polyfit(p[mask], n[mask], 1, cov="unscaled")
    resid = n[mask] - np.polyval(coef, p[mask])
    dof = max(mask.sum() - 2, 1)
    stderr = float(np.sqrt(cov[0, 0] * resid @ resid / dof))
    if abs(coef[0]) <= 3 * stderr:
        raise CalibrationError(
            f"slope consistent with zero ({coef[0]:.3g} +- {stderr:.2g} per m)")
    slope = coef[0]
    if curvature_correction:
        p0 = (1 - coef[1]) / coef[0]
        pm = p[mask]
        for _ in range(3):
            k = slope * np.sqrt(np.pi) / 2
            slope = coef[0] * slope / _ls_slope(pm, 1 + erf(k * (pm - p0)))
    return SlopeResult(slope / scan_projection, stderr / abs(scan_projection),
                       int(mask.sum()), mask)


def excess_variance(trace):
    """Variance of the mean-normalised count signal above its Poisson floor."""
    c = np.asarray(trace.samples, dtype=float)
    mu = c.mean()
    if mu <= 0:
        raise CalibrationError("trace contains no counts")
    return float(np.var(c / mu) - 1 / mu)


def effective_slope(static_slope, signal_variance):
    """In-situ slope of the erf response for Gaussian motion of the given signal variance.

    A Gaussian excursion of the image across the edge lowers the linear
    gain by ``sqrt(1 - sin(pi var / 2))``, where ``var`` is the total
    variance of the normalised (rate / focus rate) signal.
    """
    arg = np.sin(np.pi * np.clip(signal_variance, 0.0, 1.0) / 2)
    return static_slope * np.sqrt(1 - arg)


# --- second calibration step: correlation with the drive ------------------------

@dataclass
class CorrelationResult:
    """Sinusoidal modulation of the normalised event rate over the drive period."""

    amplitude: float
    amplitude_err: float
    phase: float
    n_events: int
    bin_centers: np.ndarray = field(repr=False)
    histogram: np.ndarray = field(repr=False)

    @property
    def significant(self):
        return self.amplitude >= 3 * self.amplitude_err


def correlate_drive(timestamps, zero_crossings, n_bins=64):
    """Histogram detection events by delay after the preceding drive zero crossing.

    The histogram is normalised to its mean and fitted with
    ``c0 + a sin(2 pi phi) + b cos(2 pi phi)``; the modulation amplitude is
    ``hypot(a, b) / c0`` (corrected for the bin average) and the phase
    ``atan2(b, a)`` is the rate's lead over the drive.
    """
    t = np.sort(np.asarray(timestamps, dtype=float))
    zc = np.asarray(zero_crossings, dtype=float)
    if len(zc) < 2:
        raise CalibrationError("need at least two drive zero crossings")
    period = float(np.median(np.diff(zc)))
    if not np.allclose(np.diff(zc), period, rtol=1e-6, atol=1e-15):
        raise CalibrationError("drive period not stable")
    idx = np.searchsorted(zc, t, side="right") - 1
    keep = (idx >= 0) & (t < zc[-1] + period)
    if keep.sum() < 10_000:
        raise CalibrationError(f"only {keep.sum()} events inside the drive record (need 1e4)")
    phase = ((t[keep] - zc[idx[keep]]) / period) % 1.0
    counts, edges = np.histogram(phase, bins=n_bins, range=(0.0, 1.0))
    centers = 0.5 * (edges[1:] + edges[:-1])
    mean = counts.mean()
    h = counts / mean
    sigma = np.sqrt(np.maximum(counts, 1)) / mean
    X = np.stack([np.ones(n_bins), np.sin(TWO_PI * centers), np.cos(TWO_PI * centers)], axis=1)
    Xw = X / sigma[:, None]
    coef, *_ = np.linalg.lstsq(Xw, h / sigma, rcond=None)
    cov = np.linalg.inv(Xw.T @ Xw)
    box = np.sinc(1.0 / n_bins)  # bin averaging of the first harmonic
    c0, a, b = coef
    amp = np.hypot(a, b) / (c0 * box)
    amp_err = np.sqrt(0.5 * (cov[1, 1] + cov[2, 2])) / (c0 * box)
    return CorrelationResult(float(amp), float(amp_err), float(np.arctan2(b, a)),
                             int(keep.sum()), centers, h)


# --- spectrum calibration ---------------------------------------------------------

@dataclass
class CalibrationResult:
    """Both calibration steps combined.

    ``slope`` is the in-situ slope used for the conversion and
    ``static_slope`` the value from the displacement scan.
    """

    slope: float
    A_corr: float
    A_displ: float
    scale: float
    static_slope: float = np.nan
    slope_err: float = np.nan
    A_corr_err: float = np.nan
    signal_variance: float = np.nan
    peak_height: float = np.nan
    background: float = np.nan

    def __post_init__(self):
        if self.slope == 0:
            raise CalibrationError("slope must be non-zero")
        if not self.scale > 0:
            raise CalibrationError("scale must be positive")

    @property
    def A_displ_err(self):
        rel = np.hypot(self.A_corr_err / self.A_corr, self.slope_err / self.slope)
        return abs(self.A_displ) * rel


def tone_peak_height(spectrum, f_tone, half_width=None, side_bins=(8, 40), bg_order=2):
    """Equivalent peak height of a coherent tone and the local background level.

    The tone power is the background-subtracted integral over
    ``f_tone +- half_width`` (default three bins, the Hann main lobe plus one). Returning power / RBW
    makes the result independent of where the tone falls between bins.
    The background is a polynomial of degree ``bg_order`` fitted to the
    ``side_bins`` ranges on both sides; the default quadratic follows the
    curvature of a Lorentzian tail, which a straight line would put too
    high under the tone.
    """
    f = spectrum.freqs
    df = spectrum.df
    half_width = 3 * df if half_width is None else half_width
    k0 = int(np.argmin(np.abs(f - f_tone)))
    lo, hi = side_bins
    hw = int(np.ceil(half_width / df))
    side = np.r_[np.arange(k0 - hi, k0 - lo), np.arange(k0 + lo + 1, k0 + hi + 1)]
    side = side[(side >= 0) & (side < len(f))]
    line = np.polyfit(f[side] - f_tone, spectrum.values[side], bg_order)
    core = np.arange(max(k0 - hw, 0), min(k0 + hw + 1, len(f)))
    bg = np.polyval(line, f[core] - f_tone)
    power = np.sum(spectrum.values[core] - bg) * df
    return power / spectrum.rbw, float(np.mean(bg))


def calibrate_spectrum(raw, peak_height, A_displ, background=0.0):
    """Convert a raw spectrum to displacement PSD using the calibration tone.

    ``peak_height`` is the tone's peak in the raw spectrum (raw units/Hz at
    the raw spectrum's RBW) and ``A_displ`` the tone's peak displacement
    amplitude. The tone carries A_displ^2 / 2, hence

        S = S_raw * A_displ^2 / (2 * peak_height * RBW).
    """
    if raw.calibrated:
        raise CalibrationError("spectrum is already calibrated")
    if not peak_height > background:
        raise CalibrationError(
            f"tone peak {peak_height:.3g} does not exceed the background {background:.3g}")
    scale = A_displ ** 2 / (2 * peak_height * raw.rbw)
    return Spectrum(raw.freqs, raw.values * scale, raw.rbw, True, scale * raw.scale,
                    raw.n_segments)


# --- Lorentzian thermometry ---------------------------------------------------------

@dataclass
class LorentzianFit:
    """Fitted motional line; ``*_err`` are one-sigma uncertainties."""

    T: float
    omega_j: float
    gamma_j: float
    offset: float
    T_err: float = 0.0
    omega_err: float = 0.0
    gamma_err: float = 0.0
    offset_err: float = 0.0
    residual_norm: float = 0.0
    mass: float = np.nan
    weight: float = 1.0

    @property
    def area(self):
        return self.weight * motion_psd_area(self.T, self.omega_j, self.mass)

    def model(self, f):
        return self.weight * motion_psd(f, self.T, self.omega_j, self.gamma_j, self.mass) + self.offset


def initial_guess(spectrum, mass, f_lo=None, f_hi=None, exclude=(), smooth_bins=5,
                  context=60e3):
    """Seed (T, w_j, g_j, offset) from the peak, its FWHM and its area.

    The peak is searched in ``[f_lo, f_hi]``; the background level and the
    half-maximum walk use ``context`` Hz more on either side so a broad
    line is not truncated by a narrow search range. Bins inside
    ``exclude`` ranges (center, half width) are ignored.
    """
    f_lo = spectrum.freqs[0] if f_lo is None else f_lo
    f_hi = spectrum.freqs[-1] if f_hi is None else f_hi
    m = (spectrum.freqs >= f_lo - context) & (spectrum.freqs <= f_hi + context)
    f = spectrum.freqs[m]
    s = spectrum.values[m].copy()
    if np.count_nonzero((f >= f_lo) & (f <= f_hi)) < 10:
        raise FitError("fit window holds fewer than 10 bins")
    sm = uniform_filter1d(s, smooth_bins)
    bad = np.zeros(len(f), dtype=bool)
    for fc, hw in exclude:
        bad |= np.abs(f - fc) <= hw
    offset = float(np.percentile(sm[~bad], 10))
    sm[bad] = offset
    search = np.where((f >= f_lo) & (f <= f_hi), sm, -np.inf)
    k = int(np.argmax(search))
    peak = sm[k] - offset
    if peak <= 0:
        raise FitError("no motional peak above the background")
    half = sm - offset >= peak / 2
    left = k
    while left > 0 and (half[left - 1] or bad[left - 1]):
        left -= 1
    right = k
    while right < len(f) - 1 and (half[right + 1] or bad[right + 1]):
        right += 1
    fwhm = max((right - left + 1) * spectrum.df, 2 * spectrum.df)
    omega = TWO_PI * f[k]
    gamma = TWO_PI * fwhm
    area = np.pi / 2 * peak * fwhm
    T = area * mass * omega ** 2 / K_B
    return T, omega, gamma, offset


def _fit_lorentzians(f, s, mass, seeds, weights, n_avg, fixed_offset=None, n_irls=4):
    """Joint fit of weighted Lorentzians plus offset with model-based weights.

    Welch estimates scatter in proportion to their mean, so the residuals
    are scaled by the current model and the weights refreshed a few times
    (iteratively reweighted least squares, each pass Levenberg-Marquardt).
    """
    npk = len(seeds)
    T_s = np.array([sd[0] for sd in seeds])
    w_s = np.array([sd[1] for sd in seeds])
    g_s = np.array([sd[2] for sd in seeds])
    s_scale = max(float(np.median(s)), np.finfo(float).tiny)
    off0 = seeds[0][3] if fixed_offset is None else fixed_offset

    def unpack(p):
        T = T_s * np.exp(p[0:npk])
        w = w_s + g_s * p[npk:2 * npk]
        g = g_s * np.exp(p[2 * npk:3 * npk])
        off = fixed_offset if fixed_offset is not None else p[3 * npk] * s_scale
        return T, w, g, off

    def model(p):
        T, w, g, off = unpack(p)
        out = np.full_like(f, off)
        for i in range(npk):
            out += weights[i] * motion_psd(f, T[i], w[i], g[i], mass)
        return out

    p = np.zeros(3 * npk + (fixed_offset is None))
    if fixed_offset is None:
        p[-1] = off0 / s_scale
    wts = model(p)
    for _ in range(n_irls):
        wts = np.maximum(wts, 1e-300)
        # trial steps may overflow exp(); LM rejects them
        with np.errstate(over="ignore", invalid="ignore"):
            res = optimize.least_squares(lambda q: (model(q) - s) / wts, p, method="lm",
                                         x_scale="jac", max_nfev=4000)
        if not res.success or not np.all(np.isfinite(res.x)):
            raise FitError(f"Lorentzian fit did not converge: {res.message}")
        p = res.x
        wts = model(p)
        if not np.all(np.isfinite(wts)):
            raise FitError("Lorentzian fit diverged")
    J = res.jac
    dof = max(len(f) - len(p), 1)
    chi2 = float(res.fun @ res.fun)
    try:
        cov = np.linalg.inv(J.T @ J) * chi2 / dof
    except np.linalg.LinAlgError as exc:
        raise FitError("singular Jacobian at the Lorentzian optimum") from exc
    T, w, g, off = unpack(p)
    perr = np.sqrt(np.clip(np.diag(cov), 0, None))
    fits = []
    for i in range(npk):
        fits.append(LorentzianFit(
            T=float(T[i]), omega_j=float(w[i]), gamma_j=float(g[i]), offset=float(off),
            T_err=float(T[i] * perr[i]), omega_err=float(g_s[i] * perr[npk + i]),
            gamma_err=float(g[i] * perr[2 * npk + i]),
            offset_err=float(perr[-1] * s_scale) if fixed_offset is None else 0.0,
            residual_norm=float(np.sqrt(chi2)), mass=mass, weight=float(weights[i])))
    if np.any(np.abs(p[npk:2 * npk]) * g_s > TWO_PI * (f[-1] - f[0])):
        raise FitError("fitted center left the fit window")
    for fit in fits:
        vals = (fit.T, fit.gamma_j, fit.T_err, fit.gamma_err)
        if not (np.all(np.isfinite(vals)) and fit.T > 0):
            raise FitError("Lorentzian fit ended at a non-finite or non-positive temperature")
        if fit.gamma_j > TWO_PI * (f[-1] - f[0]):
            raise FitError("fitted linewidth exceeds the fit window")
    return fits


def fit_motion_psd(spec, mass, init=None, window=None, exclude=(), fixed_offset=None):
    """Fit the thermal Lorentzian plus a constant offset to a calibrated spectrum.

    Parameters
    ----------
    spec : Spectrum
        Calibrated (m^2/Hz) spectrum containing the motional peak.
    mass : float
    init : LorentzianFit or tuple (T, omega, gamma, offset), optional
        Seed; derived from the spectrum when omitted.
    window : (f_lo, f_hi), optional
        Fit range in Hz; defaults to +-25 seed linewidths, clipped to 5-60 kHz.
    exclude : sequence of (f_center, half_width)
        Ranges to drop, e.g. the calibration tone.
    """
    if not spec.calibrated:
        raise FitError("thermometry needs a calibrated spectrum")
    return fit_motion_psd_multi(spec, mass, [init], [1.0], window=window, exclude=exclude,
                                fixed_offset=fixed_offset)[0]


def fit_motion_psd_multi(spec, mass, inits, weights, window=None, exclude=(), fixed_offset=None,
                         search=3e3):
    """Joint fit of several motional lines seen in one spectrum.

    ``weights[i]`` scales line i's contribution, e.g. the squared ratio of
    knife-normal projections when one calibration serves both axes.
    ``inits`` entries may be None (seeded from the spectrum), a
    ``LorentzianFit`` or a frequency in Hz to seed around (within
    ``+- search`` Hz).
    """
    seeds = []
    for init, wgt in zip(inits, weights):
        if isinstance(init, LorentzianFit):
            seeds.append((init.T, init.omega_j, init.gamma_j, init.offset))
        elif init is None or np.isscalar(init):
            if init is None:
                lo, hi = (window if window is not None else (None, None))
            else:
                lo, hi = init - search, init + search
            T, w, g, off = initial_guess(spec, mass, lo, hi, exclude=exclude)
            seeds.append((T / wgt, w, g, off))
        else:
            seeds.append(tuple(init))
    if window is None:
        centers = [sd[1] / TWO_PI for sd in seeds]
        span = min(max(max(25 * sd[2] / TWO_PI for sd in seeds), 5e3), 60e3)
        window = (min(centers) - span, max(centers) + span)
    m = (spec.freqs >= window[0]) & (spec.freqs <= window[1])
    for fc, hw in exclude:
        m &= np.abs(spec.freqs - fc) > hw
    if m.sum() < 4 * len(seeds) + 2:
        raise FitError("too few bins in the fit window")
    return _fit_lorentzians(spec.freqs[m], spec.values[m], mass, seeds, list(weights),
                            spec.n_segments, fixed_offset=fixed_offset)


# --- saturation law ------------------------------------------------------------------

def saturation_temperature(rate, T0, rate_max):
    """Doppler temperature versus detected 297 nm rate, ``T0 (1 + R/(R_max - R))``."""
    rate = np.asarray(rate, dtype=float)
    if np.any(rate >= rate_max):
        raise FitError("rate at or above R_max (pole of the saturation law)")
    return T0 * (1 + rate / (rate_max - rate))


@dataclass
class SaturationFit:
    T0: float
    T0_err: float
    rate_max: float
    rate_max_err: float
    residual_norm: float


def fit_saturation_curve(rates, temperatures, temperature_err=None):
    """Least-squares fit of the saturation law to no-feedback temperatures.

    Without ``temperature_err`` the points are weighted by their value
    (constant relative error) and the covariance scaled by the reduced chi^2.
    """
    R = np.asarray(rates, dtype=float)
    T = np.asarray(temperatures, dtype=float)
    if len(R) < 4:
        raise FitError("need at least four saturation points")
    sig = T.copy() if temperature_err is None else np.asarray(temperature_err, dtype=float)
    r_top = R.max()

    # R_max = r_top + exp(q) keeps the pole above the data
    def resid(p):
        T0, q = p
        rmax = r_top + np.exp(q)
        return (T0 * rmax / (rmax - R) - T) / sig

    T0_seed = float(np.min(T / (1 + R / (2 * r_top))))
    best = None
    for frac in (0.05, 0.2, 0.5, 1.0):
        res = optimize.least_squares(resid, [T0_seed, np.log(frac * r_top)], method="lm")
        if best is None or res.cost < best.cost:
            best = res
    if not best.success:
        raise FitError(f"saturation fit failed: {best.message}")
    T0, q = best.x
    rmax = r_top + np.exp(q)
    J = best.jac
    dof = max(len(R) - 2, 1)
    chi2 = 2 * best.cost
    cov = np.linalg.inv(J.T @ J)
    if temperature_err is None:
        cov *= chi2 / dof
    T0_err = np.sqrt(cov[0, 0])
    rmax_err = np.exp(q) * np.sqrt(cov[1, 1])
    if not T0 > 0:
        raise FitError("fitted T0 is not positive")
    if np.any(R >= rmax):
        raise FitError("rates at or above the fitted R_max (pole violation)")
    return SaturationFit(float(T0), float(T0_err), float(rmax), float(rmax_err),
                         float(np.sqrt(chi2)))
