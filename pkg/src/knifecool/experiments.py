"""Seeded experiment drivers: calibration, thermometry, sweeps and axis finding.

Every driver takes a ``RunConfig`` and a seed (int or SeedSequence). Sweep
points get independent child seeds and may run in worker processes; the
results are merged in input order, so output files do not depend on the
number of workers.
"""

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .constants import TWO_PI
from .detection import knife_transmission, scattering_rate
from .dynamics import coherent_drive, equipartition_temperature, remove_tone
from .errors import CalibrationError, ConfigError
from .feedback import FeedbackChain
from .imaging import axis_angles, fit_gaussian_2d, synthesize_driven_image, write_image_csv
from .simulation import run_closed_loop
from .spectral import (CalibrationResult, calibrate_spectrum, correlate_drive, effective_slope,
                       excess_variance, fit_motion_psd_multi, fit_saturation_curve, measure_slope,
                       tone_peak_height, welch_psd)


def _seed_sequence(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


# --- calibration step 1: slope scan ----------------------------------------------

def slope_scan(cfg, rng):
    """Step a motionless ion across the knife edge along its normal.

    At each of ``scan_points`` positions both detectors count for
    ``scan_dwell`` seconds; the normalised signal ``2 T / (T + R)`` needs no
    separate focus reference because the sum does not depend on position.
    """
    opt = cfg.optics
    p = np.linspace(-cfg.scan_range, cfg.scan_range, cfg.scan_points)
    frac = knife_transmission(p + opt.knife_offset, opt.magnification, opt.spot_sigma)
    mean_total = opt.detected_rate * cfg.scan_dwell
    t = rng.poisson(mean_total * frac)
    r = rng.poisson(mean_total * (1 - frac))
    tot = t + r
    if np.any(tot == 0):
        raise CalibrationError("slope scan point without photons; raise calibration.scan_dwell_s")
    return p, 2 * t / tot


def measure_scan_slope(cfg, rng):
    p, n = slope_scan(cfg, rng)
    return measure_slope(p, n)


def loop_stiffness(cfg, loops, axis, omega):
    """Complex spring constant [N/m] the loops add to ``axis`` at ``omega``.

    Only the path from the motion of ``axis`` back onto ``axis`` is included;
    in orientation B the loops also couple the two axes.
    """
    u = cfg.trap.axis_vectors[axis]
    c = cfg.projections[axis]
    K = 0j
    for lp in loops:
        chain = FeedbackChain(lp, cfg.timing.detector_rate)
        k = lp.gain * lp.force_scale * np.dot(lp.electrode_axis, u)
        K += k * chain.response(omega)[0] * cfg.optics.normalized_slope * c
    return K


def closed_loop_linewidths(cfg, loops=()):
    """Predicted full widths [Hz] of the two motional lines with feedback on."""
    trap = cfg.trap
    out = []
    for j in range(2):
        w = trap.omega[j]
        K = loop_stiffness(cfg, loops, j, w)
        out.append((trap.gamma[j] - K.imag / (trap.mass * w)) / TWO_PI)
    return np.array(out)


def calibration_drive(cfg, loops=()):
    """Drive along ``drive.axis`` whose expected response is ``drive.amplitude_nm``.

    The force is sized with the linear closed-loop susceptibility of the
    driven axis, so the tone keeps its size when feedback damps the mode
    (an experimenter would turn the drive up likewise). The calibration
    itself still measures the actual amplitude.
    """
    trap = cfg.trap
    j = cfg.drive_axis
    wd = trap.omega[j] + TWO_PI * cfg.drive_detuning
    inv_chi = trap.mass * (trap.omega[j] ** 2 - wd ** 2 + 1j * trap.gamma[j] * wd)
    inv_chi -= loop_stiffness(cfg, loops, j, wd)
    force = cfg.drive_amplitude * abs(inv_chi)
    return coherent_drive(force, wd, 0.0, trap.axis_vectors[j])


def tone_exclusion(cfg):
    """Half width [Hz] of the band around the drive tone left out of the fit."""
    if cfg.tone_exclude is not None:
        return cfg.tone_exclude
    g = cfg.trap.gamma[cfg.drive_axis] / TWO_PI
    return min(5 * g, abs(cfg.drive_detuning) / 2)


def measured_axes(cfg):
    """Trap axes whose lines are fitted: the knife-facing one in A, both in B."""
    if cfg.orientation == "B":
        return (0, 1)
    return (int(np.argmax(np.abs(cfg.projections))),)


def check_duration(cfg, loops=()):
    g = min(cfg.trap.gamma)
    if g > 0 and cfg.duration < 100 / g:
        raise ConfigError(f"thermometry needs at least 100/gamma = {100 / g:.3g} s", "duration_s")
    n = int(round(cfg.duration * cfg.timing.output_rate))
    if n < cfg.segment_length:
        raise ConfigError(f"{n} samples are fewer than one segment ({cfg.segment_length})",
                          "duration_s")


# --- thermometry --------------------------------------------------------------------

@dataclass
class ThermometryResult:
    """Spectral temperatures (``fits``, one per measured axis) with ground truth."""

    axes: tuple
    fits: list
    calibration: CalibrationResult
    correlation: object = field(repr=False)
    slope: object = field(repr=False)
    raw: object = field(repr=False)
    spectrum: object = field(repr=False)
    T_eq: np.ndarray = None
    T_eq_err: np.ndarray = None
    channel: str = "reflected"
    gain: float = 0.0
    record: object = field(default=None, repr=False)

    def fit_for(self, axis):
        return self.fits[self.axes.index(axis)]

    def temperature_error(self, axis):
        """One-sigma error of the axis temperature: fit and calibration combined.

        T scales with the square of the calibrated displacement amplitude.
        """
        fit = self.fit_for(axis)
        cal = 2 * self.calibration.A_displ_err / abs(self.calibration.A_displ)
        return float(np.hypot(fit.T_err, cal * fit.T))

    @property
    def T(self):
        """Temperature of the last measured axis (axis 2 in both orientations)."""
        return self.fits[-1].T

    @property
    def T_err(self):
        return self.temperature_error(self.axes[-1])


def analyse_run(cfg, record, slope, drive, channel=None):
    """Calibrate the chosen channel of ``record`` and fit the motional lines."""
    channel = channel or cfg.channel
    trace = record.channel(channel)
    events = record.events(channel)
    c = cfg.projections
    jd = cfg.drive_axis
    if abs(c[jd]) < 1e-3:
        raise CalibrationError("the driven axis has no projection on the knife normal")

    var = excess_variance(trace)
    s_eff = effective_slope(abs(slope.slope), var)
    corr = correlate_drive(events, drive.zero_crossings(record.t_start, record.t_stop))
    if not corr.significant:
        raise CalibrationError(
            f"no significant drive modulation ({corr.amplitude:.3g} +- {corr.amplitude_err:.2g})")
    A_displ = corr.amplitude / (s_eff * abs(c[jd]))

    raw = welch_psd(trace, cfg.segment_length, cfg.overlap)
    f_tone = drive.omega_d / TWO_PI
    peak, bg = tone_peak_height(raw, f_tone)
    spec = calibrate_spectrum(raw, peak, A_displ, bg)
    cal = CalibrationResult(slope=s_eff, A_corr=corr.amplitude, A_displ=A_displ,
                            scale=spec.scale, static_slope=abs(slope.slope),
                            slope_err=slope.stderr, A_corr_err=corr.amplitude_err,
                            signal_variance=var, peak_height=peak, background=bg)

    axes = measured_axes(cfg)
    inits = [cfg.trap.omega[k] / TWO_PI for k in axes]
    weights = [(c[k] / c[jd]) ** 2 for k in axes]
    fits = fit_motion_psd_multi(spec, cfg.trap.mass, inits, weights,
                                exclude=[(f_tone, tone_exclusion(cfg))])
    # ground truth: kinetic temperature of the motion without the coherent drive response
    t = record.t_start + np.arange(1, len(record.v) + 1) / trace.sample_rate
    T_eq, T_eq_err = equipartition_temperature(remove_tone(record.v, t, drive.omega_d),
                                               cfg.trap.mass)
    return ThermometryResult(axes, fits, cal, corr, slope, raw, spec, T_eq, T_eq_err, channel)


def run_thermometry(cfg, seed=None, gain=None, phase_offset=0.0, channel=None,
                    keep_record=False):
    """Slope scan, then a driven run with the configured feedback, then the fit.

    The calibration tone rides along in the measurement run (it sits
    ``drive.detuning_hz`` from the line and is cut out of the fit window).

    Parameters
    ----------
    gain : float, optional
        Overrides the gain of every active loop.
    phase_offset : float
        Added to every active loop's phase [rad], for robustness checks.
    channel : {"reflected", "transmitted"}, optional
        Detector used for thermometry; the out-loop one by default.
    """
    ss = _seed_sequence(cfg.seed if seed is None else seed)
    s_scan, s_run = ss.spawn(2)
    loops = cfg.active_loops(gain)
    if phase_offset:
        loops = [lp.replace(phase=float(np.angle(np.exp(1j * (lp.phase + phase_offset)))))
                 for lp in loops]
    check_duration(cfg, loops)
    slope = measure_scan_slope(cfg, np.random.default_rng(s_scan))
    drive = calibration_drive(cfg, loops)
    rec = run_closed_loop(cfg.trap, cfg.bath, cfg.optics, loops, cfg.duration, s_run,
                          drive=drive, timing=cfg.timing, settle=cfg.settle)
    res = analyse_run(cfg, rec, slope, drive, channel)
    res.gain = loops[0].gain if loops else 0.0
    if keep_record:
        res.record = rec
    return res


# --- sweeps ---------------------------------------------------------------------------

def _pmap(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *job) for job in jobs]
        return [f.result() for f in futures]


@dataclass
class SweepResult:
    """Rows of one sweep in input order; ``columns`` fixes the CSV layout."""

    columns: tuple
    rows: list
    fit: object = None

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def to_csv(self, path):
        write_rows(path, self.columns, self.rows)


def write_rows(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _gain_point(cfg, gain, seed, phase_offset):
    res = run_thermometry(cfg, seed, gain=gain, phase_offset=phase_offset)
    row = {"gain": float(gain), "T_K": res.T, "T_err_K": res.T_err}
    k = res.axes[-1]
    row["T_eq_K"] = float(res.T_eq[k])
    row["T_eq_err_K"] = float(res.T_eq_err[k])
    row["gamma_hz"] = res.fits[-1].gamma_j / TWO_PI
    if len(res.axes) == 2:
        f1 = res.fit_for(0)
        row.update(T1_K=f1.T, T1_err_K=res.temperature_error(0), T1_eq_K=float(res.T_eq[0]),
                   T1_eq_err_K=float(res.T_eq_err[0]))
    return row


def run_gain_sweep(cfg, gains=None, seed=None, phase_offset=0.0):
    """Thermometry at each gain; orientation B uses the same gain in both loops.

    ``T_K`` is the axis-2 temperature; in orientation B the axis-1 result
    is added as ``T1_K``. ``T_eq_K`` columns hold the velocity (equipartition)
    temperature of the same run.
    """
    gains = list(cfg.gains if gains is None else gains)
    if len(gains) < 5 or 0 not in [float(g) for g in gains]:
        raise ConfigError("a gain sweep needs at least 5 points including 0", "sweep.gains")
    ss = _seed_sequence(cfg.seed if seed is None else seed)
    jobs = [(cfg, g, s, phase_offset) for g, s in zip(gains, ss.spawn(len(gains)))]
    rows = _pmap(_gain_point, jobs, cfg.workers)
    cols = ["gain", "T_K", "T_err_K"]
    if cfg.orientation == "B":
        cols += ["T1_K", "T1_err_K"]
    cols += ["T_eq_K", "T_eq_err_K"] + (["T1_eq_K", "T1_eq_err_K"] if cfg.orientation == "B" else [])
    cols += ["gamma_hz"]
    return SweepResult(tuple(cols), rows)


def _sat_point(cfg, s, gain, seed):
    sub = cfg.with_overrides(bath__saturation=repr(float(s)))
    res = run_thermometry(sub, seed, gain=gain)
    return {"s": float(s), "gain": float(gain), "T": res.T, "T_err": res.T_err,
            "T_eq": float(res.T_eq[res.axes[-1]])}


def run_saturation_sweep(cfg, saturations=None, min_gains=None, seed=None):
    """No-feedback and best-feedback temperature versus saturation.

    For each s the no-feedback run and one run per gain in ``min_gains``
    are made; ``T_min`` is the lowest feedback temperature. The saturation
    law is fitted to the no-feedback series.
    """
    sats = [float(s) for s in (cfg.saturations if saturations is None else saturations)]
    gains = [float(g) for g in (cfg.min_gains if min_gains is None else min_gains)]
    if len(sats) < 4:
        raise ConfigError("need at least 4 saturation points", "sweep.saturations")
    if any(s <= 0 for s in sats):
        raise ConfigError("s = 0 gives no photons to measure", "sweep.saturations")
    if not gains or any(g <= 0 for g in gains):
        raise ConfigError("need positive feedback gains", "sweep.min_gains")
    ss = _seed_sequence(cfg.seed if seed is None else seed)
    points = [(s, g) for s in sats for g in [0.0] + gains]
    jobs = [(cfg, s, g, sd) for (s, g), sd in zip(points, ss.spawn(len(points)))]
    out = _pmap(_sat_point, jobs, cfg.workers)

    rows = []
    for s in sats:
        pts = [o for o in out if o["s"] == s]
        nofb = next(o for o in pts if o["gain"] == 0.0)
        best = min((o for o in pts if o["gain"] > 0), key=lambda o: o["T"])
        rate = float(scattering_rate(s, cfg.optics.rate_297_max))
        rows.append({"saturation": s, "rate_297_per_ms": rate / 1e3,
                     "T_nofb_K": nofb["T"], "T_err_K": nofb["T_err"],
                     "T_min_K": best["T"], "T_min_err_K": best["T_err"],
                     "gain_min": best["gain"], "T_nofb_eq_K": nofb["T_eq"],
                     "T_min_eq_K": best["T_eq"]})
    fit = fit_saturation_curve([r["rate_297_per_ms"] * 1e3 for r in rows],
                               [r["T_nofb_K"] for r in rows], [r["T_err_K"] for r in rows])
    cols = ("rate_297_per_ms", "T_nofb_K", "T_err_K", "T_min_K", "T_min_err_K",
            "saturation", "gain_min", "T_nofb_eq_K", "T_min_eq_K")
    return SweepResult(cols, rows, fit)


# --- axis finding ---------------------------------------------------------------------

@dataclass
class AxisFindingResult:
    angles: object
    fits: list
    images: list = field(repr=False)


def run_axis_finding(cfg, seed=None, drive_amplitude=None):
    """Undriven image plus one image driven along each configured direction."""
    im = cfg.imaging
    amp = im["drive_amplitude"] if drive_amplitude is None else drive_amplitude
    if not amp > 0:
        raise ConfigError("axis finding needs a non-zero drive", "imaging.drive_amplitude_um")
    # the turning points carry most of the driven spot; clipping them biases the angle
    half_field = im["size"] * im["pixel"] / 2
    if amp + 3 * im["psf_sigma"] > half_field:
        raise ConfigError(f"drive excursion + 3 psf sigma exceeds the half field "
                          f"({half_field * 1e6:.3g} um)", "imaging.size_px")
    ss = _seed_sequence(cfg.seed if seed is None else seed)
    rngs = [np.random.default_rng(s) for s in ss.spawn(3)]
    shape = (im["size"], im["size"])
    images = [synthesize_driven_image(im["psf_sigma"], 0.0, 0.0, im["photons"], rngs[0],
                                      shape=shape, pixel_size=im["pixel"])]
    for ang, rng in zip(im["drive_angles"], rngs[1:]):
        images.append(synthesize_driven_image(im["psf_sigma"], amp, ang, im["photons"], rng,
                                              shape=shape, pixel_size=im["pixel"]))
    fits = [fit_gaussian_2d(img) for img in images]
    return AxisFindingResult(axis_angles(fits[1], fits[2]), fits, images)


# --- file output ----------------------------------------------------------------------

def write_key_values(path, items):
    write_rows(path, ("key", "value"), [{"key": k, "value": v} for k, v in items])


def calibration_items(res):
    cal = res.calibration
    return [("static_slope_per_m", cal.static_slope), ("static_slope_err_per_m", cal.slope_err),
            ("signal_variance", cal.signal_variance), ("slope_eff_per_m", cal.slope),
            ("A_corr", cal.A_corr), ("A_corr_err", cal.A_corr_err),
            ("A_displ_m", cal.A_displ), ("A_displ_err_m", cal.A_displ_err),
            ("peak_height", cal.peak_height), ("background", cal.background),
            ("scale", cal.scale), ("rbw_hz", res.raw.rbw), ("channel", res.channel)]


def fit_items(res):
    items = [("gain", res.gain)]
    for k, fit in zip(res.axes, res.fits):
        n = k + 1
        items += [(f"T{n}_K", fit.T), (f"T{n}_err_K", res.temperature_error(k)),
                  (f"T{n}_fit_err_K", fit.T_err),
                  (f"f{n}_hz", fit.omega_j / TWO_PI), (f"f{n}_err_hz", fit.omega_err / TWO_PI),
                  (f"gamma{n}_hz", fit.gamma_j / TWO_PI),
                  (f"gamma{n}_err_hz", fit.gamma_err / TWO_PI),
                  (f"T{n}_eq_K", float(res.T_eq[k])), (f"T{n}_eq_err_K", float(res.T_eq_err[k]))]
    items += [("offset_m2_per_hz", res.fits[0].offset),
              ("offset_err_m2_per_hz", res.fits[0].offset_err)]
    return items


def write_timeseries(path, record):
    """Per-output-sample counts and the true motion of both axes."""
    n = len(record.transmitted)
    t = record.t_start + np.arange(1, n + 1) / record.transmitted.sample_rate
    data = np.column_stack([t, record.transmitted.samples, record.reflected.samples,
                            record.x, record.v])
    header = "t_s,counts_inloop,counts_outloop,x1_m,x2_m,v1_mps,v2_mps"
    np.savetxt(path, data, delimiter=",", header=header, comments="",
               fmt=["%.10e", "%d", "%d", "%.8e", "%.8e", "%.8e", "%.8e"])


def write_axes(path, result):
    a = result.angles
    deg = np.rad2deg
    rows = [{"axis": 1, "angle_deg": deg(a.alpha1), "angle_err_deg": deg(a.alpha1_err),
             "sigma_major_m": result.fits[1].sigma_major,
             "sigma_minor_m": result.fits[1].sigma_minor},
            {"axis": 2, "angle_deg": deg(a.alpha2), "angle_err_deg": deg(a.alpha2_err),
             "sigma_major_m": result.fits[2].sigma_major,
             "sigma_minor_m": result.fits[2].sigma_minor}]
    write_rows(path, ("axis", "angle_deg", "angle_err_deg", "sigma_major_m", "sigma_minor_m"),
               rows)
    with open(path, "a") as fh:
        fh.write(f"# orthogonality_defect_deg={float(deg(a.orthogonality_defect))!r}\n")


def write_images(out_dir, result):
    for name, img in zip(("undriven", "drive1", "drive2"), result.images):
        write_image_csv(os.path.join(out_dir, f"image_{name}.csv"), img)
