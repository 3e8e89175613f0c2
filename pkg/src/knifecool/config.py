"""Run configuration: flat ``section.key = value`` text in human units.

Suffixes fix the unit of every key and are converted to SI (and angular
frequency where the model wants it) on load:

=========  ===========================  ==========
suffix     unit                         internal
=========  ===========================  ==========
``_hz``    Hz                           rad/s for trap/feedback frequencies, Hz otherwise
``_mhz``   MHz                          Hz
``_um``    micrometre                   m
``_nm``    nanometre                    m
``_mk``    millikelvin                  K
``_deg``   degree                       rad
``_us``    microsecond                  s
``_ns``    nanosecond                   s
``_s``     second                       s
``_per_ms``  events per millisecond     1/s
``_amu``   atomic mass unit             kg
=========  ===========================  ==========

Unknown keys are rejected. ``auto`` is accepted where a default is
derived from other settings (feedback phase and force scale, knife angle,
tone exclusion).
"""

import configparser
from dataclasses import dataclass, field

import numpy as np

from .constants import AMU, LINEWIDTH_370, TWO_PI
from .detection import OpticalConfig, knife_normal_coefficients
from .dynamics import TrapConfig, doppler_bath
from .errors import ConfigError
from .feedback import FeedbackConfig, loop_sign, optimal_phase, unit_gain_force_scale
from .simulation import Timing

AUTO = "auto"

# key -> default (as text, exactly as a user would write it)
DEFAULTS = {
    "seed": "1",
    "orientation": "A",
    "duration_s": "0.5",
    "channel": "reflected",
    "out": "results",
    "workers": "1",

    "trap.omega1_hz": "450e3",
    "trap.omega2_hz": "455e3",
    "trap.gamma1_hz": "500",
    "trap.gamma2_hz": "500",
    "trap.mass_amu": "173.938862",
    "trap.alpha1_deg": "-29.76",
    "trap.alpha2_deg": "60.24",

    "bath.t0_mk": "0.975",
    "bath.saturation": "1.0",

    "optics.magnification": "100",
    "optics.spot_sigma_um": "17.89",
    "optics.knife_angle_deg": AUTO,
    "optics.knife_offset_um": "0",
    "optics.collection_efficiency": "0.07",
    "optics.rate_370_max_per_ms": AUTO,
    "optics.rate_297_max_per_ms": "19.04",

    "sim.dt_ns": "20",
    "sim.detector_rate_mhz": "10",
    "sim.output_rate_mhz": "5",
    "sim.settle_s": AUTO,

    "drive.amplitude_nm": "30",
    "drive.detuning_hz": "3e3",
    "drive.axis": "2",

    "calibration.scan_range_um": "0.1",
    "calibration.scan_points": "81",
    "calibration.scan_dwell_s": "1.0",

    "spectral.segment_length": "131072",
    "spectral.overlap": "0.5",
    "spectral.tone_exclude_hz": AUTO,

    "imaging.psf_sigma_um": "0.6",
    "imaging.pixel_um": "0.2",
    "imaging.size_px": "64",
    "imaging.photons": "1e5",
    "imaging.drive_amplitude_um": "3.0",
    "imaging.drive1_deg": "-28.87",
    "imaging.drive2_deg": "60.24",

    "sweep.gains": "0, 0.25, 0.5, 1, 1.5, 2, 4, 8",
    "sweep.saturations": "0.25, 0.5, 1, 2, 4",
    "sweep.min_gains": "0.5, 1, 2",
}
for _k in (1, 2):
    DEFAULTS.update({
        f"feedback{_k}.gain": "0",
        f"feedback{_k}.center_hz": AUTO,
        f"feedback{_k}.bandwidth_hz": "20e3",
        f"feedback{_k}.phase_deg": AUTO,
        f"feedback{_k}.delay_us": "1",
        f"feedback{_k}.force_scale_n": AUTO,
        f"feedback{_k}.electrode_deg": AUTO,
        f"feedback{_k}.clip": "5",
    })


class _Raw:
    """Typed access to the merged key/value text, naming keys in errors."""

    def __init__(self, values):
        self.values = values

    def text(self, key):
        return self.values[key].strip()

    def is_auto(self, key):
        return self.text(key).lower() == AUTO

    def num(self, key, scale=1.0, auto=None):
        if self.is_auto(key):
            if auto is None:
                raise ConfigError("'auto' is not allowed here", key)
            return auto
        try:
            v = float(self.text(key))
        except ValueError:
            raise ConfigError(f"not a number: {self.text(key)!r}", key) from None
        if not np.isfinite(v):
            raise ConfigError("must be finite", key)
        return v * scale

    def integer(self, key):
        v = self.num(key)
        if v != int(v):
            raise ConfigError(f"must be an integer, got {v}", key)
        return int(v)

    def nums(self, key):
        items = [s for s in self.text(key).replace(";", ",").split(",") if s.strip()]
        try:
            out = [float(s) for s in items]
        except ValueError:
            raise ConfigError(f"not a list of numbers: {self.text(key)!r}", key) from None
        if not out or not all(np.isfinite(out)):
            raise ConfigError("must be a non-empty list of finite numbers", key)
        return out


def _rekey(exc, mapping):
    # translate a module-level key ("trap.gamma") to the config key(s) the user wrote
    key = mapping.get(exc.key, exc.key)
    msg = str(exc)
    if exc.key and msg.startswith(f"{exc.key}: "):
        msg = msg[len(exc.key) + 2:]
    return ConfigError(msg, key)


@dataclass
class RunConfig:
    """Everything one experiment driver needs, in SI units."""

    trap: TrapConfig
    T0: float
    saturation: float
    optics: OpticalConfig
    feedback: tuple
    timing: Timing
    seed: int = 1
    orientation: str = "A"
    duration: float = 0.5
    channel: str = "reflected"
    out: str = "results"
    workers: int = 1
    settle: float = None
    drive_amplitude: float = 30e-9
    drive_detuning: float = 3e3
    drive_axis: int = 1
    scan_range: float = 0.1e-6
    scan_points: int = 81
    scan_dwell: float = 1.0
    segment_length: int = 1 << 17
    overlap: float = 0.5
    tone_exclude: float = None
    imaging: dict = field(default_factory=dict)
    gains: tuple = ()
    saturations: tuple = ()
    min_gains: tuple = ()
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def bath(self):
        return doppler_bath(self.saturation, self.T0)

    @property
    def projections(self):
        """Knife-normal coefficients of the two trap axes."""
        return knife_normal_coefficients(self.trap.axis_angles, self.optics.knife_angle)

    def active_loops(self, gain=None):
        """Feedback configs taking part in a run.

        Orientation A uses the loop on the axis seen by the knife (axis 2)
        only; orientation B runs both. ``gain`` overrides every active
        loop's gain (the same setting in both circuits).
        """
        idx = (1,) if self.orientation == "A" else (0, 1)
        loops = []
        for i in idx:
            cfg = self.feedback[i]
            if gain is not None:
                cfg = cfg.replace(gain=float(gain))
            if cfg.gain > 0:
                loops.append(cfg)
        return loops

    def with_overrides(self, **values):
        """New config with raw text ``key=value`` replacements (dots as ``__``)."""
        raw = dict(self.raw)
        for k, v in values.items():
            raw[k.replace("__", ".")] = str(v)
        return build_config(raw)

    def to_text(self):
        lines = []
        for key in DEFAULTS:
            lines.append(f"{key} = {self.raw.get(key, DEFAULTS[key])}")
        return "\n".join(lines) + "\n"


def parse_config_text(text):
    """Flat ``key = value`` lines (``#`` comments) to a dict of strings."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None,
                                   delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string("[root]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from None
    return {k.strip(): v for k, v in cp["root"].items()}


def load_config(path=None, overrides=None):
    """Read ``path`` (optional), apply ``overrides`` (key -> text) and validate."""
    values = {}
    if path is not None:
        try:
            with open(path) as fh:
                values.update(parse_config_text(fh.read()))
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}", "--config") from None
    for k, v in (overrides or {}).items():
        values[k] = str(v)
    return build_config(values)


def build_config(values):
    unknown = sorted(set(values) - set(DEFAULTS))
    if unknown:
        raise ConfigError("unknown key", unknown[0])
    merged = dict(DEFAULTS)
    merged.update(values)
    r = _Raw(merged)

    orientation = r.text("orientation").upper()
    if orientation not in ("A", "B"):
        raise ConfigError(f"must be A or B, got {orientation!r}", "orientation")
    channel = r.text("channel").lower()
    aliases = {"out": "reflected", "out-loop": "reflected", "in": "transmitted",
               "in-loop": "transmitted"}
    channel = aliases.get(channel, channel)
    if channel not in ("reflected", "transmitted"):
        raise ConfigError("must be reflected (out-loop) or transmitted (in-loop)", "channel")

    deg = np.pi / 180
    try:
        trap = TrapConfig(
            omega=(r.num("trap.omega1_hz", TWO_PI), r.num("trap.omega2_hz", TWO_PI)),
            gamma=(r.num("trap.gamma1_hz", TWO_PI), r.num("trap.gamma2_hz", TWO_PI)),
            mass=r.num("trap.mass_amu", AMU),
            axis_angles=(r.num("trap.alpha1_deg", deg), r.num("trap.alpha2_deg", deg)))
    except ConfigError as exc:
        raise _rekey(exc, {"trap.omega": "trap.omega1_hz/trap.omega2_hz",
                           "trap.gamma": "trap.gamma1_hz/trap.gamma2_hz",
                           "trap.mass": "trap.mass_amu",
                           "trap.axis_angles": "trap.alpha1_deg/trap.alpha2_deg"}) from None

    T0 = r.num("bath.t0_mk", 1e-3)
    s = r.num("bath.saturation")
    try:
        doppler_bath(s, T0)
    except ConfigError as exc:
        raise _rekey(exc, {"saturation": "bath.saturation", "T0": "bath.t0_mk"}) from None

    a1, a2 = trap.axis_angles
    if orientation == "A":
        knife_default = a2 - np.pi / 2
    else:
        knife_default = 0.5 * (a1 + a2) - np.pi / 2
    opt_kw = dict(
        magnification=r.num("optics.magnification"),
        spot_sigma=r.num("optics.spot_sigma_um", 1e-6),
        knife_angle=r.num("optics.knife_angle_deg", deg, auto=knife_default),
        collection_efficiency=r.num("optics.collection_efficiency"),
        rate_297_max=r.num("optics.rate_297_max_per_ms", 1e3),
        saturation=s,
        knife_offset=r.num("optics.knife_offset_um", 1e-6))
    if not r.is_auto("optics.rate_370_max_per_ms"):
        opt_kw["rate_370_max"] = r.num("optics.rate_370_max_per_ms", 1e3)
    else:
        # collection efficiency times the saturated scattering rate
        eff = opt_kw["collection_efficiency"]
        if 0 < eff <= 1:
            opt_kw["rate_370_max"] = eff * LINEWIDTH_370 / 2
    try:
        optics = OpticalConfig(**opt_kw)
    except ConfigError as exc:
        names = {f"optics.{k}": f"optics.{k}" for k in opt_kw}
        names.update({"optics.spot_sigma": "optics.spot_sigma_um",
                      "optics.rate_370_max": "optics.rate_370_max_per_ms",
                      "optics.rate_297_max": "optics.rate_297_max_per_ms",
                      "optics.knife_angle": "optics.knife_angle_deg",
                      "optics.saturation": "bath.saturation"})
        raise _rekey(exc, names) from None

    try:
        timing = Timing(r.num("sim.dt_ns", 1e-9), r.num("sim.detector_rate_mhz", 1e6),
                        r.num("sim.output_rate_mhz", 1e6))
        timing.steps_per_det, timing.steps_per_bin
    except ConfigError as exc:
        raise _rekey(exc, {}) from None
    if not timing.dt > 0:
        raise ConfigError("must be positive", "sim.dt_ns")

    coeffs = knife_normal_coefficients(trap.axis_angles, optics.knife_angle)
    loops = []
    for k in (1, 2):
        j = k - 1
        sec = f"feedback{k}"
        center = r.num(f"{sec}.center_hz", TWO_PI, auto=trap.omega[j])
        bandwidth = r.num(f"{sec}.bandwidth_hz", TWO_PI)
        delay = r.num(f"{sec}.delay_us", 1e-6)
        e_ang = r.num(f"{sec}.electrode_deg", deg, auto=trap.axis_angles[j])
        e = (float(np.cos(e_ang)), float(np.sin(e_ang)))
        u = trap.axis_vectors[j]
        gain = r.num(f"{sec}.gain")
        try:
            if r.is_auto(f"{sec}.phase_deg"):
                for name, ok in (("center_hz", center > 0), ("bandwidth_hz", bandwidth > 0),
                                 ("delay_us", delay >= 0)):
                    if not ok:
                        raise ConfigError("invalid value (needed for the auto phase)",
                                          f"{sec}.{name}")
                phase = optimal_phase(center, bandwidth, delay, timing.detector_rate, trap.omega[j],
                                      loop_sign(coeffs[j], e, u))
            else:
                phase = r.num(f"{sec}.phase_deg", deg)
            if r.is_auto(f"{sec}.force_scale_n"):
                if abs(coeffs[j] * np.dot(e, u)) < 1e-9:
                    force_scale = 1.0  # loop cannot act on its axis; only matters if gain > 0
                    if gain > 0:
                        raise ConfigError("loop has no projection on its axis",
                                          f"{sec}.electrode_deg")
                else:
                    # reference damping uses the undamped-by-feedback trap rate
                    g_ref = trap.gamma[j] if trap.gamma[j] > 0 else TWO_PI * 500.0
                    force_scale = unit_gain_force_scale(trap.mass, trap.omega[j], g_ref,
                                                        optics.normalized_slope, coeffs[j], e, u)
            else:
                force_scale = r.num(f"{sec}.force_scale_n")
            loops.append(FeedbackConfig(center=center, bandwidth=bandwidth, phase=phase,
                                        gain=gain, delay=delay, force_scale=force_scale,
                                        electrode_axis=e, clip=r.num(f"{sec}.clip")))
        except ConfigError as exc:
            m = {f"feedback.{n}": f"{sec}.{n}{suf}" for n, suf in
                 [("center", "_hz"), ("bandwidth", "_hz"), ("phase", "_deg"), ("gain", ""),
                  ("delay", "_us"), ("force_scale", "_n"), ("clip", ""),
                  ("electrode_axis", "_deg")]}
            m["feedback.electrode_axis"] = f"{sec}.electrode_deg"
            raise _rekey(exc, m) from None
    d1, d2 = (int(round(c.delay * timing.detector_rate)) for c in loops)
    if orientation == "B" and d1 != d2:
        raise ConfigError("both loops must share the same delay", "feedback2.delay_us")

    duration = r.num("duration_s")
    if not duration > 0:
        raise ConfigError("must be positive", "duration_s")
    seed = r.integer("seed")
    if seed < 0:
        raise ConfigError("must be >= 0", "seed")
    workers = r.integer("workers")
    if workers < 1:
        raise ConfigError("must be >= 1", "workers")
    settle = r.num("sim.settle_s", auto=-1.0)
    if settle != -1.0 and settle < 0:
        raise ConfigError("must be >= 0", "sim.settle_s")

    drive_axis = r.integer("drive.axis")
    if drive_axis not in (1, 2):
        raise ConfigError("must be 1 or 2", "drive.axis")
    drive_amp = r.num("drive.amplitude_nm", 1e-9)
    if not drive_amp > 0:
        raise ConfigError("must be positive", "drive.amplitude_nm")
    detuning = r.num("drive.detuning_hz")
    if detuning == 0:
        raise ConfigError("drive must be detuned from the motional line", "drive.detuning_hz")

    scan_range = r.num("calibration.scan_range_um", 1e-6)
    scan_points = r.integer("calibration.scan_points")
    scan_dwell = r.num("calibration.scan_dwell_s")
    if not scan_range > 0:
        raise ConfigError("must be positive", "calibration.scan_range_um")
    if scan_points < 5:
        raise ConfigError("need at least 5 scan points", "calibration.scan_points")
    if not scan_dwell > 0:
        raise ConfigError("must be positive", "calibration.scan_dwell_s")

    seg = r.integer("spectral.segment_length")
    if seg < 256:
        raise ConfigError("must be >= 256", "spectral.segment_length")
    overlap = r.num("spectral.overlap")
    if not 0 <= overlap < 1:
        raise ConfigError("must lie in [0, 1)", "spectral.overlap")
    excl = r.num("spectral.tone_exclude_hz", auto=-1.0)
    if excl != -1.0 and not excl > 0:
        raise ConfigError("must be positive", "spectral.tone_exclude_hz")

    imaging = dict(
        psf_sigma=r.num("imaging.psf_sigma_um", 1e-6),
        pixel=r.num("imaging.pixel_um", 1e-6),
        size=r.integer("imaging.size_px"),
        photons=r.num("imaging.photons"),
        drive_amplitude=r.num("imaging.drive_amplitude_um", 1e-6),
        drive_angles=(r.num("imaging.drive1_deg", deg), r.num("imaging.drive2_deg", deg)))
    for key, ok in [("imaging.psf_sigma_um", imaging["psf_sigma"] > 0),
                    ("imaging.pixel_um", imaging["pixel"] > 0),
                    ("imaging.size_px", imaging["size"] >= 8),
                    ("imaging.photons", imaging["photons"] > 0),
                    ("imaging.drive_amplitude_um", imaging["drive_amplitude"] >= 0)]:
        if not ok:
            raise ConfigError("out of range", key)

    gains = tuple(r.nums("sweep.gains"))
    if any(g < 0 for g in gains):
        raise ConfigError("gains must be >= 0", "sweep.gains")
    sats = tuple(r.nums("sweep.saturations"))
    if any(x <= 0 for x in sats):
        raise ConfigError("saturations must be > 0 (no photons at s = 0)", "sweep.saturations")
    min_gains = tuple(r.nums("sweep.min_gains"))
    if any(g <= 0 for g in min_gains):
        raise ConfigError("gains must be > 0", "sweep.min_gains")

    return RunConfig(
        trap=trap, T0=T0, saturation=s, optics=optics, feedback=tuple(loops), timing=timing,
        seed=seed, orientation=orientation, duration=duration, channel=channel,
        out=r.text("out"), workers=workers, settle=None if settle == -1.0 else settle,
        drive_amplitude=drive_amp, drive_detuning=detuning, drive_axis=drive_axis - 1,
        scan_range=scan_range, scan_points=scan_points, scan_dwell=scan_dwell,
        segment_length=seg, overlap=overlap, tone_exclude=None if excl == -1.0 else excl,
        imaging=imaging, gains=gains, saturations=sats, min_gains=min_gains,
        raw={k: v for k, v in merged.items()})
