"""Closed-loop runs: ion motion, knife-edge detection and feedback in one recurrence."""

from dataclasses import dataclass, field

import numpy as np

from ._kernels import N_LOOP_STATE, closed_loop
from .constants import K_B
from .detection import REFLECTED, TRANSMITTED, PhotocurrentTrace, knife_normal_coefficients
from .dynamics import ABORT_THRESHOLD, IonState, Propagator, check_resolution
from .errors import ConfigError, SimulationError
from .feedback import FeedbackChain


@dataclass(frozen=True)
class Timing:
    """Step, detector and output sample periods (integer ratios)."""

    dt: float = 20e-9
    detector_rate: float = 10e6
    output_rate: float = 5e6

    @property
    def steps_per_det(self):
        return _ratio(1.0 / self.detector_rate, self.dt, "sim.detector_rate_mhz")

    @property
    def steps_per_bin(self):
        return _ratio(1.0 / self.output_rate, self.dt, "sim.output_rate_mhz")


def _ratio(a, b, key):
    r = a / b
    n = int(round(r))
    if n < 1 or abs(r - n) > 1e-6 * r:
        raise ConfigError(f"sample period must be an integer multiple of dt (ratio {r:.6g})",
                          f"sim.dt_ns/{key}")
    return n


@dataclass
class RunRecord:
    """Everything recorded from one closed-loop run after the settling time."""

    transmitted: PhotocurrentTrace
    reflected: PhotocurrentTrace
    x: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    events_in: np.ndarray = field(repr=False)
    events_out: np.ndarray = field(repr=False)
    t_start: float = 0.0
    t_stop: float = 0.0

    def channel(self, name):
        return self.transmitted if name == TRANSMITTED else self.reflected

    def events(self, name):
        return self.events_in if name == TRANSMITTED else self.events_out


def thermal_state(trap, temperature, rng):
    """Draw an equilibrium state at ``temperature``."""
    w = np.asarray(trap.omega)
    sv = np.sqrt(K_B * temperature / trap.mass)
    return IonState(0.0, sv / w * rng.standard_normal(2), sv * rng.standard_normal(2))


def driven_steady_state(trap, drive, t=0.0):
    """Per-axis steady-state response of the undamped-by-feedback trap to ``drive``."""
    x = np.zeros(2)
    v = np.zeros(2)
    if drive is None:
        return x, v
    wd = drive.omega_d
    f = trap.axis_vectors @ drive.force_vector / trap.mass
    for j in range(2):
        w, g = trap.omega[j], trap.gamma[j]
        # F sin(wd t + p): response = Im[F/(w^2 - wd^2 + i g wd) e^{i(wd t + p)}]
        h = f[j] / (w ** 2 - wd ** 2 + 1j * g * wd)
        ph = np.exp(1j * (wd * t + drive.phase))
        x[j] = np.imag(h * ph)
        v[j] = np.imag(1j * wd * h * ph)
    return x, v


def run_closed_loop(trap, bath, optics, loops, duration, rng, drive=None, timing=None,
                    settle=None, state=None, abort_threshold=ABORT_THRESHOLD,
                    chunk_steps=1_000_000):
    """Simulate ``settle + duration`` seconds of the coupled system.

    Parameters
    ----------
    trap, bath, optics
        Module configs; ``bath`` may be None for noiseless motion.
    loops : sequence of FeedbackConfig
        Zero, one or two feedback chains sharing the transmitted signal.
    rng : numpy.random.SeedSequence or int
        Root of the independent streams (initial state, motion noise,
        photon emission, event-time jitter).
    drive : CoherentDrive, optional
        External force; the ion starts in its steady-state response.
    settle : float, optional
        Discarded lead-in; defaults to 10 / min(gamma) (or 0 when undamped).
    state : IonState, optional
        Initial state; by default drawn from the bath plus the drive response.

    Returns
    -------
    RunRecord
    """
    timing = timing or Timing()
    check_resolution(trap, timing.dt)
    ss = rng if isinstance(rng, np.random.SeedSequence) else np.random.SeedSequence(rng)
    s_init, s_motion, s_photon, s_jitter = ss.spawn(4)
    r_motion = np.random.default_rng(s_motion)
    r_photon = np.random.default_rng(s_photon)

    dt = timing.dt
    spd = timing.steps_per_det
    spb = timing.steps_per_bin
    chunk = max(chunk_steps // np.lcm(spd, spb), 1) * np.lcm(spd, spb)
    if settle is None:
        settle = 10.0 / min(trap.gamma) if min(trap.gamma) > 0 else 0.0
    n_settle_bins = int(np.ceil(settle * timing.output_rate))
    n_bins_total = n_settle_bins + int(round(duration * timing.output_rate))
    n_steps = n_bins_total * spb

    prop = Propagator.from_configs(trap, bath, dt)
    if state is None:
        if bath is not None:
            state = thermal_state(trap, bath.temperature, np.random.default_rng(s_init))
        else:
            state = IonState()
        xd, vd = driven_steady_state(trap, drive)
        state = IonState(0.0, state.x + xd, state.v + vd)
    x = state.x.copy()
    v = state.v.copy()

    proj = knife_normal_coefficients(trap.axis_angles, optics.knife_angle)
    mu_total = optics.detected_rate * dt
    if optics.focus_rate > 0:
        det_norm, det_offset = 1.0 / (optics.focus_rate * spd * dt), 1.0
    else:
        det_norm, det_offset = 0.0, 0.0

    chains = [FeedbackChain(cfg, timing.detector_rate) for cfg in loops]
    nl = len(chains)
    arrs = [c.kernel_arrays() for c in chains]
    bp = np.array([a[0] for a in arrs]).reshape(nl, 5)
    ap = np.array([a[1] for a in arrs]).reshape(nl, 2)
    fb_gain = np.array([a[2] for a in arrs], dtype=float)
    fb_clip = np.array([a[3] for a in arrs], dtype=float)
    fb_axis = np.array([a[4] for a in arrs]).reshape(nl, 2)
    n_delay = max([a[5] for a in arrs], default=1)
    delay_buf = np.zeros((nl, n_delay))
    delay_pos = np.zeros(nl, dtype=np.int64)
    if len({a[5] for a in arrs}) > 1:
        # equalise buffer lengths by padding: each loop reads its own offset
        raise ConfigError("feedback loops must share the same loop delay", "feedback.delay_us")
    loop_state = np.zeros((nl, N_LOOP_STATE))

    if drive is not None:
        drive_force, drive_omega, drive_phase = drive.force_vector, drive.omega_d, drive.phase
    else:
        drive_force, drive_omega, drive_phase = np.zeros(2), 1.0, 0.0

    counts = np.empty((n_bins_total, 2), dtype=np.int64)
    xs = np.empty((n_bins_total, 2))
    vs = np.empty((n_bins_total, 2))
    ev_in, ev_out = [], []
    det_acc = np.zeros(1, dtype=np.int64)
    bin_acc = np.zeros(2, dtype=np.int64)
    cap = int(chunk * min(1.0, 4 * mu_total + 1e-3)) + 1000
    buf_in = np.empty(cap, dtype=np.int64)
    buf_out = np.empty(cap, dtype=np.int64)

    for start in range(0, n_steps, chunk):
        m = min(chunk, n_steps - start)
        normals = r_motion.standard_normal((m, 4))
        uniforms = r_photon.random((m, 2))
        b0 = start // spb
        n_in, n_out, bad = closed_loop(
            start, x, v, prop.phi, prop.bd, prop.chol, 1.0 / trap.mass, trap.axis_vectors,
            abort_threshold, dt, normals, uniforms,
            proj, optics.knife_offset, optics.erf_scale, mu_total,
            np.asarray(drive_force, dtype=float), drive_omega, drive_phase,
            spd, spb, det_norm, det_offset,
            bp, ap, fb_gain, fb_clip, fb_axis, loop_state, delay_buf, delay_pos,
            det_acc, bin_acc,
            counts[b0:], xs[b0:], vs[b0:], buf_in, buf_out)
        if bad >= 0:
            raise SimulationError(f"|x| exceeded {abort_threshold:.3g} m", step=int(bad))
        if n_in >= cap or n_out >= cap:
            raise SimulationError("photon event buffer overflow", step=start)
        ev_in.append(buf_in[:n_in].copy())
        ev_out.append(buf_out[:n_out].copy())

    first_step = n_settle_bins * spb
    t_start = first_step * dt
    t_stop = n_steps * dt
    jitter = np.random.default_rng(s_jitter)

    def stamps(chunks):
        steps = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
        steps = steps[steps >= first_step]
        # emission time uniform within its step
        return (steps + jitter.random(len(steps))) * dt

    sl = slice(n_settle_bins, None)
    tr = PhotocurrentTrace(timing.output_rate, counts[sl, 0], TRANSMITTED, t_start)
    rf = PhotocurrentTrace(timing.output_rate, counts[sl, 1], REFLECTED, t_start)
    return RunRecord(tr, rf, xs[sl], vs[sl], stamps(ev_in), stamps(ev_out), t_start, t_stop)
