"""Electronic feedback: bandpass -> phase shifter -> gain/clip -> delay -> force.

The chain runs on the in-loop detector signal sampled at ``sample_rate``.
The bandpass is the constant-peak-gain resonator (unit gain, zero phase at
its center); the phase shifter is a first-order all-pass, preceded by a
sign inversion when the requested phase lies in (0, pi].
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .constants import TWO_PI
from .errors import ConfigError, FilterFault


@dataclass(frozen=True)
class FeedbackConfig:
    """One feedback loop.

    ``force_scale`` is the force [N] per unit of processed normalised signal
    at ``gain = 1``; ``clip`` bounds the processed signal before scaling.
    """

    center: float = TWO_PI * 455e3
    bandwidth: float = TWO_PI * 20e3
    phase: float = 0.0
    gain: float = 0.0
    delay: float = 1e-6
    force_scale: float = 1e-21
    electrode_axis: tuple = (np.cos(np.deg2rad(60.24)), np.sin(np.deg2rad(60.24)))
    clip: float = 5.0

    def __post_init__(self):
        checks = [
            ("center", self.center > 0),
            ("bandwidth", self.bandwidth > 0),
            ("gain", self.gain >= 0),
            ("delay", self.delay >= 0),
            ("force_scale", self.force_scale > 0),
            ("clip", self.clip > 0),
            ("phase", abs(self.phase) <= np.pi + 1e-12),
        ]
        for name, ok in checks:
            if not (np.isfinite(getattr(self, name)) and ok):
                raise ConfigError(f"invalid value {getattr(self, name)!r}", f"feedback.{name}")
        if self.bandwidth >= self.center / 2:
            raise ConfigError("bandwidth must be below center/2", "feedback.bandwidth")
        ax = np.asarray(self.electrode_axis, dtype=float).reshape(2)
        if not np.isclose(np.hypot(*ax), 1.0, atol=1e-9):
            raise ConfigError("electrode axis must be a unit vector", "feedback.electrode_axis")
        object.__setattr__(self, "electrode_axis", tuple(ax))

    def replace(self, **changes):
        from dataclasses import replace
        return replace(self, **changes)


def bandpass_coefficients(center, bandwidth, sample_rate):
    """Biquad ``(b, a)`` with unit gain and zero phase at ``center`` (rad/s)."""
    w0 = center / sample_rate
    q = center / bandwidth
    alpha = np.sin(w0) / (2 * q)
    a0 = 1 + alpha
    b = np.array([alpha, 0.0, -alpha]) / a0
    a = np.array([1.0, -2 * np.cos(w0) / a0, (1 - alpha) / a0])
    return b, a


def allpass_coefficient(phase, omega, sample_rate):
    """Coefficient ``c`` and sign for ``sign * (c + z^-1)/(1 + c z^-1)`` with the
    given phase at ``omega``.

    The first-order all-pass spans phases (-pi, 0] at any frequency below
    Nyquist; phases in (0, pi] take an extra sign inversion.
    """
    theta = omega / sample_rate
    if not 0 < theta < np.pi:
        raise ConfigError("center frequency must lie below Nyquist", "feedback.center")
    phase = _wrap(phase)
    sign = 1.0
    if phase > 0:
        sign = -1.0
        phase -= np.pi
    psi = 0.5 * (phase + theta)
    c = np.sin(psi) / np.sin(theta - psi)
    # phase -> -pi puts the pole on the unit circle
    c = float(np.clip(c, -1 + 1e-12, 1.0))
    return c, sign


def _wrap(phi):
    return float(np.pi - (np.pi - phi) % (2 * np.pi))


@dataclass
class FilterState:
    """Recursion state of one bandpass + all-pass chain."""

    bp: np.ndarray = field(default_factory=lambda: np.zeros(2))
    ap: float = 0.0
    faulted: bool = False

    def reset(self):
        self.bp = np.zeros(2)
        self.ap = 0.0
        self.faulted = False
        return self


def _check(state, u):
    if state.faulted:
        raise FilterFault("filter state poisoned by a non-finite sample; call reset()")
    if not np.isfinite(u):
        state.faulted = True
        raise FilterFault(f"non-finite input sample {u!r}")


class Bandpass:
    """Second-order resonant bandpass."""

    def __init__(self, center, bandwidth, sample_rate):
        self.sample_rate = float(sample_rate)
        self.center = float(center)
        self.b, self.a = bandpass_coefficients(center, bandwidth, sample_rate)

    def step(self, state, u):
        _check(state, u)
        b, a = self.b, self.a
        y = b[0] * u + state.bp[0]
        state.bp[0] = b[1] * u - a[1] * y + state.bp[1]
        state.bp[1] = b[2] * u - a[2] * y
        return y

    def process(self, u):
        return signal.lfilter(self.b, self.a, u)

    def response(self, omega):
        """Complex frequency response at angular frequency ``omega`` [rad/s]."""
        _, h = signal.freqz(self.b, self.a, worN=np.atleast_1d(omega) / self.sample_rate)
        return h


class PhaseShifter:
    """All-pass phase shifter realising ``phase`` at ``omega``."""

    def __init__(self, phase, omega, sample_rate):
        self.sample_rate = float(sample_rate)
        self.c, self.sign = allpass_coefficient(phase, omega, sample_rate)

    def step(self, state, y):
        _check(state, y)
        z = self.c * y + state.ap
        state.ap = y - self.c * z
        return self.sign * z

    def process(self, y):
        return self.sign * signal.lfilter([self.c, 1.0], [1.0, self.c], y)

    def response(self, omega):
        _, h = signal.freqz([self.c, 1.0], [1.0, self.c],
                            worN=np.atleast_1d(omega) / self.sample_rate)
        return self.sign * h


def bandpass_step(state, u, bandpass):
    """One bandpass sample; see ``Bandpass.step``."""
    return bandpass.step(state, u)


def phase_shift(state, sample, shifter):
    """One phase-shifter sample; see ``PhaseShifter.step``."""
    return shifter.step(state, sample)


def feedback_force(processed, cfg):
    """Lab-frame force for one processed (pre-clip) sample, without delay."""
    p = float(np.clip(processed, -cfg.clip, cfg.clip))
    return cfg.force_scale * cfg.gain * p * np.asarray(cfg.electrode_axis)


class FeedbackChain:
    """Sample-by-sample feedback loop including the transport delay.

    ``step(u)`` consumes one normalised in-loop sample and returns the
    force applied during the next sample period.
    """

    def __init__(self, cfg, sample_rate):
        self.cfg = cfg
        self.sample_rate = float(sample_rate)
        self.bandpass = Bandpass(cfg.center, cfg.bandwidth, sample_rate)
        self.shifter = PhaseShifter(cfg.phase, cfg.center, sample_rate)
        self.delay_samples = int(round(cfg.delay * sample_rate))
        self.state = FilterState()
        self._line = deque([0.0] * self.delay_samples)

    def reset(self):
        self.state.reset()
        self._line = deque([0.0] * self.delay_samples)

    def step(self, u):
        y = self.shifter.step(self.state, self.bandpass.step(self.state, u))
        y = min(max(y, -self.cfg.clip), self.cfg.clip)
        self._line.append(self.cfg.force_scale * self.cfg.gain * y)
        amp = self._line.popleft()
        return amp * np.asarray(self.cfg.electrode_axis)

    @property
    def effective_delay(self):
        """Signal-center to force-center delay in the sampled loop [s].

        Counts integrate over one sample and the force is held over one
        sample, adding one full sample to the configured transport delay.
        """
        return (self.delay_samples + 1) / self.sample_rate

    def response(self, omega):
        """Linear transfer (no clip, unit gain) from signal to force amplitude."""
        return (self.bandpass.response(omega) * self.shifter.response(omega)
                * np.exp(-1j * np.asarray(omega) * self.effective_delay))

    def kernel_arrays(self):
        """Coefficients in the layout used by the compiled closed loop."""
        b, a = self.bandpass.b, self.bandpass.a
        return (np.array([b[0], b[1], b[2], a[1], a[2]]),
                np.array([self.shifter.c, self.shifter.sign]),
                self.cfg.force_scale * self.cfg.gain,
                self.cfg.clip,
                np.asarray(self.cfg.electrode_axis, dtype=float),
                self.delay_samples + 1)


def dual_loop(cfg1, cfg2, in_loop_signal, sample_rate):
    """Run two chains on the same in-loop signal; returns both force series.

    Returns an array of shape (2, n, 2): loop index, sample, lab component.
    The applied force is their sum.
    """
    if cfg1.center == cfg2.center and np.allclose(cfg1.electrode_axis, cfg2.electrode_axis):
        raise ConfigError("loops must differ in center frequency or electrode axis", "feedback2")
    u = np.asarray(in_loop_signal, dtype=float)
    out = np.zeros((2, len(u), 2))
    for k, cfg in enumerate((cfg1, cfg2)):
        chain = FeedbackChain(cfg, sample_rate)
        for i, ui in enumerate(u):
            out[k, i] = chain.step(ui)
    return out


def loop_sign(knife_coefficient, electrode_axis, axis_vector):
    """Sign of the open-loop path signal -> force along the trap axis."""
    s = np.sign(knife_coefficient * np.dot(electrode_axis, axis_vector))
    return 1.0 if s >= 0 else -1.0


def optimal_phase(center, bandwidth, delay, sample_rate, omega_j, sign=1.0):
    """Phase-shifter setting that turns the chain into pure velocity damping at ``omega_j``.

    The total loop phase (bandpass, shifter, effective delay, path sign) is
    set to -pi/2 relative to the position signal.
    """
    probe = FeedbackChain(FeedbackConfig(center=center, bandwidth=bandwidth, delay=delay),
                          sample_rate)
    rest = (np.angle(probe.bandpass.response(omega_j)[0])
            - omega_j * probe.effective_delay
            + (0.0 if sign > 0 else np.pi))
    return _wrap(-np.pi / 2 - rest)


def unit_gain_force_scale(mass, omega_j, gamma_j, slope, knife_coefficient,
                          electrode_axis, axis_vector, damping_multiple=10.0):
    """Force scale at which ``gain = 1`` adds ``damping_multiple * gamma_j`` of cold damping.

    Uses the linear small-signal chain: unit filter gain at the center and
    a normalised-signal slope ``slope`` [1/m] along the knife normal.
    """
    coupling = abs(knife_coefficient * np.dot(electrode_axis, axis_vector))
    if coupling < 1e-9:
        raise ConfigError("loop has no projection on the target axis", "feedback.electrode_axis")
    return damping_multiple * gamma_j * mass * omega_j / (slope * coupling)
