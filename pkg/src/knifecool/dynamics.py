"""Stochastic radial motion of a single trapped ion.

Each radial axis j is an independent damped oscillator

    m x'' = -m w_j^2 x - m g_j x' + F_j(t) + xi_j(t),
    <xi_j(t) xi_j(t')> = 2 m g_j k_B T delta(t - t'),

whose stationary one-sided position PSD is the Lorentzian fitted in
``knifecool.spectral.motion_psd``. The linear part is propagated exactly
(matrix exponential, Van Loan noise covariance); external forces are held
constant across a step.
"""

import csv
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from ._kernels import propagate
from .constants import K_B, LINEWIDTH_370, MASS_YB174, TWO_PI
from .errors import ConfigError, SimulationError

ABORT_THRESHOLD = 10e-6


def _pair(value, name):
    arr = np.broadcast_to(np.asarray(value, dtype=float), (2,))
    if not np.all(np.isfinite(arr)):
        raise ConfigError("must be finite", name)
    return tuple(float(a) for a in arr)


@dataclass(frozen=True)
class TrapConfig:
    """Radial trap: angular frequencies, damping rates, ion mass, axis angles.

    ``axis_angles`` are measured from the laboratory x axis. ``gamma = 0`` is
    accepted as the conservative limit.
    """

    omega: tuple = (TWO_PI * 450e3, TWO_PI * 455e3)
    gamma: tuple = (TWO_PI * 500.0, TWO_PI * 500.0)
    mass: float = MASS_YB174
    axis_angles: tuple = (np.deg2rad(60.24 - 90.0), np.deg2rad(60.24))
    max_damping_ratio: float = 1e-2
    orthogonality_tol: float = 1e-6

    def __post_init__(self):
        for name in ("omega", "gamma", "axis_angles"):
            object.__setattr__(self, name, _pair(getattr(self, name), f"trap.{name}"))
        if not all(w > 0 for w in self.omega):
            raise ConfigError("trap frequencies must be positive", "trap.omega")
        if not all(g >= 0 for g in self.gamma):
            raise ConfigError("damping rates must be non-negative", "trap.gamma")
        for g, w in zip(self.gamma, self.omega):
            if g >= self.max_damping_ratio * w:
                raise ConfigError(
                    f"gamma/omega = {g / w:.3g} is not underdamped "
                    f"(limit {self.max_damping_ratio})", "trap.gamma")
        if not (np.isfinite(self.mass) and self.mass > 0):
            raise ConfigError("mass must be positive", "trap.mass")
        defect = _orthogonality_defect(*self.axis_angles)
        if abs(defect) > self.orthogonality_tol:
            raise ConfigError(
                f"radial axes are {np.rad2deg(defect):.4g} deg from orthogonal",
                "trap.axis_angles")

    @property
    def axis_vectors(self):
        """Unit vectors of the two radial axes in the lab frame, shape (2, 2)."""
        a = np.asarray(self.axis_angles)
        return np.stack([np.cos(a), np.sin(a)], axis=1)

    @property
    def frequencies_hz(self):
        return tuple(w / TWO_PI for w in self.omega)

    def position_variance(self, temperature):
        """Thermal position variance k_B T / (m w_j^2) per axis."""
        return K_B * temperature / (self.mass * np.asarray(self.omega) ** 2)


def _orthogonality_defect(a1, a2):
    # deviation of the angle between the two axes from 90 deg, wrapped to (-pi/2, pi/2]
    d = (a2 - a1) % np.pi - np.pi / 2
    return d


@dataclass(frozen=True)
class BathConfig:
    """Doppler-cooling heat bath: equilibrium temperature, saturation, linewidth."""

    temperature: float
    saturation: float = 1.0
    linewidth: float = LINEWIDTH_370

    def __post_init__(self):
        if not (np.isfinite(self.temperature) and self.temperature > 0):
            raise ConfigError("temperature must be positive", "bath.temperature")
        if not (np.isfinite(self.saturation) and self.saturation >= 0):
            raise ConfigError("saturation must be non-negative", "bath.saturation")
        if not (np.isfinite(self.linewidth) and self.linewidth > 0):
            raise ConfigError("linewidth must be positive", "bath.linewidth")


def doppler_bath(s, T0, linewidth=LINEWIDTH_370):
    """Bath at the saturation-dependent Doppler temperature ``T0 * (1 + s)``.

    ``T0`` is the s -> 0 temperature for the setup geometry.
    """
    s = float(s)
    T0 = float(T0)
    if not np.isfinite(s) or s < 0:
        raise ConfigError(f"saturation must be finite and >= 0, got {s}", "saturation")
    if not np.isfinite(T0) or T0 <= 0:
        raise ConfigError(f"T0 must be finite and > 0, got {T0}", "T0")
    return BathConfig(temperature=T0 * (1 + s), saturation=s, linewidth=linewidth)


@dataclass
class IonState:
    t: float = 0.0
    x: np.ndarray = field(default_factory=lambda: np.zeros(2))
    v: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.x = np.array(self.x, dtype=float).reshape(2)
        self.v = np.array(self.v, dtype=float).reshape(2)

    def copy(self):
        return IonState(self.t, self.x.copy(), self.v.copy())


def check_resolution(trap, dt):
    """Reject steps coarser than 1/50 of the fastest trap period."""
    f_max = max(trap.omega) / TWO_PI
    if not (dt > 0 and dt <= 1.0 / (50 * f_max)):
        raise ConfigError(
            f"dt = {dt:.3g} s does not resolve the {f_max:.4g} Hz trap "
            f"(need <= {1.0 / (50 * f_max):.3g} s)", "dt")


class Propagator:
    """Exact one-step transition of the two independent damped oscillators.

    For axis j the state ``(x, v)`` maps to ``phi @ (x, v) + bd * a + chol @ n``
    with ``a`` the held external acceleration and ``n`` two standard normals.
    ``temperature = 0`` gives the noiseless dynamics.
    """

    def __init__(self, omega, gamma, temperature, mass, dt):
        self.dt = float(dt)
        self.phi = np.zeros((2, 2, 2))
        self.bd = np.zeros((2, 2))
        self.chol = np.zeros((2, 2, 2))
        for j in range(2):
            A = np.array([[0.0, 1.0], [-omega[j] ** 2, -gamma[j]]])
            q = 2 * gamma[j] * K_B * temperature / mass
            self.phi[j], self.bd[j], cov = _discretize(A, q, self.dt)
            self.chol[j] = _safe_cholesky(cov)

    @classmethod
    def from_configs(cls, trap, bath, dt):
        temperature = 0.0 if bath is None else bath.temperature
        return _cached_propagator(trap, temperature, float(dt))

    def step(self, x, v, accel, normals):
        """Vectorised single step; ``normals`` has shape (4,)."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        accel = np.broadcast_to(np.asarray(accel, dtype=float), (2,))
        n = np.asarray(normals, dtype=float).reshape(2, 2)
        xn = (self.phi[:, 0, 0] * x + self.phi[:, 0, 1] * v + self.bd[:, 0] * accel
              + self.chol[:, 0, 0] * n[:, 0])
        vn = (self.phi[:, 1, 0] * x + self.phi[:, 1, 1] * v + self.bd[:, 1] * accel
              + self.chol[:, 1, 0] * n[:, 0] + self.chol[:, 1, 1] * n[:, 1])
        return xn, vn


@lru_cache(maxsize=64)
def _cached_propagator(trap, temperature, dt):
    return Propagator(trap.omega, trap.gamma, temperature, trap.mass, dt)


def _discretize(A, q, dt):
    """Transition matrix, held-input gain and noise covariance over ``dt``."""
    # held input: [[A, B], [0, 0]] -> integral of expm(A s) B
    aug = np.zeros((3, 3))
    aug[:2, :2] = A
    aug[1, 2] = 1.0
    E = expm(aug * dt)
    phi = E[:2, :2]
    bd = E[:2, 2]
    # Van Loan
    Q = np.array([[0.0, 0.0], [0.0, q]])
    M = np.zeros((4, 4))
    M[:2, :2] = -A
    M[:2, 2:] = Q
    M[2:, 2:] = A.T
    F = expm(M * dt)
    cov = phi @ F[:2, 2:]
    cov = 0.5 * (cov + cov.T)
    return phi, bd, cov


def _safe_cholesky(cov):
    if not np.any(cov):
        return np.zeros((2, 2))
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(cov)
        return V @ np.diag(np.sqrt(np.clip(w, 0, None)))


def langevin_step(state, trap, bath, external_force, dt, rng, abort_threshold=ABORT_THRESHOLD):
    """Advance ``state`` by one step of length ``dt``.

    Parameters
    ----------
    state : IonState
    trap : TrapConfig
    bath : BathConfig or None
        ``None`` switches the stochastic force off.
    external_force : array_like, shape (2,)
        Force along each trap axis [N], held over the step.
    dt : float
    rng : numpy.random.Generator
        Four standard normals are drawn per call.

    Raises
    ------
    SimulationError
        If the new position leaves ``abort_threshold``.
    """
    check_resolution(trap, dt)
    prop = Propagator.from_configs(trap, bath, dt)
    accel = np.asarray(external_force, dtype=float) / trap.mass
    normals = rng.standard_normal(4)
    x, v = prop.step(state.x, state.v, accel, normals)
    if not np.all(np.abs(x) < abort_threshold):
        raise SimulationError(f"|x| exceeded {abort_threshold:.3g} m at t = {state.t + dt:.6g} s")
    return IonState(state.t + dt, x, v)


@dataclass(frozen=True)
class CoherentDrive:
    """Sinusoidal force ``amplitude * sin(omega_d t + phase) * axis``.

    ``axis`` is a lab-frame unit vector.
    """

    amplitude: float
    omega_d: float
    phase: float = 0.0
    axis: tuple = (1.0, 0.0)

    def __post_init__(self):
        if not (np.isfinite(self.omega_d) and self.omega_d > 0):
            raise ConfigError("drive frequency must be positive", "drive.omega_d")
        if not (np.isfinite(self.amplitude) and np.isfinite(self.phase)):
            raise ConfigError("drive amplitude and phase must be finite", "drive")
        ax = np.asarray(self.axis, dtype=float).reshape(2)
        norm = np.hypot(*ax)
        if not norm > 0:
            raise ConfigError("drive axis must be non-zero", "drive.axis")
        object.__setattr__(self, "axis", tuple(ax / norm))

    @property
    def period(self):
        return TWO_PI / self.omega_d

    @property
    def force_vector(self):
        """Lab-frame force amplitude vector [N]."""
        return self.amplitude * np.asarray(self.axis)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        s = np.sin(self.omega_d * t + self.phase)
        return s[..., None] * self.force_vector

    def zero_crossings(self, t_start, t_stop):
        """Upward zero crossings of the drive in ``[t_start, t_stop)``."""
        k0 = np.ceil((self.omega_d * t_start + self.phase) / TWO_PI)
        k1 = np.ceil((self.omega_d * t_stop + self.phase) / TWO_PI)
        k = np.arange(k0, k1)
        return (TWO_PI * k - self.phase) / self.omega_d


def coherent_drive(amplitude, omega_d, phase=0.0, axis=(1.0, 0.0)):
    return CoherentDrive(float(amplitude), float(omega_d), float(phase), tuple(axis))


def driven_amplitude(force, mass, omega_j, omega_d, gamma=0.0):
    """Steady-state displacement amplitude of a driven damped oscillator."""
    return force / (mass * np.sqrt((omega_j ** 2 - omega_d ** 2) ** 2 + (gamma * omega_d) ** 2))


def equipartition_temperature(velocities, mass, n_blocks=20):
    """Kinetic temperature ``m <v^2> / k_B`` per axis with a block-mean standard error.

    Samples of a slowly damped oscillator are strongly correlated, so the
    error comes from the scatter of ``n_blocks`` contiguous block means.

    Returns
    -------
    T, stderr : ndarray
        One entry per column of ``velocities``.
    """
    v = np.asarray(velocities, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape[0] < 10_000:
        raise ValueError(f"need at least 1e4 velocity samples, got {v.shape[0]}")
    v2 = v ** 2
    T = mass * v2.mean(axis=0) / K_B
    n = (v.shape[0] // n_blocks) * n_blocks
    blocks = v2[:n].reshape(n_blocks, -1, v.shape[1]).mean(axis=1)
    stderr = mass * blocks.std(axis=0, ddof=1) / np.sqrt(n_blocks) / K_B
    return T, stderr


def remove_tone(samples, t, omega):
    """Subtract the least-squares sinusoid at ``omega`` from each column.

    With a linear system the coherent response to a drive is exactly such
    a sinusoid, so the residual is the thermal part of the motion.
    """
    y = np.asarray(samples, dtype=float)
    t = np.asarray(t, dtype=float)
    X = np.stack([np.sin(omega * t), np.cos(omega * t)], axis=1)
    coef, *_ = np.linalg.lstsq(X, y - y.mean(axis=0), rcond=None)
    return y - X @ coef


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_s", "x1_m", "x2_m", "v1_mps", "v2_mps"])
            for row in zip(self.t, self.x[:, 0], self.x[:, 1], self.v[:, 0], self.v[:, 1]):
                w.writerow([repr(float(c)) for c in row])

    @classmethod
    def from_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1:3], data[:, 3:5])


def simulate(trap, bath, n_steps, dt, rng, state=None, force=None,
             abort_threshold=ABORT_THRESHOLD, chunk=1 << 18):
    """Open-loop trajectory of ``n_steps`` steps, recorded after every step.

    ``force`` is an optional callable ``F(t) -> (..., 2)`` in the lab frame
    (e.g. a ``CoherentDrive``), evaluated at step midpoints.
    """
    check_resolution(trap, dt)
    prop = Propagator.from_configs(trap, bath, dt)
    state = IonState() if state is None else state.copy()
    x = state.x.copy()
    v = state.v.copy()
    out_x = np.empty((n_steps, 2))
    out_v = np.empty((n_steps, 2))
    U = trap.axis_vectors
    for start in range(0, n_steps, chunk):
        m = min(chunk, n_steps - start)
        normals = rng.standard_normal((m, 4))
        if force is None:
            accel = np.zeros((m, 2))
        else:
            t_mid = state.t + (start + np.arange(m) + 0.5) * dt
            accel = force(t_mid) @ U.T / trap.mass
        bad = propagate(prop.phi, prop.bd, prop.chol, x, v, accel, normals,
                        abort_threshold, out_x[start:start + m], out_v[start:start + m])
        if bad >= 0:
            raise SimulationError(f"|x| exceeded {abort_threshold:.3g} m", step=start + bad)
    t = state.t + dt * np.arange(1, n_steps + 1)
    return Trajectory(t, out_x, out_v)
