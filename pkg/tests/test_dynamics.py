import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from knifecool.constants import K_B, TWO_PI
from knifecool.dynamics import (IonState, TrapConfig, coherent_drive, doppler_bath,
                                driven_amplitude, equipartition_temperature, langevin_step,
                                remove_tone, simulate)
from knifecool.errors import ConfigError, SimulationError
from knifecool.simulation import driven_steady_state, run_closed_loop
from knifecool.detection import OpticalConfig

DT = 20e-9


# --- doppler_bath -------------------------------------------------------------------

def test_doppler_bath_s1():
    assert doppler_bath(1, 0.975e-3).temperature == pytest.approx(1.95e-3, rel=1e-12)


def test_doppler_bath_s0_is_T0():
    assert doppler_bath(0, 0.975e-3).temperature == 0.975e-3


def test_doppler_bath_s3():
    assert doppler_bath(3, 0.99e-3).temperature == pytest.approx(3.96e-3, rel=1e-12)


@pytest.mark.parametrize("s, T0", [(-0.1, 1e-3), (1.0, 0.0), (np.nan, 1e-3), (1.0, -1e-3)])
def test_doppler_bath_rejects(s, T0):
    with pytest.raises(ConfigError):
        doppler_bath(s, T0)


@given(st.floats(0, 100), st.floats(1e-5, 1e-2))
def test_doppler_bath_linear_in_s(s, T0):
    assert doppler_bath(s, T0).temperature == pytest.approx(T0 * (1 + s), rel=1e-12)


# --- trap config ----------------------------------------------------------------------

def test_trap_rejects_non_orthogonal_axes():
    with pytest.raises(ConfigError, match="trap.axis_angles"):
        TrapConfig(axis_angles=(np.deg2rad(-28.87), np.deg2rad(60.24)))


def test_trap_rejects_overdamped():
    with pytest.raises(ConfigError, match="trap.gamma"):
        TrapConfig(gamma=(TWO_PI * 50e3, TWO_PI * 500))


# --- integrator ------------------------------------------------------------------------

def test_energy_conserved_without_noise_and_damping():
    trap = TrapConfig(gamma=(0.0, 0.0))
    traj = simulate(trap, None, 100_000, DT, np.random.default_rng(0),
                    state=IonState(0.0, (1e-9, 0.0), (0.0, 0.0)))
    w = np.asarray(trap.omega)
    E = 0.5 * trap.mass * (traj.v ** 2 + (w * traj.x) ** 2).sum(axis=1)
    E0 = 0.5 * trap.mass * (w[0] * 1e-9) ** 2
    assert np.max(np.abs(E / E0 - 1)) < 1e-6


def test_langevin_step_matches_simulate():
    trap = TrapConfig()
    bath = doppler_bath(1, 0.975e-3)
    state = IonState(0.0, (1e-8, -2e-8), (0.1, 0.05))
    traj = simulate(trap, bath, 50, DT, np.random.default_rng(3), state=state)
    rng = np.random.default_rng(3)
    s = state
    for _ in range(50):
        s = langevin_step(s, trap, bath, np.zeros(2), DT, rng)
    np.testing.assert_allclose(s.x, traj.x[-1], rtol=1e-12, atol=1e-22)
    np.testing.assert_allclose(s.v, traj.v[-1], rtol=1e-12, atol=1e-16)


def test_equipartition_long_run():
    # 1e7 steps of 20 ns; wider lines give more independent samples
    trap = TrapConfig(gamma=(TWO_PI * 2e3, TWO_PI * 2e3))
    bath = doppler_bath(1, 0.975e-3)
    rec = run_closed_loop(trap, bath, OpticalConfig(), [], 1e7 * DT, 11, settle=0.0)
    T, err = equipartition_temperature(rec.v, trap.mass)
    assert np.all(np.abs(T / 1.95e-3 - 1) < 0.05)
    assert np.all(np.abs(T - 1.95e-3) < 3 * np.hypot(err, 0.01 * 1.95e-3))


def test_driven_response_far_from_resonance():
    trap = TrapConfig(gamma=(TWO_PI * 500, TWO_PI * 500))
    wd = TWO_PI * 520e3
    F = 1e-20
    drive = coherent_drive(F, wd, 0.0, trap.axis_vectors[1])
    x0, v0 = driven_steady_state(trap, drive)
    n = 200_000
    traj = simulate(trap, None, n, DT, np.random.default_rng(0),
                    state=IonState(0.0, x0, v0), force=drive)
    z = 2 * np.mean(traj.x[:, 1] * np.exp(-1j * wd * traj.t))
    expect = driven_amplitude(F, trap.mass, trap.omega[1], wd)
    assert abs(z) == pytest.approx(expect, rel=0.02)


def test_runaway_raises():
    trap = TrapConfig(gamma=(0.0, 0.0))
    with pytest.raises(SimulationError):
        simulate(trap, None, 10, DT, np.random.default_rng(0),
                 state=IonState(0.0, (2e-5, 0.0), (0.0, 0.0)))


def test_simulate_is_deterministic():
    trap = TrapConfig()
    bath = doppler_bath(1, 0.975e-3)
    a = simulate(trap, bath, 20_000, DT, np.random.default_rng(42))
    b = simulate(trap, bath, 20_000, DT, np.random.default_rng(42))
    assert np.array_equal(a.x, b.x) and np.array_equal(a.v, b.v)


# --- coherent drive ---------------------------------------------------------------------

def test_zero_amplitude_drive_is_zero():
    d = coherent_drive(0.0, TWO_PI * 458e3)
    assert np.all(d(np.linspace(0, 1e-4, 1000)) == 0)


def test_drive_near_line_but_outside():
    trap = TrapConfig()
    d = coherent_drive(1e-21, TWO_PI * 458e3, axis=trap.axis_vectors[1])
    assert abs(d.omega_d - trap.omega[1]) > 5 * trap.gamma[1]


def test_phase_pi_shifts_zero_crossings_half_period():
    wd = TWO_PI * 458e3
    a = coherent_drive(1.0, wd, 0.0).zero_crossings(0.0, 1e-4)
    b = coherent_drive(1.0, wd, np.pi).zero_crossings(0.0, 1e-4)
    T = TWO_PI / wd
    shift = (b[0] - a[0]) % T
    assert shift == pytest.approx(T / 2, rel=1e-9)


# --- equipartition estimator ---------------------------------------------------------------

def test_equipartition_zero_velocity():
    T, _ = equipartition_temperature(np.zeros((20_000, 2)), 1e-25)
    assert np.all(T == 0)


def test_equipartition_gaussian_velocities():
    m = 2.9e-25
    rng = np.random.default_rng(1)
    v = rng.standard_normal((200_000, 2)) * np.sqrt(K_B * 1.95e-3 / m)
    T, err = equipartition_temperature(v, m)
    assert np.all(np.abs(T - 1.95e-3) < 4 * err)


@given(st.floats(0.1, 10))
@settings(max_examples=20, deadline=None)
def test_equipartition_quadratic_scaling(k):
    v = np.random.default_rng(2).standard_normal((10_000, 2))
    T1, _ = equipartition_temperature(v, 1.0)
    T2, _ = equipartition_temperature(k * v, 1.0)
    np.testing.assert_allclose(T2, k ** 2 * T1, rtol=1e-10)


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(1e5, 1e6))
@settings(max_examples=25, deadline=None)
def test_remove_tone_removes_sinusoid(a, b, f):
    t = np.arange(20_000) * 2e-7
    base = np.random.default_rng(0).standard_normal(20_000)
    y = base + a * np.sin(TWO_PI * f * t) + b * np.cos(TWO_PI * f * t)
    r = remove_tone(y, t, TWO_PI * f)
    z = np.mean(r * np.exp(-1j * TWO_PI * f * t))
    assert abs(z) < 0.03
