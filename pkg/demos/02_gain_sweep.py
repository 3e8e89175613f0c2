"""Feedback cooling versus gain.

The transmitted photons drive a bandpass, phase shifter and delay whose
output pushes on axis 2 through an electrode. Increasing the gain damps the
motion until the shot noise fed back with the signal heats the ion again,
so the temperature has a minimum. The sweep also checks how little a
10 degree phase error costs near the optimum.

Run: python3 demos/02_gain_sweep.py   (about a minute)
"""

import warnings

import numpy as np

from knifecool import load_config, run_gain_sweep, run_thermometry
from knifecool.constants import doppler_limit

warnings.simplefilter("ignore", RuntimeWarning)

cfg = load_config()
res = run_gain_sweep(cfg)
g, T, Teq = res.column("gain"), res.column("T_K"), res.column("T_eq_K")
width = res.column("gamma_hz")

print(f"{'gain':>6} {'T_spec/uK':>10} {'T_eq/uK':>9} {'width/Hz':>9}")
for row in zip(g, T, Teq, width):
    print(f"{row[0]:6g} {row[1] * 1e6:10.1f} {row[2] * 1e6:9.1f} {row[3]:9.0f}")

i = int(np.argmin(T))
print(f"\nminimum {T[i] * 1e6:.0f} uK at g = {g[i]:g}, "
      f"{T[0] / T[i]:.1f}x below the uncooled value; Doppler limit {doppler_limit() * 1e6:.0f} uK")
print("at high gain the spectral value runs above the velocity value: the line is no longer"
      " Lorentzian")

ref = run_thermometry(cfg, seed=11, gain=g[i]).T
for d in (-10, 10):
    T_d = run_thermometry(cfg, seed=11, gain=g[i], phase_offset=np.deg2rad(d)).T
    print(f"phase {d:+d} deg: T changes by {T_d / ref - 1:+.1%}")
