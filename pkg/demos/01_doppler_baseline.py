"""Doppler baseline: measure the temperature of an uncooled ion from its spectrum.

The ion sits in the 370 nm cooling beam at s = 1, so the bath holds it at
twice the low-saturation limit, 1.95 mK. The knife edge turns the motion
into a modulation of the photon rate. Two calibration steps (a slope scan
and a coherent drive tone) convert the count spectrum into m^2/Hz. A
Lorentzian fit then gives the temperature, which is compared with the
kinetic temperature of the simulated velocities.

Run: python3 demos/01_doppler_baseline.py
"""

import warnings

import numpy as np

from knifecool import load_config, run_thermometry
from knifecool.constants import TWO_PI

warnings.simplefilter("ignore", RuntimeWarning)

cfg = load_config()
res = run_thermometry(cfg, keep_record=True)
cal = res.calibration
fit = res.fits[-1]
k = res.axes[-1]

print("calibration")
print(f"  static slope      {cal.static_slope * 1e-6:8.3f} /um (slope scan)")
print(f"  in-situ slope     {cal.slope * 1e-6:8.3f} /um (erf compression removed)")
print(f"  drive amplitude   {cal.A_displ * 1e9:8.2f} nm (from photon-drive correlation)")
print("fit")
print(f"  line centre       {fit.omega_j / TWO_PI / 1e3:8.2f} kHz")
print(f"  linewidth         {fit.gamma_j / TWO_PI:8.1f} Hz")
print(f"  T spectral        {res.T * 1e3:8.3f} +- {res.T_err * 1e3:.3f} mK")
print(f"  T equipartition   {res.T_eq[k] * 1e3:8.3f} +- {res.T_eq_err[k] * 1e3:.3f} mK")
print(f"  bath (truth)      {cfg.bath.temperature * 1e3:8.3f} mK")

# a coarse look at the calibrated line
f, s = res.spectrum.freqs, res.spectrum.values
band = (f > fit.omega_j / TWO_PI - 5e3) & (f < fit.omega_j / TWO_PI + 5e3)
fb, sb = f[band][::8], s[band][::8]
print("\ncalibrated PSD around the line (log scale)")
lo, hi = np.log10(sb.min()), np.log10(sb.max())
for fi, si in zip(fb, sb):
    bar = "#" * int(1 + 50 * (np.log10(si) - lo) / (hi - lo))
    print(f"  {fi / 1e3:8.2f} kHz  {bar}")
