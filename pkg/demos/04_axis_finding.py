"""Finding the trap axes from camera images.

Driving the ion along one axis smears its image into a line. A rotated
2-D Gaussian fit of that image gives the direction. Doing this for both
drive directions yields the two axis angles and how far they are from
orthogonal.

Run: python3 demos/04_axis_finding.py
"""

import numpy as np

from knifecool import load_config, run_axis_finding

cfg = load_config()
res = run_axis_finding(cfg)
a1, a2, e1, e2 = res.angles.degrees()
for name, fit in zip(("undriven", "drive 1", "drive 2"), res.fits):
    print(f"{name:9s} sigma_major {fit.sigma_major * 1e6:5.2f} um  "
          f"sigma_minor {fit.sigma_minor * 1e6:5.2f} um  "
          f"angle {np.rad2deg(fit.angle):7.2f} deg{'  (round, no direction)' if fit.degenerate else ''}")
print(f"\nalpha1 = {a1:.3f} +- {e1:.3f} deg   (set -28.87)")
print(f"alpha2 = {a2:.3f} +- {e2:.3f} deg   (set  60.24)")
print(f"orthogonality defect {np.rad2deg(res.angles.orthogonality_defect):+.2f} deg")

# the driven image as characters
img = res.images[2].intensities
small = img.reshape(16, 4, 16, 4).sum(axis=(1, 3))
chars = " .:-=+*#%@"
for row in small:
    print("  " + "".join(chars[min(9, int(10 * v / (small.max() + 1)))] * 2 for v in row))
