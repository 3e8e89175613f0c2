"""Physical constants (SI) and paper-scale defaults."""

import numpy as np

K_B = 1.380649e-23
HBAR = 1.054571817e-34
AMU = 1.66053906660e-27

# 174Yb+
MASS_YB174 = 173.938862 * AMU

# Doppler cooling transition, 2S1/2 - 2P1/2 at 369.5 nm
LINEWIDTH_370 = 2 * np.pi * 19.6e6

TWO_PI = 2 * np.pi


def doppler_limit(linewidth=LINEWIDTH_370):
    """Doppler limit temperature hbar*Gamma/(2 k_B) in kelvin."""
    return HBAR * linewidth / (2 * K_B)
