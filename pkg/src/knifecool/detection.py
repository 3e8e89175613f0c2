"""Knife-edge photon detection.

The ion image, a Gaussian spot of width ``spot_sigma`` at the knife plane,
is displaced by ``M * d`` where ``d`` is the ion displacement along the knife
normal. The transmitted (in-loop) detector sees the fraction
``(1 + erf(M d / (sigma sqrt 2))) / 2`` of the detected fluorescence and the
reflected (out-loop) detector the rest.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .constants import LINEWIDTH_370
from .errors import ConfigError

TRANSMITTED = "transmitted"
REFLECTED = "reflected"

# normalised slope d(count rate / focus rate)/dd reported for orientation A
PAPER_SLOPE = 4.46e6


def slope_matched_sigma(magnification, slope=PAPER_SLOPE):
    """Spot size giving a normalised-count slope ``slope`` [1/m] at balance."""
    return 2 * magnification / (np.sqrt(2 * np.pi) * slope)


@dataclass(frozen=True)
class OpticalConfig:
    """Imaging and photon-budget parameters.

    ``rate_370_max`` is the detected 369.5 nm rate summed over both
    detectors at full saturation; ``knife_angle`` is the direction of the
    knife-edge line in the lab frame.
    """

    magnification: float = 100.0
    spot_sigma: float = slope_matched_sigma(100.0)
    knife_angle: float = np.deg2rad(60.24 - 90.0)
    collection_efficiency: float = 0.07
    rate_370_max: float = 0.07 * LINEWIDTH_370 / 2
    rate_297_max: float = 19.04e3
    saturation: float = 1.0
    knife_offset: float = 0.0

    def __post_init__(self):
        checks = [
            ("magnification", self.magnification > 0),
            ("spot_sigma", self.spot_sigma > 0),
            ("collection_efficiency", 0 < self.collection_efficiency <= 1),
            ("rate_370_max", self.rate_370_max > 0),
            ("rate_297_max", self.rate_297_max > 0),
            ("saturation", self.saturation >= 0),
        ]
        for name, ok in checks:
            if not (np.isfinite(getattr(self, name)) and ok):
                raise ConfigError(f"invalid value {getattr(self, name)!r}", f"optics.{name}")
        if not (np.isfinite(self.knife_angle) and np.isfinite(self.knife_offset)):
            raise ConfigError("must be finite", "optics.knife_angle")

    @property
    def detected_rate(self):
        """Total detected 369.5 nm rate at the configured saturation [1/s]."""
        return scattering_rate(self.saturation, self.rate_370_max)

    @property
    def focus_rate(self):
        """Rate on either detector with the ion at balance [1/s]."""
        return 0.5 * self.detected_rate

    @property
    def normalized_slope(self):
        """Slope of (count rate / focus rate) versus displacement along the knife normal [1/m]."""
        return 2 * self.magnification / (self.spot_sigma * np.sqrt(2 * np.pi))

    @property
    def erf_scale(self):
        return self.magnification / (self.spot_sigma * np.sqrt(2))


def scattering_rate(s, r_max):
    """Saturation law ``r_max * s / (1 + s)``; ``s = inf`` gives ``r_max``."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("saturation parameter must be >= 0")
    with np.errstate(invalid="ignore"):
        out = np.where(np.isinf(s), 1.0, s / (1 + s)) * r_max
    return out[()] if out.ndim == 0 else out


def knife_normal_coefficients(axis_angles, knife_angle):
    """Projection of unit displacements along each trap axis onto the knife normal."""
    a = np.asarray(axis_angles, dtype=float)
    return np.cos(a - knife_angle - np.pi / 2)


def project_onto_knife_normal(x, axis_angles, knife_angle):
    """Signed displacement along the knife normal for per-axis positions ``x``.

    ``x`` may carry leading dimensions; the last one indexes the trap axes.
    """
    return np.asarray(x, dtype=float) @ knife_normal_coefficients(axis_angles, knife_angle)


def knife_transmission(d, magnification, sigma):
    """Fraction of the spot passing the knife edge at displacement ``d``."""
    return 0.5 * (1 + erf(magnification * np.asarray(d, dtype=float) / (sigma * np.sqrt(2))))


def knife_reflection(d, magnification, sigma):
    # written as erfc-free complement so transmission + reflection == 1 exactly
    return 1 - knife_transmission(d, magnification, sigma)


def sample_photon_counts(rate, dt, rng):
    """Poisson counts with mean ``rate * dt`` in each bin."""
    rate = np.asarray(rate, dtype=float)
    if np.any(rate < 0) or not np.all(np.isfinite(rate)):
        raise ValueError("rates must be finite and >= 0")
    return rng.poisson(rate * dt)


def shot_noise_level(mean_counts_per_bin, sample_rate):
    """One-sided PSD of Poisson counts [counts^2/Hz]."""
    return 2 * mean_counts_per_bin / sample_rate


@dataclass
class PhotocurrentTrace:
    """Uniformly sampled detector counts for one channel."""

    sample_rate: float
    samples: np.ndarray
    channel: str = TRANSMITTED
    t0: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.channel not in (TRANSMITTED, REFLECTED):
            raise ValueError(f"unknown channel {self.channel!r}")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        if np.any(self.samples < 0):
            raise ValueError("counts must be non-negative")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate

    @property
    def times(self):
        return self.t0 + np.arange(len(self.samples)) / self.sample_rate

    def normalized(self, focus_counts=None):
        """Counts divided by the per-bin count at balance (mean if not given)."""
        ref = self.samples.mean() if focus_counts is None else focus_counts
        return self.samples / ref

    def check_nyquist(self, max_frequency, factor=2.0):
        if self.sample_rate < factor * max_frequency:
            raise ValueError(
                f"sample rate {self.sample_rate:.4g} Hz below {factor} x {max_frequency:.4g} Hz")


def write_photocurrent_csv(path, transmitted, reflected):
    """Two-channel dump with columns ``t_s, counts_inloop, counts_outloop``."""
    if len(transmitted) != len(reflected) or transmitted.sample_rate != reflected.sample_rate:
        raise ValueError("channels must share length and sample rate")
    t = transmitted.times
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", "counts_inloop", "counts_outloop"])
        for row in zip(t, transmitted.samples, reflected.samples):
            w.writerow([repr(float(row[0])), int(row[1]), int(row[2])])


def read_photocurrent_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t = data[:, 0]
    fs = 1.0 / np.median(np.diff(t)) if len(t) > 1 else 1.0
    fs = float(np.round(fs, 6))
    return (PhotocurrentTrace(fs, data[:, 1].astype(np.int64), TRANSMITTED, t[0]),
            PhotocurrentTrace(fs, data[:, 2].astype(np.int64), REFLECTED, t[0]))
