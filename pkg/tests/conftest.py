import time
import warnings

import numpy as np
import pytest
from scipy import integrate

from knifecool.config import load_config
from knifecool.experiments import run_gain_sweep, run_saturation_sweep

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def line_integral(psd, f0, width):
    """Integral of a narrow line over [0, inf), split at multiples of its width.

    A single quad call over a range much wider than the line can miss it.
    """
    edges = f0 + width * np.array([-1e4, -1e3, -1e2, -10, -1, 0, 1, 10, 1e2, 1e3, 1e4])
    edges = np.concatenate([[0.0], edges[edges > 0]])
    total = sum(integrate.quad(psd, a, b, limit=200)[0] for a, b in zip(edges[:-1], edges[1:]))
    return total + integrate.quad(psd, edges[-1], np.inf, limit=200)[0]


def _timed(fn, *args, **kw):
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        out = fn(*args, **kw)
    return out, time.perf_counter() - t0


@pytest.fixture(scope="session")
def gain_sweep():
    """Default 8-point orientation-A sweep and its wall time [s]."""
    return _timed(run_gain_sweep, load_config())


@pytest.fixture(scope="session")
def saturation_sweep():
    """Default saturation sweep (no feedback and best of three gains) and its wall time [s]."""
    return _timed(run_saturation_sweep, load_config())


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        tr.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
