"""Temperature versus saturation of the cooling transition.

Without feedback the Doppler temperature grows as T0 / (1 - R/R_max), with
R the 297 nm photon rate that tracks the 370 nm saturation. Fitting that
law to the simulated no-feedback series recovers the bath parameters.
With feedback the minimum temperature rises far more slowly, so the gain
from feedback widens with s.

Run: python3 demos/03_saturation_law.py   (about two minutes)
"""

import warnings

from knifecool import load_config, run_saturation_sweep

warnings.simplefilter("ignore", RuntimeWarning)

cfg = load_config()
res = run_saturation_sweep(cfg)
print(f"{'s':>5} {'R/ms^-1':>8} {'T_nofb/uK':>10} {'T_min/uK':>9} {'best g':>7}")
for r in res.rows:
    print(f"{r['saturation']:5g} {r['rate_297_per_ms']:8.2f} {r['T_nofb_K'] * 1e6:10.1f} "
          f"{r['T_min_K'] * 1e6:9.1f} {r['gain_min']:7g}")
f = res.fit
print(f"\nfit T0    = {f.T0 * 1e3:.3f} +- {f.T0_err * 1e3:.3f} mK  (bath {cfg.T0 * 1e3:.3f} mK)")
print(f"fit R_max = {f.rate_max / 1e3:.2f} +- {f.rate_max_err / 1e3:.2f} /ms  "
      f"(configured {cfg.optics.rate_297_max / 1e3:.2f} /ms)")
