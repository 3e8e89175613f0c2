"""Command-line entry point: ``knifecool <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

import argparse
import os
import sys

import numpy as np

from .errors import ConfigError, NumericalError
from .experiments import (calibration_drive, calibration_items, check_duration, fit_items,
                          run_axis_finding, run_gain_sweep, run_saturation_sweep,
                          run_thermometry, write_axes, write_images, write_key_values,
                          write_timeseries, _seed_sequence)
from .config import load_config
from .simulation import run_closed_loop

COMMANDS = ("simulate", "calibrate", "thermometry", "sweep-gain", "sweep-saturation",
            "fit-axes")


def _parser():
    p = argparse.ArgumentParser(prog="knifecool",
                                description="Knife-edge feedback cooling simulator.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", metavar="PATH", help="key = value run configuration")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
    p.add_argument("--orientation", choices=("A", "B"), help="knife orientation")
    p.add_argument("--gain", type=float, help="gain of every active loop (simulate, "
                   "calibrate, thermometry)")
    p.add_argument("--workers", type=int, help="worker processes for sweeps")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key, e.g. --set duration_s=0.1 (repeatable)")
    return p


def _overrides(args):
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"expected KEY=VALUE, got {item!r}", "--set")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    if args.seed is not None:
        out["seed"] = str(args.seed)
    if args.out is not None:
        out["out"] = args.out
    if args.orientation is not None:
        out["orientation"] = args.orientation
    if args.workers is not None:
        out["workers"] = str(args.workers)
    return out


def write_spectrum(path, res):
    """Raw and calibrated PSD with the fitted model on the same grid."""
    f = res.raw.freqs
    model = np.full_like(f, res.fits[0].offset)
    for fit in res.fits:
        model += fit.model(f) - fit.offset
    data = np.column_stack([f, res.raw.values, res.spectrum.values, model])
    header = (f"# rbw_hz={float(res.raw.rbw)!r}\n# n_segments={res.raw.n_segments}\n"
              "freq_hz,psd_raw_per_hz,psd_m2_per_hz,model_m2_per_hz")
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.10e")


def cmd_simulate(cfg, args):
    loops = cfg.active_loops(args.gain)
    drive = calibration_drive(cfg, loops) if cfg.drive_amplitude > 0 else None
    rec = run_closed_loop(cfg.trap, cfg.bath, cfg.optics, loops, cfg.duration,
                          _seed_sequence(cfg.seed), drive=drive, timing=cfg.timing,
                          settle=cfg.settle)
    write_timeseries(os.path.join(cfg.out, "timeseries.csv"), rec)
    return f"{len(rec.x)} samples"


def cmd_calibrate(cfg, args):
    res = run_thermometry(cfg, gain=args.gain)
    write_key_values(os.path.join(cfg.out, "calibration.csv"), calibration_items(res))
    c = res.calibration
    return f"slope_eff = {c.slope:.4g} /m, A_displ = {c.A_displ:.4g} m"


def cmd_thermometry(cfg, args):
    res = run_thermometry(cfg, gain=args.gain)
    write_key_values(os.path.join(cfg.out, "calibration.csv"), calibration_items(res))
    write_key_values(os.path.join(cfg.out, "fit.csv"), fit_items(res))
    write_spectrum(os.path.join(cfg.out, "spectrum.csv"), res)
    k = res.axes[-1]
    return (f"T = {res.T * 1e3:.4g} +- {res.T_err * 1e3:.2g} mK "
            f"(equipartition {res.T_eq[k] * 1e3:.4g} mK)")


def cmd_sweep_gain(cfg, args):
    res = run_gain_sweep(cfg)
    res.to_csv(os.path.join(cfg.out, "gain_sweep.csv"))
    T = res.column("T_K")
    i = int(np.argmin(T))
    return f"T(0) = {T[0] * 1e3:.4g} mK, T_min = {T[i] * 1e3:.4g} mK at g = {res.rows[i]['gain']}"


def cmd_sweep_saturation(cfg, args):
    res = run_saturation_sweep(cfg)
    res.to_csv(os.path.join(cfg.out, "saturation_sweep.csv"))
    f = res.fit
    write_key_values(os.path.join(cfg.out, "saturation_fit.csv"),
                     [("T0_K", f.T0), ("T0_err_K", f.T0_err),
                      ("rate_max_per_ms", f.rate_max / 1e3),
                      ("rate_max_err_per_ms", f.rate_max_err / 1e3),
                      ("residual_norm", f.residual_norm)])
    return (f"T0 = {f.T0 * 1e3:.4g} +- {f.T0_err * 1e3:.2g} mK, "
            f"R_max = {f.rate_max / 1e3:.4g} +- {f.rate_max_err / 1e3:.2g} /ms")


def cmd_fit_axes(cfg, args):
    res = run_axis_finding(cfg)
    write_axes(os.path.join(cfg.out, "axes.csv"), res)
    write_images(cfg.out, res)
    a1, a2, e1, e2 = res.angles.degrees()
    return f"alpha1 = {a1:.3f} +- {e1:.2f} deg, alpha2 = {a2:.3f} +- {e2:.2f} deg"


HANDLERS = {"simulate": cmd_simulate, "calibrate": cmd_calibrate,
            "thermometry": cmd_thermometry, "sweep-gain": cmd_sweep_gain,
            "sweep-saturation": cmd_sweep_saturation, "fit-axes": cmd_fit_axes}


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command in ("calibrate", "thermometry"):
            check_duration(cfg)
        os.makedirs(cfg.out, exist_ok=True)
        with open(os.path.join(cfg.out, "config_used.txt"), "w") as fh:
            fh.write(cfg.to_text())
        msg = HANDLERS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    print(f"{args.command}: {msg}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
