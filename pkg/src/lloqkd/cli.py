"""Command-line front end: calibrate, run, sweep, report."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import PRESETS, RunConfig, dump_config, load_config, replace_section
from .core import QkdError
from .security import (REPORTED_POINTS, CurveConfig, SecurityParams, rates_at, skr_vs_distance,
                       table_models, vmod_optimize, write_distance_csv, write_vmod_csv)

log = logging.getLogger("lloqkd")

AXES = ("distance", "v_mod", "pilot_snr", "linewidth")


def curve_config(cfg: RunConfig) -> CurveConfig:
    sec = cfg.security.params(cfg.estimation.delta_fail)
    return CurveConfig(v_mod=cfg.tx.v_mod, tau=cfg.detector.tau, t_noise=cfg.detector.t_noise,
                       xi=cfg.noise.total(), n_used=cfg.estimation.n_project,
                       atten_db_per_km=cfg.channel.atten_db_per_km,
                       coupling=cfg.channel.coupling_transmittance, sec=sec)


def parse_grid(text: str | None) -> list[float]:
    """``a,b,c`` or ``start:stop:step`` (stop inclusive)."""
    if text is None or not text.strip():
        return []
    if ":" in text:
        a, b, s = (float(v) for v in text.split(":"))
        n = int(round((b - a) / s)) + 1
        return [round(a + k * s, 12) for k in range(max(n, 0))]
    return [float(v) for v in text.split(",") if v.strip()]


def _f(v: float) -> str:
    return f"{v:.6f}"


# -- per-point evaluators ---------------------------------------------------------

def _point_distance(cfg, value):
    cc = curve_config(cfg)
    from .channel import eta_at

    r = rates_at(float(eta_at(value, cc.atten_db_per_km, cc.coupling)), cc)
    return [f"{value:g}", _f(r.skr_asymptotic_bps), _f(r.skr_finite_bps)]


def _point_vmod(cfg, value):
    cc = curve_config(cfg)
    lut = {p.v_mod: p for p in REPORTED_POINTS}
    p = lut.get(value)
    beta = cfg.security.beta if p is None else p.beta
    fer = cfg.security.fer if p is None else p.fer
    if beta is None:
        return [f"{value:g}", "", _f(fer), _f(0.0)]
    from dataclasses import replace

    r = rates_at(cfg.channel.eta, cc, v_mod=value, sec=replace(cc.sec, beta=beta, fer=fer))
    return [f"{value:g}", _f(beta), _f(fer), _f(r.skr_asymptotic_bps)]


def _point_sim(cfg, axis, value):
    from .pipeline import run_experiment

    if axis == "pilot_snr":
        c = replace_section(cfg, "tx", pilot_power_db=value)
    else:
        c = replace_section(cfg, "channel", linewidth_tx_hz=value / 2, linewidth_rx_hz=value / 2)
        c.rx.linewidth_hz = max(value, 1.0)
    c.reconciliation.enabled = False
    res = run_experiment(c)
    return [f"{value:g}", f"{res.v_rpn:.6e}", _f(res.link.xi_hat * 1e3), _f(res.projected.skr_finite_bps)]


HEADERS = {
    "distance": ["distance_km", "skr_asym_bps", "skr_finite_bps"],
    "v_mod": ["v_mod", "beta", "fer", "skr"],
    "pilot_snr": ["pilot_power_db", "v_rpn_rad2", "xi_hat_msnu", "skr_projected_bps"],
    "linewidth": ["linewidth_hz", "v_rpn_rad2", "xi_hat_msnu", "skr_projected_bps"],
}
FILES = {"distance": "skr_vs_distance.csv", "v_mod": "vmod_sweep.csv",
         "pilot_snr": "pilot_snr_sweep.csv", "linewidth": "linewidth_sweep.csv"}


def evaluate_point(cfg, axis, value) -> list[str]:
    if axis == "distance":
        return _point_distance(cfg, value)
    if axis == "v_mod":
        return _point_vmod(cfg, value)
    return _point_sim(cfg, axis, value)


def sweep(cfg: RunConfig, axis: str, grid, out_dir) -> Path:
    """One CSV row per grid point; finished points persist under ``points/`` and are reused.

    A point that raises is recorded with an ``error`` column and the sweep
    moves on.
    """
    if axis not in AXES:
        raise QkdError(f"unknown axis {axis!r}")
    out = Path(out_dir)
    pts = out / "points" / axis
    pts.mkdir(parents=True, exist_ok=True)
    key = dump_config(cfg)
    for i, v in enumerate(grid):
        p = pts / f"{i:05d}.json"
        if p.exists():
            rec = json.loads(p.read_text())
            if rec.get("value") == v and rec.get("config") == key:
                continue
        try:
            row, err = evaluate_point(cfg, axis, v), ""
        except QkdError as exc:
            log.warning("point %s=%g failed: %s", axis, v, exc)
            row, err = [f"{v:g}"] + [""] * (len(HEADERS[axis]) - 1), str(exc)
        tmp = p.with_suffix(".tmp")
        tmp.write_text(json.dumps({"value": v, "row": row, "error": err, "config": key}))
        tmp.replace(p)
    path = out / FILES[axis]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADERS[axis] + ["error"])
        for i, _ in enumerate(grid):
            rec = json.loads((pts / f"{i:05d}.json").read_text())
            w.writerow(rec["row"] + [rec["error"]])
    return path


# -- verbs ----------------------------------------------------------------------

def cmd_calibrate(cfg, args) -> int:
    from .channel import make_measurement_set
    from .pipeline import calibrate

    r = cfg.run
    ms = make_measurement_set(cfg.tx, cfg.channel, cfg.detector, n_frames=1,
                              samples_per_frame=r.samples_per_frame, seed=r.seed,
                              n_calib_frames=r.n_calib_frames, electronic_noise=r.electronic_noise)
    cal, wf = calibrate(cfg, ms)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "calibration.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "value"])
        w.writerow(["vacuum_variance_counts2", f"{cal.vacuum_variance:.6g}"])
        w.writerow(["electronic_variance_counts2", f"{cal.electronic_variance:.6g}"])
        w.writerow(["snu_scale_counts2", f"{cal.snu_scale:.6g}"])
        w.writerow(["electronic_noise_msnu", f"{2e3 * cal.electronic_snu:.6g}"])
        w.writerow(["clearance_db", f"{cal.clearance_db:.6g}"])
    np.save(out / "whitening.npy", wf.freq_response_inverse)
    print(f"clearance {cal.clearance_db:.2f} dB, electronic noise {2e3 * cal.electronic_snu:.2f} mSNU")
    return 0


def cmd_run(cfg, args) -> int:
    from .pipeline import run_experiment

    res = run_experiment(cfg, args.out)
    print(f"SKR ({res.rate_source}, finite size): {res.skr_bps / 1e3:.2f} kbit/s; "
          f"xi_hat {res.link.xi_hat * 1e3:.3f} mSNU; key bits {res.key_bits.size}")
    return res.exit_code


def cmd_sweep(cfg, args) -> int:
    grid = parse_grid(args.grid)
    path = sweep(cfg, args.axis, grid, args.out)
    print(path)
    return 0


def cmd_report(cfg, args) -> int:
    """Formula-path figures: key rate at the configured point, distance curve, V_mod sweep."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cc = curve_config(cfg)
    r = rates_at(cfg.channel.eta, cc)
    curve = skr_vs_distance(parse_grid(args.grid) or [0, 25, 50, 75, 100, 125, 150], cc)
    write_distance_csv(curve, out / "skr_vs_distance.csv")
    bm, fm = table_models()
    best, rows = vmod_optimize([p.v_mod for p in REPORTED_POINTS], bm, fm, cfg.channel.eta, cc)
    write_vmod_csv(rows, out / "vmod_sweep.csv")
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "value"])
        for k, v in [("eta", cfg.channel.eta), ("i_ab_bits", r.i_ab), ("chi_e_bits", r.chi_e),
                     ("delta_n_bits", r.delta_n), ("skr_asym_bps", r.skr_asymptotic_bps),
                     ("skr_finite_bps", r.skr_finite_bps),
                     ("zero_crossing_finite_km", curve["zero_crossing_finite_km"]),
                     ("zero_crossing_asym_km", curve["zero_crossing_asymptotic_km"]),
                     ("v_mod_opt", best)]:
            w.writerow([k, f"{v:.6g}"])
    print(f"finite {r.skr_finite_bps / 1e3:.2f} kbit/s, asymptotic {r.skr_asymptotic_bps / 1e3:.2f} kbit/s, "
          f"finite-size zero crossing {curve['zero_crossing_finite_km']:.1f} km, V_mod* {best:g}")
    return 0 if r.skr_finite_bps > 0 else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lloqkd", description="CV-QKD link simulator and post-processing")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI file layered over the preset")
    common.add_argument("--preset", choices=PRESETS, default="table1")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("calibrate", parents=[common], help="SNU calibration and whitening filter")
    sub.add_parser("run", parents=[common], help="full chain; exit status 0 iff the key rate is positive")
    s = sub.add_parser("sweep", parents=[common], help="resumable sweep along one axis")
    s.add_argument("--axis", choices=AXES, required=True)
    s.add_argument("--grid", default="", help="comma list or start:stop:step")
    r = sub.add_parser("report", parents=[common], help="formula-path rates and curves")
    r.add_argument("--grid", default="", help="distance grid in km")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = f"[run]\nseed = {args.seed}\n" if args.seed is not None else None
        cfg = load_config(args.config, args.preset, overrides)
        return {"calibrate": cmd_calibrate, "run": cmd_run, "sweep": cmd_sweep,
                "report": cmd_report}[args.verb](cfg, args)
    except QkdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
