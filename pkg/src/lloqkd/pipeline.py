"""End-to-end run: simulate, calibrate, recover, estimate, reconcile, compute the key rate."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import make_measurement_set
from .config import RunConfig, dump_config
from .core import QkdError, SymbolFrame, rng_for
from .estimation import (LinkEstimate, cumulative_noise_trace, estimate_link, link_from_truth,
                         pool_estimates, write_noise_trace)
from .reconciliation.ldpc import RATE_005_TABLE, build_met_code
from .reconciliation.session import gaussian_capacity, max_rate, rate_adapt, reconcile, toeplitz_extract
from .rx.recover import FrameReport, recover_symbols, write_dsp_report
from .rx.whitening import whitening_estimate
from .security import SecurityReport, secret_key_rate, xi_rpn_model
from .snu import snu_calibrate, to_snu


class StageError(QkdError):
    """A module failure annotated with the stage and frame it happened in."""

    def __init__(self, stage: str, frame_id, cause: Exception):
        self.stage, self.frame_id, self.cause = stage, frame_id, cause
        where = f" (frame {frame_id})" if frame_id is not None else ""
        super().__init__(f"{stage}{where}: {type(cause).__name__}: {cause}")


@dataclass
class RunResult:
    link: LinkEstimate
    frame_links: list
    reports: list
    calibration: object
    measured: SecurityReport
    projected: SecurityReport
    xi_budget: float
    v_rpn: float
    recon: dict = field(default_factory=dict)
    key_bits: np.ndarray = field(default_factory=lambda: np.zeros(0, np.uint8))
    rate_source: str = "projected"

    @property
    def skr_bps(self) -> float:
        rep = self.projected if self.rate_source == "projected" else self.measured
        return rep.skr_finite_bps

    @property
    def exit_code(self) -> int:
        return 0 if self.skr_bps > 0 else 1


def _stage(name, frame_id, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except QkdError as exc:
        raise StageError(name, frame_id, exc) from exc


def calibrate(cfg: RunConfig, ms):
    cal = _stage("snu-core", None, snu_calibrate, ms.vacuum_frames, ms.electronic_frames)
    vac = [to_snu(f, cal) for f in ms.vacuum_frames]
    wf = _stage("rx-dsp/whitening", None, whitening_estimate, vac, cfg.run.whitening_frames,
                cfg.run.whitening_nperseg)
    return cal, wf


def run_experiment(cfg: RunConfig, out_dir=None) -> RunResult:
    """Full chain on simulated data; writes reports to ``out_dir`` when given."""
    cfg.validate()
    r = cfg.run
    ms = _stage("channel-sim", None, make_measurement_set, cfg.tx, cfg.channel, cfg.detector,
                n_frames=r.n_frames, samples_per_frame=r.samples_per_frame, seed=r.seed,
                n_calib_frames=r.n_calib_frames, electronic_noise=r.electronic_noise)
    cal, wf = calibrate(cfg, ms)
    # trusted electronic noise as calibrated (per-sample variance is t/2)
    t_hat = 2 * cal.electronic_snu
    rx_cfg = cfg.rx
    rx_cfg.t_noise = t_hat
    det = type(cfg.detector)(cfg.detector.tau, t_hat, cfg.detector.bandwidth_hz,
                             cfg.detector.adc_bits, cfg.detector.adc_counts_per_snu)
    ys, reports, links = [], [], []
    for frame, sym in zip(ms.signal_frames, ms.tx_symbols):
        fs = to_snu(frame, cal)
        y, rep = _stage("rx-dsp", frame.frame_id, recover_symbols, fs, wf, cfg.tx, sym, rx_cfg,
                        return_report=True)
        ys.append(y)
        reports.append(rep)
        links.append(_stage("param-est", frame.frame_id, estimate_link, sym, y, det,
                            delta_fail=cfg.estimation.delta_fail))
    link = pool_estimates(links)
    v_rpn = float(np.mean([rp.v_rpn for rp in reports]))
    sec = cfg.security.params(cfg.estimation.delta_fail)
    v_mod = cfg.tx.v_mod
    measured = secret_key_rate(link, sec, v_mod, "finite")
    # projection: measured transmittance, excess noise from the budget, full-length statistics
    xi_budget = cfg.noise.total() + xi_rpn_model(link.eta_hat * det.tau, v_mod / 2, v_rpn)
    proj_link = link_from_truth(link.eta_hat, xi_budget, int(cfg.estimation.n_project), v_mod,
                                det.tau, t_hat, cfg.estimation.delta_fail)
    projected = secret_key_rate(proj_link, sec, v_mod, "finite")
    res = RunResult(link, links, reports, cal, measured, projected, xi_budget, v_rpn,
                    rate_source=cfg.security.rate_source)
    if cfg.reconciliation.enabled:
        res.recon, res.key_bits = _reconcile(cfg, ms.tx_symbols, ys, link, res)
    if out_dir is not None:
        write_run(cfg, res, Path(out_dir))
    return res


def _reconcile(cfg: RunConfig, txs, ys, link: LinkEstimate, res: RunResult):
    rc = cfg.reconciliation
    x = np.concatenate([np.column_stack([s.x, s.p]).ravel() for s in txs])
    y = np.concatenate([np.column_stack([s.x, s.p]).ravel() for s in ys])
    snr = link.gain ** 2 * float(np.mean(x ** 2)) / link.noise_var
    code = build_met_code(RATE_005_TABLE, rc.block_len, seed=rc.code_seed)
    # high-SNR links are served by the least redundant word the code supports
    target = min(rc.beta_target * gaussian_capacity(snr), max_rate(code))
    code = rate_adapt(code, 2 ** (2 * target / rc.beta_target) - 1, rc.beta_target, seed=cfg.run.seed)
    per_block = -(-(code.block_len - code.n_punctured) // rc.dimension) * rc.dimension
    n_use = min(x.size // per_block, rc.max_blocks) * per_block
    info = {"snr": snr, "effective_rate": code.effective_rate, "blocks": 0, "fer": float("nan"),
            "beta": float("nan"), "agree": True}
    if n_use == 0:
        return info, np.zeros(0, np.uint8)
    sess = _stage("reconciliation", None, reconcile, code, x[:n_use], y[:n_use], link.gain,
                  link.noise_var, rc.dimension, cfg.run.seed, rc.max_iters)
    ok = [b for b in sess.blocks if b.converged]
    info.update(blocks=sess.n_blocks, fer=sess.fer, beta=sess.beta,
                agree=all(b.agree for b in ok))
    raw = sess.key_bits()
    # secret fraction per transmitted symbol from the selected rate report
    rep = res.projected if res.rate_source == "projected" else res.measured
    per_symbol = rep.skr_finite_bps / (rep.params_used[1].baud_hz * (1 - rep.params_used[1].fer)) \
        if rep.params_used[1].fer < 1 else 0.0
    symbols = len(ok) * per_block / 2
    out_len = min(int(math.floor(per_symbol * symbols)), raw.size)
    if out_len <= 0:
        return info, np.zeros(0, np.uint8)
    seed_bits = rng_for(cfg.run.seed, 0x7E5).integers(0, 2, raw.size + out_len - 1, dtype=np.uint8)
    return info, toeplitz_extract(raw, seed_bits, out_len)


def summary_rows(cfg: RunConfig, res: RunResult) -> list[tuple[str, str]]:
    L, m, p = res.link, res.measured, res.projected
    rows = [
        ("distance_km", cfg.channel.length_km), ("eta_true", cfg.channel.eta),
        ("v_mod_snu", cfg.tx.v_mod), ("tau", cfg.detector.tau),
        ("t_noise_msnu", L.t_noise * 1e3), ("clearance_db", res.calibration.clearance_db),
        ("n_used", L.n_used), ("eta_hat", L.eta_hat), ("eta_low", L.eta_low),
        ("xi_hat_msnu", L.xi_hat * 1e3), ("xi_up_msnu", L.xi_up * 1e3),
        ("v_rpn_rad2", res.v_rpn), ("xi_budget_msnu", res.xi_budget * 1e3),
        ("i_ab_bits", p.i_ab), ("chi_e_bits", p.chi_e), ("delta_n_bits", p.delta_n),
        ("beta", cfg.security.beta), ("fer", cfg.security.fer),
        ("skr_measured_finite_bps", m.skr_finite_bps), ("skr_measured_asym_bps", m.skr_asymptotic_bps),
        ("skr_projected_finite_bps", p.skr_finite_bps), ("skr_projected_asym_bps", p.skr_asymptotic_bps),
        ("rate_source", res.rate_source), ("skr_bps", res.skr_bps),
    ]
    for k in ("snr", "effective_rate", "blocks", "beta", "fer", "agree"):
        if k in res.recon:
            rows.append((f"recon_{k}", res.recon[k]))
    rows.append(("key_bits", res.key_bits.size))
    return [(k, f"{v:.6g}" if isinstance(v, float) else str(v)) for k, v in rows]


def write_run(cfg: RunConfig, res: RunResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_manifest.ini").write_text(dump_config(cfg))
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "value"])
        w.writerows(summary_rows(cfg, res))
    write_dsp_report(res.reports, out / "dsp_report.csv")
    write_noise_trace(cumulative_noise_trace(res.frame_links), out / "noise_trace.csv")
    np.packbits(res.key_bits).tofile(out / "key.bin")
