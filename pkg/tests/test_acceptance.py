"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the summary block at the end
of the pytest output lists every criterion.
"""
import filecmp
import time

import numpy as np
import pytest
from scipy import signal
from scipy.stats import norm

from conftest import bandlimited_noise, vacuum_frames
from lloqkd.channel import ChannelParams, DetectorModel, make_measurement_set, propagate, wiener_phase
from lloqkd.cli import curve_config, sweep
from lloqkd.config import make_preset
from lloqkd.core import NoiseBudget, SampleFrame, Unit
from lloqkd.estimation import confidence_z, estimate_link, pool_estimates
from lloqkd.pipeline import calibrate
from lloqkd.reconciliation.ldpc import RATE_005_TABLE, build_met_code
from lloqkd.reconciliation.md import bits_to_points, left_matrix, md_apply, md_map
from lloqkd.reconciliation.session import reconcile, simulate_channel, toeplitz_extract, toeplitz_naive
from lloqkd.rx.carrier import (PhaseTrackState, freq_offset_fit, hilbert_phase, initial_phase,
                               phase_error_variance, pilot_extract, ukf_phase_track)
from lloqkd.rx.recover import RxConfig, recover_symbols
from lloqkd.rx.whitening import whitening_estimate
from lloqkd.security import (CurveConfig, SecurityParams, rates_at, skr_vs_distance, table_models,
                             vmod_optimize, REPORTED_POINTS, xi_rpn_model)
from lloqkd.snu import to_snu
from lloqkd.tx import ModulationConfig, generate_symbols, synthesize_waveform

FS = 1e9


# 1 -------------------------------------------------------------------------------

def test_c1_table1_key_rate(criterion):
    with criterion(1) as c:
        t0 = time.perf_counter()
        cc = CurveConfig(v_mod=8.41, tau=0.68, t_noise=62.72e-3, xi=0.212e-3, n_used=9.5e8,
                         sec=SecurityParams(beta=0.925, fer=0.59, delta_fail=1e-10, baud_hz=1e8))
        r = rates_at(0.028, cc)
        dt = time.perf_counter() - t0
        c.detail = (f"finite {r.skr_finite_bps / 1e3:.2f} kbit/s (25.4 +-30%), asymptotic "
                    f"{r.skr_asymptotic_bps / 1e3:.2f} kbit/s (>25), {dt * 1e3:.1f} ms")
        c.ok = (abs(r.skr_finite_bps - 25.4e3) <= 0.3 * 25.4e3 and r.skr_asymptotic_bps > 25e3
                and dt < 1.0)
    assert c.ok


# 2 -------------------------------------------------------------------------------

def _closure_point(lw: float, n_frames: int):
    """Phase-attributable excess noise at one combined linewidth, back to back.

    The attributable part is the paired difference between the estimate with
    the tracked carrier and the estimate with the true carrier on the same
    samples, so every other noise source cancels.
    """
    cfg = make_preset("lossless")
    cfg.noise = NoiseBudget()
    cfg.channel.linewidth_tx_hz = cfg.channel.linewidth_rx_hz = lw / 2
    cfg.rx.linewidth_hz = max(lw, 1.0)
    cfg.run.n_frames = n_frames
    cfg.run.samples_per_frame = 1_000_000
    cfg.validate()
    r = cfg.run
    ms = make_measurement_set(cfg.tx, cfg.channel, cfg.detector, n_frames=r.n_frames,
                              samples_per_frame=r.samples_per_frame, seed=r.seed,
                              n_calib_frames=r.n_calib_frames, electronic_noise=r.electronic_noise)
    cal, wf = calibrate(cfg, ms)
    t_hat = 2 * cal.electronic_snu
    cfg.rx.t_noise = t_hat
    det = DetectorModel(cfg.detector.tau, t_hat)
    est, orc, v_rpn = [], [], []
    for fr, sym, tr in zip(ms.signal_frames, ms.tx_symbols, ms.phase_traces):
        s = to_snu(fr, cal)
        y, rep = recover_symbols(s, wf, cfg.tx, sym, cfg.rx, return_report=True)
        yo = recover_symbols(s, wf, cfg.tx, sym, cfg.rx, carrier_theta=tr.theta, delay=rep.delay)
        est.append(estimate_link(sym, y, det))
        orc.append(estimate_link(sym, yo, det))
        v_rpn.append(rep.v_rpn)
    A, B = pool_estimates(est), pool_estimates(orc)
    v = float(np.mean(v_rpn))
    return v, A.xi_hat - B.xi_hat, xi_rpn_model(A.eta_hat * det.tau, cfg.tx.v_mod / 2, v)


def test_c2_phase_noise_closed_loop(criterion):
    # frame counts keep the statistical spread of the difference well under the 20% gate
    plan = {0.0: 4, 50.0: 4, 200.0: 16, 1000.0: 8}
    with criterion(2) as c:
        t0 = time.perf_counter()
        parts, gated = [], []
        for lw, nf in plan.items():
            v, diff, model = _closure_point(lw, nf)
            in_range = 1e-4 <= v <= 1e-1
            rel = abs(diff - model) / model if model > 0 else float("inf")
            if in_range:
                gated.append(rel < 0.2)
            parts.append(f"{lw:g} Hz: V_RPN {v:.2e}, dxi {diff * 1e3:.3f} vs {model * 1e3:.3f} mSNU"
                         + (f" ({rel:.0%})" if in_range else " (outside gate)"))
        c.detail = "; ".join(parts) + f"; {time.perf_counter() - t0:.0f} s"
        c.ok = bool(gated) and all(gated)
    assert c.ok


# 3 -------------------------------------------------------------------------------

def _loopback_nmse():
    cfg = ModulationConfig()
    sym = generate_symbols(50_000, cfg, seed=1)
    w = synthesize_waveform(sym, cfg)
    t = np.arange(w.samples.size) / FS
    x = np.real(w.samples * np.exp(2j * np.pi * 2.3e8 * t)) * np.sqrt(2)
    y = recover_symbols(SampleFrame(x, FS, Unit.SNU_NORMALIZED), None, cfg, sym,
                        RxConfig(t_noise=0.0, noise_per_sample=1e-6))
    return float(np.mean(np.abs(y.symbols - sym.symbols) ** 2) / np.mean(np.abs(sym.symbols) ** 2))


def _freq_errors(n_frames=100, n=1_000_000, snr_db=10.0, bw=1e6):
    """Pilot at 180 MHz shifted by 230 MHz, in-band SNR over the extraction band."""
    rng = np.random.default_rng(31)
    t = np.arange(n) / FS
    f_true = 1.8e8 + 2.3e8
    # analytic-band noise power of unit real white noise is 2 bw / fs
    A = np.sqrt(10 ** (snr_db / 10) * 2 * bw / FS)
    errs = []
    for k in range(n_frames):
        th = wiener_phase(n, 200.0, FS, seed=31_000 + k, theta0=rng.uniform(0, 2 * np.pi)).theta
        x = A * np.cos(2 * np.pi * f_true * t + th) + rng.standard_normal(n)
        p = pilot_extract(SampleFrame(x, FS), f_true, bw)
        errs.append(freq_offset_fit(p) - 1.8e8 - 2.3e8)
    return np.abs(errs)


def _delay_hits(trials=1000):
    # At 100 km the timing bound with 10k public symbols is ~0.19 samples rms,
    # which puts ~1% of trials past the rounding boundary; 20k gives ~0.13.
    cfg = ModulationConfig()
    det = DetectorModel(bandwidth_hz=None)
    rx = RxConfig(sync_ref_symbols=20_000)
    sym = generate_symbols(24_000, cfg, seed=1)
    w = synthesize_waveform(sym, cfg)
    rng = np.random.default_rng(0)
    hits = 0
    for k in range(trials):
        d = int(rng.integers(0, 2000))
        out, _ = propagate(w, ChannelParams(length_km=100.0, delay_samples=d), det, seed=17_000 + k)
        _, rep = recover_symbols(out, None, cfg, sym, rx, return_report=True)
        hits += round(rep.delay) == d
    return hits


def test_c3_dsp_fidelity(criterion):
    with criterion(3) as c:
        nmse = _loopback_nmse()
        ferr = _freq_errors()
        hits = _delay_hits()
        c.detail = (f"loopback NMSE {nmse:.2e}; max |f error| {ferr.max():.0f} Hz over {ferr.size} frames; "
                    f"delay exact {hits}/1000")
        c.ok = nmse < 1e-4 and ferr.max() < 1e3 and hits >= 999
    assert c.ok


# 4 -------------------------------------------------------------------------------

def test_c4_ukf_beats_hilbert(criterion):
    n, bw, r = 400_000, 1e6, 2.0
    theta = wiener_phase(n, 200.0, FS, seed=3, theta0=0.7).theta
    rng = np.random.default_rng(44)
    sl = slice(10_000, None)
    with criterion(4) as c:
        rows, ok = [], True
        for snr_db in np.arange(0, 31, 3):
            A = np.sqrt(2 * r * bw / FS * 10 ** (snr_db / 10))
            fr = SampleFrame(A * np.exp(1j * theta) + bandlimited_noise(n, r, bw, FS, rng), FS)
            st = PhaseTrackState.from_link(200.0, FS, r, amplitude=A, theta_hat=initial_phase(fr), p_cov=0.1)
            est, _ = ukf_phase_track(fr, st)
            vu = phase_error_variance(est[sl], theta[sl])
            vh = phase_error_variance(hilbert_phase(fr)[sl], theta[sl])
            ok &= vu <= vh and (snr_db > 9 or 2 * vu <= vh)
            rows.append(f"{snr_db:d} dB x{vh / vu:.1f}")
        c.detail = "Hilbert/UKF variance ratio: " + ", ".join(rows)
        c.ok = bool(ok)
    assert c.ok


# 5 -------------------------------------------------------------------------------

def test_c5_whitening(criterion):
    det = DetectorModel()
    ch = ChannelParams(length_km=100.0)
    with criterion(5) as c:
        wf = whitening_estimate(vacuum_frames(8, 1_000_000, det, seed=7, first_id=100, ch=ch), n_avg=8)
        fresh = [wf.apply(f) for f in vacuum_frames(4, 1_000_000, det, seed=9, first_id=200, ch=ch)]
        x = np.concatenate([f.samples.real for f in fresh])
        f, p = signal.welch(x, fs=FS, nperseg=256)
        sel = (f >= 5e6) & (f <= 495e6)
        pdb = 10 * np.log10(p[sel] / np.mean(p[sel]))
        cfg = ModulationConfig()
        sym = generate_symbols(100_000, cfg, seed=4)
        out, _ = propagate(synthesize_waveform(sym, cfg), ch, det, seed=8)
        y = recover_symbols(out, wf, cfg, sym, RxConfig())
        g = np.vdot(sym.symbols, y.symbols) / np.vdot(sym.symbols, sym.symbols)
        worst = {}
        for name, s in (("symbols", y.symbols), ("residual", y.symbols - g * sym.symbols)):
            s = s - s.mean()
            e = np.vdot(s, s).real
            worst[name] = max(abs(np.vdot(s[:-k], s[k:])) / e for k in range(1, 101))
        lim = 3 / np.sqrt(y.symbols.size)
        c.detail = (f"PSD ripple {np.max(np.abs(pdb)):.3f} dB over 5-495 MHz; max |rho(1..100)| symbols "
                    f"{worst['symbols']:.2e}, residual {worst['residual']:.2e} (limit {lim:.2e})")
        c.ok = np.max(np.abs(pdb)) <= 0.5 and max(worst.values()) < lim
    assert c.ok


# 6 -------------------------------------------------------------------------------

def test_c6_estimation_coverage(criterion):
    det = DetectorModel()
    trials, n, eta, xi, delta, v_mod = 2000, 5000, 0.3, 0.05, 0.05, 8.41
    rng = np.random.default_rng(3)
    s = np.sqrt(v_mod / 2)
    g = np.sqrt(det.tau * eta / 2)
    sd = np.sqrt(1 + det.t_noise / 2 + xi / 2)
    with criterion(6) as c:
        hit_eta = hit_xi = 0
        for _ in range(trials):
            x = s * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
            y = g * x + sd * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
            e = estimate_link(x, y, det, delta_fail=delta)
            hit_eta += e.eta_low <= eta
            hit_xi += e.xi_up >= xi
        band = 3 * np.sqrt(delta * (1 - delta) / trials)
        z = confidence_z(1e-10)
        cov = hit_eta / trials, hit_xi / trials
        c.detail = (f"coverage eta_low {cov[0]:.4f}, xi_up {cov[1]:.4f} (0.95 +- {band:.4f}); "
                    f"z(1e-10) {z:.5f} vs oracle {-norm.ppf(1e-10):.5f}")
        c.ok = (all(abs(v - (1 - delta)) <= band for v in cov) and abs(z - 6.3613) <= 1e-3
                and abs(z + norm.ppf(1e-10)) <= 1e-3)
    assert c.ok


# 7 -------------------------------------------------------------------------------

def _crossing_db(snrs, fers, level=0.5):
    """First FER = level crossing, interpolated linearly in dB."""
    db = 10 * np.log10(snrs)
    for i in range(len(fers) - 1):
        if fers[i] >= level >= fers[i + 1] and fers[i] > fers[i + 1]:
            return db[i] + (fers[i] - level) / (fers[i] - fers[i + 1]) * (db[i + 1] - db[i])
    return None


def test_c7_reconciliation(criterion):
    n, blocks = 100_000, 6
    grid = [0.074, 0.077, 0.080, 0.083, 0.086]
    with criterion(7) as c:
        rng = np.random.default_rng(70)
        y = rng.normal(size=(4096, 8))
        m = md_map(y, bits_to_points(rng.integers(0, 2, 4096 * 8), 8))
        M = left_matrix(m)
        iso = float(np.max(np.abs(M @ np.swapaxes(M, -1, -2) - np.eye(8))))
        iso = max(iso, float(np.max(np.abs(np.linalg.norm(md_apply(m, y), axis=-1) - 1))))

        tz_ok = True
        for _ in range(100):
            k = int(rng.integers(2, 80))
            out = int(rng.integers(1, k + 1))
            b = rng.integers(0, 2, k)
            s = rng.integers(0, 2, k + out - 1)
            tz_ok &= np.array_equal(toeplitz_extract(b, s, out), toeplitz_naive(b, s, out))

        code = build_met_code(RATE_005_TABLE, n, seed=1)
        fers, agree = [], True

        def session(snr):
            # common random numbers: the same draws at every SNR
            x, yy, gain, nv = simulate_channel(snr, n * blocks, seed=11)
            return reconcile(code, x, yy, gain, nv, d=8, seed=3, max_iters=300)

        for snr in grid:
            sess = session(snr)
            fers.append(sess.fer)
            agree &= all(b.agree for b in sess.blocks if b.converged)
        monotone = all(a >= b for a, b in zip(fers, fers[1:]))
        th = _crossing_db(np.array(grid), fers)
        beta = float("nan")
        if th is not None:
            at = session(10 ** ((th + 0.5) / 10))
            beta = at.beta
            agree &= all(b.agree for b in at.blocks if b.converged)
        c.detail = (f"isometry {iso:.1e}; FER " + ", ".join(f"{g:.3f}:{f:.2f}" for g, f in zip(grid, fers)) + f"; threshold "
                    f"{'none' if th is None else f'{10 ** (th / 10):.4f}'}; beta at +0.5 dB {beta:.3f}; "
                    f"agreement {agree}; Toeplitz {tz_ok}")
        c.ok = (iso < 1e-12 and tz_ok and agree and monotone and th is not None
                and 0.80 <= beta <= 1.0)
    assert c.ok


# 8 -------------------------------------------------------------------------------

def test_c8_curve_shapes(criterion):
    cfg = make_preset("table1")
    cc = curve_config(cfg)
    with criterion(8) as c:
        lengths = np.arange(0, 151, 5.0)
        curve = skr_vs_distance(lengths, cc)
        asym = np.array([r[1] for r in curve["rows"]])
        fin = np.array([r[2] for r in curve["rows"]])
        pos = asym > 0
        mono = bool(np.all(np.diff(asym) <= 0) and np.all(np.diff(fin) <= 0))
        below = bool(np.all(fin[pos] < asym[pos]) and np.all(fin <= asym))
        at100 = fin[lengths == 100][0]
        bm, fm = table_models()
        best, _ = vmod_optimize([p.v_mod for p in REPORTED_POINTS], bm, fm, cfg.channel.eta, cc)
        c.detail = (f"monotone {mono}; finite below asymptotic {below}; finite at 100 km "
                    f"{at100 / 1e3:.2f} kbit/s; finite zero crossing {curve['zero_crossing_finite_km']:.1f} km; "
                    f"V_mod argmax {best:g}")
        c.ok = mono and below and at100 > 0 and curve["zero_crossing_finite_km"] > 100 and best == 8.41
    assert c.ok


# 9 -------------------------------------------------------------------------------

def test_c9_sweep_determinism(criterion, tmp_path):
    with criterion(9) as c:
        same = []
        for axis, grid, preset in (("distance", [0, 50, 100, 150], "table1"),
                                   ("v_mod", [8.11, 8.41, 9.27], "table1"),
                                   ("linewidth", [200.0], "quick")):
            a = sweep(make_preset(preset), axis, grid, tmp_path / "a")
            b = sweep(make_preset(preset), axis, grid, tmp_path / "b")
            same.append((axis, filecmp.cmp(a, b, shallow=False)))
        c.detail = ", ".join(f"{ax} {'identical' if s else 'DIFFERENT'}" for ax, s in same)
        c.ok = all(s for _, s in same)
    assert c.ok
