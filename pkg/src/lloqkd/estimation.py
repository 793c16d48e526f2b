"""Channel parameter estimation from paired symbols and its finite-size bounds.

Per quadrature, Bob's symbol is y = g x + z with g = sqrt(tau * eta / 2)
and Var(z) = 1 + t/2 + xi/2.  Excess noise ``xi`` is referenced at the
detector output, i.e. after both the untrusted and the trusted loss.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .core import DomainError, EstimationError, SymbolFrame

DELTA_FAIL = 1e-10


@dataclass
class LinkEstimate:
    eta_hat: float
    xi_hat: float
    n_used: int
    eta_low: float = float("nan")
    xi_up: float = float("nan")
    delta_fail: float = DELTA_FAIL
    tau: float = 0.68
    t_noise: float = 62.72e-3
    gain: float = float("nan")
    gain_std: float = 0.0
    noise_var: float = float("nan")
    noise_var_std: float = 0.0

    @property
    def z(self) -> float:
        return confidence_z(self.delta_fail)

    @property
    def xi_std(self) -> float:
        return 2 * self.noise_var_std


def confidence_z(delta: float) -> float:
    """One-sided Gaussian quantile: P(Z > z) = delta."""
    if not 0 < delta < 1:
        raise DomainError("delta must lie in (0, 1)")
    return float(norm.isf(delta))


def xi_to_channel_input(xi: float, eta: float, tau: float) -> float:
    """Detector-output excess noise expressed at the channel input."""
    return xi / (eta * tau)


def xi_from_channel_input(xi_in: float, eta: float, tau: float) -> float:
    return xi_in * eta * tau


def _as_array(s):
    return s.symbols if isinstance(s, SymbolFrame) else np.asarray(s, dtype=complex)


def estimate_link(tx, rx, det, v_mod: float | None = None,
                  delta_fail: float = DELTA_FAIL) -> LinkEstimate:
    """Least-squares gain and residual variance, both quadratures pooled.

    ``det`` supplies the trusted ``tau`` and ``t_noise``.  The gain fit uses
    the empirical second moment of ``tx``, so ``v_mod`` is optional and
    unused.
    """
    tau, t_noise = det.tau, det.t_noise
    x = _as_array(tx)
    y = _as_array(rx)
    if x.shape != y.shape:
        raise EstimationError(f"length mismatch: {x.size} sent vs {y.size} received")
    if x.size < 2:
        raise EstimationError("need at least two symbol pairs")
    xr = np.concatenate([x.real, x.imag])
    yr = np.concatenate([y.real, y.imag])
    sxx = float(np.dot(xr, xr))
    if sxx == 0:
        raise EstimationError("transmitted symbols carry no modulation")
    g = float(np.dot(xr, yr)) / sxx
    res = yr - g * xr
    m = xr.size
    s2 = float(np.dot(res, res)) / (m - 1)
    est = LinkEstimate(eta_hat=2 * g * g / tau, xi_hat=2 * (s2 - 1 - t_noise / 2), n_used=x.size,
                       delta_fail=delta_fail, tau=tau, t_noise=t_noise, gain=g,
                       gain_std=float(np.sqrt(s2 / sxx)), noise_var=s2,
                       noise_var_std=s2 * float(np.sqrt(2.0 / m)))
    return worst_case_bounds(est)


def worst_case_bounds(est: LinkEstimate) -> LinkEstimate:
    """Lower the gain and raise the noise by z standard deviations each.

    ``delta_fail`` applies to each parameter separately.
    """
    z = confidence_z(est.delta_fail)
    g_low = max(est.gain - z * est.gain_std, 0.0)
    return replace(est, eta_low=2 * g_low * g_low / est.tau,
                   xi_up=est.xi_hat + 2 * z * est.noise_var_std)


def link_from_truth(eta: float, xi: float, n_used: int, v_mod: float, tau: float = 0.68,
                    t_noise: float = 62.72e-3, delta_fail: float = DELTA_FAIL) -> LinkEstimate:
    """Estimate at the true values with the confidence widths ``n_used`` pairs would give."""
    if v_mod <= 0 or n_used < 2:
        raise DomainError("need v_mod > 0 and at least two symbols")
    g = np.sqrt(tau * eta / 2)
    s2 = 1 + t_noise / 2 + xi / 2
    m = 2 * n_used
    sxx = m * v_mod / 2
    est = LinkEstimate(eta_hat=eta, xi_hat=xi, n_used=int(n_used), delta_fail=delta_fail,
                       tau=tau, t_noise=t_noise, gain=float(g), gain_std=float(np.sqrt(s2 / sxx)),
                       noise_var=s2, noise_var_std=s2 * float(np.sqrt(2.0 / m)))
    return worst_case_bounds(est)


def pool_estimates(ests: Sequence[LinkEstimate]) -> LinkEstimate:
    """Inverse-variance pooled gain and noise variance."""
    if not ests:
        raise EstimationError("nothing to pool")
    wg = np.array([1 / e.gain_std ** 2 for e in ests])
    ws = np.array([1 / e.noise_var_std ** 2 for e in ests])
    g = float(np.sum(wg * [e.gain for e in ests]) / wg.sum())
    s2 = float(np.sum(ws * [e.noise_var for e in ests]) / ws.sum())
    e0 = ests[0]
    est = replace(e0, eta_hat=2 * g * g / e0.tau, xi_hat=2 * (s2 - 1 - e0.t_noise / 2),
                  n_used=int(sum(e.n_used for e in ests)), gain=g,
                  gain_std=float(1 / np.sqrt(wg.sum())), noise_var=s2,
                  noise_var_std=float(1 / np.sqrt(ws.sum())))
    return worst_case_bounds(est)


def cumulative_noise_trace(frames: Sequence[LinkEstimate]) -> list[tuple[int, float, float]]:
    """Running pooled excess noise and its upper bound as frames accumulate."""
    out = []
    sw = swx = 0.0
    for k, e in enumerate(frames, 1):
        w = 1.0 / e.xi_std ** 2
        sw += w
        swx += w * e.xi_hat
        xi = swx / sw
        out.append((k, xi, xi + e.z / np.sqrt(sw)))
    return out


def write_noise_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n_frames", "xi_cum_msnu", "xi_up_msnu"])
        for k, xi, up in trace:
            w.writerow([k, f"{xi * 1e3:.6f}", f"{up * 1e3:.6f}"])
