"""Key-rate analysis for Gaussian-modulated coherent states with heterodyne detection.

Conventions
-----------
* ``v_mod`` is the total modulation variance Var(x) + Var(p); each quadrature
  carries ``V_A = v_mod / 2`` and the entanglement-based picture uses
  ``V = V_A + 1``.
* ``xi`` is excess noise at the detector output (after eta and tau), in SNU.
  The channel-input value entering the covariance matrix is
  ``xi / (eta * tau)``.
* The detector is trusted: loss ``tau`` and electronic noise ``t`` (``t/2``
  per quadrature) are outside Eve's reach.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .core import DomainError
from .estimation import DELTA_FAIL, LinkEstimate, link_from_truth
from .channel import eta_at

# eigenvalues of pure states come out of square roots of near-zero discriminants,
# so round-off of ~1e-8 below one is expected there
EIG_TOL = 1e-6


def g_entropy(x) -> float:
    """Von Neumann entropy (bits) of a thermal state with mean photon number x."""
    x = float(x)
    if x < 0:
        if x < -EIG_TOL:
            raise DomainError(f"negative occupation {x}")
        return 0.0
    if x == 0:
        return 0.0
    return (x + 1) * math.log2(x + 1) - x * math.log2(x)


def _g_nu(nu: float) -> float:
    """Entropy contribution of a symplectic eigenvalue nu >= 1."""
    if nu < 1 - EIG_TOL:
        raise DomainError(f"symplectic eigenvalue {nu:.12g} below 1: covariance matrix is unphysical")
    return g_entropy(max(nu - 1, 0.0) / 2)


@dataclass(frozen=True)
class SecurityParams:
    beta: float = 0.925
    fer: float = 0.59
    n_block: int | None = None  # None: n_used * (1 - fer)
    delta_fail: float = DELTA_FAIL
    baud_hz: float = 1e8
    eps_bar: float | None = None  # None: delta_fail

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise DomainError("beta must lie in (0, 1)")
        if not 0 <= self.fer <= 1:
            raise DomainError("fer must lie in [0, 1]")


@dataclass
class SecurityReport:
    i_ab: float
    chi_e: float
    delta_n: float
    skr_asymptotic_bps: float
    skr_finite_bps: float
    params_used: tuple
    negative_rate: bool = False
    raw_finite_bps: float = 0.0
    raw_asymptotic_bps: float = 0.0


def snr_heterodyne(v_mod, eta, tau, t, xi) -> float:
    return (tau * eta * v_mod / 4) / (1 + t / 2 + xi / 2)


def mutual_information(v_mod, eta, tau, t, xi) -> float:
    """Bits per symbol shared by Alice and Bob (both quadratures)."""
    return math.log2(1 + snr_heterodyne(v_mod, eta, tau, t, xi))


def holevo_bound_trusted(v_mod, eta, tau, t, xi) -> float:
    """Eve's Holevo information on Bob's heterodyne data, reverse reconciliation."""
    if eta <= 0 or eta > 1 or tau <= 0 or tau > 1:
        raise DomainError("transmittances must lie in (0, 1]")
    V = v_mod / 2 + 1
    T = eta
    xi_in = xi / (eta * tau)
    v_el = t / 2
    chi_line = 1 / T - 1 + xi_in
    chi_het = (1 + (1 - tau) + 2 * v_el) / tau
    chi_tot = chi_line + chi_het / T
    A = V * V * (1 - 2 * T) + 2 * T + T * T * (V + chi_line) ** 2
    B = T * T * (V * chi_line + 1) ** 2
    l1, l2 = _pair(A, B)
    C = (A * chi_het ** 2 + B + 1 + 2 * chi_het * (V * math.sqrt(B) + T * (V + chi_line))
         + 2 * T * (V * V - 1)) / (T * T * (V + chi_tot) ** 2)
    D = ((V + math.sqrt(B) * chi_het) / (T * (V + chi_tot))) ** 2
    l3, l4 = _pair(C, D)
    return _g_nu(l1) + _g_nu(l2) - _g_nu(l3) - _g_nu(l4)


def _pair(A, B):
    disc = A * A - 4 * B
    if disc < 0:
        if disc < -EIG_TOL * max(1.0, A * A):
            raise DomainError("complex symplectic spectrum: unphysical parameters")
        disc = 0.0
    r = math.sqrt(disc)
    return math.sqrt(max((A + r) / 2, 0.0)), math.sqrt(max((A - r) / 2, 0.0))


def finite_size_delta(n_block: float, eps_bar: float = DELTA_FAIL) -> float:
    if n_block <= 1e4:
        raise DomainError("finite-size correction needs n_block > 1e4")
    return 7 * math.sqrt(math.log2(2 / eps_bar) / n_block)


def xi_rpn_model(t_total: float, v_mod: float, v_rpn: float) -> float:
    """2 T V (1 - exp(-V_RPN / 2)); ``v_mod`` here is the per-quadrature variance."""
    if v_rpn < 0:
        raise DomainError("v_rpn must be non-negative")
    if math.isinf(v_rpn):
        return 2 * t_total * v_mod
    return 2 * t_total * v_mod * (-math.expm1(-v_rpn / 2))


def _rate(v_mod, eta, tau, t, xi, beta, delta):
    xi = max(xi, 0.0)  # negative estimates are clamped only here
    eta = min(eta, 1.0)  # so are transmittance estimates above one
    i_ab = mutual_information(v_mod, eta, tau, t, xi)
    chi = holevo_bound_trusted(v_mod, eta, tau, t, xi)
    return i_ab, chi, beta * i_ab - chi - delta


def secret_key_rate(link: LinkEstimate, sec: SecurityParams, v_mod: float,
                    mode: str = "finite") -> SecurityReport:
    """B (1 - FER) (beta I_AB - chi_E - Delta), clamped at zero.

    Both regimes are always computed; ``mode`` picks which one fills
    ``i_ab``/``chi_e``/``delta_n``.
    """
    if mode not in ("finite", "asymptotic"):
        raise ValueError("mode must be 'finite' or 'asymptotic'")
    pref = sec.baud_hz * (1 - sec.fer)
    ia, ca, ka = _rate(v_mod, link.eta_hat, link.tau, link.t_noise, link.xi_hat, sec.beta, 0.0)
    n_block = sec.n_block if sec.n_block is not None else link.n_used * (1 - sec.fer)
    eps = sec.eps_bar if sec.eps_bar is not None else sec.delta_fail
    if link.eta_low <= 0:
        i_f, c_f, d, k_f = 0.0, 0.0, 0.0, -math.inf
    else:
        d = finite_size_delta(n_block, eps) if n_block > 0 else math.inf
        i_f, c_f, k_f = _rate(v_mod, link.eta_low, link.tau, link.t_noise, link.xi_up, sec.beta, d)
    raw_a, raw_f = (pref * ka, pref * k_f) if pref > 0 else (0.0, 0.0)
    if mode == "finite":
        i_ab, chi, dn = i_f, c_f, d
    else:
        i_ab, chi, dn = ia, ca, 0.0
    neg = (raw_f if mode == "finite" else raw_a) < 0
    return SecurityReport(i_ab=i_ab, chi_e=chi, delta_n=dn,
                          skr_asymptotic_bps=max(raw_a, 0.0), skr_finite_bps=max(raw_f, 0.0),
                          params_used=(link, sec), negative_rate=bool(neg),
                          raw_finite_bps=raw_f, raw_asymptotic_bps=raw_a)


# -- curves -------------------------------------------------------------------

@dataclass
class CurveConfig:
    v_mod: float = 8.41
    tau: float = 0.68
    t_noise: float = 62.72e-3
    xi: float = 0.212e-3
    n_used: float = 9.5e8
    atten_db_per_km: float = 0.146
    coupling: float = 0.82
    sec: SecurityParams = field(default_factory=SecurityParams)


def rates_at(eta: float, cc: CurveConfig, v_mod: float | None = None,
             sec: SecurityParams | None = None) -> SecurityReport:
    v = cc.v_mod if v_mod is None else v_mod
    link = link_from_truth(eta, cc.xi, int(cc.n_used), v, cc.tau, cc.t_noise,
                           (sec or cc.sec).delta_fail)
    return secret_key_rate(link, sec or cc.sec, v, "finite")


def skr_vs_distance(lengths_km: Sequence[float], cc: CurveConfig) -> dict:
    """Asymptotic and finite-size SKR along a fiber-length grid plus zero crossings."""
    rows = []
    for L in lengths_km:
        eta = float(eta_at(L, cc.atten_db_per_km, cc.coupling))
        r = rates_at(eta, cc)
        rows.append((float(L), r.skr_asymptotic_bps, r.skr_finite_bps))

    def crossing(kind):
        f = (lambda L: rates_at(float(eta_at(L, cc.atten_db_per_km, cc.coupling)), cc).raw_finite_bps) \
            if kind == "finite" else \
            (lambda L: rates_at(float(eta_at(L, cc.atten_db_per_km, cc.coupling)), cc).raw_asymptotic_bps)
        lo, hi = 0.0, 50.0
        if f(lo) <= 0:
            return 0.0
        while f(hi) > 0:
            lo, hi = hi, hi * 2
            if hi > 1e4:
                return math.inf
        return brentq(f, lo, hi, xtol=1e-6)

    return {"rows": rows, "zero_crossing_finite_km": crossing("finite"),
            "zero_crossing_asymptotic_km": crossing("asymptotic")}


def write_distance_csv(curve: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["distance_km", "skr_asym_bps", "skr_finite_bps"])
        for L, a, f in curve["rows"]:
            w.writerow([f"{L:g}", f"{a:.6f}", f"{f:.6f}"])


@dataclass(frozen=True)
class OperatingPoint:
    v_mod: float
    beta: float | None  # None: efficiency not reported, point yields no key
    fer: float


# Reported reconciliation operating points of the rate-0.05 code versus V_mod.
# The efficiency at 9.27 SNU is not given; that point is reported with a null key rate.
REPORTED_POINTS = (
    OperatingPoint(8.11, 0.93, 0.80),
    OperatingPoint(8.41, 0.925, 0.59),
    OperatingPoint(9.27, None, 0.70),
)


def vmod_optimize(grid: Sequence[float], beta_model: Callable[[float], float | None],
                  fer_model: Callable[[float], float], eta: float, cc: CurveConfig,
                  mode: str = "asymptotic") -> tuple[float, list]:
    """Evaluate the SKR over ``grid`` and return (argmax, curve rows).

    ``beta_model``/``fer_model`` map V_mod to the reconciliation figures of
    merit; a ``None`` efficiency scores zero.  Ties keep the first point.
    """
    rows = []
    for v in grid:
        beta, fer = beta_model(v), fer_model(v)
        if beta is None:
            rows.append((float(v), float("nan"), fer, 0.0))
            continue
        sec = replace(cc.sec, beta=beta, fer=fer)
        r = rates_at(eta, cc, v_mod=v, sec=sec)
        skr = r.skr_asymptotic_bps if mode == "asymptotic" else r.skr_finite_bps
        rows.append((float(v), beta, fer, skr))
    if not rows:
        raise DomainError("empty V_mod grid")
    best = max(range(len(rows)), key=lambda i: (rows[i][3], -i))
    return rows[best][0], rows


def table_models(points: Sequence[OperatingPoint] = REPORTED_POINTS):
    lut = {p.v_mod: p for p in points}
    return (lambda v: lut[v].beta), (lambda v: lut[v].fer)


def write_vmod_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["v_mod", "beta", "fer", "skr"])
        for v, b, f, s in rows:
            w.writerow([f"{v:g}", "" if b != b else f"{b:.6f}", f"{f:.6f}", f"{s:.6f}"])


def optimal_vmod_flat(beta: float, fer: float, eta: float, cc: CurveConfig,
                      bounds=(0.5, 60.0)) -> float:
    """Continuous optimum of the asymptotic SKR for a V_mod-independent beta and FER."""
    sec = replace(cc.sec, beta=beta, fer=fer)
    res = minimize_scalar(lambda v: -rates_at(eta, cc, v_mod=v, sec=sec).raw_asymptotic_bps,
                          bounds=bounds, method="bounded", options={"xatol": 1e-6})
    return float(res.x)
