"""Propagation, coverage and interference math.

Powers are in dBm, losses in dB, distances in km and frequencies in MHz.
Watts only appear at the energy-detector interface (see ``dbm_to_watt``).
Most functions accept numpy arrays for the distance-like arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import erfc

_SQRT2 = math.sqrt(2.0)


class Location(NamedTuple):
    """Planar position in km (x east, y north)."""

    x: float
    y: float


@dataclass(frozen=True)
class PropagationParams:
    alpha: float
    freq_mhz: float
    sigma_shadow_db: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"path-loss exponent must be positive, got {self.alpha}")
        if not self.freq_mhz > 0:
            raise ValueError(f"frequency must be positive, got {self.freq_mhz}")
        if not self.sigma_shadow_db >= 0:
            raise ValueError(f"shadow spread must be >= 0, got {self.sigma_shadow_db}")


@dataclass(frozen=True)
class DtvTransmitter:
    loc: Location
    power_dbm: float
    p_min_dbm: float
    cov_threshold: float
    prop: PropagationParams

    def __post_init__(self):
        if not 0 < self.cov_threshold < 1:
            raise ValueError("coverage threshold must lie in (0, 1)")


@dataclass(frozen=True)
class InterferenceParams:
    i_max_dbm: float
    int_threshold: float
    p_peak_dbm: float
    prop_d2d: PropagationParams
    mean_shadow_d2d_db: float = 0.0

    def __post_init__(self):
        if not 0 < self.int_threshold < 1:
            raise ValueError("interference threshold must lie in (0, 1)")


def distance_km(a: Location, b: Location) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def path_loss_db(d_km, prop: PropagationParams):
    """Deterministic path loss 10*alpha*log10(d) + 20*log10(f) + 32.45."""
    d = np.asarray(d_km, dtype=float)
    if np.any(~(d > 0)):
        raise ValueError("distance must be positive")
    loss = 10.0 * prop.alpha * np.log10(d) + 20.0 * math.log10(prop.freq_mhz) + 32.45
    return float(loss) if loss.ndim == 0 else loss


def q_tail(x):
    """Standard Gaussian tail probability Q(x) = P(N(0,1) > x)."""
    out = 0.5 * erfc(np.asarray(x, dtype=float) / _SQRT2)
    return float(out) if out.ndim == 0 else out


def _q_density(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def q_tail_inverse(p: float, tol: float = 1e-14, max_iter: int = 100) -> float:
    """Invert ``q_tail`` by Newton steps safeguarded with a bracket."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    if p == 0.5:
        return 0.0
    # Q is odd-symmetric about 1/2; solve on the upper tail and mirror.
    if p > 0.5:
        return -q_tail_inverse(1.0 - p, tol, max_iter)
    lo, hi = 0.0, 40.0
    x = math.sqrt(-2.0 * math.log(p))  # tail asymptote, a good start
    x = min(max(x, lo), hi)
    for _ in range(max_iter):
        f = q_tail(x) - p
        if f > 0:
            lo = x
        else:
            hi = x
        dens = _q_density(x)
        step = f / dens if dens > 0 else math.inf
        x_new = x + step  # Q' = -density, so Newton adds f/density
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= tol * max(1.0, abs(x)):
            return x_new
        x = x_new
    return x


def dbm_to_watt(p_dbm):
    out = np.power(10.0, (np.asarray(p_dbm, dtype=float) - 30.0) / 10.0)
    return float(out) if out.ndim == 0 else out


def watt_to_dbm(p_watt):
    w = np.asarray(p_watt, dtype=float)
    if np.any(~(w > 0)):
        raise ValueError("power in Watts must be positive")
    out = 10.0 * np.log10(w) + 30.0
    return float(out) if out.ndim == 0 else out


def mean_received_power_dbm(tx: DtvTransmitter, loc: Location, mean_shadow_db: float = 0.0) -> float:
    d = distance_km(tx.loc, loc)
    if d == 0:
        raise ValueError("receiver coincides with the transmitter")
    return tx.power_dbm - path_loss_db(d, tx.prop) - mean_shadow_db


def coverage_threshold_dbm(tx: DtvTransmitter) -> float:
    """Minimum mean received power for a location to count as covered."""
    return tx.p_min_dbm - tx.prop.sigma_shadow_db * q_tail_inverse(tx.cov_threshold)


def coverage_probability(tx: DtvTransmitter, loc: Location, mean_shadow_db: float = 0.0) -> float:
    p_bar = mean_received_power_dbm(tx, loc, mean_shadow_db)
    sigma = tx.prop.sigma_shadow_db
    if sigma == 0:
        return 1.0 if p_bar >= tx.p_min_dbm else 0.0
    return q_tail((tx.p_min_dbm - p_bar) / sigma)


def interference_limit_from_distance(d_km, ip: InterferenceParams):
    """Largest device power keeping the interference probability at ``ip.int_threshold``."""
    margin = ip.prop_d2d.sigma_shadow_db * q_tail_inverse(ip.int_threshold)
    return ip.i_max_dbm - margin + path_loss_db(d_km, ip.prop_d2d) + ip.mean_shadow_d2d_db


def interference_power_limit_dbm(dev_loc: Location, rx_loc: Location, ip: InterferenceParams) -> float:
    d = distance_km(dev_loc, rx_loc)
    if d == 0:
        raise ValueError("device coincides with the DTV receiver")
    return interference_limit_from_distance(d, ip)


def interference_probability_from_distance(d_km, tx_power_dbm, ip: InterferenceParams):
    p_bar = np.asarray(tx_power_dbm, dtype=float) - path_loss_db(d_km, ip.prop_d2d) - ip.mean_shadow_d2d_db
    sigma = ip.prop_d2d.sigma_shadow_db
    if sigma == 0:
        out = np.where(p_bar >= ip.i_max_dbm, 1.0, 0.0)
    else:
        out = 0.5 * erfc((ip.i_max_dbm - p_bar) / sigma / _SQRT2)
    return float(out) if np.ndim(out) == 0 else out


def interference_probability(dev_loc: Location, tx_power_dbm: float, rx_loc: Location,
                             ip: InterferenceParams) -> float:
    d = distance_km(dev_loc, rx_loc)
    if d == 0:
        raise ValueError("device coincides with the DTV receiver")
    return interference_probability_from_distance(d, tx_power_dbm, ip)


def worst_case_interference_range_km(ip: InterferenceParams) -> float:
    """Distance at which the interference limit equals the device peak power.

    Closed form of ``interference_limit_from_distance(d) == p_peak_dbm``.
    """
    margin = ip.prop_d2d.sigma_shadow_db * q_tail_inverse(ip.int_threshold)
    excess = (ip.p_peak_dbm - ip.i_max_dbm + margin - ip.mean_shadow_d2d_db
              - 20.0 * math.log10(ip.prop_d2d.freq_mhz) - 32.45)
    return 10.0 ** (excess / (10.0 * ip.prop_d2d.alpha))


def coverage_distance_km(tx: DtvTransmitter, mean_shadow_db: float = 0.0) -> float:
    """Radius at which the mean received power falls to the coverage threshold."""
    excess = (tx.power_dbm - mean_shadow_db - coverage_threshold_dbm(tx)
              - 20.0 * math.log10(tx.prop.freq_mhz) - 32.45)
    return 10.0 ** (excess / (10.0 * tx.prop.alpha))
