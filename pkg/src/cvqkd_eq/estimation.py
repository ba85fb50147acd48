"""Maximum-likelihood estimation of the linear channel ``y = t x + z`` and derived (T, eps)."""

from dataclasses import dataclass, field, replace
import math

import numpy as np
from scipy.stats import norm


class DegenerateError(ValueError):
    pass


@dataclass(frozen=True)
class EstimationConfig:
    """Estimation constants.

    ``n0`` and ``nu_el`` are the noise references subtracted when inverting
    the noise variance; after an equalizer they are the noise powers
    referred through its gain rather than the raw detector values.
    """

    eps_pe: float = 0.05
    eta: float = 0.6
    nu_el: float = 0.01
    n0: float = 1.0
    v_a: float = 4.0
    z_score: float = field(init=False)

    def __post_init__(self):
        if not 0 < self.eps_pe < 1:
            raise ValueError("eps_pe must lie in (0, 1)")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        object.__setattr__(self, "z_score", float(norm.ppf(1.0 - self.eps_pe / 2.0)))


@dataclass(frozen=True)
class SubChannelEstimate:
    t_hat: float
    sigma2_hat: float
    t_half_width: float
    sigma_half_width: float
    m: int
    T_hat: float
    eps_hat: float
    clamped: bool = False
    eps_unclamped: float = None

    def to_dict(self):
        return {"m": self.m, "t_hat": self.t_hat, "dt": self.t_half_width,
                "sigma2_hat": self.sigma2_hat, "dsigma": self.sigma_half_width,
                "T_hat": self.T_hat, "eps_hat": self.eps_hat, "clamped": self.clamped}


@dataclass(frozen=True)
class AggregateEstimate:
    T_mean: float
    eps_mean: float
    weights: np.ndarray
    per_channel: tuple
    clamped: bool = False


def mle_estimate(x, y):
    """``t_hat = sum(x y) / sum(x^2)`` and ``sigma2_hat = mean((y - t_hat x)^2)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("x and y must be equal-length sequences with m >= 2")
    sxx = float(x @ x)
    if sxx == 0:
        raise DegenerateError("regressor x is identically zero")
    t_hat = float(x @ y) / sxx
    r = y - t_hat * x
    return t_hat, float(r @ r) / len(x)


def confidence_interval(sigma2_hat, m, cfg):
    """Half-widths ``(dt, dsigma)`` of the confidence intervals for t and sigma^2."""
    if m < 2:
        raise ValueError("m must be at least 2")
    z = cfg.z_score
    return z * math.sqrt(sigma2_hat / (m * cfg.v_a)), z * sigma2_hat * math.sqrt(2.0) / math.sqrt(m)


def derive_params(t_hat, sigma2_hat, cfg):
    """Transmittance and excess noise from the slope and noise estimates.

    Returns
    -------
    T_hat : float
        ``t_hat**2 / eta``.
    eps_hat : float
        ``(sigma2_hat - N_0 - nu_el) / (eta T_hat)``, floored at 0.
    clamped : bool
        True when the floor was applied.
    eps_raw : float
        Value before the floor.
    """
    if t_hat < 0:
        raise ValueError("t_hat must be nonnegative")
    T_hat = t_hat * t_hat / cfg.eta
    if T_hat == 0:
        raise DegenerateError("excess noise undefined for zero transmittance")
    eps = (sigma2_hat - cfg.n0 - cfg.nu_el) / (cfg.eta * T_hat)
    eps = float(eps)
    return float(T_hat), max(eps, 0.0), bool(eps < 0), eps


def estimate_subchannel(x, y, cfg):
    """MLE, confidence half-widths and derived (T, eps) for one data block."""
    t_hat, s2 = mle_estimate(x, y)
    dt, ds = confidence_interval(s2, len(x), cfg)
    T_hat, eps, clamped, eps_raw = derive_params(abs(t_hat), s2, cfg)
    return SubChannelEstimate(t_hat, s2, dt, ds, len(x), T_hat, eps, clamped, eps_raw)


def aggregate_subchannels(estimates, weights):
    """Weighted averages ``<T> = sum p_i T_i`` and ``eps = sum p_i eps_i``.

    The excess noise average uses each estimate's value before its own
    zero floor (when available) and floors only the aggregate, so that
    finite-sample fluctuations of small sub-channels do not bias the mean.
    """
    w = np.asarray(weights, dtype=float)
    if len(w) != len(estimates):
        raise ValueError("weights and estimates differ in length")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError("weights must be nonnegative and sum to 1")
    T = float(sum(p * e.T_hat for p, e in zip(w, estimates)))
    eps = float(sum(p * (e.eps_hat if e.eps_unclamped is None else e.eps_unclamped)
                    for p, e in zip(w, estimates)))
    return AggregateEstimate(T, max(eps, 0.0), w, tuple(estimates), eps < 0)


def fluctuation_estimators(moments, cfg, transmittance=1.0):
    """Slope and excess-noise floor implied by amplitude/phase fluctuations.

    Parameters
    ----------
    moments : FluctuationMoments
    cfg : EstimationConfig
    transmittance : float
        Deterministic transmittance multiplying the normalised intensity.

    Returns
    -------
    t_hat : float
        ``sqrt(eta T) E[A cos dphi]``.
    eps_floor : float
        ``V_A (E[A^2 cos^2] / E[A cos]^2 + E[A^2 sin^2] / E[A cos]^2 - 1)``.
    """
    c = moments.e_a_cos
    if c == 0:
        raise DegenerateError("E[A cos dphi] vanishes")
    t_hat = math.sqrt(cfg.eta * transmittance) * c
    floor = cfg.v_a * ((moments.e_a2_cos2 + moments.e_a2_sin2) / (c * c) - 1.0)
    return t_hat, floor
