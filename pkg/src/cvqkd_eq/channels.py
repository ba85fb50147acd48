"""Attenuation laws and fading / phase-noise models for fiber and free-space links.

All intensities are normalised transmittance factors; variances are in
shot-noise units (SNU) with the vacuum variance equal to 1.
"""

from dataclasses import dataclass, field
import math

import numpy as np


@dataclass(frozen=True)
class FiberConfig:
    """Fiber link.

    Parameters
    ----------
    alpha_f : float
        Attenuation coefficient in dB/km.
    length_km : float
        Link length in km.
    """

    alpha_f: float
    length_km: float

    def __post_init__(self):
        if self.alpha_f < 0 or self.length_km < 0:
            raise ValueError("alpha_f and length_km must be nonnegative")


@dataclass(frozen=True)
class FreeSpaceConfig:
    """Free-space link.

    Parameters
    ----------
    alpha_lambda : float
        Decay coefficient in dB/km.
    length_km : float
        Path length in km.
    visibility_km : float or None
        Air visibility V in km, used by :func:`attenuation_from_visibility`.
    wavelength_um : float
        Optical wavelength in micrometres.
    q_exponent : float
        Size-distribution exponent of the scattering particles.
    """

    alpha_lambda: float
    length_km: float
    visibility_km: float | None = None
    wavelength_um: float = 1.55
    q_exponent: float = 1.3

    def __post_init__(self):
        if self.alpha_lambda < 0 or self.length_km < 0 or self.q_exponent < 0:
            raise ValueError("free-space parameters must be nonnegative")
        if self.visibility_km is not None and self.visibility_km < 0:
            raise ValueError("visibility must be nonnegative")
        if not self.wavelength_um > 0:
            raise ValueError("wavelength must be positive")


@dataclass(frozen=True)
class GammaGammaParams:
    """Gamma-Gamma fading described by its effective scatterer numbers.

    Use :func:`gg_params_from_log_variances` to build it from log-irradiance
    variances, or :meth:`from_effective` when alpha and beta are known.
    """

    alpha_eff: float
    beta_eff: float
    sigma2_lnx: float
    sigma2_lny: float

    def __post_init__(self):
        if not (self.alpha_eff > 0 and self.beta_eff > 0):
            raise ValueError("alpha_eff and beta_eff must be positive")
        if not (math.isfinite(self.alpha_eff) and math.isfinite(self.beta_eff)):
            raise ValueError("alpha_eff and beta_eff must be finite")

    @classmethod
    def from_effective(cls, alpha_eff, beta_eff):
        return cls(float(alpha_eff), float(beta_eff),
                   math.log1p(1.0 / alpha_eff), math.log1p(1.0 / beta_eff))

    @property
    def scintillation_index(self):
        a, b = self.alpha_eff, self.beta_eff
        return 1.0 / a + 1.0 / b + 1.0 / (a * b)


@dataclass(frozen=True)
class LogNormalParams:
    """Log-normal fading.

    ``ln I`` is normal with variance ``scint_index`` and mean chosen so that
    ``E[I] = mean_intensity``.
    """

    mean_intensity: float
    scint_index: float

    def __post_init__(self):
        if not 0 < self.mean_intensity <= 1:
            raise ValueError("mean_intensity must lie in (0, 1]")
        if self.scint_index < 0:
            raise ValueError("scint_index must be nonnegative")


@dataclass(frozen=True)
class PhaseNoiseConfig:
    """Residual phase noise from the aperture-averaged turbulent wavefront.

    ``sigma2_phase`` is derived as ``c_j * (2 a / d_0)**2``.
    """

    c_j: float
    aperture_radius_m: float
    coherence_diameter_m: float
    sigma2_phase: float = field(init=False)

    def __post_init__(self):
        if self.c_j < 0 or self.aperture_radius_m < 0:
            raise ValueError("c_j and aperture radius must be nonnegative")
        object.__setattr__(self, "sigma2_phase", phase_variance_zernike(self))

    @classmethod
    def from_variance(cls, sigma2):
        """Phase model with a prescribed variance (unit aperture ratio)."""
        return cls(float(sigma2), 0.5, 1.0)


@dataclass(frozen=True)
class ChannelRealization:
    """One sub-channel draw: amplitude factor, phase drift, T, excess noise and total noise."""

    amp_attenuation: float
    phase_drift: float
    transmittance: float
    excess_noise: float
    noise_var: float
    clamped: bool = False


@dataclass(frozen=True)
class ChannelBatch:
    """Vectorised set of sub-channel draws (one entry per draw)."""

    amp_attenuation: np.ndarray
    phase_drift: np.ndarray
    transmittance: np.ndarray
    excess_noise: float
    noise_var: np.ndarray
    n_clamped: int

    def __len__(self):
        return len(self.transmittance)

    def __getitem__(self, i):
        return ChannelRealization(float(self.amp_attenuation[i]), float(self.phase_drift[i]),
                                  float(self.transmittance[i]), self.excess_noise,
                                  float(self.noise_var[i]))


@dataclass(frozen=True)
class FadingChannel:
    """Deterministic transmittance plus optional fading and phase noise.

    Parameters
    ----------
    transmittance : float
        Deterministic part of the power transmittance.
    excess_noise : float
        Channel excess noise referred to the channel input (SNU).
    fading : LogNormalParams or GammaGammaParams or None
        Intensity fading; ``None`` disables it.
    phase : PhaseNoiseConfig or None
        Phase drift model; ``None`` disables it.
    """

    transmittance: float
    excess_noise: float = 0.0
    fading: LogNormalParams | GammaGammaParams | None = None
    phase: PhaseNoiseConfig | None = None

    def __post_init__(self):
        if not 0 < self.transmittance <= 1:
            raise ValueError("transmittance must lie in (0, 1]")
        if self.excess_noise < 0:
            raise ValueError("excess_noise must be nonnegative")


def fiber_transmittance(cfg):
    """Power transmittance ``10**(-alpha_f L / 10)`` of a fiber link."""
    return 10.0 ** (-cfg.alpha_f * cfg.length_km / 10.0)


def db_to_natural(alpha_db):
    """Convert an attenuation coefficient from dB/km to 1/km."""
    return alpha_db * math.log(10.0) / 10.0


def free_space_transmittance(cfg):
    """Lambert-law transmittance ``exp(-alpha_nat L)`` of a free-space path."""
    return math.exp(-db_to_natural(cfg.alpha_lambda) * cfg.length_km)


def attenuation_from_visibility(cfg):
    """Scattering decay coefficient (dB/km) from air visibility and wavelength."""
    if cfg.visibility_km is None or not cfg.visibility_km > 0:
        raise ValueError("visibility must be positive")
    return (3.91 / cfg.visibility_km) * (cfg.wavelength_um / 0.55) ** (-cfg.q_exponent)


def gg_params_from_log_variances(sigma2_lnx, sigma2_lny):
    """Gamma-Gamma effective numbers from the large/small-scale log variances."""
    if not (sigma2_lnx > 0 and sigma2_lny > 0):
        raise ValueError("log-irradiance variances must be positive")
    alpha = 1.0 / math.expm1(sigma2_lnx)
    beta = 1.0 / math.expm1(sigma2_lny)
    return GammaGammaParams(alpha, beta, float(sigma2_lnx), float(sigma2_lny))


def phase_variance_zernike(cfg):
    """Phase variance ``C_J (2a/d_0)**2`` in rad^2."""
    if not cfg.coherence_diameter_m > 0:
        raise ValueError("coherence diameter must be positive")
    return cfg.c_j * (2.0 * cfg.aperture_radius_m / cfg.coherence_diameter_m) ** 2


def sample_intensity(dist, rng, size=None):
    """Draw normalised intensity values from a fading distribution.

    Parameters
    ----------
    dist : LogNormalParams or GammaGammaParams
    rng : numpy.random.Generator
    size : int or tuple, optional
        Output shape; a scalar is returned when omitted.
    """
    if isinstance(dist, LogNormalParams):
        s = dist.scint_index
        return np.exp(rng.normal(math.log(dist.mean_intensity) - s / 2.0, math.sqrt(s), size))
    if isinstance(dist, GammaGammaParams):
        a, b = dist.alpha_eff, dist.beta_eff
        return rng.gamma(a, 1.0 / a, size) * rng.gamma(b, 1.0 / b, size)
    raise TypeError(f"unsupported fading model {type(dist).__name__}")


def intensity_moment(dist, k):
    """Exact moment ``E[I**k]`` of a fading distribution (``dist=None`` means I = 1)."""
    if dist is None:
        return 1.0
    if isinstance(dist, LogNormalParams):
        s = dist.scint_index
        return dist.mean_intensity ** k * math.exp(k * (k - 1) * s / 2.0)
    if isinstance(dist, GammaGammaParams):
        from scipy.special import gammaln
        a, b = dist.alpha_eff, dist.beta_eff
        return math.exp(gammaln(a + k) - gammaln(a) + gammaln(b + k) - gammaln(b)
                        - k * math.log(a * b))
    raise TypeError(f"unsupported fading model {type(dist).__name__}")


def sample_phase_drift(cfg, rng, size=None):
    """Gaussian phase drift with variance ``cfg.sigma2_phase``."""
    s2 = cfg.sigma2_phase if cfg is not None else 0.0
    if s2 < 0:
        raise ValueError("phase variance must be nonnegative")
    if s2 == 0:
        return 0.0 if size is None else np.zeros(size)
    return rng.normal(0.0, math.sqrt(s2), size)


def char_function(omega, sigma2):
    """Characteristic function ``exp(-omega**2 sigma2 / 2)`` of the phase drift."""
    if np.any(np.asarray(sigma2) < 0):
        raise ValueError("sigma2 must be nonnegative")
    return np.exp(-np.square(omega) * sigma2 / 2.0)


@dataclass(frozen=True)
class FluctuationMoments:
    """The expectation terms that enter the fluctuation-expanded estimators."""

    e_a_cos: float
    e_a_sin: float
    e_a2_cos2: float
    e_a2_sin2: float
    e_a2: float


MIN_MOMENT_SAMPLES = 10_000


def fluctuation_moments(dist, phase_cfg, n_samples=None, rng=None, method="monte_carlo"):
    """Amplitude/phase expectations of a fluctuating channel.

    Parameters
    ----------
    dist : LogNormalParams, GammaGammaParams or None
        Intensity fading (``None`` means ``I = 1``).
    phase_cfg : PhaseNoiseConfig or None
    n_samples : int
        Monte Carlo draws; at least 1e4.
    rng : numpy.random.Generator
    method : {"monte_carlo", "analytic"}
        ``analytic`` combines the characteristic-function factors with exact
        intensity moments; ``monte_carlo`` averages over joint draws.

    Returns
    -------
    FluctuationMoments
        ``e_a_sin`` is zero by symmetry of the phase distribution.
    """
    s2 = phase_cfg.sigma2_phase if phase_cfg is not None else 0.0
    if method == "analytic":
        e_sqrt = intensity_moment(dist, 0.5)
        e_i = intensity_moment(dist, 1.0)
        m2 = float(char_function(2.0, s2))
        return FluctuationMoments(float(char_function(1.0, s2)) * e_sqrt, 0.0,
                                  (1.0 + m2) / 2.0 * e_i, (1.0 - m2) / 2.0 * e_i, e_i)
    if method != "monte_carlo":
        raise ValueError(f"unknown method {method!r}")
    if n_samples is None or n_samples < MIN_MOMENT_SAMPLES:
        raise ValueError(f"n_samples must be at least {MIN_MOMENT_SAMPLES} for a usable estimate")
    intensity = np.ones(n_samples) if dist is None else sample_intensity(dist, rng, n_samples)
    phi = np.asarray(sample_phase_drift(phase_cfg, rng, n_samples))
    amp = np.sqrt(intensity)
    c2 = np.cos(phi) ** 2
    e_a2_cos2 = float(np.mean(intensity * c2))
    e_a2 = float(np.mean(intensity))
    return FluctuationMoments(float(np.mean(amp * np.cos(phi))), 0.0,
                              e_a2_cos2, e_a2 - e_a2_cos2, e_a2)


def realize_subchannels(channel, det, n, rng):
    """Draw ``n`` independent sub-channel realisations.

    The transmittance is ``I * T_det`` clamped to 1; the total noise at the
    detector output is ``N_0 + eta T eps + nu_el``.
    """
    if channel.fading is None:
        intensity = np.ones(n)
    else:
        intensity = np.asarray(sample_intensity(channel.fading, rng, n), dtype=float)
    phi = np.asarray(sample_phase_drift(channel.phase, rng, n), dtype=float)
    raw_t = intensity * channel.transmittance
    clamped = raw_t > 1.0
    t = np.minimum(raw_t, 1.0)
    noise = det.n0 + det.eta * t * channel.excess_noise + det.nu_el
    return ChannelBatch(np.sqrt(intensity), phi, t, channel.excess_noise, noise, int(clamped.sum()))


def realize_subchannel(channel, det, rng):
    """Single sub-channel realisation; see :func:`realize_subchannels`."""
    batch = realize_subchannels(channel, det, 1, rng)
    r = batch[0]
    return ChannelRealization(r.amp_attenuation, r.phase_drift, r.transmittance,
                              r.excess_noise, r.noise_var, batch.n_clamped > 0)
