"""One-time search for the fiber fading constants that reproduce the measured raw column.

Without equalization the pooled estimator sees the average slope
``sqrt(eta T) E[A cos dphi]`` and an excess-noise floor driven by the
amplitude and phase spread.  Given a fixed phase-noise variance and
channel excess noise, the log-normal mean intensity and log variance are
solved so that the expected raw ``(T, eps)`` hit the targets.
"""

from dataclasses import dataclass
import math

from scipy.optimize import least_squares

from .channels import LogNormalParams, PhaseNoiseConfig, fluctuation_moments
from .estimation import EstimationConfig, fluctuation_estimators


@dataclass(frozen=True)
class CalibrationResult:
    mean_intensity: float
    scint_index: float
    sigma2_phase: float
    expected_T_raw: float
    expected_eps_raw: float
    expected_eps_eq: float

    def to_dict(self):
        return {"fading": {"kind": "lognormal", "mean_intensity": self.mean_intensity,
                           "scint_index": self.scint_index},
                "phase": {"sigma2_phase": self.sigma2_phase},
                "expected_T_raw": self.expected_T_raw,
                "expected_eps_raw": self.expected_eps_raw,
                "expected_eps_eq": self.expected_eps_eq}


def expected_raw(mean_intensity, scint_index, sigma2_phase, T_th, eps_ch, v_a, eta=0.6):
    """Expected pooled (T, eps) of a fading fiber link without equalization."""
    dist = LogNormalParams(mean_intensity, scint_index)
    mom = fluctuation_moments(dist, PhaseNoiseConfig.from_variance(sigma2_phase), method="analytic")
    cfg = EstimationConfig(eta=eta, v_a=v_a)
    t_hat, floor = fluctuation_estimators(mom, cfg, T_th)
    T = t_hat * t_hat / eta
    eps = floor + eps_ch * mom.e_a2 / mom.e_a_cos ** 2
    return T, eps


def expected_equalized_eps(sigma2_phase, eps_ch, v_a):
    """Small-phase expansion of the excess noise left after per-stage gain correction."""
    return eps_ch * (1.0 + sigma2_phase) + v_a * sigma2_phase


def calibrate_fiber(T_th, eps_ch, v_a, target_T_raw=0.5412, target_eps_raw=0.0429,
                    sigma2_phase=5e-4, eta=0.6):
    """Solve for the log-normal fading that maps the theory point onto the raw targets."""
    def resid(p):
        m, s = p
        T, eps = expected_raw(m, s, sigma2_phase, T_th, eps_ch, v_a, eta)
        return [T / target_T_raw - 1.0, eps / target_eps_raw - 1.0]

    sol = least_squares(resid, [0.85, 0.03], bounds=([1e-6, 0.0], [1.0, 5.0]), xtol=1e-15, ftol=1e-15,
                        gtol=1e-15)
    m, s = (float(v) for v in sol.x)
    T, eps = expected_raw(m, s, sigma2_phase, T_th, eps_ch, v_a, eta)
    return CalibrationResult(m, s, sigma2_phase, T, eps, expected_equalized_eps(sigma2_phase, eps_ch, v_a))
