"""Gaussian-state security analysis for reverse-reconciled homodyne GMCS."""

from dataclasses import dataclass
import math

import numpy as np

OMEGA = np.kron(np.eye(2), np.array([[0.0, 1.0], [-1.0, 0.0]]))


class UnphysicalStateError(ValueError):
    pass


@dataclass(frozen=True)
class CovarianceSpec:
    """Entanglement-based description of the shared two-mode state.

    Parameters
    ----------
    v : float
        Alice's mode variance ``V = V_A + 1``.
    transmittance : float
    excess : float
        Excess noise referred to the channel input (SNU).
    amp_ratio : float
        Ratio of the corrected to the true amplitude factor; 1 is perfect.
    phase_residual : float
        Phase left uncorrected (rad).
    """

    v: float
    transmittance: float
    excess: float
    amp_ratio: float = 1.0
    phase_residual: float = 0.0

    def __post_init__(self):
        if self.v < 1:
            raise ValueError("v must be at least 1")
        if not 0 < self.transmittance <= 1:
            raise ValueError("transmittance must lie in (0, 1]")
        if self.excess < 0:
            raise ValueError("excess noise must be nonnegative")
        if not 0 < self.amp_ratio <= 1:
            raise ValueError("amp_ratio must lie in (0, 1]")


@dataclass(frozen=True)
class SecurityConfig:
    v_a: float = 4.0
    eta: float = 0.6
    nu_el: float = 0.01
    beta_r: float = 0.95
    fer: float = 0.0
    delta_n: float = 0.0

    def __post_init__(self):
        if not (0 <= self.beta_r <= 1 and 0 <= self.fer <= 1):
            raise ValueError("beta_r and fer must lie in [0, 1]")


@dataclass(frozen=True)
class KeyRateReport:
    i_ab: float
    chi_be: float
    k_rate: float
    k_raw: float
    beta_r: float
    fer: float
    delta_n: float
    gamma: np.ndarray

    def to_dict(self):
        return {"i_ab": self.i_ab, "chi_be": self.chi_be, "k_rate": self.k_rate,
                "k_raw": self.k_raw, "beta_r": self.beta_r, "fer": self.fer,
                "delta_n": self.delta_n, "gamma": self.gamma.tolist()}


def build_covariance(spec):
    """4x4 covariance matrix of Alice's and Bob's modes, ordered (x_A, p_A, x_B, p_B)."""
    v, T, eps = spec.v, spec.transmittance, spec.excess
    lam = math.sqrt(spec.amp_ratio) * math.sqrt(T) * math.sqrt(v * v - 1.0)
    c, s = math.cos(spec.phase_residual), math.sin(spec.phase_residual)
    corr = lam * np.array([[c, -s], [-s, -c]])
    b = T * (v + (1.0 - T) / T + eps)
    gamma = np.zeros((4, 4))
    gamma[:2, :2] = v * np.eye(2)
    gamma[2:, 2:] = b * np.eye(2)
    gamma[:2, 2:] = corr
    gamma[2:, :2] = corr.T
    return gamma


def _check_symmetric(gamma):
    g = np.asarray(gamma, dtype=float)
    if g.shape not in ((2, 2), (4, 4)) or not np.allclose(g, g.T, rtol=0, atol=1e-12 * max(1.0, np.abs(g).max())):
        raise ValueError("covariance matrix must be a symmetric 2x2 or 4x4 array")
    return g


def symplectic_spectrum(gamma):
    """Symplectic eigenvalues of a two-mode covariance matrix, descending."""
    g = _check_symmetric(gamma)
    if g.shape != (4, 4):
        raise ValueError("expected a 4x4 matrix")
    ev = np.sort(np.abs(np.linalg.eigvals(1j * OMEGA @ g)))[::-1]
    return float(ev[0]), float(ev[2])


def is_physical(gamma, tol=1e-9):
    return min(symplectic_spectrum(gamma)) >= 1.0 - tol


def conditional_after_homodyne(gamma):
    """Alice's 2x2 covariance conditioned on Bob's x-quadrature homodyne outcome."""
    g = _check_symmetric(gamma)
    a, cab, b = g[:2, :2], g[:2, 2:], g[2:, 2:]
    if b[0, 0] <= 0:
        raise ValueError("measured quadrature variance must be positive")
    pinv = np.array([[1.0 / b[0, 0], 0.0], [0.0, 0.0]])
    out = a - cab @ pinv @ cab.T
    return (out + out.T) / 2.0


def g_entropy(nu):
    """Von Neumann entropy (bits) of a thermal mode with symplectic eigenvalue ``nu``."""
    if nu < 1.0 - 1e-6:
        raise UnphysicalStateError(f"symplectic eigenvalue {nu} below 1")
    x = max(nu - 1.0, 0.0) / 2.0
    if x == 0.0:
        return 0.0
    return (x + 1.0) * math.log2(x + 1.0) - x * math.log2(x)


def holevo_bound(gamma):
    """Eve's accessible information on Bob's homodyne data, ``S(E) - S(E|x_B)``."""
    nu1, nu2 = symplectic_spectrum(gamma)
    nu3 = math.sqrt(max(np.linalg.det(conditional_after_homodyne(gamma)), 0.0))
    return g_entropy(nu1) + g_entropy(nu2) - g_entropy(nu3)


def mutual_information(v_a, T, eps, eta, nu_el):
    """Alice-Bob Shannon information of the homodyne channel (bits per pulse)."""
    if T <= 0:
        return 0.0
    chi_line = 1.0 / T - 1.0 + eps
    chi_hom = (1.0 + nu_el) / eta - 1.0
    chi_tot = chi_line + chi_hom / T
    v = v_a + 1.0
    return 0.5 * math.log2((v + chi_tot) / (1.0 + chi_tot))


def equivalent_spec(v_a, T, eps, eta, nu_el, amp_ratio=1.0, phase_residual=0.0):
    """Covariance spec with the detector inefficiency and noise attributed to the channel.

    The state Eve is assumed to purify has transmittance ``eta T`` and excess
    noise ``eps + nu_el / (eta T)``, which reproduces the same total added
    noise as :func:`mutual_information`.
    """
    T = min(T, 1.0)
    return CovarianceSpec(v_a + 1.0, eta * T, eps + nu_el / (eta * T), amp_ratio, phase_residual)


def key_rate(T, eps, cfg, amp_ratio=1.0, phase_residual=0.0):
    """Asymptotic key rate for a channel point ``(T, eps)``."""
    T = min(float(T), 1.0)
    if T <= 0:
        gamma = np.diag([cfg.v_a + 1.0] * 2 + [1.0] * 2)
        return KeyRateReport(0.0, 0.0, 0.0, 0.0, cfg.beta_r, cfg.fer, cfg.delta_n, gamma)
    gamma = build_covariance(equivalent_spec(cfg.v_a, T, eps, cfg.eta, cfg.nu_el,
                                             amp_ratio, phase_residual))
    i_ab = mutual_information(cfg.v_a, T, eps, cfg.eta, cfg.nu_el)
    chi = holevo_bound(gamma)
    k_raw = (1.0 - cfg.fer) * (cfg.beta_r * i_ab - chi - cfg.delta_n)
    return KeyRateReport(i_ab, chi, max(k_raw, 0.0), k_raw, cfg.beta_r, cfg.fer, cfg.delta_n, gamma)


def secret_key_rate(aggregate, cfg):
    """Key rate at the aggregated estimate ``(<T>, eps)``."""
    return key_rate(aggregate.T_mean, aggregate.eps_mean, cfg)
