import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cvqkd_eq.channels import (FadingChannel, FiberConfig, FreeSpaceConfig, GammaGammaParams, LogNormalParams,
                               PhaseNoiseConfig, attenuation_from_visibility, char_function, fiber_transmittance,
                               fluctuation_moments, free_space_transmittance, gg_params_from_log_variances,
                               intensity_moment, phase_variance_zernike, realize_subchannel, realize_subchannels,
                               sample_intensity, sample_phase_drift)
from cvqkd_eq.config import load_preset, turbulence_presets
from cvqkd_eq.seeding import stream
from cvqkd_eq.signal_chain import DetectorModel


def rng(name):
    return stream(7, name)


def test_fiber_transmittance_values():
    assert fiber_transmittance(FiberConfig(0.2, 10.0)) == pytest.approx(0.6310, abs=5e-5)
    assert fiber_transmittance(FiberConfig(0.7, 0.0)) == 1.0
    assert fiber_transmittance(FiberConfig(1.0, 10.0)) == pytest.approx(0.1, rel=1e-15)


def test_free_space_transmittance_values():
    alpha_db = 10.0 / math.log(10.0)
    assert free_space_transmittance(FreeSpaceConfig(alpha_db, 1.0)) == pytest.approx(math.exp(-1), rel=1e-14)
    assert free_space_transmittance(FreeSpaceConfig(3.0, 0.0)) == 1.0


def test_presets_hit_their_target_transmittance():
    for p in load_preset("FreeSpaceStrong").turbulence:
        assert p.transmittance() == pytest.approx(p.target_T, rel=1e-12)
    assert [p["target_T"] for p in turbulence_presets()] == [0.9703, 0.5003, 0.2352]


@given(st.floats(0.01, 50), st.floats(0, 20), st.floats(0.001, 5))
def test_transmittance_decreasing_in_length(alpha, length, step):
    assert fiber_transmittance(FiberConfig(alpha, length + step)) < fiber_transmittance(FiberConfig(alpha, length))
    assert (free_space_transmittance(FreeSpaceConfig(alpha, length + step))
            < free_space_transmittance(FreeSpaceConfig(alpha, length)))


def test_attenuation_from_visibility():
    assert attenuation_from_visibility(FreeSpaceConfig(0, 1, 3.91, 0.55, 0.7)) == pytest.approx(1.0)
    assert attenuation_from_visibility(FreeSpaceConfig(0, 1, 1.955, 0.55, 1.3)) == pytest.approx(2.0)
    mpmath.mp.dps = 40
    ref = (mpmath.mpf("3.91") / 23) * (mpmath.mpf("1.55") / mpmath.mpf("0.55")) ** mpmath.mpf("-1.3")
    assert attenuation_from_visibility(FreeSpaceConfig(0, 1, 23.0, 1.55, 1.3)) == pytest.approx(float(ref), rel=1e-14)
    with pytest.raises(ValueError):
        attenuation_from_visibility(FreeSpaceConfig(0, 1, 0.0))


def test_gg_params_from_log_variances():
    assert gg_params_from_log_variances(math.log(2), 0.3).alpha_eff == pytest.approx(1.0, rel=1e-14)
    assert gg_params_from_log_variances(math.log(1.25), 0.3).alpha_eff == pytest.approx(4.0, rel=1e-13)
    with pytest.raises(ValueError):
        gg_params_from_log_variances(0.0, 0.3)
    p = GammaGammaParams.from_effective(4.0, 2.0)
    assert p.scintillation_index == pytest.approx(0.875)


def test_phase_variance_zernike():
    assert phase_variance_zernike(PhaseNoiseConfig(1.0, 0.5, 1.0)) == pytest.approx(1.0)
    assert phase_variance_zernike(PhaseNoiseConfig(0.5, 1.0, 1.0)) == pytest.approx(2.0)
    assert PhaseNoiseConfig(1.0299, 0.05, 0.2).sigma2_phase == pytest.approx(1.0299 * 0.25, rel=1e-15)
    with pytest.raises(ValueError):
        PhaseNoiseConfig(1.0, 0.5, 0.0)


def test_gamma_gamma_sampler_moments():
    i = sample_intensity(GammaGammaParams.from_effective(4.0, 2.0), rng("gg42"), 1_000_000)
    assert abs(i.mean() - 1.0) < 0.01
    assert np.var(i) / i.mean() ** 2 == pytest.approx(0.875, rel=0.02)


def test_gamma_gamma_deterministic_limit():
    i = sample_intensity(GammaGammaParams.from_effective(1e7, 1e7), rng("ggbig"), 10_000)
    assert np.max(np.abs(i - 1.0)) < 0.01


def test_lognormal_sampler_mean():
    i = sample_intensity(LogNormalParams(0.6310, 0.05), rng("ln"), 1_000_000)
    assert i.mean() == pytest.approx(0.6310, rel=0.01)


def test_intensity_moments_closed_form():
    gg = GammaGammaParams.from_effective(2.5, 1.2)
    assert intensity_moment(gg, 1.0) == pytest.approx(1.0, rel=1e-13)
    assert intensity_moment(gg, 2.0) - 1.0 == pytest.approx(gg.scintillation_index, rel=1e-12)
    # Gamma-Gamma E[sqrt(I)] by direct quadrature of the product density
    mpmath.mp.dps = 30
    a, b = mpmath.mpf(2.5), mpmath.mpf(1.2)
    half_a = mpmath.gamma(a + 0.5) / mpmath.gamma(a) / mpmath.sqrt(a)
    half_b = mpmath.quad(lambda y: mpmath.sqrt(y) * b ** b * y ** (b - 1) * mpmath.e ** (-b * y) / mpmath.gamma(b),
                         [0, 1, mpmath.inf])
    assert intensity_moment(gg, 0.5) == pytest.approx(float(half_a * half_b), rel=1e-12)
    ln = LogNormalParams(0.8, 0.04)
    assert intensity_moment(ln, 2.0) == pytest.approx(0.64 * math.exp(0.04), rel=1e-14)


def test_phase_drift():
    assert sample_phase_drift(PhaseNoiseConfig.from_variance(0.0), rng("p0")) == 0.0
    phi = sample_phase_drift(PhaseNoiseConfig.from_variance(0.04), rng("p04"), 1_000_000)
    assert 0.039 <= np.var(phi) <= 0.041
    assert np.mean(np.cos(phi)) == pytest.approx(math.exp(-0.02), rel=0.005)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 1.0))
def test_cos_mean_within_three_standard_errors(s2):
    phi = np.atleast_1d(sample_phase_drift(PhaseNoiseConfig.from_variance(s2), rng("cos"), 50_000))
    c = np.cos(phi)
    se = max(c.std() / math.sqrt(len(c)), 1e-15)
    assert abs(c.mean() - float(char_function(1.0, s2))) <= 3 * se + 1e-12


def test_char_function_values():
    assert char_function(0.0, 3.3) == 1.0
    assert char_function(1.0, 2.0) == pytest.approx(math.exp(-1))
    assert char_function(2.0, 0.5) == pytest.approx(math.exp(-1))


@given(st.floats(-100, 100), st.floats(0, 100))
def test_char_function_bounds(w, s2):
    m = float(char_function(w, s2))
    assert 0 <= m <= 1
    if w * w * s2 == 0:
        assert m == 1.0
    elif 1e-12 < w * w * s2 / 2 < 700:
        assert 0 < m < 1


def test_fluctuation_moments_cases():
    m = fluctuation_moments(None, None, 10_000, rng("m0"))
    assert (m.e_a_cos, m.e_a_sin, m.e_a2_cos2, m.e_a2_sin2, m.e_a2) == (1.0, 0.0, 1.0, 0.0, 1.0)
    m = fluctuation_moments(None, PhaseNoiseConfig.from_variance(0.1), 200_000, rng("m1"))
    assert m.e_a_cos == pytest.approx(math.exp(-0.05), rel=0.005)
    assert m.e_a2_cos2 + m.e_a2_sin2 == pytest.approx(m.e_a2, abs=1e-12)
    with pytest.raises(ValueError):
        fluctuation_moments(None, None, 999, rng("m2"))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 50), st.floats(0.5, 50), st.floats(0, 0.5))
def test_fluctuation_moments_completeness(a, b, s2):
    gg = GammaGammaParams.from_effective(a, b)
    ph = PhaseNoiseConfig.from_variance(s2)
    an = fluctuation_moments(gg, ph, method="analytic")
    assert an.e_a2_cos2 + an.e_a2_sin2 == pytest.approx(an.e_a2, rel=1e-14)
    mc = fluctuation_moments(gg, ph, 20_000, rng("mc"))
    assert mc.e_a2_cos2 + mc.e_a2_sin2 == pytest.approx(mc.e_a2, rel=1e-12)


def test_realize_subchannel_no_fading():
    det = DetectorModel()
    r = realize_subchannel(FadingChannel(0.631, 0.01), det, rng("nf"))
    assert r.transmittance == 0.631 and r.phase_drift == 0.0 and r.amp_attenuation == 1.0
    assert r.noise_var == pytest.approx(1.0 + 0.6 * 0.631 * 0.01 + 0.01)


def test_weak_preset_mean_transmittance():
    weak = load_preset("FreeSpaceWeak").preset("weak")
    b = realize_subchannels(weak.channel(0.01), DetectorModel(), 100_000, rng("weak"))
    assert b.transmittance.mean() == pytest.approx(weak.target_T, rel=0.02)


def test_no_clamping_for_small_scintillation():
    b = realize_subchannels(FadingChannel(0.9, 0.0, LogNormalParams(1.0, 5e-4)), DetectorModel(), 100_000, rng("c"))
    assert b.n_clamped == 0


def test_clamp_counter_and_bound():
    b = realize_subchannels(FadingChannel(1.0, 0.0, LogNormalParams(1.0, 0.2)), DetectorModel(), 10_000, rng("cl"))
    assert b.n_clamped > 0
    assert b.transmittance.max() == 1.0
