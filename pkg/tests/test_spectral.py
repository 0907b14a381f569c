import math
from unittest.mock import patch

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import special

from sasentangle.spectral import (FWHM_FACTOR, TWO_PI, FrequencyPair, QuadratureError, SpectralParams, f_E, f_R,
                                  f_R_detuned, f_R_lorentzian_limit, f_R_quadrature_oracle, from_spectroscopic,
                                  fwhm_from_w, diamond_params, symmetric_pair, w_from_fwhm)


@pytest.fixture
def sp():
    # W = 24 gamma
    return diamond_params(w_angular=24 * 11.0)


def _pair_at(sp, omega_bar, Omega):
    center = sp.omega_c + omega_bar
    half = sp.omega_ph + Omega
    return FrequencyPair(omega_S=center - half, omega_aS=center + half)


def test_diamond_defaults_give_w_of_24_gamma():
    """W/2pi = 42 cm^-1 is W = 24 gamma within 0.1%"""
    sp = diamond_params()
    assert sp.W / sp.gamma == pytest.approx(24.0, rel=1e-3)
    assert sp.omega_c == pytest.approx(TWO_PI * 12.7e3)
    assert sp.omega_ph == pytest.approx(TWO_PI * 1332.0)
    assert sp.gamma == 11.0


def test_fwhm_conversion_round_trip():
    """FWHM = 2 sqrt(ln 2) W / 2pi and back"""
    assert fwhm_from_w(w_from_fwhm(70.0)) == pytest.approx(70.0, rel=1e-15)
    sp = diamond_params(w_angular=264.0)
    assert sp.fwhm == pytest.approx(FWHM_FACTOR * 264.0 / TWO_PI)
    assert from_spectroscopic(12.7e3, 1332.0, 11.0, fwhm=sp.fwhm).W == pytest.approx(264.0, rel=1e-14)


@pytest.mark.parametrize("widths", [{}, {"fwhm": 70.0, "w_spec": 42.0}, {"w_spec": 42.0, "w_angular": 264.0}])
def test_exactly_one_width_required(widths):
    """Zero or several widths is an error"""
    with pytest.raises(ValueError):
        from_spectroscopic(12.7e3, 1332.0, 11.0, **widths)


@pytest.mark.parametrize("kwargs", [
    dict(omega_c=100.0, W=10.0, omega_ph=200.0, gamma=1.0),
    dict(omega_c=1000.0, W=0.0, omega_ph=200.0, gamma=1.0),
    dict(omega_c=1000.0, W=10.0, omega_ph=200.0, gamma=-1.0),
    dict(omega_c=float("inf"), W=10.0, omega_ph=200.0, gamma=1.0),
])
def test_invalid_spectral_params(kwargs):
    """Ordering and positivity are enforced"""
    with pytest.raises(ValidationError):
        SpectralParams(**kwargs)


def test_frequency_pair_must_be_positive():
    """Negative detected frequencies are rejected"""
    with pytest.raises(ValidationError):
        FrequencyPair(omega_S=-1.0, omega_aS=10.0)


def test_symmetric_pair_detuning(sp):
    """Symmetric detection has omega_bar = 0 and Omega = 2pi (shift - 1332)"""
    omega_bar, Omega = symmetric_pair(900.0, sp).detuning(sp)
    assert omega_bar == pytest.approx(0.0, abs=1e-9)
    assert Omega == pytest.approx(TWO_PI * (900.0 - 1332.0), rel=1e-12)


def test_f_E_envelope(sp):
    """f^E is 1 on the energy-matched line and exp(-1) one width away"""
    assert f_E(symmetric_pair(1100.0, sp), sp) == pytest.approx(1.0)
    assert f_E(_pair_at(sp, sp.W, 0.0), sp).real == pytest.approx(math.exp(-1.0), rel=1e-12)


def test_f_R_at_resonance_is_negative_imaginary(sp):
    """At Omega = 0, f^R = -i gamma erfcx(gamma/2W) / (2 sqrt(pi) W)"""
    value = f_R_detuned(0.0, 0.0, sp)
    assert value.real == pytest.approx(0.0, abs=1e-18)
    assert value.imag < 0
    expected = sp.gamma * special.erfcx(sp.gamma / (2 * sp.W)) / (2 * math.sqrt(math.pi) * sp.W)
    assert abs(value) == pytest.approx(expected, rel=1e-12)
    assert abs(value) == pytest.approx(0.01148, rel=1e-3)


def test_f_R_symmetry_in_omega(sp):
    """f^R(-Omega) = -conj f^R(Omega): the real part is odd, |f^R| even"""
    for Omega in (13.0, 264.0, 1500.0):
        plus, minus = f_R_detuned(0.0, Omega, sp), f_R_detuned(0.0, -Omega, sp)
        assert minus == pytest.approx(-plus.conjugate(), rel=1e-13)


def test_f_R_constructive_below_resonance(sp):
    """Re f^R > 0 below the phonon line and < 0 above"""
    assert f_R(symmetric_pair(1300.0, sp), sp).real > 0
    assert f_R(symmetric_pair(1364.0, sp), sp).real < 0


def test_f_R_far_from_resonance_is_finite(sp):
    """Large |Omega|/W costs no precision: f^R approaches the Lorentzian tail"""
    Omega = -400.0 * sp.W
    value = f_R_detuned(0.0, Omega, sp)
    expected = sp.gamma / (TWO_PI * complex(-Omega, sp.gamma / 2.0))
    assert value == pytest.approx(expected, rel=1e-4)


def test_f_R_matches_quadrature_oracle(sp):
    """Closed form equals the numerical amplitude integral on a 200-point (omega_bar, Omega) grid"""
    worst = 0.0
    for omega_bar in np.linspace(-1.5 * sp.W, 1.5 * sp.W, 10):
        for Omega in np.linspace(-3.0 * sp.W, 3.0 * sp.W, 20):
            fp = _pair_at(sp, float(omega_bar), float(Omega))
            exact = f_R(fp, sp)
            oracle = f_R_quadrature_oracle(fp, sp)
            worst = max(worst, abs(exact - oracle) / abs(exact))
    assert worst <= 1e-6


def test_f_R_lorentzian_limit_for_narrow_laser():
    """At W = gamma/100 the closed form matches the Lorentzian within 1%"""
    narrow = diamond_params(w_angular=0.11)
    for Omega in (-30.0, -5.5, 0.0, 2.0, 11.0, 44.0):
        fp = _pair_at(narrow, 0.0, Omega)
        limit = f_R_lorentzian_limit(fp, narrow)
        assert abs(f_R(fp, narrow) - limit) <= 0.01 * abs(limit)


def test_quadrature_reports_non_convergence(sp):
    """A quad warning message surfaces as QuadratureError"""
    failed = (0.0, 1.0, {"neval": 21}, "roundoff error detected")
    with patch("sasentangle.spectral.integrate.quad", return_value=failed):
        with pytest.raises(QuadratureError):
            f_R_quadrature_oracle(symmetric_pair(1332.0, sp), sp)
