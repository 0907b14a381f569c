"""
Spectral amplitudes f^E and f^R of the Stokes/anti-Stokes pair state.

All frequencies handled here are angular wavenumbers (2*pi times the
spectroscopic cm^-1 value). Conversion from the spectroscopic numbers a user
types happens only in from_spectroscopic().
"""

import logging
import math
import warnings
from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import integrate

from .numerics import faddeeva_w

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
SQRT_PI = math.sqrt(math.pi)
# FWHM of the laser power spectrum is 2*sqrt(ln 2)*W/(2*pi)
FWHM_FACTOR = 2.0 * math.sqrt(math.log(2.0))

# Diamond with a 781 nm laser (spectroscopic cm^-1)
DIAMOND_OMEGA_C = 12.7e3
DIAMOND_OMEGA_PH = 1332.0
DIAMOND_GAMMA = 11.0
DIAMOND_W_SPEC = 42.0


class QuadratureError(RuntimeError):
    """Raised when the numerical form of the amplitude integral does not converge."""


class SpectralParams(BaseModel):
    """Laser and phonon parameters, angular wavenumbers (cm^-1)."""
    model_config = ConfigDict(frozen=True)

    omega_c: float = Field(..., description="Laser center, angular cm^-1")
    W: float = Field(..., description="Laser amplitude width, angular cm^-1")
    omega_ph: float = Field(..., description="Phonon frequency, angular cm^-1")
    gamma: float = Field(..., description="Phonon decay rate, cm^-1")

    @model_validator(mode="after")
    def _check_ordering(self):
        for name in ("omega_c", "W", "omega_ph", "gamma"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite")
        if self.W <= 0:
            raise ValueError("W must be positive")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if not (self.omega_c > self.omega_ph > 0):
            raise ValueError("require omega_c > omega_ph > 0")
        return self

    @property
    def fwhm(self) -> float:
        """Spectroscopic FWHM of the laser power spectrum."""
        return fwhm_from_w(self.W)

    def with_width(self, W: float) -> "SpectralParams":
        return self.model_copy(update={"W": W})


class FrequencyPair(BaseModel):
    """Detected Stokes and anti-Stokes angular wavenumbers."""
    model_config = ConfigDict(frozen=True)

    omega_S: float
    omega_aS: float

    @model_validator(mode="after")
    def _check_positive(self):
        if not (self.omega_S > 0 and self.omega_aS > 0):
            raise ValueError("omega_S and omega_aS must be positive")
        return self

    def detuning(self, sp: SpectralParams) -> Tuple[float, float]:
        """
        Return (omega_bar, Omega).

        omega_bar = (omega_S + omega_aS)/2 - omega_c measures the departure
        from two-photon energy matching with the laser center; Omega =
        (omega_aS - omega_S)/2 - omega_ph is the detuning from the phonon.
        """
        omega_bar = 0.5 * (self.omega_S + self.omega_aS) - sp.omega_c
        Omega = 0.5 * (self.omega_aS - self.omega_S) - sp.omega_ph
        return omega_bar, Omega


def w_from_fwhm(fwhm: float) -> float:
    return TWO_PI * fwhm / FWHM_FACTOR


def fwhm_from_w(W: float) -> float:
    return FWHM_FACTOR * W / TWO_PI


def from_spectroscopic(omega_c: float, omega_ph: float, gamma: float,
                       fwhm: Optional[float] = None,
                       w_spec: Optional[float] = None,
                       w_angular: Optional[float] = None) -> SpectralParams:
    """
    Build SpectralParams from spectroscopic inputs.

    Args:
        omega_c: Laser center omega_c/2pi (cm^-1)
        omega_ph: Phonon frequency omega_ph/2pi (cm^-1)
        gamma: Phonon decay rate (cm^-1), quoted in the same convention as
            the angular W (W = 24 gamma for W = 264 cm^-1), so it is used as is
        fwhm: Laser power-spectrum FWHM (cm^-1)
        w_spec: W/2pi (cm^-1)
        w_angular: W itself (angular cm^-1)

    Exactly one of fwhm, w_spec and w_angular must be given.

    Returns:
        SpectralParams: parameters in the angular convention
    """
    widths = {"fwhm": fwhm, "w_spec": w_spec, "w_angular": w_angular}
    given = [name for name, value in widths.items() if value is not None]
    if len(given) != 1:
        raise ValueError(f"exactly one of fwhm, w_spec, w_angular is required, got {given or 'none'}")
    for name, value in (("omega_c", omega_c), ("omega_ph", omega_ph), ("gamma", gamma), (given[0], widths[given[0]])):
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value}")

    if fwhm is not None:
        W = w_from_fwhm(fwhm)
    elif w_spec is not None:
        W = TWO_PI * w_spec
    else:
        W = float(w_angular)

    return SpectralParams(omega_c=TWO_PI * omega_c, W=W, omega_ph=TWO_PI * omega_ph, gamma=float(gamma))


def diamond_params(**overrides) -> SpectralParams:
    """Diamond defaults; keyword overrides use from_spectroscopic names."""
    kwargs = dict(omega_c=DIAMOND_OMEGA_C, omega_ph=DIAMOND_OMEGA_PH, gamma=DIAMOND_GAMMA)
    if not any(k in overrides for k in ("fwhm", "w_spec", "w_angular")):
        kwargs["w_spec"] = DIAMOND_W_SPEC
    kwargs.update(overrides)
    return from_spectroscopic(**kwargs)


def symmetric_pair(shift: float, sp: SpectralParams) -> FrequencyPair:
    """Pair detected at spectroscopic Raman shift `shift` with omega_aS = 2 omega_c - omega_S."""
    delta = TWO_PI * shift
    return FrequencyPair(omega_S=sp.omega_c - delta, omega_aS=sp.omega_c + delta)


def f_E(fp: FrequencyPair, sp: SpectralParams) -> complex:
    """Electronic spectral amplitude exp(-omega_bar^2/W^2)."""
    omega_bar, _ = fp.detuning(sp)
    return complex(math.exp(-(omega_bar / sp.W) ** 2), 0.0)


def _f_R(omega_bar: float, Omega: float, sp: SpectralParams) -> complex:
    # exp(-(Omega - i gamma/2)^2/W^2) erfc(z) == exp(z^2) erfc(z) == w(iz)
    z = complex(sp.gamma / (2.0 * sp.W), Omega / sp.W)
    envelope = math.exp(-(omega_bar / sp.W) ** 2)
    return envelope * sp.gamma * faddeeva_w(1j * z) / (2j * SQRT_PI * sp.W)


def f_R(fp: FrequencyPair, sp: SpectralParams) -> complex:
    """
    Phononic spectral amplitude: the Gaussian-laser-broadened Lorentzian.

    The exponential and erfc factors are fused into one Faddeeva evaluation,
    so large |Omega|/W costs no precision.
    """
    omega_bar, Omega = fp.detuning(sp)
    return _f_R(omega_bar, Omega, sp)


def f_R_detuned(omega_bar: float, Omega: float, sp: SpectralParams) -> complex:
    """f_R addressed directly by (omega_bar, Omega)."""
    return _f_R(omega_bar, Omega, sp)


def f_R_lorentzian_limit(fp: FrequencyPair, sp: SpectralParams) -> complex:
    """Narrow-laser limit of f_R: the Lorentzian bracket divided by 2 pi."""
    omega_bar, Omega = fp.detuning(sp)
    envelope = math.exp(-(omega_bar / sp.W) ** 2)
    return envelope * sp.gamma / (TWO_PI * complex(-Omega, sp.gamma / 2.0))


def f_R_quadrature_oracle(fp: FrequencyPair, sp: SpectralParams,
                          epsrel: float = 1e-11, span: float = 12.0) -> complex:
    """
    Numerical form of the Raman amplitude integral.

    Integrates G(omega_S + w) G(omega_aS - w) gamma / (omega_ph - w + i gamma/2)
    with the unit-normalized Gaussian G, lower limit taken to -inf, and
    divides by 2 pi to land on the analytic f_R convention. The Gaussian
    product is exp(-omega_bar^2/W^2) exp(-u^2/W^2)/(sqrt(pi) W) with
    u = w - (omega_aS - omega_S)/2, so the integral runs over u.

    Raises:
        QuadratureError: if quad reports non-convergence
    """
    omega_bar, Omega = fp.detuning(sp)
    W, gamma = sp.W, sp.gamma
    half = 0.5 * gamma

    def kernel(u: float) -> complex:
        return math.exp(-(u / W) ** 2) * gamma / complex(-u - Omega, half)

    lo, hi = -span * W, span * W
    points = sorted({p for p in (-Omega - 5 * gamma, -Omega, -Omega + 5 * gamma) if lo < p < hi})

    parts = []
    for name, func in (("real", lambda u: kernel(u).real), ("imag", lambda u: kernel(u).imag)):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            out = integrate.quad(func, lo, hi, points=points or None, limit=2000,
                                 epsabs=0.0, epsrel=epsrel, full_output=1)
        if len(out) > 3:
            raise QuadratureError(f"{name} part did not converge at Omega={Omega:.6g}: {out[3]}")
        parts.append(out[0])
        logger.debug(f"quadrature {name} part {out[0]:.6e} (abserr {out[1]:.2e}, {out[2]['neval']} evals)")

    envelope = math.exp(-(omega_bar / W) ** 2)
    return envelope * complex(parts[0], parts[1]) / (SQRT_PI * W * TWO_PI)
