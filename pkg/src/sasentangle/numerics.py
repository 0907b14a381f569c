"""
Complex special functions behind the spectral amplitudes.

The Faddeeva kernel w(z) = exp(-z^2) erfc(-iz) comes from scipy.special.wofz
(Steven G. Johnson's Faddeeva package, ~1e-13 relative accuracy). The
complex erfc is assembled from it in scaled form so the exp(-z^2)
prefactor never overflows on its own.
"""

import cmath
import math

from scipy import special

# exp() overflows a double just above 709.78
_EXP_LIMIT = 700.0


def _as_complex(z) -> complex:
    z = complex(z)
    if not (math.isfinite(z.real) and math.isfinite(z.imag)):
        raise ValueError(f"argument must be finite, got {z!r}")
    return z


def faddeeva_w(z: complex) -> complex:
    """
    Faddeeva function w(z) = exp(-z^2) erfc(-iz).

    Valid on the whole finite complex plane; the lower half plane is
    handled by the library through w(z) = 2 exp(-z^2) - w(-z).

    Args:
        z: Finite complex argument

    Returns:
        complex: w(z)
    """
    z = _as_complex(z)
    if z.real == 0.0:
        # on the imaginary axis w(iy) = erfcx(y) is real
        return complex(float(special.erfcx(z.imag)), 0.0)
    return complex(special.wofz(z))


def _scaled_product(log_prefactor: complex, w: complex) -> complex:
    """exp(log_prefactor) * w without forming exp(log_prefactor) alone."""
    if w == 0:
        return 0j
    if abs(log_prefactor.real) < _EXP_LIMIT:
        return cmath.exp(log_prefactor) * w
    return cmath.exp(log_prefactor + cmath.log(w))


def erfc_complex(z: complex) -> complex:
    """
    Complementary error function of a complex argument.

    erfc(z) = exp(-z^2) w(iz). For Re(z) < 0 the reflection
    erfc(z) = 2 - erfc(-z) keeps w evaluated in the upper half plane,
    where it is bounded, and avoids cancellation.

    Args:
        z: Finite complex argument

    Returns:
        complex: erfc(z)
    """
    z = _as_complex(z)
    if z.imag == 0.0:
        return complex(float(special.erfc(z.real)), 0.0)
    if z.real < 0.0:
        return 2.0 - erfc_complex(-z)
    return _scaled_product(-z * z, faddeeva_w(1j * z))


def erfc_scaled(z: complex) -> complex:
    """exp(z^2) erfc(z) = w(iz), the form f^R actually needs."""
    return faddeeva_w(1j * _as_complex(z))

