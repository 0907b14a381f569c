"""
Polarization two-photon state of the scattered pair and its entanglement
and Bell-nonlocality measures.

Basis ordering is (VV, HH, VH, HV); the first letter is the Stokes photon,
the second the anti-Stokes photon. The 2x2 amplitude matrix used for partial
traces and the Schmidt decomposition has rows indexed by the Stokes
polarization and columns by the anti-Stokes one (V first).
"""

import logging
import math
from typing import NamedTuple, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy import optimize, special

from .spectral import FrequencyPair, SpectralParams, f_E, f_R
from .tensor import TensorSet, YFactors, y_factors

logger = logging.getLogger(__name__)

EIGEN_FLOOR = 1e-12
_NORM_TOL = 1e-9
_LN2 = math.log(2.0)

# Pauli matrices with sigma_z = |V><V| - |H><H|
_PAULI = (
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)
_PAULI_PAIRS = [[np.kron(si, sj) for sj in _PAULI] for si in _PAULI]

Setting = Union[float, Tuple[float, float]]


class DegenerateStateError(ValueError):
    """All amplitudes vanish: no pair is emitted in this configuration."""


class TwoPhotonState(BaseModel):
    """Normalized pure polarization state."""
    model_config = ConfigDict(frozen=True)

    c_VV: complex
    c_HH: complex
    c_VH: complex
    c_HV: complex

    @model_validator(mode="after")
    def _check_normalized(self):
        norm2 = abs(self.c_VV) ** 2 + abs(self.c_HH) ** 2 + abs(self.c_VH) ** 2 + abs(self.c_HV) ** 2
        if abs(norm2 - 1.0) > _NORM_TOL:
            raise ValueError(f"state is not normalized (norm^2 = {norm2:.12g})")
        return self

    @classmethod
    def from_amplitudes(cls, c_VV: complex, c_HH: complex, c_VH: complex = 0j,
                        c_HV: complex = 0j) -> "TwoPhotonState":
        """Normalize raw amplitudes. Raises DegenerateStateError on a zero vector."""
        amplitudes = np.array([c_VV, c_HH, c_VH, c_HV], dtype=complex)
        norm = float(np.linalg.norm(amplitudes))
        if not math.isfinite(norm) or norm == 0.0:
            raise DegenerateStateError("state has zero norm: all amplitudes vanish")
        c = amplitudes / norm
        return cls(c_VV=complex(c[0]), c_HH=complex(c[1]), c_VH=complex(c[2]), c_HV=complex(c[3]))

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.c_VV, self.c_VH], [self.c_HV, self.c_HH]], dtype=complex)

    @property
    def vector(self) -> np.ndarray:
        """Amplitudes in the product ordering (VV, VH, HV, HH)."""
        return np.array([self.c_VV, self.c_VH, self.c_HV, self.c_HH], dtype=complex)

    def with_phase(self, phi: float) -> "TwoPhotonState":
        u = complex(math.cos(phi), math.sin(phi))
        return TwoPhotonState(c_VV=u * self.c_VV, c_HH=u * self.c_HH, c_VH=u * self.c_VH, c_HV=u * self.c_HV)


class ReducedState(BaseModel):
    """Single-photon density matrix [[rho_VV, rho_VH], [conj(rho_VH), rho_HH]]."""
    model_config = ConfigDict(frozen=True)

    rho_VV: float
    rho_HH: float
    rho_VH: complex

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.rho_VV, self.rho_VH], [self.rho_VH.conjugate(), self.rho_HH]], dtype=complex)

    def eigenvalues(self) -> np.ndarray:
        """Ascending eigenvalues, values in [-EIGEN_FLOOR, 0) clamped to zero."""
        values = np.linalg.eigvalsh(self.matrix)
        return np.where((values < 0) & (values >= -EIGEN_FLOOR), 0.0, values)


class SchmidtDecomposition(BaseModel):
    """psi = sum_k coefficients[k] |stokes[k]> (x) |anti_stokes[k]>."""
    model_config = ConfigDict(frozen=True)

    coefficients: Tuple[float, float]
    stokes: Tuple[Tuple[complex, complex], Tuple[complex, complex]]
    anti_stokes: Tuple[Tuple[complex, complex], Tuple[complex, complex]]

    def reconstruct(self) -> np.ndarray:
        """2x2 amplitude matrix rebuilt from the decomposition."""
        M = np.zeros((2, 2), dtype=complex)
        for lam, u, v in zip(self.coefficients, self.stokes, self.anti_stokes):
            M += lam * np.outer(np.array(u), np.array(v))
        return M


class Analyzer(NamedTuple):
    """Polarization analyzer: orientation from V and ellipticity (0 for a linear polarizer)."""
    angle: float
    ellipticity: float = 0.0

    def bloch(self) -> np.ndarray:
        c2 = math.cos(2 * self.ellipticity)
        return np.array([c2 * math.sin(2 * self.angle), math.sin(2 * self.ellipticity), c2 * math.cos(2 * self.angle)])

    @classmethod
    def from_bloch(cls, n: np.ndarray) -> "Analyzer":
        n = np.asarray(n, dtype=float) / np.linalg.norm(n)
        return cls(angle=0.5 * math.atan2(n[0], n[2]), ellipticity=0.5 * math.asin(float(np.clip(n[1], -1.0, 1.0))))

    @property
    def is_linear(self) -> bool:
        return abs(self.ellipticity) < 1e-12


class ChshSettings(NamedTuple):
    a: Analyzer
    a_prime: Analyzer
    b: Analyzer
    b_prime: Analyzer
    S: float


def state_from_factors(y: YFactors, fE: complex, fR: complex) -> Tuple[complex, complex, complex]:
    """Non-normalized (VV, HH, VH) amplitudes; the HV amplitude equals VH."""
    return (y.yE_VV * fE + y.yR_VV * fR,
            y.yE_HH * fE + y.yR_HH * fR,
            y.yE_VH * fE + y.yR_VH * fR)


def pair_amplitudes(ts: TensorSet, theta: float, fp: FrequencyPair, sp: SpectralParams) -> Tuple[complex, complex, complex]:
    return state_from_factors(y_factors(ts, theta), f_E(fp, sp), f_R(fp, sp))


def pair_rate(ts: TensorSet, theta: float, fp: FrequencyPair, sp: SpectralParams) -> float:
    """Norm^2 of the non-normalized state, proportional to the pair production rate (counts)."""
    vv, hh, vh = pair_amplitudes(ts, theta, fp, sp)
    return abs(vv) ** 2 + abs(hh) ** 2 + 2.0 * abs(vh) ** 2


def build_state(ts: TensorSet, theta: float, fp: FrequencyPair, sp: SpectralParams) -> TwoPhotonState:
    """
    Normalized scattered state for crystal angle theta and detected pair fp.

    Raises:
        DegenerateStateError: if every amplitude vanishes at this configuration
    """
    vv, hh, vh = pair_amplitudes(ts, theta, fp, sp)
    return TwoPhotonState.from_amplitudes(vv, hh, vh, vh)


def reduced_density(state: TwoPhotonState, subsystem: str = "S") -> ReducedState:
    """
    Partial trace keeping the Stokes ('S') or anti-Stokes ('aS') photon.
    """
    M = state.matrix
    if subsystem == "S":
        rho = M @ M.conj().T
    elif subsystem == "aS":
        rho = M.T @ M.conj()
    else:
        raise ValueError(f"subsystem must be 'S' or 'aS', got {subsystem!r}")
    return ReducedState(rho_VV=float(rho[0, 0].real), rho_HH=float(rho[1, 1].real), rho_VH=complex(rho[0, 1]))


def von_neumann_entropy(rho: ReducedState) -> float:
    """Base-2 entropy with 0 log 0 = 0."""
    return float(np.sum(special.entr(rho.eigenvalues())) / _LN2)


def entanglement_entropy(state: TwoPhotonState, subsystem: str = "S") -> float:
    return min(1.0, max(0.0, von_neumann_entropy(reduced_density(state, subsystem))))


def binary_entropy(p: float) -> float:
    return float((special.entr(p) + special.entr(1.0 - p)) / _LN2)


def entropy_from_schmidt_populations(populations: Sequence[float]) -> float:
    """
    Entanglement entropy from the two pair populations measured in the
    Schmidt basis; no tomography needed. Populations are renormalized.
    """
    p = np.asarray(populations, dtype=float)
    if p.shape != (2,) or np.any(p < 0) or p.sum() <= 0:
        raise ValueError("need two non-negative populations with a positive sum")
    return binary_entropy(float(p[0] / p.sum()))


def concurrence(state: TwoPhotonState) -> float:
    return min(1.0, 2.0 * abs(state.c_VV * state.c_HH - state.c_VH * state.c_HV))


def entropy_from_concurrence(C: float) -> float:
    return binary_entropy(0.5 * (1.0 + math.sqrt(max(0.0, 1.0 - C * C))))


def linear_entropy(state: TwoPhotonState, subsystem: str = "S") -> float:
    rho = reduced_density(state, subsystem).matrix
    return float(1.0 - np.real(np.trace(rho @ rho)))


def gisin_F(state: TwoPhotonState) -> float:
    """Maximal CHSH value of a pure two-qubit state, 2 sqrt(1 + C^2)."""
    return gisin_from_concurrence(concurrence(state))


def gisin_from_concurrence(C: float) -> float:
    return 2.0 * math.sqrt(1.0 + C * C)


def gisin_from_linear_entropy(P: float) -> float:
    # C^2 = 2P for pure two-qubit states
    return 2.0 * math.sqrt(1.0 + 2.0 * P)


def gisin_F_as_printed(P: float) -> float:
    """
    The uncorrected relation 2 (1 - P)^(1/2). It gives 2 for product states but
    sqrt(2) for Bell states, below the 2 sqrt(2) CHSH maximum. Use gisin_F.
    """
    return 2.0 * math.sqrt(1.0 - P)


def schmidt(state: TwoPhotonState) -> SchmidtDecomposition:
    """Schmidt decomposition from the SVD of the amplitude matrix."""
    U, s, Vh = np.linalg.svd(state.matrix)
    stokes = tuple(tuple(complex(x) for x in U[:, k]) for k in range(2))
    anti_stokes = tuple(tuple(complex(x) for x in Vh[k, :]) for k in range(2))
    return SchmidtDecomposition(coefficients=(float(s[0]), float(s[1])), stokes=stokes, anti_stokes=anti_stokes)


def correlation_matrix(state: TwoPhotonState) -> np.ndarray:
    """T_ij = <sigma_i (x) sigma_j>, i for the Stokes photon."""
    psi = state.vector
    return np.array([[np.real(np.vdot(psi, P @ psi)) for P in row] for row in _PAULI_PAIRS])


def _as_analyzer(setting: Setting) -> Analyzer:
    if isinstance(setting, Analyzer):
        return setting
    if isinstance(setting, (tuple, list)):
        return Analyzer(float(setting[0]), float(setting[1]))
    return Analyzer(float(setting))


def correlator(state: TwoPhotonState, a: Setting, b: Setting) -> float:
    """E(a, b) for analyzers a (Stokes photon) and b (anti-Stokes photon)."""
    return float(_as_analyzer(a).bloch() @ correlation_matrix(state) @ _as_analyzer(b).bloch())


def _chsh_from_vectors(T: np.ndarray, a, a_prime, b, b_prime) -> float:
    return float(a @ T @ b - a @ T @ b_prime + a_prime @ T @ b + a_prime @ T @ b_prime)


def chsh_value(state: TwoPhotonState, angles: Sequence[Setting]) -> float:
    """
    CHSH combination S = E(a,b) - E(a,b') + E(a',b) + E(a',b').

    Args:
        state: Normalized state
        angles: (a, a', b, b'); a float is a linear polarizer angle from V,
            an (angle, ellipticity) pair an elliptical analyzer

    Returns:
        float: S
    """
    if len(angles) != 4:
        raise ValueError("need four analyzer settings (a, a', b, b')")
    vectors = [_as_analyzer(s).bloch() for s in angles]
    return _chsh_from_vectors(correlation_matrix(state), *vectors)


def chsh_optimal_angles(state: TwoPhotonState) -> ChshSettings:
    """
    Settings reaching the Horodecki maximum 2 sqrt(t1^2 + t2^2).

    From the SVD T = U diag(t) V^T: a = u1, a' = u2, and b, b' =
    (+-t1 v1 + t2 v2)/sqrt(t1^2 + t2^2). A local refinement over the
    analyzer angles runs only when rounding leaves the constructed value
    short of the bound.
    """
    T = correlation_matrix(state)
    U, t, Vt = np.linalg.svd(T)
    u1, u2 = U[:, 0], U[:, 1]
    v1, v2 = Vt[0], Vt[1]
    bound = 2.0 * math.sqrt(t[0] ** 2 + t[1] ** 2)

    norm = math.hypot(t[0], t[1])
    b = (t[0] * v1 + t[1] * v2) / norm
    b_prime = (-t[0] * v1 + t[1] * v2) / norm
    if t[1] < 1e-15:
        # rank-one correlations: any a' works, keep it orthogonal to a
        b, b_prime = v1, -v1
    analyzers = [Analyzer.from_bloch(n) for n in (u1, u2, b, b_prime)]
    S = chsh_value(state, analyzers)

    if bound - S > 1e-12:
        x0 = np.array([value for an in analyzers for value in an])

        def negative_S(x):
            return -chsh_value(state, [Analyzer(x[2 * k], x[2 * k + 1]) for k in range(4)])

        res = optimize.minimize(negative_S, x0, method="BFGS", options={"gtol": 1e-12})
        if -res.fun > S:
            analyzers = [Analyzer(res.x[2 * k], res.x[2 * k + 1]) for k in range(4)]
            S = -res.fun
            logger.debug(f"CHSH refinement improved S to {S:.12f} (bound {bound:.12f})")

    return ChshSettings(*analyzers, S=float(S))
