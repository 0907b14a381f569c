import math

import numpy as np
import pytest
from pydantic import ValidationError

from sasentangle.spectral import diamond_params, symmetric_pair
from sasentangle.state import (Analyzer, DegenerateStateError, TwoPhotonState, binary_entropy, build_state,
                               chsh_optimal_angles, chsh_value, concurrence, correlator, entanglement_entropy,
                               entropy_from_concurrence, entropy_from_schmidt_populations, gisin_F,
                               gisin_F_as_printed, gisin_from_concurrence, gisin_from_linear_entropy,
                               linear_entropy, pair_rate, reduced_density, schmidt)
from sasentangle.tensor import TensorSet, get_preset

SQRT_HALF = math.sqrt(0.5)


def _random_states(n, seed=20240611):
    rng = np.random.default_rng(seed)
    states = []
    for _ in range(n):
        # VH and HV drawn independently so the test covers states outside the scattering family
        c = rng.normal(size=4) + 1j * rng.normal(size=4)
        states.append(TwoPhotonState.from_amplitudes(*c))
    return states


RANDOM_STATES = _random_states(1000)


@pytest.fixture
def bell():
    return TwoPhotonState.from_amplitudes(1.0, 1.0)


@pytest.fixture
def product():
    return TwoPhotonState.from_amplitudes(1.0, 0.0)


class TestExperimentBenchmark:
    """Measured diamond tensor, theta = 0, W = 24 gamma, detection at 900 cm^-1"""

    def setup_method(self):
        self.sp = diamond_params(w_angular=264.0)
        self.state = build_state(get_preset("table1"), 0.0, symmetric_pair(900.0, self.sp), self.sp)

    def test_amplitude_ratio(self):
        assert self.state.c_VH == 0 and self.state.c_HV == 0
        assert abs(self.state.c_HH / self.state.c_VV) == pytest.approx(0.49, abs=0.02)

    def test_entropy(self):
        assert entanglement_entropy(self.state) == pytest.approx(0.70, abs=0.05)

    def test_gisin_value(self):
        assert gisin_F(self.state) == pytest.approx(2.5, abs=0.1)

    def test_pair_rate_is_counts(self):
        """Far from resonance the rate sits near <I_VV(0)> (1 + |HH/VV|^2)"""
        rate = pair_rate(get_preset("table1"), 0.0, symmetric_pair(900.0, self.sp), self.sp)
        ratio = abs(self.state.c_HH / self.state.c_VV)
        assert rate == pytest.approx(27.5e3 * (1 + ratio ** 2), rel=1e-9)


class TestLimitingStates:
    def test_bell_state(self, bell):
        """(VV + HH)/sqrt 2 is maximally entangled and reaches 2 sqrt 2"""
        assert entanglement_entropy(bell) == pytest.approx(1.0, abs=1e-12)
        assert concurrence(bell) == pytest.approx(1.0, abs=1e-12)
        assert gisin_F(bell) == pytest.approx(2 * math.sqrt(2), abs=1e-12)
        S = chsh_value(bell, (0.0, math.pi / 4, math.pi / 8, 3 * math.pi / 8))
        assert S == pytest.approx(2 * math.sqrt(2), abs=1e-12)

    def test_product_state(self, product):
        """VV alone has no entanglement and CHSH value 2"""
        assert entanglement_entropy(product) == 0.0
        assert concurrence(product) == 0.0
        assert gisin_F(product) == 2.0
        assert chsh_optimal_angles(product).S == pytest.approx(2.0, abs=1e-12)

    def test_bell_correlator(self, bell):
        """E(a, b) = cos 2(a - b) for linear analyzers on the Bell state"""
        for a, b in ((0.0, 0.0), (0.1, 0.5), (math.pi / 8, -0.3)):
            assert correlator(bell, a, b) == pytest.approx(math.cos(2 * (a - b)), abs=1e-12)

    def test_elliptical_analyzers_needed(self):
        """(VV + i HH)/sqrt 2 needs elliptical analyzers to reach 2 sqrt 2"""
        state = TwoPhotonState.from_amplitudes(1.0, 1j)
        optimum = chsh_optimal_angles(state)
        assert optimum.S == pytest.approx(2 * math.sqrt(2), abs=1e-9)
        assert not all(an.is_linear for an in optimum[:4])
        linear = chsh_value(state, (0.0, math.pi / 4, math.pi / 8, 3 * math.pi / 8))
        assert linear <= 2.0 + 1e-12


def test_optimal_settings_reach_gisin_bound():
    """The constructed CHSH settings reach 2 sqrt(1 + C^2) on every random state"""
    for state in RANDOM_STATES:
        optimum = chsh_optimal_angles(state)
        assert optimum.S == pytest.approx(gisin_F(state), abs=1e-6)
        assert chsh_value(state, optimum[:4]) == pytest.approx(optimum.S, abs=1e-12)


def test_random_states_relations():
    """Entropy, concurrence, linear entropy and Schmidt data agree on 1000 random states"""
    for state in RANDOM_STATES:
        E = entanglement_entropy(state)
        C = concurrence(state)
        assert E == pytest.approx(entropy_from_concurrence(C), abs=1e-10)
        assert E == pytest.approx(entanglement_entropy(state, "aS"), abs=1e-12)
        assert gisin_from_linear_entropy(linear_entropy(state)) == pytest.approx(gisin_from_concurrence(C), abs=1e-10)
        dec = schmidt(state)
        assert np.allclose(dec.reconstruct(), state.matrix, atol=1e-12)
        populations = [lam ** 2 for lam in dec.coefficients]
        assert entropy_from_schmidt_populations(populations) == pytest.approx(E, abs=1e-10)


def test_global_phase_invariance():
    """A global phase changes no measure"""
    for state in RANDOM_STATES[:50]:
        turned = state.with_phase(1.234)
        assert entanglement_entropy(turned) == pytest.approx(entanglement_entropy(state), abs=1e-12)
        assert gisin_F(turned) == pytest.approx(gisin_F(state), abs=1e-12)
        assert chsh_optimal_angles(turned).S == pytest.approx(chsh_optimal_angles(state).S, abs=1e-9)


def test_reduced_density_trace_and_bad_subsystem(bell):
    rho = reduced_density(bell, "aS")
    assert rho.rho_VV + rho.rho_HH == pytest.approx(1.0)
    assert rho.rho_VH == pytest.approx(0.0)
    with pytest.raises(ValueError):
        reduced_density(bell, "idler")


def test_binary_entropy_edges():
    assert binary_entropy(0.0) == 0.0
    assert binary_entropy(0.5) == pytest.approx(1.0)


def test_schmidt_populations_validation():
    """Populations are renormalized; negatives are refused"""
    assert entropy_from_schmidt_populations([300.0, 300.0]) == pytest.approx(1.0)
    assert entropy_from_schmidt_populations([5.0, 0.0]) == 0.0
    with pytest.raises(ValueError):
        entropy_from_schmidt_populations([1.0, -0.1])


def test_printed_gisin_relation_is_inconsistent():
    """2 (1 - P)^(1/2) gives sqrt 2 instead of 2 sqrt 2 on a Bell state"""
    assert gisin_F_as_printed(0.0) == 2.0
    assert gisin_F_as_printed(0.5) == pytest.approx(math.sqrt(2))
    assert gisin_from_linear_entropy(0.5) == pytest.approx(2 * math.sqrt(2))


def test_degenerate_state():
    """All amplitudes zero raises DegenerateStateError"""
    with pytest.raises(DegenerateStateError):
        TwoPhotonState.from_amplitudes(0.0, 0.0, 0.0, 0.0)
    silent = TensorSet(aE_xxxx=0j, rE_xyyx=0j, rE_sum=0j, rR_xyyx=0j, rR_sum=0j)
    sp = diamond_params()
    with pytest.raises(DegenerateStateError):
        build_state(silent, 0.0, symmetric_pair(900.0, sp), sp)


def test_unnormalized_state_rejected():
    with pytest.raises(ValidationError):
        TwoPhotonState(c_VV=1.0, c_HH=1.0, c_VH=0j, c_HV=0j)


def test_analyzer_bloch_round_trip():
    """from_bloch inverts bloch for elliptical analyzers"""
    an = Analyzer(0.3, -0.2)
    back = Analyzer.from_bloch(an.bloch())
    assert back.angle == pytest.approx(0.3)
    assert back.ellipticity == pytest.approx(-0.2)
    assert Analyzer(0.7).is_linear


def test_chsh_needs_four_settings(bell):
    with pytest.raises(ValueError):
        chsh_value(bell, (0.0, 0.1, 0.2))
