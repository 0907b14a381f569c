import json
import math

import pytest
from pydantic import ValidationError

from sasentangle.tensor import (MEAN_VV0_COUNTS, PRESETS, TensorSet, YMeasurements, get_preset, invert_y,
                                load_tensor_file, measurements_from, periodicity_reduce, tensor_from_dict, y_factors)

DEG = math.pi / 180.0


@pytest.fixture
def table1():
    return get_preset("table1")


def test_y_factors_at_zero(table1):
    """At theta = 0, VV picks r_xxxx, HH picks r_xyyx and VH vanishes"""
    y = y_factors(table1, 0.0)
    a = table1.aE_xxxx
    assert y.yE_VV == a
    assert y.yE_HH == pytest.approx(a * complex(0.37, -0.07))
    assert y.yR_VV == 0
    assert y.yR_HH == pytest.approx(a * 171)
    assert y.yE_VH == 0 and y.yR_VH == 0


def test_y_factors_at_45_degrees(table1):
    """At 45 degrees the sum enters VV with + and HH with -; VH vanishes exactly"""
    y = y_factors(table1, 45 * DEG)
    a = table1.aE_xxxx
    rE_xyyx, rE_sum = table1.rE_xyyx, table1.rE_sum
    assert y.yE_VV == pytest.approx(a * 0.5 * (1 + rE_xyyx + rE_sum), rel=1e-14)
    assert y.yE_HH == pytest.approx(a * 0.5 * (1 + rE_xyyx - rE_sum), rel=1e-14)
    assert y.yR_VV == pytest.approx(a * 171, rel=1e-14)
    assert y.yR_HH == pytest.approx(0.0, abs=1e-9)
    assert y.yE_VH == 0 and y.yR_VH == 0


def test_y_factor_lookup(table1):
    """YFactors.get addresses a single entry and rejects unknown names"""
    y = y_factors(table1, 0.3)
    assert y.get("R", "HH") == y.yR_HH
    with pytest.raises(ValueError):
        y.get("X", "VV")


@pytest.mark.parametrize("theta_deg", [3.0, 17.5, 30.0, 44.0])
def test_periodicity_and_reflection(table1, theta_deg):
    """Period 90 degrees; reflections keep VV and HH and flip the sign of VH"""
    theta = theta_deg * DEG
    base = y_factors(table1, theta)
    shifted = y_factors(table1, theta + math.pi / 2)
    reflected = y_factors(table1, -theta)
    mirrored = y_factors(table1, math.pi / 2 - theta)
    for other in (shifted,):
        assert other.yE_VH == pytest.approx(base.yE_VH, rel=1e-12)
    for other in (reflected, mirrored):
        assert other.yE_VV == pytest.approx(base.yE_VV, rel=1e-12)
        assert other.yR_HH == pytest.approx(base.yR_HH, rel=1e-12)
        assert other.yE_VH == pytest.approx(-base.yE_VH, rel=1e-12)
        assert other.yR_VH == pytest.approx(-base.yR_VH, rel=1e-12)


@pytest.mark.parametrize("theta_deg, reduced_deg, sign", [
    (0.0, 0.0, 1), (30.0, 30.0, 1), (60.0, 30.0, -1), (120.0, 30.0, 1), (-10.0, 10.0, -1), (100.0, 10.0, 1),
])
def test_periodicity_reduce(theta_deg, reduced_deg, sign):
    """Any angle maps onto [0, 45] degrees with the VH sign it carries"""
    reduced = periodicity_reduce(theta_deg * DEG)
    assert reduced.theta == pytest.approx(reduced_deg * DEG, abs=1e-12)
    assert reduced.vh_sign == sign


def test_non_finite_angle_rejected(table1):
    """NaN angles are refused"""
    with pytest.raises(ValueError):
        y_factors(table1, float("nan"))


def test_invert_y_round_trip():
    """Tensor -> Y at 0 and 45 degrees -> tensor recovers the ratios"""
    ts = TensorSet(aE_xxxx=150 + 0j, rE_xyyx=complex(0.4, -0.2), rE_sum=complex(1.1, 0.3),
                   rR_xxxx=complex(5.0, 1.0), rR_xyyx=complex(120.0, 0.0), rR_sum=complex(140.0, -3.0))
    back = invert_y(measurements_from(ts))
    for name in TensorSet.model_fields:
        assert getattr(back, name) == pytest.approx(getattr(ts, name), rel=1e-12, abs=1e-12)


def test_invert_y_assumes_t2g_without_vv0():
    """Without a Raman VV(0) entry, r^R_xxxx = 0"""
    a = math.sqrt(MEAN_VV0_COUNTS)
    ts = invert_y(YMeasurements(yE_VV_0=a, yE_HH_0=0.5 * a, yE_VV_45=a, yR_HH_0=100.0, yR_VV_45=100.0))
    assert ts.rR_xxxx == pytest.approx(0.0, abs=1e-12)
    assert ts.rR_xyyx == pytest.approx(100.0 / a)
    assert ts.rR_sum == pytest.approx(100.0 / a)


def test_fig1_fit_preset_ratios():
    """The fitted Y values translate to the tensor ratios quoted with them"""
    ts = PRESETS["fig1-fit"]
    assert ts.aE_xxxx == pytest.approx(math.sqrt(27.5e3))
    assert ts.rE_xyyx == pytest.approx(complex(0.68, -0.12), abs=1e-12)
    assert ts.rE_sum == pytest.approx(complex(1.54, -0.98), abs=1e-12)
    assert ts.rR_xyyx.real == pytest.approx(310.26, abs=0.01)
    assert ts.rR_sum.real == pytest.approx(310.26, abs=0.01)


def test_singular_system_raises():
    """HH(0) alone cannot fix two electronic ratios"""
    with pytest.raises(ValueError, match="singular"):
        invert_y(YMeasurements(yE_VV_0=1 + 0j, yE_HH_0=0.5 + 0j, yR_HH_0=10 + 0j, yR_VV_45=10 + 0j))


def test_zero_reference_raises():
    """yE_VV_0 sets the normalization and must be non-zero"""
    with pytest.raises(ValueError):
        invert_y(YMeasurements(yE_VV_0=0j, yE_HH_0=1 + 0j, yE_VV_45=1 + 0j, yR_HH_0=1 + 0j, yR_VV_45=1 + 0j))


def test_scaled_keeps_ratios(table1):
    """scaled() multiplies the reference amplitude only"""
    scaled = table1.scaled(2.0)
    assert scaled.aE_xxxx == 2.0 * table1.aE_xxxx
    assert scaled.rE_sum == table1.rE_sum


def test_tensor_set_rejects_non_finite():
    """Infinite components are a validation error"""
    with pytest.raises(ValidationError):
        TensorSet(aE_xxxx=complex(float("inf"), 0), rE_xyyx=0j, rE_sum=0j, rR_xyyx=0j, rR_sum=0j)


class TestTensorFromDict:
    def test_preset(self):
        """{"preset": name} returns the named preset"""
        assert tensor_from_dict({"preset": "table1"}) == PRESETS["table1"]

    def test_unknown_preset(self):
        with pytest.raises(ValueError, match="unknown tensor preset"):
            tensor_from_dict({"preset": "quartz"})

    def test_preset_with_fields(self):
        """A preset cannot be mixed with explicit values"""
        with pytest.raises(ValueError):
            tensor_from_dict({"preset": "table1", "rE_sum": [1, 0]})

    def test_explicit_pairs(self):
        """[re, im] pairs and plain numbers are accepted"""
        ts = tensor_from_dict({"aE_xxxx": 10, "rE_xyyx": [0.37, -0.07], "rE_sum": [0.89, -0.07],
                               "rR_xyyx": 171, "rR_sum": [171, 0]})
        assert ts.rE_xyyx == complex(0.37, -0.07)
        assert ts.rR_xxxx == 0

    def test_unknown_field(self):
        with pytest.raises(ValueError, match="unknown tensor fields"):
            tensor_from_dict({"aE_xxxx": 1, "rE_xyyx": 0, "rE_sum": 0, "rR_xyyx": 0, "rR_sum": 0, "chi": 1})


def test_load_tensor_file(tmp_path):
    """Tensor JSON files round-trip through as_dict"""
    path = tmp_path / "tensor.json"
    path.write_text(json.dumps(PRESETS["table1"].as_dict()))
    assert load_tensor_file(str(path)) == PRESETS["table1"]


def test_load_tensor_file_missing(tmp_path):
    with pytest.raises(OSError):
        load_tensor_file(str(tmp_path / "absent.json"))


def test_preset_uncertainties():
    """The measured preset carries its quoted one-sigma values; derived presets carry none"""
    ts, sigma = get_preset("table1", with_uncertainties=True)
    assert ts == get_preset("table1")
    assert sigma.rE_xyyx == complex(0.04, 0.01)
    assert sigma.rE_sum == complex(0.10, 0.01)
    assert sigma.rR_xyyx.real == 12
    assert get_preset("fig1-fit", with_uncertainties=True)[1] is None
