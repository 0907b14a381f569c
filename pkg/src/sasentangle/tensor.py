"""
chi(3) tensor structure of the O_h point group and the theta-dependent
Y factors weighting the VV, HH and VH amplitudes.

Tensor components are stored as ratios to A^E_xxxx, with A^E_xxxx itself
carried in detector-count units (aE_xxxx = sqrt(<I_VV(0)>)). Only the sum
A_xxyy + A_xyxy enters the Y factors, so only that sum is kept.
"""

import logging
import math
from typing import Dict, NamedTuple, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from .utils import load_json, parse_complex

logger = logging.getLogger(__name__)

MEAN_VV0_COUNTS = 27.5e3
_A_REF = math.sqrt(MEAN_VV0_COUNTS)

POLARIZATIONS = ("VV", "HH", "VH")
MECHANISMS = ("E", "R")


class TensorSet(BaseModel):
    """Five independent tensor ratios plus the electronic reference amplitude."""
    model_config = ConfigDict(frozen=True)

    aE_xxxx: complex
    rE_xyyx: complex
    rE_sum: complex
    rR_xxxx: complex = 0j
    rR_xyyx: complex
    rR_sum: complex

    @field_validator("*")
    @classmethod
    def _finite(cls, v: complex, info):
        if not (math.isfinite(v.real) and math.isfinite(v.imag)):
            raise ValueError(f"{info.field_name} must be finite")
        return v

    def ratios(self, eta: str) -> tuple:
        """(r_xxxx, r_xyyx, r_sum) for mechanism 'E' or 'R'."""
        if eta == "E":
            return 1.0 + 0j, self.rE_xyyx, self.rE_sum
        if eta == "R":
            return self.rR_xxxx, self.rR_xyyx, self.rR_sum
        raise ValueError(f"unknown mechanism {eta!r}, expected 'E' or 'R'")

    def scaled(self, k: float) -> "TensorSet":
        """Same ratios with the reference amplitude multiplied by k."""
        return self.model_copy(update={"aE_xxxx": self.aE_xxxx * k})

    def as_dict(self) -> Dict[str, list]:
        return {name: [value.real, value.imag] for name, value in self}


class TensorUncertainty(BaseModel):
    """One-sigma uncertainties, real and imaginary parts packed as complex(sigma_re, sigma_im)."""
    model_config = ConfigDict(frozen=True)

    aE_xxxx: complex = 0j
    rE_xyyx: complex = 0j
    rE_sum: complex = 0j
    rR_xxxx: complex = 0j
    rR_xyyx: complex = 0j
    rR_sum: complex = 0j


class YFactors(BaseModel):
    model_config = ConfigDict(frozen=True)

    yE_VV: complex
    yE_HH: complex
    yE_VH: complex
    yR_VV: complex
    yR_HH: complex
    yR_VH: complex

    def get(self, eta: str, pol: str) -> complex:
        if eta not in MECHANISMS or pol not in POLARIZATIONS:
            raise ValueError(f"unknown Y factor y{eta}_{pol}")
        return getattr(self, f"y{eta}_{pol}")


class ReducedAngle(NamedTuple):
    theta: float
    vh_sign: int


def _angular_weights(theta: float):
    # evaluated at the reduced angle so VH vanishes exactly at 0 and 45 degrees
    t, sign = periodicity_reduce(theta)
    if t == math.pi / 4.0:
        S = C = math.sqrt(0.5)
    else:
        S, C = math.sin(t), math.cos(t)
    S2, C2 = S * S, C * C
    return S2 * S2 + C2 * C2, 2.0 * S2 * C2, sign * (S2 - C2) * S * C


def y_factors(ts: TensorSet, theta: float) -> YFactors:
    """
    Y factors for crystal angle theta (radians) between the laser
    polarization and the crystallographic x axis.

    VV: (S^4 + C^4) r_xxxx + 2 S^2 C^2 (r_xyyx + r_sum)
    HH: 2 S^2 C^2 r_xxxx + (S^4 + C^4) r_xyyx - 2 S^2 C^2 r_sum
    VH: (S^2 - C^2) S C (r_xxxx - r_xyyx - r_sum)
    each multiplied by aE_xxxx.
    """
    if not math.isfinite(theta):
        raise ValueError("theta must be finite")
    quartic, mixed, skew = _angular_weights(theta)
    values = {}
    for eta in MECHANISMS:
        r_xxxx, r_xyyx, r_sum = ts.ratios(eta)
        values[f"y{eta}_VV"] = ts.aE_xxxx * (quartic * r_xxxx + mixed * (r_xyyx + r_sum))
        values[f"y{eta}_HH"] = ts.aE_xxxx * (mixed * r_xxxx + quartic * r_xyyx - mixed * r_sum)
        values[f"y{eta}_VH"] = ts.aE_xxxx * (skew * (r_xxxx - r_xyyx - r_sum))
    return YFactors(**values)


def periodicity_reduce(theta: float) -> ReducedAngle:
    """
    Map any angle onto [0, pi/4].

    The Y factors have period pi/2 in theta. Reflections theta -> -theta and
    theta -> pi/2 - theta leave VV and HH unchanged and flip the sign of VH,
    which is the local relabeling H -> -H on both photons. The returned
    vh_sign is the factor to apply to the VH amplitude at the reduced angle.
    """
    if not math.isfinite(theta):
        raise ValueError("theta must be finite")
    quarter = math.pi / 2.0
    t = theta % quarter
    if t > quarter / 2.0:
        return ReducedAngle(quarter - t, -1)
    return ReducedAngle(t, 1)


class YMeasurements(BaseModel):
    """Y factors measured at theta = 0 and 45 degrees. Missing entries are None."""
    model_config = ConfigDict(frozen=True)

    yE_VV_0: complex
    yE_HH_0: Optional[complex] = None
    yE_VV_45: Optional[complex] = None
    yE_HH_45: Optional[complex] = None
    yR_VV_0: Optional[complex] = None
    yR_HH_0: Optional[complex] = None
    yR_VV_45: Optional[complex] = None
    yR_HH_45: Optional[complex] = None


# Rows of the theta = 0 / 45 degree system in (r_xxxx, r_xyyx, r_sum)
_ROWS = {
    "VV_0": (1.0, 0.0, 0.0),
    "HH_0": (0.0, 1.0, 0.0),
    "VV_45": (0.5, 0.5, 0.5),
    "HH_45": (0.5, 0.5, -0.5),
}


def _solve_ratios(rows, rhs, label: str) -> np.ndarray:
    A = np.array(rows, dtype=complex)
    b = np.array(rhs, dtype=complex)
    if A.shape[0] < A.shape[1] or np.linalg.matrix_rank(A) < A.shape[1]:
        raise ValueError(f"singular system for {label} tensor ratios: need more independent Y measurements")
    solution, *_ = np.linalg.lstsq(A, b, rcond=None)
    return solution


def invert_y(measured: YMeasurements) -> TensorSet:
    """
    Recover the tensor ratios from Y factors at theta = 0 and 45 degrees.

    The electronic system has r_xxxx = 1 by normalization and needs HH(0)
    plus either VV(45) or HH(45). The Raman system uses VV(0) if given,
    otherwise the T_2g value r_xxxx = 0, and needs HH(0) plus a 45 degree
    entry.

    Raises:
        ValueError: if yE_VV_0 is zero or the system is singular
    """
    aE = measured.yE_VV_0
    if aE == 0:
        raise ValueError("yE_VV_0 must be non-zero")

    rows, rhs = [], []
    for key, (r_xxxx, r_xyyx, r_sum) in _ROWS.items():
        value = getattr(measured, f"yE_{key}")
        if key == "VV_0" or value is None:
            continue
        rows.append((r_xyyx, r_sum))
        rhs.append(value / aE - r_xxxx)
    rE_xyyx, rE_sum = _solve_ratios(rows, rhs, "electronic")

    rows, rhs = [], []
    if measured.yR_VV_0 is None:
        rows.append(_ROWS["VV_0"])
        rhs.append(0.0)
    for key, row in _ROWS.items():
        value = getattr(measured, f"yR_{key}")
        if value is None:
            continue
        rows.append(row)
        rhs.append(value / aE)
    rR_xxxx, rR_xyyx, rR_sum = _solve_ratios(rows, rhs, "Raman")

    return TensorSet(aE_xxxx=aE, rE_xyyx=complex(rE_xyyx), rE_sum=complex(rE_sum),
                     rR_xxxx=complex(rR_xxxx), rR_xyyx=complex(rR_xyyx), rR_sum=complex(rR_sum))


def measurements_from(ts: TensorSet) -> YMeasurements:
    """All eight theta = 0 / 45 degree Y values implied by a tensor set."""
    y0, y45 = y_factors(ts, 0.0), y_factors(ts, math.pi / 4.0)
    return YMeasurements(
        yE_VV_0=y0.yE_VV, yE_HH_0=y0.yE_HH, yE_VV_45=y45.yE_VV, yE_HH_45=y45.yE_HH,
        yR_VV_0=y0.yR_VV, yR_HH_0=y0.yR_HH, yR_VV_45=y45.yR_VV, yR_HH_45=y45.yR_HH,
    )


def _fig1_fit_preset() -> TensorSet:
    # fitted Y values in units of sqrt(<I_VV(0)>), except yR which is in counts
    yE_HH_0 = _A_REF * complex(0.68, -0.12)
    yE_VV_45 = _A_REF * complex(1.61, -0.55)
    yR = 51450.0
    return invert_y(YMeasurements(yE_VV_0=_A_REF, yE_HH_0=yE_HH_0, yE_VV_45=yE_VV_45,
                                  yR_HH_0=yR, yR_VV_45=yR))


PRESETS: Dict[str, TensorSet] = {
    "table1": TensorSet(aE_xxxx=_A_REF, rE_xyyx=complex(0.37, -0.07), rE_sum=complex(0.89, -0.07),
                        rR_xxxx=0j, rR_xyyx=171 + 0j, rR_sum=171 + 0j),
    "fig1-fit": _fig1_fit_preset(),
    "ideal-centrosymmetric": TensorSet(aE_xxxx=_A_REF, rE_xyyx=1 / 3 + 0j, rE_sum=2 / 3 + 0j,
                                       rR_xxxx=0j, rR_xyyx=171 + 0j, rR_sum=171 + 0j),
}

PRESET_UNCERTAINTIES: Dict[str, TensorUncertainty] = {
    "table1": TensorUncertainty(aE_xxxx=complex(0.5 * 3.5e3 / _A_REF, 0.0),
                                rE_xyyx=complex(0.04, 0.01), rE_sum=complex(0.10, 0.01),
                                rR_xyyx=complex(12, 0), rR_sum=complex(12, 0)),
}


def get_preset(name: str, with_uncertainties: bool = False):
    """
    Tensor preset by name. With with_uncertainties=True returns
    (TensorSet, TensorUncertainty or None); only measured presets carry one.
    """
    try:
        ts = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown tensor preset '{name}', choose from {sorted(PRESETS)}") from None
    if with_uncertainties:
        return ts, PRESET_UNCERTAINTIES.get(name)
    return ts


def tensor_from_dict(data: dict) -> TensorSet:
    """
    Tensor set from a mapping: either {"preset": name} or explicit fields
    with complex values given as [re, im] pairs (or plain numbers).
    """
    if "preset" in data:
        extra = set(data) - {"preset"}
        if extra:
            raise ValueError(f"'preset' cannot be combined with explicit fields {sorted(extra)}")
        return get_preset(data["preset"])
    unknown = set(data) - set(TensorSet.model_fields)
    if unknown:
        raise ValueError(f"unknown tensor fields {sorted(unknown)}")
    return TensorSet(**{name: parse_complex(value, name) for name, value in data.items()})


def load_tensor_file(path: str) -> TensorSet:
    ts = tensor_from_dict(load_json(path))
    logger.info(f"Loaded tensor set from {path}")
    return ts
