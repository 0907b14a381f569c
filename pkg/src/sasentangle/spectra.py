"""
Correlated coincidence spectra I(delta_omega) and g2(0) curves.

Spectra are predicted under symmetric detection (omega_S = omega_c - delta,
omega_aS = omega_c + delta), so f^E = 1 and only f^R varies along the grid.
Raman shifts are spectroscopic cm^-1 here and in every file.
"""

import logging
import math
import os
import re
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, model_validator

from .spectral import SpectralParams, TWO_PI, f_E, f_R, f_R_detuned, symmetric_pair
from .tensor import TensorSet, periodicity_reduce, y_factors
from .utils import write_text

logger = logging.getLogger(__name__)

MEASURED_LABELS = ("VV0", "HH0", "VV45", "HH45", "VH0", "VH45")
CSV_HEADER = ("delta_omega_cm1", "intensity", "label")
_LABEL_RE = re.compile(r"^(VV|HH|VH)(-?\d+(?:\.\d+)?)$")


class GridMismatchError(ValueError):
    """Two series that must share a grid do not."""


def _check_grid(grid: Sequence[float], name: str) -> None:
    if len(grid) == 0:
        raise ValueError(f"{name} is empty")
    if any(not math.isfinite(x) for x in grid):
        raise ValueError(f"{name} contains non-finite values")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError(f"{name} must be strictly increasing")


class SpectrumSeries(BaseModel):
    model_config = ConfigDict(frozen=True)

    delta_omega: Tuple[float, ...]
    intensity: Tuple[float, ...]
    label: str

    @model_validator(mode="after")
    def _check(self):
        _check_grid(self.delta_omega, "delta_omega")
        if len(self.intensity) != len(self.delta_omega):
            raise ValueError("delta_omega and intensity lengths differ")
        if any(not (math.isfinite(v) and v >= 0) for v in self.intensity):
            raise ValueError(f"intensity of '{self.label}' must be finite and non-negative")
        return self

    @property
    def x(self) -> np.ndarray:
        return np.asarray(self.delta_omega)

    @property
    def y(self) -> np.ndarray:
        return np.asarray(self.intensity)

    def scaled(self, k: float) -> "SpectrumSeries":
        return SpectrumSeries(delta_omega=self.delta_omega, intensity=tuple(k * v for v in self.intensity), label=self.label)


class G2Series(BaseModel):
    model_config = ConfigDict(frozen=True)

    delta_omega: Tuple[float, ...]
    g2: Tuple[float, ...]
    accidental: Tuple[float, ...]
    label: str = ""

    @model_validator(mode="after")
    def _check(self):
        _check_grid(self.delta_omega, "delta_omega")
        if not (len(self.g2) == len(self.accidental) == len(self.delta_omega)):
            raise ValueError("g2 series lengths differ")
        return self


def default_grid(shift_min: float = 850.0, shift_max: float = 1500.0, step: float = 1.0) -> Tuple[float, ...]:
    """Raman-shift grid, endpoints included."""
    if step <= 0 or shift_max < shift_min:
        raise ValueError("need shift_max >= shift_min and a positive step")
    n = int(math.floor((shift_max - shift_min) / step + 1e-9)) + 1
    return tuple(float(shift_min + k * step) for k in range(n))


def config_label(pol: str, theta_deg: float) -> str:
    return f"{pol}{theta_deg:g}"


def parse_label(label: str) -> Tuple[str, float]:
    """'HH0' -> ('HH', 0.0); 'VV22.5' -> ('VV', 22.5)."""
    m = _LABEL_RE.match(label.strip())
    if not m:
        raise ValueError(f"cannot parse configuration label '{label}' (expected e.g. VV0, HH45)")
    return m.group(1), float(m.group(2))


def reduce_label(label: str) -> str:
    """Label of the equivalent configuration with theta folded onto [0, 45] degrees."""
    pol, theta_deg = parse_label(label)
    reduced = periodicity_reduce(math.radians(theta_deg))
    return config_label(pol, round(math.degrees(reduced.theta), 9))


def relabel_vh(series: SpectrumSeries) -> SpectrumSeries:
    """
    The same spectrum under the label of its reduced-angle configuration.

    VV and HH are invariant under the reflections of theta; VH only flips
    sign, which |.|^2 does not see.
    """
    return SpectrumSeries(delta_omega=series.delta_omega, intensity=series.intensity,
                          label=reduce_label(series.label))


def predict_spectrum(ts: TensorSet, theta: float, pol: str, sp: SpectralParams,
                     grid: Optional[Sequence[float]] = None) -> SpectrumSeries:
    """
    Model coincidence counts |yE_pol f^E + yR_pol f^R|^2 along a Raman-shift grid.

    Args:
        ts: Tensor set (counts normalization)
        theta: Crystal angle in radians
        pol: 'VV', 'HH' or 'VH'
        sp: Spectral parameters
        grid: Spectroscopic Raman shifts (cm^-1), default 850..1500 step 1

    Returns:
        SpectrumSeries: predicted intensity in counts
    """
    grid = tuple(grid) if grid is not None else default_grid()
    y = y_factors(ts, theta)
    yE, yR = y.get("E", pol), y.get("R", pol)
    intensity = []
    for shift in grid:
        fp = symmetric_pair(shift, sp)
        intensity.append(abs(yE * f_E(fp, sp) + yR * f_R(fp, sp)) ** 2)
    return SpectrumSeries(delta_omega=grid, intensity=tuple(intensity),
                          label=config_label(pol, round(math.degrees(theta), 9)))


def g2_curve(correlated: SpectrumSeries, accidental: SpectrumSeries) -> G2Series:
    """
    g2(0) = (I_corr + I_acc) / I_acc pointwise.

    Raises:
        GridMismatchError: if the two series are sampled on different grids
        ValueError: if any accidental count is not positive
    """
    if correlated.delta_omega != accidental.delta_omega:
        raise GridMismatchError(f"grids of '{correlated.label}' and '{accidental.label}' differ")
    acc = accidental.y
    if np.any(acc <= 0):
        bad = correlated.delta_omega[int(np.argmax(acc <= 0))]
        raise ValueError(f"accidental counts must be positive (first offending shift {bad:g} cm^-1)")
    g2 = (correlated.y + acc) / acc
    return G2Series(delta_omega=correlated.delta_omega, g2=tuple(float(v) for v in g2),
                    accidental=accidental.intensity, label=correlated.label)


def accidental_model(sp: SpectralParams, amplitude: float, baseline: float,
                     grid: Optional[Sequence[float]] = None) -> SpectrumSeries:
    """
    Symmetric stand-in for measured accidental counts: a |f^R|^2-shaped
    peak centred on the phonon, normalized to `amplitude` at resonance,
    on top of a constant `baseline`.
    """
    if amplitude < 0 or baseline < 0:
        raise ValueError("amplitude and baseline must be non-negative")
    grid = tuple(grid) if grid is not None else default_grid()
    peak = abs(f_R_detuned(0.0, 0.0, sp)) ** 2
    phonon = sp.omega_ph / TWO_PI
    intensity = []
    for shift in grid:
        Omega = TWO_PI * (shift - phonon)
        intensity.append(amplitude * abs(f_R_detuned(0.0, Omega, sp)) ** 2 / peak + baseline)
    return SpectrumSeries(delta_omega=grid, intensity=tuple(intensity), label="accidental")


def _with_metadata(frame: pd.DataFrame, metadata: Optional[Dict[str, object]]) -> str:
    header = "".join(f"# {key}: {value}\n" for key, value in sorted((metadata or {}).items()))
    return header + frame.to_csv(index=False, lineterminator="\n")


def series_to_csv(series: Iterable[SpectrumSeries], metadata: Optional[Dict[str, object]] = None) -> str:
    frames = [pd.DataFrame({"delta_omega_cm1": s.delta_omega, "intensity": s.intensity, "label": s.label})
              for s in series]
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=list(CSV_HEADER))
    return _with_metadata(frame, metadata)


def write_series_csv(path: str, series: Iterable[SpectrumSeries], metadata: Optional[Dict[str, object]] = None) -> None:
    write_text(path, series_to_csv(series, metadata))
    logger.info(f"Wrote spectra to {path}")


def g2_to_csv(curves: Iterable[G2Series], metadata: Optional[Dict[str, object]] = None) -> str:
    frames = [pd.DataFrame({"delta_omega_cm1": c.delta_omega, "g2": c.g2, "accidental": c.accidental,
                            "label": c.label}) for c in curves]
    columns = ["delta_omega_cm1", "g2", "accidental", "label"]
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=columns)
    return _with_metadata(frame, metadata)


def _numeric(frame: pd.DataFrame, column: str, path: str, allow_blank: bool = False) -> pd.Series:
    values = frame[column]
    if not pd.api.types.is_numeric_dtype(values):
        for row, value in enumerate(values, start=1):
            try:
                float(value)
            except (TypeError, ValueError):
                raise ValueError(f"{path}: row {row}: non-numeric value '{value}' in {column}") from None
        values = values.astype(float)
    if not allow_blank and values.isna().any():
        row = int(np.flatnonzero(values.isna().to_numpy())[0]) + 1
        raise ValueError(f"{path}: row {row}: non-numeric value (blank) in {column}")
    return values


def read_measured_csv(path: str, restrict_labels: bool = True) -> Dict[str, Dict[str, SpectrumSeries]]:
    """
    Read a measured (or synthetic) spectrum file.

    Columns: delta_omega_cm1, counts (or intensity), label, and optionally
    accidental. Lines starting with '#' are ignored.

    Returns:
        dict: label -> {'counts': SpectrumSeries, 'accidental': SpectrumSeries (if present)}
    """
    try:
        frame = pd.read_csv(path, comment="#", skipinitialspace=True, float_precision="round_trip")
    except pd.errors.EmptyDataError:
        raise ValueError(f"{path}: no data rows") from None
    except pd.errors.ParserError as e:
        raise ValueError(f"{path}: malformed CSV ({e})") from e
    except OSError as e:
        raise OSError(f"cannot read {path}: {e.strerror or e}") from e

    frame.columns = [str(c).strip() for c in frame.columns]
    if frame.empty:
        raise ValueError(f"{path}: no data rows")
    columns = set(frame.columns)
    count_col = "counts" if "counts" in columns else "intensity" if "intensity" in columns else None
    if "delta_omega_cm1" not in columns or "label" not in columns or count_col is None:
        raise ValueError(f"{path}: expected columns delta_omega_cm1, counts, label (got {sorted(columns)})")

    labels = frame["label"].fillna("").astype(str).str.strip()
    if restrict_labels:
        unknown = ~labels.isin(MEASURED_LABELS)
        if unknown.any():
            row = int(np.flatnonzero(unknown.to_numpy())[0]) + 1
            raise ValueError(f"{path}: row {row}: label '{labels.iloc[row - 1]}' not in {list(MEASURED_LABELS)}")
    x = _numeric(frame, "delta_omega_cm1", path)
    counts = _numeric(frame, count_col, path)
    accidental = _numeric(frame, "accidental", path, allow_blank=True) if "accidental" in columns else None

    out: Dict[str, Dict[str, SpectrumSeries]] = {}
    for label in labels.unique():
        rows = (labels == label).to_numpy()
        xs = tuple(float(v) for v in x[rows])
        if np.any(np.diff(xs) <= 0):
            raise ValueError(f"{path}: grid of '{label}' is not sorted/strictly increasing")
        entry = {"counts": SpectrumSeries(delta_omega=xs, intensity=tuple(float(v) for v in counts[rows]),
                                          label=label)}
        if accidental is not None and accidental[rows].notna().all():
            entry["accidental"] = SpectrumSeries(delta_omega=xs, intensity=tuple(float(v) for v in accidental[rows]),
                                                 label=f"{label}-accidental")
        out[label] = entry
    logger.info(f"Read {len(out)} spectra from {os.path.basename(path)}: {sorted(out)}")
    return out
