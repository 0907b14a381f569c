import math
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .fit import FIT_LABELS, FitOptions
from .spectra import MEASURED_LABELS
from .spectral import (DIAMOND_GAMMA, DIAMOND_OMEGA_C, DIAMOND_OMEGA_PH, DIAMOND_W_SPEC, SpectralParams,
                       from_spectroscopic)
from .tensor import TensorSet, TensorUncertainty, get_preset, load_tensor_file, tensor_from_dict


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridDefaults(_Strict):
    shift_min: float = 850.0
    shift_max: float = 1500.0
    shift_step: float = Field(1.0, gt=0)
    theta_step_deg: float = Field(0.5, gt=0, le=45)
    w_points: int = Field(200, ge=2)
    w_min_gamma: float = Field(0.1, gt=0)
    w_max_gamma: float = Field(190.0, gt=0)

    @model_validator(mode="after")
    def _check(self):
        if self.shift_max < self.shift_min:
            raise ValueError("shift_max must not be below shift_min")
        if self.w_max_gamma <= self.w_min_gamma:
            raise ValueError("w_max_gamma must exceed w_min_gamma")
        return self


class Settings(_Strict):
    """Global settings from config.yaml plus environment overrides."""
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    log_format: Literal["json", "text"] = "text"
    log_file: Optional[str] = None
    threads: int = Field(4, ge=1)
    hatch_factor: float = Field(1.0, gt=0)
    f_min_level: float = Field(2.01, gt=2.0)
    grid: GridDefaults = Field(default_factory=GridDefaults)


class SpectralInput(_Strict):
    """Spectroscopic inputs (cm^-1). Without a width W/2pi = 42 cm^-1 is used."""
    omega_c: float = DIAMOND_OMEGA_C
    omega_ph: float = DIAMOND_OMEGA_PH
    gamma: float = DIAMOND_GAMMA
    fwhm: Optional[float] = None
    w_spec: Optional[float] = None
    w_angular: Optional[float] = None

    @model_validator(mode="after")
    def _one_width(self):
        given = [n for n in ("fwhm", "w_spec", "w_angular") if getattr(self, n) is not None]
        if len(given) > 1:
            raise ValueError(f"give only one of fwhm, w_spec, w_angular (got {given})")
        return self

    def to_params(self) -> SpectralParams:
        widths = {n: getattr(self, n) for n in ("fwhm", "w_spec", "w_angular") if getattr(self, n) is not None}
        if not widths:
            widths = {"w_spec": DIAMOND_W_SPEC}
        return from_spectroscopic(self.omega_c, self.omega_ph, self.gamma, **widths)


class TensorInput(_Strict):
    """Either a preset name or explicit complex values ([re, im], number or string)."""
    preset: Optional[str] = None
    file: Optional[str] = None
    aE_xxxx: Optional[Any] = None
    rE_xyyx: Optional[Any] = None
    rE_sum: Optional[Any] = None
    rR_xxxx: Optional[Any] = None
    rR_xyyx: Optional[Any] = None
    rR_sum: Optional[Any] = None

    def explicit(self) -> Dict[str, Any]:
        return {n: getattr(self, n) for n in TensorSet.model_fields if getattr(self, n) is not None}

    @model_validator(mode="after")
    def _one_source(self):
        sources = [bool(self.preset), bool(self.file), bool(self.explicit())]
        if sum(sources) > 1:
            raise ValueError("give a preset, a tensor file or explicit values, not several")
        return self

    @property
    def label(self) -> str:
        if self.file:
            return self.file
        if self.explicit():
            return "custom"
        return self.preset or "table1"

    def to_tensor(self) -> TensorSet:
        if self.file:
            return load_tensor_file(self.file)
        explicit = self.explicit()
        if explicit:
            return tensor_from_dict(explicit)
        return tensor_from_dict({"preset": self.preset or "table1"})

    def uncertainty(self) -> Optional[TensorUncertainty]:
        """Quoted one-sigma uncertainties when the source is a measured preset."""
        if self.file or self.explicit():
            return None
        return get_preset(self.preset or "table1", with_uncertainties=True)[1]


class StateConfig(_Strict):
    theta_deg: float = 0.0
    shift: float = Field(900.0, gt=0)


AnalyzerInput = Union[float, Tuple[float, float]]


class BellConfig(StateConfig):
    # (a, a', b, b') in degrees, each an angle or [angle, ellipticity]
    angles: Optional[Tuple[AnalyzerInput, AnalyzerInput, AnalyzerInput, AnalyzerInput]] = None


class SpectrumConfig(_Strict):
    labels: List[str] = Field(default_factory=lambda: list(FIT_LABELS))
    shift_min: Optional[float] = None
    shift_max: Optional[float] = None
    shift_step: Optional[float] = Field(None, gt=0)
    output: str = "spectrum.csv"


class G2Config(_Strict):
    correlated: Optional[str] = None
    accidental: Optional[str] = None
    label: str = "HH0"
    amplitude: float = Field(1000.0, ge=0)
    baseline: float = Field(1000.0, ge=0)
    output: str = "g2.csv"

    @field_validator("label")
    @classmethod
    def _known_label(cls, v: str) -> str:
        if v not in MEASURED_LABELS:
            raise ValueError(f"label must be one of {list(MEASURED_LABELS)}")
        return v


class FitConfig(_Strict):
    data: Optional[str] = None
    synthetic: bool = False
    labels: List[str] = Field(default_factory=lambda: list(FIT_LABELS))
    noise: float = Field(0.0, ge=0)
    seed: Optional[int] = None
    freeze_yR: Optional[float] = None
    yR_bounds: Optional[Tuple[float, float]] = None
    init: Dict[str, float] = Field(default_factory=dict)
    options: FitOptions = Field(default_factory=FitOptions)
    output: str = "fit.json"

    @model_validator(mode="after")
    def _one_source(self):
        if bool(self.data) == bool(self.synthetic):
            raise ValueError("fit needs exactly one of data (CSV path) or synthetic")
        unknown = [label for label in self.labels if label not in MEASURED_LABELS]
        if unknown:
            raise ValueError(f"unknown configuration labels {unknown}")
        return self


class MapConfig(_Strict):
    axis: Literal["theta", "W"] = "theta"
    theta_deg: float = Field(0.0, ge=0, le=45)
    shift_min: Optional[float] = None
    shift_max: Optional[float] = None
    shift_step: Optional[float] = Field(None, gt=0)
    theta_step_deg: Optional[float] = Field(None, gt=0, le=45)
    w_points: Optional[int] = Field(None, ge=2)
    w_min_gamma: Optional[float] = Field(None, gt=0)
    w_max_gamma: Optional[float] = Field(None, gt=0)
    hatch_factor: Optional[float] = Field(None, gt=0)
    f_min_level: Optional[float] = Field(None, gt=2.0)
    formats: List[Literal["csv", "json", "svg"]] = Field(default_factory=lambda: ["csv", "svg"])
    output: str = "map"


class RunConfig(_Strict):
    """Per-run configuration; file values sit under command-line flags."""
    spectral: SpectralInput = Field(default_factory=SpectralInput)
    tensor: TensorInput = Field(default_factory=TensorInput)
    state: StateConfig = Field(default_factory=StateConfig)
    bell: BellConfig = Field(default_factory=BellConfig)
    spectrum: SpectrumConfig = Field(default_factory=SpectrumConfig)
    g2: G2Config = Field(default_factory=G2Config)
    fit: Optional[FitConfig] = None
    map: MapConfig = Field(default_factory=MapConfig)

    @field_validator("state", "bell")
    @classmethod
    def _finite_angle(cls, v):
        if not math.isfinite(v.theta_deg):
            raise ValueError("theta_deg must be finite")
        return v
