"""
Entanglement maps E(delta_omega, theta) and E(delta_omega, W) with Gisin F,
pair rate and the overlay masks, plus CSV / JSON / SVG export.

Rows (one vertical-axis value each) are the unit of work; every row writes
only its own slice of preallocated arrays, so the result does not depend on
the thread count or completion order.
"""

import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import __version__
from .spectral import SpectralParams, TWO_PI, f_E, f_R, symmetric_pair
from .state import (DegenerateStateError, TwoPhotonState, entanglement_entropy, gisin_F,
                    state_from_factors)
from .tensor import TensorSet, y_factors
from .utils import dump_json, write_text

logger = logging.getLogger(__name__)

MAXIMAL_LEVEL = 0.999
DEFAULT_F_MIN_LEVEL = 2.01
EXPERIMENT_SHIFT = 900.0
VERTICAL_NAMES = {"theta": "theta_deg", "W": "W_over_gamma"}
MASKS = ("maximal", "hatched", "minima", "degenerate")


def default_theta_grid(step_deg: float = 0.5) -> Tuple[float, ...]:
    n = int(round(45.0 / step_deg))
    return tuple(k * step_deg for k in range(n + 1))


def default_w_grid(points: int = 200, min_gamma: float = 0.1, max_gamma: float = 190.0) -> Tuple[float, ...]:
    """Log-spaced widths in units of gamma."""
    return tuple(float(v) for v in np.geomspace(min_gamma, max_gamma, points))


class SweepSpec(BaseModel):
    """
    Horizontal axis: spectroscopic Raman shifts (cm^-1) under symmetric
    detection. Vertical axis: crystal angle in degrees ('theta') or laser
    width in units of gamma ('W'). theta_deg is the fixed angle of a W sweep;
    sp.W is the fixed width of a theta sweep.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    axis: Literal["theta", "W"]
    shifts: Tuple[float, ...]
    vertical: Tuple[float, ...]
    ts: TensorSet
    sp: SpectralParams
    theta_deg: float = 0.0
    preset: Optional[str] = None
    hatch_factor: float = Field(1.0, gt=0)
    f_min_level: float = Field(DEFAULT_F_MIN_LEVEL, gt=2.0)

    @model_validator(mode="after")
    def _check(self):
        for name in ("shifts", "vertical"):
            values = getattr(self, name)
            if not values:
                raise ValueError(f"{name} grid is empty")
            if any(not math.isfinite(v) for v in values) or any(b <= a for a, b in zip(values, values[1:])):
                raise ValueError(f"{name} grid must be finite and strictly increasing")
        upper = self.sp.omega_c / TWO_PI
        if self.shifts[0] <= 0 or self.shifts[-1] >= upper:
            raise ValueError(f"shifts must lie in (0, {upper:g}) cm^-1")
        if self.axis == "theta" and (self.vertical[0] < 0 or self.vertical[-1] > 45):
            raise ValueError("theta grid must lie in [0, 45] degrees")
        if self.axis == "W" and self.vertical[0] <= 0:
            raise ValueError("W grid must be positive")
        return self

    @property
    def shape(self) -> Tuple[int, int]:
        return len(self.vertical), len(self.shifts)

    @property
    def vertical_name(self) -> str:
        return VERTICAL_NAMES[self.axis]

    def row_params(self, i: int) -> Tuple[float, SpectralParams]:
        """(theta in radians, spectral parameters) of row i."""
        if self.axis == "theta":
            return math.radians(self.vertical[i]), self.sp
        return math.radians(self.theta_deg), self.sp.with_width(self.vertical[i] * self.sp.gamma)

    def metadata(self) -> Dict[str, object]:
        sp = self.sp
        return {
            "tool": f"sasentangle {__version__}",
            "preset": self.preset or "custom",
            "axis": self.axis,
            "omega_c_cm1": sp.omega_c / TWO_PI,
            "omega_ph_cm1": sp.omega_ph / TWO_PI,
            "gamma_cm1": sp.gamma,
            "W_angular_cm1": sp.W,
            "fwhm_cm1": sp.fwhm,
            "theta_deg": self.theta_deg,
            "hatch_factor": self.hatch_factor,
            "f_min_level": self.f_min_level,
            "shifts": f"{self.shifts[0]:g}..{self.shifts[-1]:g} ({len(self.shifts)} points)",
            "vertical": f"{self.vertical_name} {self.vertical[0]:g}..{self.vertical[-1]:g} ({len(self.vertical)} points)",
        }


class EntanglementGrid(BaseModel):
    """Sweep output; all matrices have shape (len(vertical), len(shifts))."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    spec: SweepSpec
    E: np.ndarray
    F: np.ndarray
    rate: np.ndarray
    maximal: np.ndarray
    hatched: np.ndarray
    minima: np.ndarray
    degenerate: np.ndarray

    @model_validator(mode="after")
    def _check_shapes(self):
        for name in ("E", "F", "rate") + MASKS:
            if getattr(self, name).shape != self.spec.shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {self.spec.shape}")
        return self

    def rows_with_maximal(self) -> List[float]:
        """Vertical-axis values whose row contains an E > 0.999 cell."""
        return [v for v, row in zip(self.spec.vertical, self.maximal) if row.any()]

    def maximal_shifts(self, row: int) -> List[float]:
        return [x for x, hit in zip(self.spec.shifts, self.maximal[row]) if hit]

    def summary(self) -> Dict[str, object]:
        i, j = np.unravel_index(int(np.argmax(self.E)), self.E.shape)
        rows = self.rows_with_maximal()
        return {
            "cells": int(self.E.size),
            "max_E": float(self.E[i, j]),
            "max_E_at": {"delta_omega_cm1": self.spec.shifts[j], self.spec.vertical_name: self.spec.vertical[i]},
            "maximal_cells": int(self.maximal.sum()),
            "largest_" + self.spec.vertical_name + "_with_maximal": rows[-1] if rows else None,
            "hatched_cells": int(self.hatched.sum()),
            "degenerate_cells": int(self.degenerate.sum()),
        }


def hatched_mask(spec: SweepSpec, sp: Optional[SpectralParams] = None) -> np.ndarray:
    """
    Cells within hatch_factor * W/2pi of the phonon line, where real-phonon
    pairs dominate and the pure-state description is unreliable. In a W
    sweep the half-width follows each row's W.
    """
    sp = sp or spec.sp
    shifts = np.asarray(spec.shifts)
    distance = np.abs(shifts - sp.omega_ph / TWO_PI)
    mask = np.zeros(spec.shape, dtype=bool)
    for i in range(spec.shape[0]):
        W = sp.W if spec.axis == "theta" else spec.vertical[i] * sp.gamma
        mask[i] = distance <= spec.hatch_factor * W / TWO_PI
    return mask


def _evaluate_row(spec: SweepSpec, i: int, out: Dict[str, np.ndarray],
                  kernels: Optional[List[Tuple[complex, complex]]]) -> int:
    theta, sp = spec.row_params(i)
    y = y_factors(spec.ts, theta)
    degenerate = 0
    for j, shift in enumerate(spec.shifts):
        if kernels is None:
            fp = symmetric_pair(shift, sp)
            fE, fR = f_E(fp, sp), f_R(fp, sp)
        else:
            fE, fR = kernels[j]
        vv, hh, vh = state_from_factors(y, fE, fR)
        out["rate"][i, j] = abs(vv) ** 2 + abs(hh) ** 2 + 2.0 * abs(vh) ** 2
        try:
            state = TwoPhotonState.from_amplitudes(vv, hh, vh, vh)
        except DegenerateStateError:
            out["degenerate"][i, j] = True
            out["E"][i, j], out["F"][i, j] = 0.0, 2.0
            degenerate += 1
            continue
        out["E"][i, j] = entanglement_entropy(state)
        out["F"][i, j] = gisin_F(state)
    logger.debug(f"row {i} ({spec.vertical_name}={spec.vertical[i]:g}) done")
    return degenerate


def sweep(spec: SweepSpec, threads: int = 1) -> EntanglementGrid:
    """
    Evaluate E, F and the pair rate on every cell of the sweep.

    Degenerate cells (no pair emitted) get E = 0, F = 2 and are flagged in
    the degenerate mask instead of raising.

    Args:
        spec: Sweep definition
        threads: Worker threads; rows are distributed across them

    Returns:
        EntanglementGrid: identical for any thread count
    """
    if threads < 1:
        raise ValueError("threads must be a positive integer")
    shape = spec.shape
    out = {
        "E": np.zeros(shape), "F": np.zeros(shape), "rate": np.zeros(shape),
        "degenerate": np.zeros(shape, dtype=bool),
    }
    kernels = None
    if spec.axis == "theta":
        # f^E and f^R do not depend on theta
        kernels = []
        for shift in spec.shifts:
            fp = symmetric_pair(shift, spec.sp)
            kernels.append((f_E(fp, spec.sp), f_R(fp, spec.sp)))

    logger.info(f"Sweeping {shape[0]}x{shape[1]} cells over {spec.axis} with {threads} thread(s)")
    rows = range(shape[0])
    if threads == 1:
        degenerate = [_evaluate_row(spec, i, out, kernels) for i in rows]
    else:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            degenerate = list(executor.map(lambda i: _evaluate_row(spec, i, out, kernels), rows))
    if sum(degenerate):
        logger.warning(f"{sum(degenerate)} degenerate cells (all amplitudes vanish) marked in the grid")

    grid = EntanglementGrid(
        spec=spec, E=out["E"], F=out["F"], rate=out["rate"],
        maximal=out["E"] > MAXIMAL_LEVEL, hatched=hatched_mask(spec),
        minima=out["F"] < spec.f_min_level, degenerate=out["degenerate"],
    )
    logger.info(f"Sweep finished: max E {grid.E.max():.6f}, {int(grid.maximal.sum())} cells with E > {MAXIMAL_LEVEL}")
    return grid


def grid_to_csv(grid: EntanglementGrid) -> str:
    spec = grid.spec
    ny, nx = spec.shape
    frame = pd.DataFrame({
        "delta_omega_cm1": np.tile(np.asarray(spec.shifts, dtype=float), ny),
        spec.vertical_name: np.repeat(np.asarray(spec.vertical, dtype=float), nx),
        "E": grid.E.ravel(),
        "F": grid.F.ravel(),
        "pair_rate": grid.rate.ravel(),
        **{name: getattr(grid, name).ravel().astype(int) for name in MASKS},
    })
    header = "".join(f"# {key}: {value}\n" for key, value in spec.metadata().items())
    return header + frame.to_csv(index=False, lineterminator="\n")


def grid_to_json(grid: EntanglementGrid) -> str:
    spec = grid.spec
    data = {
        "metadata": spec.metadata(),
        "spec": {
            "axis": spec.axis, "theta_deg": spec.theta_deg, "preset": spec.preset,
            "hatch_factor": spec.hatch_factor, "f_min_level": spec.f_min_level,
            "tensor": spec.ts.as_dict(),
            "spectral": {"omega_c": spec.sp.omega_c, "W": spec.sp.W, "omega_ph": spec.sp.omega_ph,
                         "gamma": spec.sp.gamma},
        },
        "axes": {"delta_omega_cm1": list(spec.shifts), spec.vertical_name: list(spec.vertical)},
        "E": grid.E.tolist(),
        "F": grid.F.tolist(),
        "pair_rate": grid.rate.tolist(),
        "masks": {name: getattr(grid, name).astype(int).tolist() for name in MASKS},
    }
    return dump_json(data)


def load_grid(path: str) -> EntanglementGrid:
    """Rebuild an EntanglementGrid from its JSON export."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: invalid JSON ({e})") from e
    except OSError as e:
        raise OSError(f"cannot read {path}: {e.strerror or e}") from e
    try:
        s = data["spec"]
        axis = s["axis"]
        spec = SweepSpec(
            axis=axis, theta_deg=s["theta_deg"], preset=s["preset"],
            hatch_factor=s["hatch_factor"], f_min_level=s["f_min_level"],
            shifts=tuple(data["axes"]["delta_omega_cm1"]), vertical=tuple(data["axes"][VERTICAL_NAMES[axis]]),
            ts=TensorSet(**{k: complex(*v) for k, v in s["tensor"].items()}),
            sp=SpectralParams(**s["spectral"]),
        )
        arrays = {name: np.array(data[key], dtype=float) for name, key in (("E", "E"), ("F", "F"), ("rate", "pair_rate"))}
        masks = {name: np.array(data["masks"][name], dtype=bool) for name in MASKS}
    except (KeyError, TypeError) as e:
        raise ValueError(f"{path}: not an entanglement grid export ({e})") from e
    return EntanglementGrid(spec=spec, **arrays, **masks)


def grid_to_svg(grid: EntanglementGrid) -> str:
    """
    Filled E map with the maximal-entanglement regions in red, the hatched
    near-resonance band, blue F contours and the white F-minimum region.
    """
    import matplotlib
    from matplotlib.figure import Figure

    spec = grid.spec
    x = np.asarray(spec.shifts)
    y = np.asarray(spec.vertical)
    phonon = spec.sp.omega_ph / TWO_PI

    with matplotlib.rc_context({"svg.hashsalt": "sasentangle", "svg.fonttype": "none"}):
        fig = Figure(figsize=(7.0, 4.5))
        ax = fig.subplots()
        mesh = ax.pcolormesh(x, y, grid.E, shading="nearest", cmap="viridis", vmin=0.0, vmax=1.0)
        fig.colorbar(mesh, ax=ax, label="E")
        contoured = len(x) > 1 and len(y) > 1
        if contoured and grid.maximal.any() and not grid.maximal.all():
            ax.contourf(x, y, grid.maximal.astype(float), levels=[0.5, 1.5], colors=["red"])
        if contoured and grid.minima.any() and not grid.minima.all():
            ax.contourf(x, y, grid.minima.astype(float), levels=[0.5, 1.5], colors=["white"])
        if contoured and grid.hatched.any() and not grid.hatched.all():
            ax.contourf(x, y, grid.hatched.astype(float), levels=[0.5, 1.5], colors="none", hatches=["//"])
        if contoured and np.ptp(grid.F) > 0:
            ax.contour(x, y, grid.F, levels=np.linspace(2.1, 2.8, 8), colors="blue", linewidths=0.6)
        ax.axvline(phonon, color="black", linestyle="--", linewidth=0.8)
        if spec.axis == "theta":
            ax.plot([EXPERIMENT_SHIFT], [0.0], marker="*", markersize=12, color="yellow",
                    markeredgecolor="black", clip_on=False)
            ax.set_ylabel("theta (deg)")
        else:
            ax.set_yscale("log")
            ax.axhline(spec.sp.W / spec.sp.gamma, color="black", linestyle=":", linewidth=0.8)
            ax.set_ylabel("W / gamma")
        ax.set_xlabel("Raman shift (cm^-1)")
        ax.set_title(f"Entanglement map ({spec.preset or 'custom'} tensor, {spec.axis} sweep)")
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue().decode("utf-8")


def export_grid(grid: EntanglementGrid, fmt: str, path: str) -> None:
    """
    Write the grid as 'csv' (long form), 'json' (structured, reloadable
    with load_grid) or 'svg' (rendered map).
    """
    renderers = {"csv": grid_to_csv, "json": grid_to_json, "svg": grid_to_svg}
    if fmt not in renderers:
        raise ValueError(f"unknown export format '{fmt}', choose from {sorted(renderers)}")
    write_text(path, renderers[fmt](grid))
    logger.info(f"Wrote {fmt} grid to {path}")
