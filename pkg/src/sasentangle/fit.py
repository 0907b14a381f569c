"""
Least-squares extraction of Y factors from coincidence spectra, and from
them the tensor ratios.

Model per configuration: I(delta) = |yE + yR f^R(delta)|^2. Configurations
in which the Raman Y factor vanishes (VV0, HH45, VH) are flat and only fix
|yE|. Resonant ones (HH0, VV45) fix a complex yE relative to the shared real
yR. Phase gauge: yR >= 0 and flat yE real positive.
"""

import logging
import math
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import optimize

from .spectra import MEASURED_LABELS, SpectrumSeries, parse_label, predict_spectrum
from .spectral import SpectralParams, TWO_PI, f_R, symmetric_pair
from .tensor import TensorSet, TensorUncertainty, YMeasurements, invert_y

logger = logging.getLogger(__name__)

RESONANT_LABELS = ("HH0", "VV45")
FIT_LABELS = ("VV0", "HH0", "VV45", "HH45")
# stationarity at the optimum: ||J^T r|| <= GRADIENT_TOL ||r||
GRADIENT_TOL = 1e-8
ROUNDOFF_FACTOR = 16.0


class FitError(RuntimeError):
    """Fit cannot be set up or its result is not usable."""


class FitOptions(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    ftol: float = Field(1e-14, gt=0)
    xtol: float = Field(1e-14, gt=0)
    gtol: float = Field(1e-14, gt=0)
    max_nfev: int = Field(2000, ge=1)
    polish_steps: int = Field(50, ge=0)


class FitProblem(BaseModel):
    """
    Observed spectra keyed by configuration label, with the spectral
    parameters held fixed.

    freeze_yR fixes the Raman Y factor instead of fitting it; freezing it at
    zero turns every configuration into a flat one. yR_bounds switches the
    optimizer to a bounded trust-region method.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    observations: Dict[str, SpectrumSeries]
    sp: SpectralParams
    resonant_labels: Tuple[str, ...] = RESONANT_LABELS
    freeze_yR: Optional[float] = None
    yR_bounds: Optional[Tuple[float, float]] = None

    @model_validator(mode="after")
    def _check(self):
        if not self.observations:
            raise ValueError("no observations to fit")
        for label, series in self.observations.items():
            if label not in MEASURED_LABELS:
                raise ValueError(f"unsupported configuration '{label}', expected one of {list(MEASURED_LABELS)}")
            upper = self.sp.omega_c / TWO_PI
            if series.delta_omega[0] <= 0 or series.delta_omega[-1] >= upper:
                raise ValueError(f"grid of '{label}' leaves the model range (0, {upper:g}) cm^-1")
        if self.yR_free and not self.resonant:
            raise ValueError(f"yR is free but no resonant configuration ({', '.join(self.resonant_labels)}) is present")
        if self.yR_bounds is not None and not self.yR_bounds[0] < self.yR_bounds[1]:
            raise ValueError("yR_bounds must be (low, high) with low < high")
        return self

    @property
    def yR_free(self) -> bool:
        return self.freeze_yR is None

    @property
    def resonant(self) -> List[str]:
        if self.freeze_yR == 0.0:
            return []
        return [label for label in self.observations if label in self.resonant_labels]

    @property
    def flat(self) -> List[str]:
        resonant = set(self.resonant)
        return [label for label in self.observations if label not in resonant]

    @property
    def parameter_names(self) -> List[str]:
        names = [f"yE_{label}" for label in self.flat]
        for label in self.resonant:
            names += [f"yE_{label}.re", f"yE_{label}.im"]
        if self.yR_free:
            names.append("yR")
        return names

    @property
    def n_points(self) -> int:
        return sum(len(s.delta_omega) for s in self.observations.values())


class FitResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    parameter_names: List[str]
    parameters: List[float]
    covariance: List[List[float]]
    yE: Dict[str, complex]
    yE_sigma: Dict[str, complex]
    yR: float
    yR_sigma: float
    yR_free: bool
    resonant_labels: List[str]
    initial_residual_norm: float
    residual_norm: float
    gradient_norm: float
    jacobian_norm: float
    n_points: int
    dof: int
    iterations: int
    converged: bool
    status: int
    message: str

    def ratio(self, label: str, reference: str = "VV0") -> complex:
        """yE of one configuration over yE of the reference configuration."""
        return self.yE[label] / self.yE[reference]

    def as_dict(self) -> dict:
        """JSON-ready form; complex values as [re, im], undefined covariance entries as null."""
        data = self.model_dump()
        data["covariance"] = [[v if math.isfinite(v) else None for v in row] for row in self.covariance]
        for key in ("yR_sigma", "gradient_norm"):
            if not math.isfinite(data[key]):
                data[key] = None
        data["yE"] = {k: [v.real, v.imag] for k, v in self.yE.items()}
        data["yE_sigma"] = {k: [v.real, v.imag] for k, v in self.yE_sigma.items()}
        return data


class _Model:
    """Residuals and analytic Jacobian for a FitProblem."""

    def __init__(self, problem: FitProblem):
        self.problem = problem
        self.flat = problem.flat
        self.resonant = problem.resonant
        self.n_flat = len(self.flat)
        self.n_par = len(problem.parameter_names)
        self.observed = []
        self.kernels = {}
        for label in self.flat + self.resonant:
            self.observed.append(problem.observations[label].y)
        for label in self.resonant:
            series = problem.observations[label]
            self.kernels[label] = np.array([f_R(symmetric_pair(x, problem.sp), problem.sp) for x in series.delta_omega])
        self.y_obs = np.concatenate(self.observed)

    def unpack(self, p: np.ndarray) -> Tuple[Dict[str, complex], float]:
        yE = {label: complex(p[i], 0.0) for i, label in enumerate(self.flat)}
        for k, label in enumerate(self.resonant):
            i = self.n_flat + 2 * k
            yE[label] = complex(p[i], p[i + 1])
        yR = float(p[-1]) if self.problem.yR_free else float(self.problem.freeze_yR or 0.0)
        return yE, yR

    def intensity(self, p: np.ndarray) -> np.ndarray:
        yE, yR = self.unpack(p)
        parts = [np.full(len(obs), abs(yE[label]) ** 2) for label, obs in zip(self.flat, self.observed)]
        for label in self.resonant:
            parts.append(np.abs(yE[label] + yR * self.kernels[label]) ** 2)
        return np.concatenate(parts)

    def residuals(self, p: np.ndarray) -> np.ndarray:
        return self.intensity(p) - self.y_obs

    def jacobian(self, p: np.ndarray) -> np.ndarray:
        yE, yR = self.unpack(p)
        J = np.zeros((len(self.y_obs), self.n_par))
        row = 0
        for i, (label, obs) in enumerate(zip(self.flat, self.observed)):
            J[row:row + len(obs), i] = 2.0 * yE[label].real
            row += len(obs)
        for k, label in enumerate(self.resonant):
            f = self.kernels[label]
            m = yE[label] + yR * f
            n = len(f)
            col = self.n_flat + 2 * k
            J[row:row + n, col] = 2.0 * m.real
            J[row:row + n, col + 1] = 2.0 * m.imag
            if self.problem.yR_free:
                J[row:row + n, -1] = 2.0 * (m.real * f.real + m.imag * f.imag)
            row += n
        return J

    def initial_guess(self) -> np.ndarray:
        """
        Flat configurations start at sqrt(mean I). Resonant ones use the
        linearization I = p + 2 q Re f + 2 s Im f + t |f|^2 with
        q + i s = yR yE and t = yR^2, exact for noiseless data.
        """
        p0 = [math.sqrt(max(float(np.mean(obs)), 0.0)) for obs in self.observed[:self.n_flat]]
        if not self.resonant:
            return np.array(p0 + ([1.0] if self.problem.yR_free else []))

        n_res = len(self.resonant)
        obs_res = self.observed[self.n_flat:]
        if not self.problem.yR_free:
            for obs in obs_res:
                p0 += [math.sqrt(max(float(np.mean(obs)), 0.0)), 0.0]
            return np.array(p0)

        blocks, rhs = [], []
        for k, (label, obs) in enumerate(zip(self.resonant, obs_res)):
            f = self.kernels[label]
            A = np.zeros((len(f), 3 * n_res + 1))
            A[:, 3 * k] = 1.0
            A[:, 3 * k + 1] = 2.0 * f.real
            A[:, 3 * k + 2] = 2.0 * f.imag
            A[:, -1] = np.abs(f) ** 2
            blocks.append(A)
            rhs.append(obs)
        sol, *_ = np.linalg.lstsq(np.vstack(blocks), np.concatenate(rhs), rcond=None)
        t = sol[-1]
        if t > 0:
            yR = math.sqrt(t)
            for k in range(n_res):
                p0 += [sol[3 * k + 1] / yR, sol[3 * k + 2] / yR]
        else:
            logger.debug("linearized start has no resonant term, starting from yR = 1")
            yR = 1.0
            for obs in obs_res:
                p0 += [math.sqrt(max(float(np.mean(obs)), 0.0)), 0.0]
        return np.array(p0 + [yR])


def _stationarity_tol(model: _Model, r: np.ndarray, J: np.ndarray) -> float:
    # 1e-8 ||r||, floored at the roundoff level of J^T r for zero-residual data
    floor = ROUNDOFF_FACTOR * np.finfo(float).eps * float(np.linalg.norm(J)) * float(np.linalg.norm(model.y_obs))
    return max(GRADIENT_TOL * float(np.linalg.norm(r)), floor)


def _polish(model: _Model, x: np.ndarray, steps: int, free: np.ndarray,
            bounds: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> Tuple[np.ndarray, int]:
    """
    Gauss-Newton steps on the free parameters after the optimizer stops.

    Near the optimum the cost no longer resolves progress, so a step is also
    accepted when it lowers the gradient norm without raising the cost
    beyond roundoff. Stops once neither improves or the gradient meets the
    stationarity bound.
    """
    r = model.residuals(x)
    J = model.jacobian(x)
    cost = float(r @ r)
    grad = float(np.linalg.norm(J[:, free].T @ r))
    taken = 0
    for _ in range(steps):
        if grad <= 1e-3 * _stationarity_tol(model, r, J):
            break
        step = np.zeros_like(x)
        step[free], *_ = np.linalg.lstsq(J[:, free], -r, rcond=None)
        trial = x + step
        if bounds is not None and (np.any(trial < bounds[0]) or np.any(trial > bounds[1])):
            break
        r_trial = model.residuals(trial)
        J_trial = model.jacobian(trial)
        cost_trial = float(r_trial @ r_trial)
        grad_trial = float(np.linalg.norm(J_trial[:, free].T @ r_trial))
        lower_cost = cost_trial < cost
        flatter = grad_trial < grad and cost_trial <= cost * (1.0 + 1e-10)
        if not (lower_cost or flatter):
            break
        x, r, J, cost, grad = trial, r_trial, J_trial, cost_trial, grad_trial
        taken += 1
    return x, taken


def _apply_gauge(model: _Model, x: np.ndarray) -> np.ndarray:
    x = x.copy()
    x[:model.n_flat] = np.abs(x[:model.n_flat])
    if model.problem.yR_free and x[-1] < 0:
        x[model.n_flat:] = -x[model.n_flat:]
    return x


def fit_y(problem: FitProblem, init: Optional[Dict[str, float]] = None,
          options: Optional[FitOptions] = None) -> FitResult:
    """
    Fit Y factors to the observed spectra by unweighted least squares.

    Args:
        problem: Observations and fixed spectral parameters
        init: Optional starting values keyed by parameter name
            (see FitProblem.parameter_names); missing ones use the
            linearized start
        options: Optimizer tolerances and budget

    Returns:
        FitResult: estimates, covariance, residual norm and convergence flag

    Raises:
        FitError: too few data points or a rank-deficient Jacobian
    """
    options = options or FitOptions()
    model = _Model(problem)
    names = problem.parameter_names
    if problem.n_points < len(names):
        raise FitError(f"{problem.n_points} data points cannot determine {len(names)} parameters")

    x0 = model.initial_guess()
    for name, value in (init or {}).items():
        if name not in names:
            raise ValueError(f"unknown parameter '{name}' in init, expected one of {names}")
        if not math.isfinite(value):
            raise ValueError(f"initial value of '{name}' must be finite")
        x0[names.index(name)] = value
    r0 = model.residuals(x0)
    initial_norm = float(np.linalg.norm(r0))

    kwargs = dict(jac=lambda p: model.jacobian(p), ftol=options.ftol, xtol=options.xtol,
                  gtol=options.gtol, max_nfev=options.max_nfev, x_scale="jac")
    free = np.ones(len(names), dtype=bool)
    if problem.yR_bounds is not None and problem.yR_free:
        lower = np.full(len(names), -np.inf)
        upper = np.full(len(names), np.inf)
        lower[-1], upper[-1] = problem.yR_bounds
        x0[-1] = min(max(x0[-1], lower[-1]), upper[-1])
        result = optimize.least_squares(model.residuals, x0, bounds=(lower, upper), method="trf", **kwargs)
        yR_fit = result.x[-1]
        if min(yR_fit - lower[-1], upper[-1] - yR_fit) <= 1e-10 * max(abs(yR_fit), 1.0):
            # yR on an active bound: stationarity holds for the other parameters only
            free[-1] = False
        x, polish = _polish(model, result.x, options.polish_steps, free, bounds=(lower, upper))
    else:
        result = optimize.least_squares(model.residuals, x0, method="lm", **kwargs)
        x, polish = _polish(model, result.x, options.polish_steps, free)
    logger.debug(f"least_squares status {result.status} after {result.nfev} evaluations: {result.message}")

    x = _apply_gauge(model, x)
    r = model.residuals(x)
    J = model.jacobian(x)
    if np.linalg.matrix_rank(J) < len(names):
        raise FitError(f"rank-deficient Jacobian: parameters {names} are not all identifiable from the data")

    ssr = float(r @ r)
    dof = problem.n_points - len(names)
    scale = ssr / dof if dof > 0 else float("nan")
    cov = np.linalg.inv(J.T @ J) * scale
    sigma = np.sqrt(np.clip(np.diag(cov), 0.0, None))

    yE, yR = model.unpack(x)
    yE_sigma = {label: complex(sigma[i], 0.0) for i, label in enumerate(model.flat)}
    for k, label in enumerate(model.resonant):
        i = model.n_flat + 2 * k
        yE_sigma[label] = complex(sigma[i], sigma[i + 1])

    gradient = float(np.linalg.norm(J[:, free].T @ r))
    tol = _stationarity_tol(model, r, J)
    converged = result.status > 0 and gradient <= tol
    message = str(result.message)
    if result.status > 0 and not converged:
        message = f"{message}; gradient norm {gradient:.3e} above the stationarity bound {tol:.3e}"
    fit = FitResult(
        parameter_names=names, parameters=[float(v) for v in x],
        covariance=[[float(v) for v in row] for row in cov],
        yE=yE, yE_sigma=yE_sigma, yR=yR, yR_sigma=float(sigma[-1]) if problem.yR_free else 0.0,
        yR_free=problem.yR_free, resonant_labels=list(model.resonant),
        initial_residual_norm=initial_norm, residual_norm=math.sqrt(ssr),
        gradient_norm=gradient, jacobian_norm=float(np.linalg.norm(J)), n_points=problem.n_points, dof=dof,
        iterations=int(result.nfev) + polish, converged=converged,
        status=int(result.status), message=message,
    )
    if converged:
        logger.info(f"Fit converged: {len(names)} parameters, residual norm {fit.residual_norm:.6g}, yR {yR:.6g}")
    else:
        logger.warning(f"Fit did not converge ({message}); keeping best parameters so far")
    return fit


def _measurements(yE: Dict[str, complex], yR: float, resonant: List[str]) -> YMeasurements:
    if "VV0" not in yE:
        raise FitError("configuration VV0 is required to fix the tensor normalization")
    values = {"yE_VV_0": yE["VV0"]}
    if "HH0" in yE:
        values["yE_HH_0"] = yE["HH0"]
    if "VV45" in yE:
        values["yE_VV_45"] = yE["VV45"]
    elif "HH45" in yE:
        # phase of a flat configuration is lost, so it only stands in for VV45
        values["yE_HH_45"] = yE["HH45"]
    for label, key in (("HH0", "yR_HH_0"), ("VV45", "yR_VV_45")):
        if label in resonant:
            values[key] = complex(yR, 0.0)
    return YMeasurements(**values)


def _tensor_vector(ts: TensorSet) -> np.ndarray:
    return np.array([part for _, v in ts for part in (v.real, v.imag)])


def tensor_from_fit(result: FitResult) -> Tuple[TensorSet, TensorUncertainty]:
    """
    Tensor ratios from fitted Y factors, with one-sigma uncertainties
    propagated linearly through invert_y (central-difference Jacobian over
    the full parameter covariance).

    Raises:
        FitError: if the fit did not converge or a configuration needed for
            the inversion is missing
    """
    if not result.converged:
        raise FitError(f"tensor ratios need a converged fit ({result.message})")
    if "HH0" not in result.yE or not ({"VV45", "HH45"} & set(result.yE)):
        raise FitError("tensor inversion needs VV0, HH0 and a 45 degree configuration (VV45 or HH45)")
    if not result.resonant_labels:
        raise FitError("tensor inversion needs at least one resonant configuration (HH0 or VV45)")

    names = result.parameter_names
    resonant = result.resonant_labels

    def evaluate(p: np.ndarray) -> TensorSet:
        yE, yR = {}, result.yR
        for name, value in zip(names, p):
            if name == "yR":
                yR = float(value)
        for label in result.yE:
            if f"yE_{label}" in names:
                yE[label] = complex(p[names.index(f"yE_{label}")], 0.0)
            else:
                yE[label] = complex(p[names.index(f"yE_{label}.re")], p[names.index(f"yE_{label}.im")])
        try:
            return invert_y(_measurements(yE, yR, resonant))
        except ValueError as e:
            raise FitError(f"tensor inversion failed: {e}") from e

    p = np.array(result.parameters)
    ts = evaluate(p)

    G = np.zeros((len(_tensor_vector(ts)), len(p)))
    for i in range(len(p)):
        h = 1e-6 * max(abs(p[i]), 1.0)
        up, down = p.copy(), p.copy()
        up[i] += h
        down[i] -= h
        G[:, i] = (_tensor_vector(evaluate(up)) - _tensor_vector(evaluate(down))) / (2.0 * h)
    cov = np.array(result.covariance)
    if not np.all(np.isfinite(cov)):
        sigma = np.full(G.shape[0], np.nan)
    else:
        sigma = np.sqrt(np.clip(np.diag(G @ cov @ G.T), 0.0, None))
    fields = list(TensorSet.model_fields)
    uncertainty = TensorUncertainty(**{name: complex(sigma[2 * i], sigma[2 * i + 1]) for i, name in enumerate(fields)})
    return ts, uncertainty


def synthetic_observations(ts: TensorSet, sp: SpectralParams, labels=FIT_LABELS, grid=None,
                           noise: float = 0.0, seed: Optional[int] = None) -> Dict[str, SpectrumSeries]:
    """
    Model spectra for the given configuration labels, optionally with
    seeded multiplicative Gaussian noise of relative size `noise`.
    """
    if noise < 0:
        raise ValueError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    out = {}
    for label in labels:
        pol, theta_deg = parse_label(label)
        series = predict_spectrum(ts, math.radians(theta_deg), pol, sp, grid)
        intensity = series.y
        if noise > 0:
            intensity = np.clip(intensity * (1.0 + noise * rng.standard_normal(len(intensity))), 0.0, None)
        out[label] = SpectrumSeries(delta_omega=series.delta_omega, intensity=tuple(float(v) for v in intensity), label=label)
    return out
