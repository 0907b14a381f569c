import argparse
import logging
import math
import os
import sys
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

# Handle imports for both direct execution and module execution
try:
    from . import __version__
    from .fit import FitError, FitProblem, fit_y, synthetic_observations, tensor_from_fit
    from .maps import SweepSpec, default_theta_grid, default_w_grid, export_grid, sweep
    from .models import FitConfig, RunConfig, Settings
    from .spectra import (accidental_model, default_grid, g2_curve, g2_to_csv, parse_label, predict_spectrum,
                          read_measured_csv, write_series_csv)
    from .spectral import QuadratureError, TWO_PI, symmetric_pair
    from .state import (Analyzer, DegenerateStateError, build_state, chsh_optimal_angles, chsh_value,
                        concurrence, entanglement_entropy, gisin_F, linear_entropy, pair_rate, schmidt)
    from .utils import complex_pair, dump_json, load_config_file, load_settings, setup_logging, write_text
except ImportError:
    current_dir = os.path.dirname(os.path.abspath(__file__))
    src_dir = os.path.dirname(current_dir)
    if src_dir not in sys.path:
        sys.path.insert(0, src_dir)

    from sasentangle import __version__
    from sasentangle.fit import FitError, FitProblem, fit_y, synthetic_observations, tensor_from_fit
    from sasentangle.maps import SweepSpec, default_theta_grid, default_w_grid, export_grid, sweep
    from sasentangle.models import FitConfig, RunConfig, Settings
    from sasentangle.spectra import (accidental_model, default_grid, g2_curve, g2_to_csv, parse_label,
                                     predict_spectrum, read_measured_csv, write_series_csv)
    from sasentangle.spectral import QuadratureError, TWO_PI, symmetric_pair
    from sasentangle.state import (Analyzer, DegenerateStateError, build_state, chsh_optimal_angles, chsh_value,
                                   concurrence, entanglement_entropy, gisin_F, linear_entropy, pair_rate, schmidt)
    from sasentangle.utils import complex_pair, dump_json, load_config_file, load_settings, setup_logging, write_text

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_USAGE = 2

DEFAULT_BELL_ANGLES = (0.0, 45.0, 22.5, 67.5)


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML run configuration; flags override its values")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    tensor = common.add_mutually_exclusive_group()
    tensor.add_argument("--preset", help="tensor preset: table1, fig1-fit, ideal-centrosymmetric")
    tensor.add_argument("--tensor-file", help="JSON tensor file with [re, im] pairs")
    common.add_argument("--omega-c", type=float, help="laser center (cm^-1)")
    common.add_argument("--omega-ph", type=float, help="phonon frequency (cm^-1)")
    common.add_argument("--gamma", type=float, help="phonon decay rate (cm^-1)")
    width = common.add_mutually_exclusive_group()
    width.add_argument("--fwhm", type=float, help="laser power-spectrum FWHM (cm^-1)")
    width.add_argument("--w-spec", type=float, help="laser width W/2pi (cm^-1)")
    width.add_argument("--w-angular", type=float, help="laser width W (angular cm^-1)")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="sasentangle",
                                     description="Polarization entanglement of Stokes/anti-Stokes photon pairs")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("state", parents=[common], help="two-photon state at one configuration")
    p.add_argument("--theta", type=float, help="crystal angle (deg)")
    p.add_argument("--shift", type=float, help="Raman shift (cm^-1)")
    p.add_argument("--json", action="store_true", help="print the report as JSON")

    p = sub.add_parser("bell", parents=[common], help="CHSH values at given and optimal analyzer settings")
    p.add_argument("--theta", type=float, help="crystal angle (deg)")
    p.add_argument("--shift", type=float, help="Raman shift (cm^-1)")
    p.add_argument("--angles", type=float, nargs=4, metavar=("A", "A2", "B", "B2"),
                   help="linear analyzer angles a, a', b, b' (deg)")
    p.add_argument("--json", action="store_true", help="print the report as JSON")

    p = sub.add_parser("spectrum", parents=[common], help="predicted coincidence spectra to CSV")
    p.add_argument("--labels", nargs="+", help="configurations such as VV0 HH0 VV45 HH45")
    _grid_flags(p)
    p.add_argument("--output", help="CSV path")

    p = sub.add_parser("g2", parents=[common], help="g2(0) curve from correlated and accidental counts")
    p.add_argument("--correlated", help="CSV of correlated counts (default: model spectrum)")
    p.add_argument("--accidental", help="CSV of accidental counts (default: accidental model)")
    p.add_argument("--label", help="configuration label to use")
    p.add_argument("--amplitude", type=float, help="accidental model peak amplitude (counts)")
    p.add_argument("--baseline", type=float, help="accidental model baseline (counts)")
    p.add_argument("--output", help="CSV path")

    p = sub.add_parser("fit", parents=[common], help="fit Y factors to spectra")
    source = p.add_mutually_exclusive_group()
    source.add_argument("--data", help="measured spectrum CSV")
    source.add_argument("--synthetic", action="store_true", default=None,
                        help="fit model spectra generated from the tensor preset")
    p.add_argument("--labels", nargs="+", help="configurations to fit")
    p.add_argument("--noise", type=float, help="relative multiplicative noise for --synthetic")
    p.add_argument("--seed", type=int, help="noise seed")
    p.add_argument("--freeze-yr", type=float, dest="freeze_yR", help="hold yR at this value")
    p.add_argument("--output", help="FitResult JSON path")

    p = sub.add_parser("map", parents=[common], help="entanglement map over shift and theta or W")
    p.add_argument("--axis", choices=["theta", "W"])
    p.add_argument("--theta", type=float, help="fixed crystal angle of a W sweep (deg)")
    _grid_flags(p)
    p.add_argument("--theta-step", type=float, help="theta step (deg)")
    p.add_argument("--w-points", type=int, help="number of W values")
    p.add_argument("--w-min", type=float, help="smallest W in units of gamma")
    p.add_argument("--w-max", type=float, help="largest W in units of gamma")
    p.add_argument("--hatch-factor", type=float, help="hatched half-width in units of W/2pi")
    p.add_argument("--f-min", type=float, help="F level of the minimum region")
    p.add_argument("--formats", nargs="+", choices=["csv", "json", "svg"])
    p.add_argument("--output", help="output path prefix")
    return parser


def _grid_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--shift-min", type=float, help="first Raman shift (cm^-1)")
    p.add_argument("--shift-max", type=float, help="last Raman shift (cm^-1)")
    p.add_argument("--shift-step", type=float, help="Raman shift step (cm^-1)")


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _flag_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Nested RunConfig fragment holding every flag the user actually gave."""
    given = {k: v for k, v in vars(args).items() if v is not None and v is not False}
    out: Dict[str, Any] = {}

    def put(section: str, key: str, flag: Optional[str] = None):
        flag = flag or key
        if flag in given:
            out.setdefault(section, {})[key] = given[flag]

    if "preset" in given:
        out["tensor"] = {"preset": given["preset"]}
    if "tensor_file" in given:
        out["tensor"] = {"file": given["tensor_file"]}
    for key in ("omega_c", "omega_ph", "gamma", "fwhm", "w_spec", "w_angular"):
        put("spectral", key)

    command = args.command
    if command in ("state", "bell"):
        put(command, "theta_deg", "theta")
        put(command, "shift")
        if "angles" in given:
            out.setdefault("bell", {})["angles"] = list(given["angles"])
    elif command == "spectrum":
        for key in ("labels", "shift_min", "shift_max", "shift_step", "output"):
            put("spectrum", key)
    elif command == "g2":
        for key in ("correlated", "accidental", "label", "amplitude", "baseline", "output"):
            put("g2", key)
    elif command == "fit":
        for key in ("data", "synthetic", "labels", "noise", "seed", "freeze_yR", "output"):
            put("fit", key)
        out.setdefault("fit", {})
    elif command == "map":
        for key, flag in (("axis", None), ("theta_deg", "theta"), ("shift_min", None), ("shift_max", None),
                          ("shift_step", None), ("theta_step_deg", "theta_step"), ("w_points", None),
                          ("w_min_gamma", "w_min"), ("w_max_gamma", "w_max"), ("hatch_factor", None),
                          ("f_min_level", "f_min"), ("formats", None), ("output", None)):
            put("map", key, flag)
    return out


def load_run_config(args: argparse.Namespace) -> RunConfig:
    base = load_config_file(args.config) if args.config else {}
    if not isinstance(base, dict):
        raise ValueError(f"{args.config}: top level must be a mapping")
    overrides = _flag_overrides(args)
    if "tensor" in overrides and "tensor" in base:
        # a tensor flag replaces the file's tensor block instead of mixing sources
        base = {k: v for k, v in base.items() if k != "tensor"}
    return RunConfig.model_validate(_deep_merge(base, overrides))


def _uncertainty_json(unc) -> Optional[Dict[str, List[float]]]:
    return {name: complex_pair(value) for name, value in unc} if unc is not None else None


def _is_hatched(shift: float, sp, settings: Settings) -> bool:
    return abs(shift - sp.omega_ph / TWO_PI) <= settings.hatch_factor * sp.W / TWO_PI


def _state_report(cfg: RunConfig, settings: Settings, section) -> Dict[str, Any]:
    ts = cfg.tensor.to_tensor()
    sp = cfg.spectral.to_params()
    theta = math.radians(section.theta_deg)
    fp = symmetric_pair(section.shift, sp)
    if _is_hatched(section.shift, sp, settings):
        logger.warning(f"Raman shift {section.shift:g} cm^-1 lies in the hatched region around the phonon line "
                       f"({sp.omega_ph / TWO_PI:g} +- {settings.hatch_factor * sp.W / TWO_PI:.3g} cm^-1); "
                       f"uncorrelated pairs dominate there and the pure-state result is unreliable")
    state = build_state(ts, theta, fp, sp)
    dec = schmidt(state)
    return {
        "preset": cfg.tensor.label,
        "theta_deg": section.theta_deg,
        "shift_cm1": section.shift,
        "fwhm_cm1": sp.fwhm,
        "W_over_gamma": sp.W / sp.gamma,
        "hatched": _is_hatched(section.shift, sp, settings),
        "amplitudes": {name: complex_pair(getattr(state, f"c_{name}")) for name in ("VV", "HH", "VH", "HV")},
        "ratio_HH_VV": abs(state.c_HH) / abs(state.c_VV) if state.c_VV != 0 else None,
        "E": entanglement_entropy(state),
        "C": concurrence(state),
        "F": gisin_F(state),
        "linear_entropy": linear_entropy(state),
        "schmidt_coefficients": list(dec.coefficients),
        "pair_rate": pair_rate(ts, theta, fp, sp),
        "tensor_uncertainty": _uncertainty_json(cfg.tensor.uncertainty()),
        "_state": state,
    }


def _settings_json(chsh) -> Dict[str, Any]:
    names = ("a", "a_prime", "b", "b_prime")
    return {name: {"angle_deg": math.degrees(an.angle), "ellipticity_deg": math.degrees(an.ellipticity)}
            for name, an in zip(names, chsh[:4])}


def cmd_state(cfg: RunConfig, settings: Settings, as_json: bool) -> int:
    report = _state_report(cfg, settings, cfg.state)
    state = report.pop("_state")
    chsh = chsh_optimal_angles(state)
    report["chsh_optimal"] = {"S": chsh.S, **_settings_json(chsh)}
    if as_json:
        print(dump_json(report), end="")
        return EXIT_OK
    print(f"State at theta = {report['theta_deg']:g} deg, shift = {report['shift_cm1']:g} cm^-1 "
          f"({report['preset']}, FWHM {report['fwhm_cm1']:.4g} cm^-1)")
    for name, (re, im) in report["amplitudes"].items():
        print(f"  c_{name} = {re:+.6f} {im:+.6f}i")
    if report["ratio_HH_VV"] is not None:
        print(f"  |c_HH/c_VV| = {report['ratio_HH_VV']:.4f}")
    print(f"  E = {report['E']:.4f}   C = {report['C']:.4f}   F = {report['F']:.4f}   "
          f"P = {report['linear_entropy']:.4f}")
    print(f"  Schmidt coefficients: {report['schmidt_coefficients'][0]:.6f}, {report['schmidt_coefficients'][1]:.6f}")
    print(f"  relative pair rate: {report['pair_rate']:.6g}")
    if report["tensor_uncertainty"] is not None:
        sig = report["tensor_uncertainty"]["rE_xyyx"]
        print(f"  tensor ratios quoted with one-sigma uncertainties, e.g. r^E_xyyx +- ({sig[0]:.3g}, {sig[1]:.3g})")
    print(f"  optimal CHSH S = {chsh.S:.6f} at " + ", ".join(
        f"{k} = ({v['angle_deg']:.2f}, {v['ellipticity_deg']:.2f}) deg" for k, v in _settings_json(chsh).items()))
    if report["hatched"]:
        print("  warning: inside the hatched near-resonance region")
    return EXIT_OK


def cmd_bell(cfg: RunConfig, settings: Settings, as_json: bool) -> int:
    report = _state_report(cfg, settings, cfg.bell)
    state = report.pop("_state")
    raw = cfg.bell.angles or DEFAULT_BELL_ANGLES
    analyzers = [Analyzer(math.radians(s[0]), math.radians(s[1])) if isinstance(s, (tuple, list))
                 else Analyzer(math.radians(s)) for s in raw]
    S = chsh_value(state, analyzers)
    chsh = chsh_optimal_angles(state)
    out = {
        "preset": report["preset"], "theta_deg": report["theta_deg"], "shift_cm1": report["shift_cm1"],
        "angles_deg": [list(s) if isinstance(s, (tuple, list)) else s for s in raw],
        "S": S, "F": report["F"], "violates_chsh": abs(S) > 2.0,
        "chsh_optimal": {"S": chsh.S, **_settings_json(chsh)},
    }
    if as_json:
        print(dump_json(out), end="")
        return EXIT_OK
    print(f"CHSH at theta = {out['theta_deg']:g} deg, shift = {out['shift_cm1']:g} cm^-1 ({out['preset']})")
    print(f"  S = {S:.6f} at a, a', b, b' = {out['angles_deg']} deg"
          f"{'  (violates CHSH)' if out['violates_chsh'] else ''}")
    print(f"  optimum S = {chsh.S:.6f}, F = {out['F']:.6f}")
    return EXIT_OK


def _shift_grid(section, settings: Settings):
    g = settings.grid
    return default_grid(section.shift_min if section.shift_min is not None else g.shift_min,
                        section.shift_max if section.shift_max is not None else g.shift_max,
                        section.shift_step if section.shift_step is not None else g.shift_step)


def _metadata(cfg: RunConfig, sp) -> Dict[str, Any]:
    return {"tool": f"sasentangle {__version__}", "preset": cfg.tensor.label,
            "omega_c_cm1": sp.omega_c / TWO_PI, "omega_ph_cm1": sp.omega_ph / TWO_PI,
            "gamma_cm1": sp.gamma, "fwhm_cm1": sp.fwhm}


def cmd_spectrum(cfg: RunConfig, settings: Settings) -> int:
    ts = cfg.tensor.to_tensor()
    sp = cfg.spectral.to_params()
    grid = _shift_grid(cfg.spectrum, settings)
    series = []
    for label in cfg.spectrum.labels:
        pol, theta_deg = parse_label(label)
        series.append(predict_spectrum(ts, math.radians(theta_deg), pol, sp, grid))
    write_series_csv(cfg.spectrum.output, series, _metadata(cfg, sp))
    print(f"Spectra ({cfg.tensor.label}) written to {cfg.spectrum.output}")
    for s in series:
        print(f"  {s.label:>6}: min {s.y.min():.6g}  max {s.y.max():.6g}  mean {s.y.mean():.6g}")
    return EXIT_OK


def _pick(entries: Dict[str, Dict[str, Any]], label: str, path: str):
    if label in entries:
        return entries[label]
    if len(entries) == 1:
        return next(iter(entries.values()))
    raise ValueError(f"{path}: no series labelled '{label}' (found {sorted(entries)})")


def cmd_g2(cfg: RunConfig, settings: Settings) -> int:
    sp = cfg.spectral.to_params()
    g2cfg = cfg.g2
    acc = None
    if g2cfg.correlated:
        entry = _pick(read_measured_csv(g2cfg.correlated, restrict_labels=False), g2cfg.label, g2cfg.correlated)
        correlated = entry["counts"]
        acc = entry.get("accidental")
    else:
        pol, theta_deg = parse_label(g2cfg.label)
        grid = default_grid(settings.grid.shift_min, settings.grid.shift_max, settings.grid.shift_step)
        correlated = predict_spectrum(cfg.tensor.to_tensor(), math.radians(theta_deg), pol, sp, grid)
    if g2cfg.accidental:
        acc = _pick(read_measured_csv(g2cfg.accidental, restrict_labels=False), g2cfg.label, g2cfg.accidental)["counts"]
    elif acc is None:
        acc = accidental_model(sp, g2cfg.amplitude, g2cfg.baseline, correlated.delta_omega)
    curve = g2_curve(correlated, acc)
    write_text(g2cfg.output, g2_to_csv([curve], _metadata(cfg, sp)))
    print(f"g2(0) for {correlated.label} written to {g2cfg.output}")
    print(f"  min {min(curve.g2):.6g}  max {max(curve.g2):.6g}")
    for shift in (1300.0, 1364.0):
        if shift in curve.delta_omega:
            print(f"  g2({shift:g} cm^-1) = {curve.g2[curve.delta_omega.index(shift)]:.6g}")
    return EXIT_OK


def cmd_fit(cfg: RunConfig, settings: Settings) -> int:
    fcfg: FitConfig = cfg.fit
    sp = cfg.spectral.to_params()
    if fcfg.synthetic:
        grid = default_grid(settings.grid.shift_min, settings.grid.shift_max, settings.grid.shift_step)
        observations = synthetic_observations(cfg.tensor.to_tensor(), sp, fcfg.labels, grid,
                                              noise=fcfg.noise, seed=fcfg.seed)
    else:
        entries = read_measured_csv(fcfg.data)
        observations = {label: entries[label]["counts"] for label in fcfg.labels if label in entries}
        if not observations:
            raise ValueError(f"{fcfg.data}: none of the configurations {fcfg.labels} present")
    problem = FitProblem(observations=observations, sp=sp, freeze_yR=fcfg.freeze_yR, yR_bounds=fcfg.yR_bounds)
    result = fit_y(problem, init=fcfg.init, options=fcfg.options)

    out = result.as_dict()
    if "VV0" in result.yE and result.yE["VV0"] != 0:
        out["yR_normalized"] = result.yR / abs(result.yE["VV0"])
        out["yE_ratios"] = {label: complex_pair(result.ratio(label)) for label in result.yE}
    try:
        ts, unc = tensor_from_fit(result)
        out["tensor"] = ts.as_dict()
        out["tensor_uncertainty"] = _uncertainty_json(unc)
    except FitError as e:
        logger.warning(f"Tensor ratios not derived: {e}")
    write_text(fcfg.output, dump_json(out))

    print(f"Fit {'converged' if result.converged else 'did NOT converge'} "
          f"({result.iterations} evaluations, residual norm {result.residual_norm:.6g}); result in {fcfg.output}")
    for label, value in result.yE.items():
        sigma = result.yE_sigma[label]
        print(f"  yE_{label} = {value.real:.6g} {value.imag:+.6g}i  (+- {sigma.real:.3g}, {sigma.imag:.3g})")
    print(f"  yR = {result.yR:.6g} +- {result.yR_sigma:.3g}")
    return EXIT_OK if result.converged else EXIT_NUMERICAL


def cmd_map(cfg: RunConfig, settings: Settings) -> int:
    m = cfg.map
    g = settings.grid
    ts = cfg.tensor.to_tensor()
    sp = cfg.spectral.to_params()
    if m.axis == "theta":
        vertical = default_theta_grid(m.theta_step_deg or g.theta_step_deg)
    else:
        vertical = default_w_grid(m.w_points or g.w_points, m.w_min_gamma or g.w_min_gamma,
                                  m.w_max_gamma or g.w_max_gamma)
    spec = SweepSpec(axis=m.axis, shifts=_shift_grid(m, settings), vertical=vertical, ts=ts, sp=sp,
                     theta_deg=m.theta_deg, preset=cfg.tensor.label,
                     hatch_factor=m.hatch_factor or settings.hatch_factor,
                     f_min_level=m.f_min_level or settings.f_min_level)
    grid = sweep(spec, threads=settings.threads)
    paths = []
    for fmt in m.formats:
        path = f"{m.output}.{fmt}"
        export_grid(grid, fmt, path)
        paths.append(path)
    summary = grid.summary()
    print(f"Entanglement map ({spec.axis} sweep, {cfg.tensor.label}) written to {', '.join(paths)}")
    for key, value in summary.items():
        print(f"  {key}: {value}")
    return EXIT_OK


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        config = load_settings()
        if args.log_level:
            config["log_level"] = args.log_level
        settings = Settings.model_validate(config)
        setup_logging(settings.model_dump())
        cfg = load_run_config(args)
    except ValidationError as e:
        for err in e.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "config"
            print(f"error: {loc}: {err['msg']}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE

    commands = {
        "state": lambda: cmd_state(cfg, settings, args.json),
        "bell": lambda: cmd_bell(cfg, settings, args.json),
        "spectrum": lambda: cmd_spectrum(cfg, settings),
        "g2": lambda: cmd_g2(cfg, settings),
        "fit": lambda: cmd_fit(cfg, settings),
        "map": lambda: cmd_map(cfg, settings),
    }
    try:
        return commands[args.command]()
    except (DegenerateStateError, FitError, QuadratureError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_NUMERICAL
    except ValidationError as e:
        for err in e.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "input"
            print(f"error: {loc}: {err['msg']}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
