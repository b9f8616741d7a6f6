"""
Command-line entry point.

    aflib operator-check --op FILE
    aflib wavecone [scan] --op FILE [--P vec] [--samples N] [--csv FILE]
    aflib project --op FILE --field FILE [--field-out FILE]
    aflib norm --field FILE [--k K --q Q] [--op FILE]
    aflib envelope --op FILE --f NAME --A0 vec [--dir vec --recession]
    aflib measure-eval --f NAME --mu FILE [--op FILE]
    aflib experiment {lsc,relax,jensen} (--config FILE | --scenario NAME) [--csv FILE]

`--op` takes an operator spec file or `builtin:NAME[:d[:m]]`. Vectors are
comma separated; write negative leading entries as `--A0=-1,0`.
The JSON report goes to --out (default stdout), logs go to stderr.
Exit codes: 0 pass, 1 failed verdict or error, 2 usage.
"""
import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np

import config
from envelope import EnvelopeConfig, envelope_recession, quasiconvex_envelope
from errors import AflibError, ConfigError, ParseError
from experiments import EXPERIMENT_KINDS, ExperimentConfig, run_experiment
from fields_io import load_field, read_measure, write_field, write_scan_csv, write_series_csv, write_trace_csv
from integrand import build_integrand
from measure_lab import (RECESSION_MODES, area_functional, functional_parts, mollify_measure,
                         singular_polar_check, total_variation)
from pde_operator import OperatorSpec, builtin_operator, operator_from_config
from scenarios import get_scenario, scenario_names
from scoring import exit_status
from spectral_projection import (afree_residual, build_projector_table, periodic_afree_correction,
                                 project_afree, projection_bound_ratio, projection_constant,
                                 sobolev_negative_norm)
from visualizer import show_restarts, visualize_report
from wave_cone import (characteristic_set, rank_profile, residual_profile, sphere_sampling,
                       wavecone_membership, wavecone_span)

logger = logging.getLogger(__name__)

LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR"]
NOT_CONFIG = ("out", "log_level", "text", "handler")


@dataclass
class CommandOutcome:
    result: Dict[str, Any]
    config: Dict[str, Any] = field(default_factory=dict)
    status: int = 0


def _vector_arg(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _grid_arg(text: str) -> List[int]:
    try:
        values = [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if any(v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"grid sizes must be positive, got {text!r}")
    return values


def _params_arg(text: str) -> Dict[str, Any]:
    try:
        value = json.loads(text)
    except json.JSONDecodeError as e:
        raise argparse.ArgumentTypeError(f"--params must be a JSON object: {e}")
    if not isinstance(value, dict):
        raise argparse.ArgumentTypeError("--params must be a JSON object")
    return value


def load_operator(text: str) -> OperatorSpec:
    """Operator spec file, or builtin:NAME[:d[:m]]."""
    if text.startswith("builtin:"):
        parts = text.split(":")[1:]
        try:
            dims = [int(p) for p in parts[1:]]
        except ValueError:
            raise ParseError(f"bad builtin operator {text!r}; use builtin:NAME[:d[:m]]")
        d = dims[0] if dims else 2
        m = dims[1] if len(dims) > 1 else 1
        return builtin_operator(parts[0], d, m)
    return operator_from_config(text)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    if isinstance(obj, float):
        # shortest round-trip repr, the same double as 17 significant digits
        return float(f"{obj:.17g}") if math.isfinite(obj) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def render_json(payload: Dict[str, Any]) -> str:
    return json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"


def _emit(payload: Dict[str, Any], out: Optional[str]) -> None:
    text = render_json(payload)
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


def _args_config(args: argparse.Namespace) -> Dict[str, Any]:
    return {k: v for k, v in sorted(vars(args).items()) if k not in NOT_CONFIG}


def _seed(args: argparse.Namespace) -> int:
    return 0 if args.seed is None else args.seed


# --- commands ---

def cmd_operator_check(args: argparse.Namespace) -> CommandOutcome:
    op = load_operator(args.op)
    sampling = sphere_sampling(op.d, args.samples, _seed(args))
    profile = rank_profile(op, sampling, args.rank_tol)
    basis = wavecone_span(op, sampling, rank_tol=args.rank_tol)
    result = {
        "operator": op.to_dict(),
        "homogeneous": op.is_homogeneous,
        "orders": op.orders,
        "constant_rank": profile.is_constant,
        "rank": profile.max_rank if profile.is_constant else None,
        "rank_profile": profile.to_dict(),
        "span_dim": len(basis),
        "span_basis": basis,
        "sampling": {"scheme": sampling.scheme, "count": sampling.count},
    }
    return CommandOutcome(result=result, config=_args_config(args))


def cmd_wavecone(args: argparse.Namespace) -> CommandOutcome:
    op = load_operator(args.op)
    if args.action is None and args.P is None:
        raise ConfigError("wavecone needs a query --P, or the scan action")
    if args.csv and args.action != "scan":
        raise ConfigError("--csv is only written by 'wavecone scan'")
    sampling = sphere_sampling(op.d, args.samples, _seed(args))
    result: Dict[str, Any] = {"operator": op.to_dict(),
                              "sampling": {"scheme": sampling.scheme, "count": sampling.count}}

    membership = None
    if args.P is not None:
        membership = wavecone_membership(op, args.P, sampling, args.tol)
        result["membership"] = membership.to_dict()
        if args.roots and membership.member:
            result["characteristic_set"] = characteristic_set(op, args.P, sampling, args.tol).to_dict()

    if args.action == "scan":
        profile = rank_profile(op, sampling)
        basis = wavecone_span(op, sampling)
        result["rank_profile"] = profile.to_dict()
        result["span_dim"] = len(basis)
        result["span_basis"] = basis
        residuals = residual_profile(op, args.P, sampling) if args.P is not None else None
        if args.csv:
            write_scan_csv(args.csv, sampling.points, profile.ranks, residuals)
            result["csv"] = args.csv
    return CommandOutcome(result=result, config=_args_config(args))


def cmd_project(args: argparse.Namespace) -> CommandOutcome:
    op = load_operator(args.op)
    u = load_field(args.field)
    if args.correct:
        correction = periodic_afree_correction(op, u, args.cutoff_margin, args.mollify_radius)
        projected = correction.field
    else:
        correction = None
        projected = project_afree(build_projector_table(op, u.grid), u)
    change = projected.values - u.values
    result = {
        "N": u.N,
        "grid": list(u.grid),
        "input_mean": u.mean,
        "input_residual": afree_residual(op, u),
        "output_residual": afree_residual(op, projected),
        "l2_in": u.l2_norm(),
        "l2_out": projected.l2_norm(),
        "l2_change": float(np.sqrt(np.sum(change ** 2) * u.dx)),
        "projection_constant": projection_constant(op, u.grid),
        "correction": correction.to_dict() if correction is not None else None,
        "field_out": args.field_out,
    }
    if args.field_out:
        write_field(args.field_out, projected)
    return CommandOutcome(result=result, config=_args_config(args))


def cmd_norm(args: argparse.Namespace) -> CommandOutcome:
    u = load_field(args.field)
    result: Dict[str, Any] = {
        "N": u.N,
        "grid": list(u.grid),
        "mean": u.mean,
        "l1": u.l1_norm(),
        "l2": u.l2_norm(),
        "sup": u.sup_norm(),
    }
    if args.k is not None:
        result["negative_sobolev"] = {"k": args.k, "q": args.q, "value": sobolev_negative_norm(u, args.k, args.q)}
    if args.op:
        op = load_operator(args.op)
        result["afree_residual"] = afree_residual(op, u)
        result["bound_ratio"] = projection_bound_ratio(op, u)
    return CommandOutcome(result=result, config=_args_config(args))


def _envelope_settings(args: argparse.Namespace) -> EnvelopeConfig:
    settings: Dict[str, Any] = {"seed": _seed(args)}
    if args.grid is not None:
        settings["grid"] = args.grid
    if args.restarts is not None:
        settings["restarts"] = args.restarts
    if args.max_iters is not None:
        settings["max_iters"] = args.max_iters
    if args.time_limit is not None:
        settings["time_limit"] = args.time_limit
    return EnvelopeConfig.from_dict(settings)


def cmd_envelope(args: argparse.Namespace) -> CommandOutcome:
    op = load_operator(args.op)
    f = build_integrand(args.f, args.params, op.N)
    cfg = _envelope_settings(args)
    if args.A0 is None and not args.recession:
        raise ConfigError("envelope needs --A0, or --recession with --dir")
    resolved = {**_args_config(args), "envelope": cfg.to_dict(), "operator": op.to_dict(), "integrand": f.to_dict()}

    result: Dict[str, Any] = {"trace_file": args.trace_out, "argmin_field_file": args.field_out}
    if args.A0 is not None:
        env = quasiconvex_envelope(op, f, args.x0, args.A0, cfg)
        result.update(env.to_dict())
        if args.trace_out:
            write_trace_csv(args.trace_out, env.traces)
        if args.field_out:
            write_field(args.field_out, env.argmin_field)
        if args.text:
            show_restarts(env.restarts_summary)
    if args.recession:
        if args.dir is None:
            raise ConfigError("--recession needs a direction --dir")
        estimate = envelope_recession(op, f, args.x0, args.dir, args.t_grid, cfg)
        result["recession"] = estimate.to_dict()
    return CommandOutcome(result=result, config=resolved)


def cmd_measure_eval(args: argparse.Namespace) -> CommandOutcome:
    mu = read_measure(args.mu)
    if args.mollify:
        mu = mollify_measure(mu, args.mollify)
    f = build_integrand(args.f, args.params, mu.N)
    parts = functional_parts(f, mu, args.recession_mode)
    result: Dict[str, Any] = {
        "functional": parts.total,
        "parts": parts.to_dict(),
        "area": area_functional(mu),
        "total_variation": total_variation(mu),
        "total": mu.total(),
        "measure": {"domain": mu.domain.to_dict(), "grid": list(mu.grid), "pieces": len(mu.singular)},
    }
    status = 0
    if args.op:
        checks = singular_polar_check(mu, load_operator(args.op))
        result["polar_checks"] = [c.to_dict() for c in checks]
        result["polar_ok"] = not any(c.flagged for c in checks)
        status = 0 if result["polar_ok"] else 1
    return CommandOutcome(result=result, config={**_args_config(args), "integrand": f.to_dict()}, status=status)


def cmd_experiment(args: argparse.Namespace) -> CommandOutcome:
    if args.config:
        path = Path(args.config)
        cfg = ExperimentConfig.from_dict(config.load_json_file(path), base_dir=str(path.parent))
    else:
        cfg = get_scenario(args.scenario)
    if cfg.kind != args.kind:
        raise ConfigError(f"config describes a {cfg.kind!r} experiment, command asked for {args.kind!r}")
    if args.seed is not None:
        cfg.seed = args.seed

    report = run_experiment(cfg)
    if args.csv:
        write_series_csv(args.csv, report.series)
    if args.text:
        visualize_report(report)
    result = report.to_dict()
    result.pop("config")
    return CommandOutcome(result=result, config=report.config, status=exit_status(report))


COMMANDS: Dict[str, Callable[[argparse.Namespace], CommandOutcome]] = {
    "operator-check": cmd_operator_check,
    "wavecone": cmd_wavecone,
    "project": cmd_project,
    "norm": cmd_norm,
    "envelope": cmd_envelope,
    "measure-eval": cmd_measure_eval,
    "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for sampling and random restarts")
    common.add_argument("--out", default=None, help="write the JSON report here instead of stdout")
    common.add_argument("--log-level", default="WARNING", choices=LOG_LEVELS)
    common.add_argument("--text", action="store_true", help="also print a readable summary to stderr")

    parser = argparse.ArgumentParser(prog=config.TOOL_NAME, description="A-free measures toolkit")
    parser.add_argument("--version", action="version", version=f"{config.TOOL_NAME} {config.__version__}")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("operator-check", parents=[common], help="constant rank and wave-cone span")
    p.add_argument("--op", required=True)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--rank-tol", type=float, default=config.RANK_TOL)

    p = sub.add_parser("wavecone", parents=[common], help="wave-cone membership and scans")
    p.add_argument("action", nargs="?", choices=["scan"])
    p.add_argument("--op", required=True)
    p.add_argument("--P", type=_vector_arg, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--tol", type=float, default=config.MEMBER_TOL)
    p.add_argument("--roots", action="store_true", help="also locate the characteristic set of --P")
    p.add_argument("--csv", default=None)

    p = sub.add_parser("project", parents=[common], help="project a field onto A-free fields")
    p.add_argument("--op", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--field-out", default=None)
    p.add_argument("--correct", action="store_true", help="cut off, mollify and recentre before projecting")
    p.add_argument("--cutoff-margin", type=float, default=0.05)
    p.add_argument("--mollify-radius", type=int, default=2)

    p = sub.add_parser("norm", parents=[common], help="norms of a periodic field")
    p.add_argument("--field", required=True)
    p.add_argument("--k", type=int, default=None, help="order of the negative Sobolev norm")
    p.add_argument("--q", type=float, default=2.0)
    p.add_argument("--op", default=None)

    p = sub.add_parser("envelope", parents=[common], help="A-quasiconvex envelope")
    p.add_argument("--op", required=True)
    p.add_argument("--f", required=True)
    p.add_argument("--params", type=_params_arg, default=None)
    p.add_argument("--A0", type=_vector_arg, default=None)
    p.add_argument("--x0", type=_vector_arg, default=None)
    p.add_argument("--grid", type=_grid_arg, default=None)
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--time-limit", type=float, default=None)
    p.add_argument("--dir", type=_vector_arg, default=None)
    p.add_argument("--recession", action="store_true")
    p.add_argument("--t-grid", type=_vector_arg, default=[16.0, 32.0, 64.0, 128.0])
    p.add_argument("--trace-out", default=None)
    p.add_argument("--field-out", default=None)

    p = sub.add_parser("measure-eval", parents=[common], help="integral functionals of a measure")
    p.add_argument("--f", required=True)
    p.add_argument("--params", type=_params_arg, default=None)
    p.add_argument("--mu", required=True, help="measure sidecar JSON")
    p.add_argument("--recession-mode", default="analytic", choices=list(RECESSION_MODES))
    p.add_argument("--mollify", type=int, default=0, help="mollify with this radius in cells first")
    p.add_argument("--op", default=None, help="check singular polars against this operator")

    p = sub.add_parser("experiment", parents=[common], help="lsc, relaxation and Jensen experiments")
    p.add_argument("kind", choices=list(EXPERIMENT_KINDS))
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", default=None)
    source.add_argument("--scenario", default=None, choices=scenario_names())
    p.add_argument("--csv", default=None)
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    config.setup_logging(args.log_level)

    try:
        outcome = COMMANDS[args.verb](args)
        payload = {
            "schema": config.SCHEMA_VERSION,
            "tool": config.TOOL_NAME,
            "version": config.__version__,
            "command": args.verb,
            "seed": _seed(args),
            "config": outcome.config,
            "result": outcome.result,
        }
        _emit(payload, args.out)
    except (AflibError, OSError) as e:
        return _report_error(args, type(e).__name__, str(e))
    except (KeyError, TypeError, ValueError) as e:
        # malformed values that slipped past validation count as configuration errors
        logger.debug("unvalidated input", exc_info=True)
        return _report_error(args, ConfigError.__name__, f"{type(e).__name__}: {e}")
    return outcome.status


def _report_error(args: argparse.Namespace, kind: str, message: str) -> int:
    logger.error("%s failed: %s: %s", args.verb, kind, message)
    error = {"schema": config.SCHEMA_VERSION, "error": {"type": kind, "message": message}}
    try:
        _emit(error, args.out)
    except OSError:
        _emit(error, None)
    return 1
