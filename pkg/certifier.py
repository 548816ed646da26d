"""
PWA Certifier command-line interface - certifier.py

Certifies constraint satisfaction, ultimate boundedness and (for dual-mode
controllers) asymptotic stability of piecewise-affine plants under maxout
network control.

Usage:
    pwa-certifier certify MODEL [--uub | --asymptotic] [--epsilon EPS] [--template box|oct|FILE]
                                [--kmax K] [--iter-limit N] [--node-limit N] [--out DIR] [--seed S] [--dump-lp]
    pwa-certifier reach MODEL [--k K] [--from SETFILE] [--template box|oct|FILE] [--out DIR]
    pwa-certifier simulate MODEL --x0 X0 [--steps K] [--dual-mode CERT] [--out DIR]
    pwa-certifier verify RESULT --model MODEL [--out DIR]

Exit codes:
    0 : success (conclusive certificate, replay passed)
    2 : invalid model, input outside X, forbidden path, certificate/model mismatch
    3 : inconclusive certificate or failed replay
    4 : internal resource limit (node/time limit, numerical breakdown)

Environment variables (a .env file is honoured):
    PWA_CERT_OUT_DIR   : default output directory (default: results)
    PWA_CERT_LOG_DIR   : default log directory (default: logs)
    PWA_CERT_LOG_LEVEL : default log level
    PWA_CERT_WORKERS   : processes for per-direction MILPs

Example:
    pwa-certifier certify models/contraction.yaml --uub --out results/contraction --skip-confirmation
"""

import argparse
import dataclasses
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from dotenv import load_dotenv

import python_logging_framework as plog
from certify import KIND_ASYMPTOTIC, Certificate, CertifyOptions, certify_asymptotic, certify_uub, replay_certificate
from config import config, merge_configs, validate_config
from constants import (
    CERTIFICATE_FILE,
    EXIT_INCONCLUSIVE,
    EXIT_INTERNAL_LIMIT,
    EXIT_INVALID_MODEL,
    EXIT_OK,
    REACH_FILE,
    TRAJECTORY_FILE,
)
from encoder import BigMConfig, derive_big_m, encode_closed_loop, format_lp
from exceptions import (
    CertificationError,
    ConfigurationError,
    EncodingError,
    GeometryError,
    InconclusiveError,
    ModelValidationError,
    NodeLimitExceededError,
    NumericalBreakdownError,
    PwaCertifierError,
    SecurityError,
)
from milp_core import MilpStatus
from model_io import (
    ModelBundle,
    document_kind,
    load_certificate,
    load_model,
    load_reach,
    load_set,
    load_template,
    save_certificate,
    save_reach,
    write_manifest,
)
from reach import ReachOptions, ReachResult, Template, iterate_reach
from security import prepare_output, validate_directory_path, write_csv
from sim import rollout

# Load environment variables from .env file (if it exists)
load_dotenv()

# Model "options" keys and the configuration entries they override.
_OPTION_TARGETS = {
    "epsilon_shrink": ("certify", "epsilon_shrink"),
    "k_limit": ("certify", "k_limit"),
    "iter_limit": ("certify", "iter_limit"),
    "node_limit": ("solver", "node_limit"),
    "time_limit": ("solver", "time_limit"),
    "tol_set": ("geometry", "tol_set"),
    "seed": ("sim", "seed"),
    "workers": ("reach", "workers"),
    "big_m_mode": ("big_m", "mode"),
    "big_m_value": ("big_m", "value"),
}

# Exit codes by error family; the first matching entry wins.
_EXIT_CODES = (
    ((NodeLimitExceededError, NumericalBreakdownError, InconclusiveError), EXIT_INTERNAL_LIMIT),
    (
        (ModelValidationError, ConfigurationError, SecurityError, GeometryError, EncodingError, FileNotFoundError),
        EXIT_INVALID_MODEL,
    ),
    ((CertificationError, PwaCertifierError), EXIT_INCONCLUSIVE),
)

_LIMIT_ERRORS = {"NodeLimitExceededError", "NumericalBreakdownError", "InconclusiveError"}


def exit_code_for(error: BaseException) -> int:
    """Map an exception onto the stable exit-code contract."""
    for families, code in _EXIT_CODES:
        if isinstance(error, families):
            return code
    return EXIT_INCONCLUSIVE


def certificate_exit_code(cert: Certificate) -> int:
    if cert.conclusive:
        return EXIT_OK
    return EXIT_INTERNAL_LIMIT if cert.error in _LIMIT_ERRORS else EXIT_INCONCLUSIVE


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--out",
        type=str,
        default=os.getenv("PWA_CERT_OUT_DIR", "results"),
        help="Directory where results and the manifest are written",
    )
    parser.add_argument(
        "--log-dir",
        type=str,
        default=os.getenv("PWA_CERT_LOG_DIR", "logs"),
        help="Directory where log files will be saved",
    )
    parser.add_argument(
        "--log-level",
        type=str,
        default=None,
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        help="Logging level (default: INFO). Can also be set via PWA_CERT_LOG_LEVEL or config.yaml",
    )
    parser.add_argument(
        "--skip-confirmation",
        action="store_true",
        default=os.getenv("PWA_CERT_SKIP_CONFIRMATION", "false").lower() == "true",
        help="Overwrite existing result files without asking (a backup is still made)",
    )
    parser.add_argument("--node-limit", type=int, default=None, help="Branch-and-bound node limit per MILP")
    parser.add_argument("--seed", type=int, default=None, help="Seed of all sampled checks")
    parser.add_argument(
        "--template", type=str, default=None, help="Template directions: box, oct or a set file (default: box)"
    )


def parse_args(args: Optional[List[str]] = None) -> argparse.Namespace:
    """
    Parse command-line arguments.

    Environment variables provide defaults; flags take precedence.

    Args:
        args: Optional list of arguments to parse. If None, uses sys.argv.

    Returns:
        argparse.Namespace: Parsed arguments object.
    """
    parser = argparse.ArgumentParser(prog="pwa-certifier", description="PWA system / maxout controller certifier")
    sub = parser.add_subparsers(dest="command", required=True)

    certify = sub.add_parser("certify", help="Compute a UUB or asymptotic stability certificate")
    certify.add_argument("model", help="Model file (.yaml)")
    mode = certify.add_mutually_exclusive_group()
    mode.add_argument("--uub", action="store_true", help="Ultimate boundedness certificate (default)")
    mode.add_argument("--asymptotic", action="store_true", help="Dual-mode asymptotic stability certificate")
    certify.add_argument("--epsilon", type=float, default=None, help="Shrink slack of the terminal-set test")
    certify.add_argument("--kmax", type=int, default=None, help="Iteration limit of the terminal-set search")
    certify.add_argument("--iter-limit", type=int, default=None, help="Iteration limit of the invariant-set loop")
    certify.add_argument("--dump-lp", action="store_true", help="Also write the one-step encoding in LP format")
    _add_common(certify)

    reach = sub.add_parser("reach", help="Over-approximate the k-step reachable set")
    reach.add_argument("model", help="Model file (.yaml)")
    reach.add_argument("--k", type=int, default=1, help="Number of steps (default: 1)")
    reach.add_argument("--from", dest="from_set", type=str, default=None, help="Initial set file (default: X)")
    _add_common(reach)

    simulate = sub.add_parser("simulate", help="Simulate the closed loop from one initial state")
    simulate.add_argument("model", help="Model file (.yaml)")
    simulate.add_argument("--x0", type=str, required=True, help="Initial state, comma separated")
    simulate.add_argument("--steps", type=int, default=50, help="Number of steps (default: 50)")
    simulate.add_argument("--dual-mode", type=str, default=None, help="Asymptotic certificate enabling the local law")
    _add_common(simulate)

    verify = sub.add_parser("verify", help="Replay a certificate or reach file against its model")
    verify.add_argument("result", help="Certificate or reach file (.yaml)")
    verify.add_argument("--model", required=True, help="Model file the result was computed for")
    _add_common(verify)

    return parser.parse_args(args)


def get_log_level(args_log_level: Optional[str]) -> int:
    """
    Determine the log level.

    Priority order (highest to lowest):
    1. Command-line argument (--log-level)
    2. Environment variable (PWA_CERT_LOG_LEVEL)
    3. Configuration file (config.yaml logging.level)
    4. Default (INFO)
    """
    if args_log_level:
        log_level_str = args_log_level
    elif os.getenv("PWA_CERT_LOG_LEVEL"):
        log_level_str = os.getenv("PWA_CERT_LOG_LEVEL")
    elif "logging" in config and "level" in config["logging"]:
        log_level_str = config["logging"]["level"]
    else:
        log_level_str = "INFO"

    level = getattr(logging, str(log_level_str).upper(), None)
    return level if isinstance(level, int) else logging.INFO


def build_run_config(
    base: Dict[str, Any], model_options: Dict[str, Any], flags: Dict[str, Any]
) -> Dict[str, Any]:
    """
    Configuration of one run: ``config.yaml``, then the model's options, then flags.

    Raises:
    ConfigurationError: If the merged values are invalid
    """
    overrides: Dict[str, Dict[str, Any]] = {}
    for source in (model_options, flags):
        for key, value in source.items():
            if value is None or key not in _OPTION_TARGETS:
                continue
            section, name = _OPTION_TARGETS[key]
            overrides.setdefault(section, {})[name] = value
    return validate_config(merge_configs(base, overrides))


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(part) for part in text.replace(" ", "").split(",") if part], dtype=float)
    except ValueError as e:
        raise ModelValidationError(f"Cannot parse vector {text!r}: {e}") from e


def _template_spec(args: argparse.Namespace, bundle: ModelBundle, run_cfg: Dict[str, Any]) -> str:
    return args.template or bundle.options.get("template") or run_cfg["reach"]["template"]


def _big_m(bundle: ModelBundle, run_cfg: Dict[str, Any], logger, with_net: bool = True) -> BigMConfig:
    section = run_cfg["big_m"]
    return derive_big_m(
        bundle.system,
        bundle.net if with_net else None,
        margin=section["margin"],
        mode=section["mode"],
        manual_value=section["value"],
        logger=logger,
    )


def _tolerances(run_cfg: Dict[str, Any]) -> Dict[str, Any]:
    return {
        "tol_set": run_cfg["geometry"]["tol_set"],
        "feasibility_tol": run_cfg["solver"]["feasibility_tol"],
        "integrality_tol": run_cfg["solver"]["integrality_tol"],
        "gap_abs": run_cfg["solver"]["gap_abs"],
        "node_limit": run_cfg["solver"]["node_limit"],
    }


def _load(args: argparse.Namespace, model_path: str, flags: Dict[str, Any], logger):
    models_cfg = config["models"]
    bundle = load_model(model_path, models_cfg["coverage_grid"], models_cfg["origin_tol"], logger=logger)
    run_cfg = build_run_config(config, bundle.options, flags)
    return bundle, run_cfg


def _output_path(out_dir: Path, name: str, args: argparse.Namespace, logger) -> Optional[Path]:
    path = out_dir / name
    if not prepare_output(path, args.skip_confirmation, logger):
        plog.log_warning(logger, f"Not overwriting {path}")
        return None
    return path


def cmd_certify(args: argparse.Namespace, out_dir: Path, logger) -> int:
    """Run the certification pipeline and write the certificate."""
    flags = {
        "epsilon_shrink": args.epsilon,
        "k_limit": args.kmax,
        "iter_limit": args.iter_limit,
        "node_limit": args.node_limit,
        "seed": args.seed,
    }
    bundle, run_cfg = _load(args, args.model, flags, logger)
    if args.asymptotic and bundle.dual_mode is None:
        raise ModelValidationError(f"{bundle.path}:1: --asymptotic needs a dual_mode section in the model")

    system, net = bundle.system, bundle.net
    cfg = _big_m(bundle, run_cfg, logger)
    template = load_template(_template_spec(args, bundle, run_cfg), system.n, logger)
    options = CertifyOptions.from_config(run_cfg)
    outputs: List[str] = []

    if args.dump_lp:
        encoded = encode_closed_loop(system, net, cfg, 1, system.X, logger=logger)
        lp_path = _output_path(out_dir, "encoding.lp", args, logger)
        if lp_path is not None:
            lp_path.write_text(format_lp(encoded.problem, encoded.names), encoding="utf-8")
            outputs.append(lp_path.name)

    cert = certify_uub(system, net, cfg, template, options, bundle.digest, logger)
    if args.asymptotic and cert.conclusive:
        try:
            cert = certify_asymptotic(system, bundle.dual_mode, cert, options, logger)
        except CertificationError as e:
            plog.log_warning(logger, f"Asymptotic certification failed: {e}")
            cert = dataclasses.replace(
                cert, kind=KIND_ASYMPTOTIC, conclusive=False, reason=str(e), error=type(e).__name__
            )

    cert_path = _output_path(out_dir, CERTIFICATE_FILE, args, logger)
    if cert_path is not None:
        save_certificate(cert_path, cert)
        outputs.append(cert_path.name)
        plog.log_info(logger, f"Certificate written to {cert_path}")

    code = certificate_exit_code(cert)
    if code != EXIT_OK:
        plog.log_error(logger, f"Certificate is inconclusive: {cert.reason}")
    write_manifest(out_dir, "certify", {"model": str(bundle.path)}, outputs, options.seed, _tolerances(run_cfg), code)
    return code


def _reach_exit_code(result: ReachResult) -> int:
    if result.conclusive:
        return EXIT_OK
    if any(s.status == MilpStatus.NODE_LIMIT.value for s in result.stats):
        return EXIT_INTERNAL_LIMIT
    return EXIT_INCONCLUSIVE


def cmd_reach(args: argparse.Namespace, out_dir: Path, logger) -> int:
    """Write the k-step template over-approximation of the reachable set."""
    bundle, run_cfg = _load(args, args.model, {"node_limit": args.node_limit, "seed": args.seed}, logger)
    system = bundle.system
    x0_set = load_set(args.from_set, logger) if args.from_set else system.X
    spec = _template_spec(args, bundle, run_cfg)
    template = load_template(spec, system.n, logger)
    cfg = _big_m(bundle, run_cfg, logger)

    result = iterate_reach(system, bundle.net, cfg, args.k, x0_set, template, ReachOptions.from_config(run_cfg), logger)
    outputs: List[str] = []
    reach_path = _output_path(out_dir, REACH_FILE, args, logger)
    if reach_path is not None:
        save_reach(reach_path, result, x0_set, template.name, bundle.digest)
        outputs.append(reach_path.name)
    csv_path = _output_path(out_dir, "reach_optima.csv", args, logger)
    if csv_path is not None:
        frame = pd.DataFrame(result.directions, columns=[f"c{i + 1}" for i in range(system.n)])
        frame["optimum"] = result.optima
        frame["status"] = [s.status for s in result.stats]
        write_csv(frame, csv_path, logger)
        outputs.append(csv_path.name)

    code = _reach_exit_code(result)
    if code != EXIT_OK:
        plog.log_error(logger, f"Reach result is inconclusive: {result.message}")
    inputs = {"model": str(bundle.path), "from": args.from_set or "X"}
    write_manifest(out_dir, "reach", inputs, outputs, run_cfg["sim"]["seed"], _tolerances(run_cfg), code)
    return code


def cmd_simulate(args: argparse.Namespace, out_dir: Path, logger) -> int:
    """Roll out the closed loop and export the trajectory as CSV."""
    bundle, run_cfg = _load(args, args.model, {"seed": args.seed}, logger)
    controller: Any = bundle.net
    inputs = {"model": str(bundle.path)}
    if args.dual_mode:
        cert = load_certificate(args.dual_mode, logger)
        _check_digest(cert, bundle)
        if bundle.dual_mode is None or cert.s_scale is None or not cert.conclusive:
            raise ModelValidationError(
                f"{args.dual_mode}:1: --dual-mode needs a conclusive asymptotic certificate and a dual_mode section"
            )
        controller = bundle.dual_mode.with_scale(cert.s_scale)
        inputs["dual_mode"] = args.dual_mode

    x0 = _parse_vector(args.x0)
    trajectory = rollout(bundle.system, controller, x0, args.steps, logger)
    if trajectory.exited:
        plog.log_warning(logger, f"Trajectory left X after {trajectory.length} steps")

    outputs: List[str] = []
    path = _output_path(out_dir, TRAJECTORY_FILE, args, logger)
    if path is not None:
        write_csv(trajectory.to_frame(), path, logger)
        outputs.append(path.name)
    write_manifest(out_dir, "simulate", inputs, outputs, run_cfg["sim"]["seed"], _tolerances(run_cfg), EXIT_OK)
    return EXIT_OK


def _check_digest(cert: Certificate, bundle: ModelBundle) -> None:
    if cert.model_digest and cert.model_digest != bundle.digest:
        raise ModelValidationError(
            f"{bundle.path}:1: model digest {bundle.digest[:12]} does not match the certificate's "
            f"{cert.model_digest[:12]}"
        )


def _verify_reach(args: argparse.Namespace, bundle: ModelBundle, run_cfg: Dict[str, Any], logger) -> bool:
    stored = load_reach(args.result, logger)
    if stored.model_digest and stored.model_digest != bundle.digest:
        raise ModelValidationError(f"{bundle.path}:1: model digest does not match the reach file")
    template = Template(C=stored.directions, name=stored.template)
    x0_set = stored.initial_set.to_polytope()
    cfg = _big_m(bundle, run_cfg, logger)
    result = iterate_reach(
        bundle.system, bundle.net, cfg, stored.steps, x0_set, template, ReachOptions.from_config(run_cfg), logger
    )
    expected = np.asarray(stored.optima, dtype=float)
    matches = result.conclusive == stored.conclusive and np.allclose(
        result.optima, expected, rtol=0.0, atol=1e-9, equal_nan=True
    )
    plog.log_check(
        logger,
        "reach_optima_match",
        bool(matches),
        float(np.nanmax(np.abs(result.optima - expected), initial=0.0)) if expected.size else 0.0,
        1e-9,
    )
    return bool(matches)


def cmd_verify(args: argparse.Namespace, out_dir: Path, logger) -> int:
    """Replay a certificate or reach file from scratch."""
    bundle, run_cfg = _load(args, args.model, {"node_limit": args.node_limit}, logger)
    kind = document_kind(args.result, logger)
    inputs = {"model": str(bundle.path), "result": args.result}
    seed: Optional[int] = None

    if kind == "reach":
        passed = _verify_reach(args, bundle, run_cfg, logger)
    elif kind == "certificate":
        cert = load_certificate(args.result, logger)
        _check_digest(cert, bundle)
        seed = cert.seed
        if not cert.conclusive:
            plog.log_error(logger, f"Certificate is not conclusive: {cert.reason}")
            write_manifest(out_dir, "verify", inputs, [], seed, _tolerances(run_cfg), EXIT_INCONCLUSIVE)
            return EXIT_INCONCLUSIVE
        controller: Any = bundle.net
        if cert.kind == KIND_ASYMPTOTIC:
            if bundle.dual_mode is None:
                raise ModelValidationError(f"{bundle.path}:1: asymptotic certificate needs a dual_mode section")
            controller = bundle.dual_mode
        cfg = _big_m(bundle, run_cfg, logger)
        report = replay_certificate(bundle.system, controller, cfg, cert, CertifyOptions.from_config(run_cfg), logger)
        passed = report.passed
    else:
        raise ModelValidationError(f"{args.result}:1: a set file cannot be verified")

    code = EXIT_OK if passed else EXIT_INCONCLUSIVE
    if not passed:
        plog.log_error(logger, f"Replay of {args.result} failed")
    write_manifest(out_dir, "verify", inputs, [], seed, _tolerances(run_cfg), code)
    return code


def _inputs_of(args: argparse.Namespace) -> Dict[str, str]:
    names = ("model", "result", "from_set", "dual_mode")
    return {name: str(getattr(args, name)) for name in names if getattr(args, name, None)}


_COMMANDS = {
    "certify": cmd_certify,
    "reach": cmd_reach,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}


def main(args: Optional[List[str]] = None) -> int:
    """
    Main entry point for the certifier CLI.

    Args:
        args: Optional list of command-line arguments. If None, uses sys.argv.

    Returns:
        int: Exit code (see module docstring).
    """
    parsed_args = parse_args(args)

    try:
        log_dir = validate_directory_path(parsed_args.log_dir, create_if_missing=True)
    except (SecurityError, FileNotFoundError) as e:
        logging.getLogger(plog.PACKAGE_LOGGER_NAME).error(f"Invalid log directory path: {e}")
        return EXIT_INVALID_MODEL

    log_level = get_log_level(parsed_args.log_level)
    logger = plog.initialise_logger(script_name="certifier.py", log_dir=str(log_dir), log_level=log_level)
    plog.log_info(logger, f"Log level set to: {logging.getLevelName(log_level)}")

    out_dir: Optional[Path] = None
    try:
        out_dir = validate_directory_path(parsed_args.out, create_if_missing=True, logger=logger)
        return _COMMANDS[parsed_args.command](parsed_args, out_dir, logger)
    except (PwaCertifierError, FileNotFoundError) as e:
        code = exit_code_for(e)
        plog.log_error(logger, f"{parsed_args.command} failed ({type(e).__name__}): {e}")
        if out_dir is not None:
            write_manifest(out_dir, parsed_args.command, _inputs_of(parsed_args), [], parsed_args.seed, {}, code)
        return code


if __name__ == "__main__":
    raise SystemExit(main())
