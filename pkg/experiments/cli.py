import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Optional

from experiments.config import ConfigError, ExperimentConfig, load_experiment_config
from experiments.harness import estimate_min_m, monotonicity_violations, run_noise_sweep, run_phase_diagram
from sensing.analysis import AnalysisError, compute_parameters
from sensing.certify import CertificationError, cone_bound_check, lm14_certify, structure_check
from sensing.generators import GeneratorError
from sensing.measurement import MeasurementError, hadamard_triple, make_partial_circulant
from sensing.solver import SolverError, certify_optimality, solve_bpdn
from utils.formatters import FormatError, dumps_report, read_mask, read_matrix, read_vector, write_csv, write_json, write_vector
from utils.telemetry import get_telemetry_logger

logger = logging.getLogger(__name__)

DOMAIN_ERRORS = (
    ConfigError,
    MeasurementError,
    GeneratorError,
    AnalysisError,
    SolverError,
    CertificationError,
    FormatError,
)


def _emit(report: Any, output: Optional[str]) -> None:
    if output:
        write_json(output, report)
        logger.info("report written to %s", output)
    else:
        sys.stdout.write(dumps_report(report) + "\n")


def _config(args: argparse.Namespace, **overrides: Any) -> ExperimentConfig:
    overrides.setdefault("master_seed", args.seed)
    overrides.setdefault("workers", args.workers)
    return load_experiment_config(args.config, overrides)


def _cmd_recover(args: argparse.Namespace) -> None:
    xi = read_vector(args.xi)
    mask = read_mask(args.mask)
    y = read_vector(args.y)
    config = _config(args, q=args.q, eta=args.eta)
    solver = replace(config.solver, q=config.q, eta=config.eta)
    B = make_partial_circulant(xi, mask)
    result = solve_bpdn(B, y, solver)
    gap = certify_optimality(B, y, solver, result)
    if args.x_out:
        write_vector(args.x_out, result.x_sharp)
    _emit({"result": result.summary(), "certificate": gap}, args.output)


def _cmd_phase_diagram(args: argparse.Namespace) -> None:
    config = _config(args, output=args.output)
    diagram = run_phase_diagram(config, output=config.output)
    for v in monotonicity_violations(diagram):
        logger.warning("monotonicity violation along %s at %d: %d -> %d (p=%.3g)", v.axis, v.fixed, v.lower, v.upper, v.p_value)


def _cmd_min_m(args: argparse.Namespace) -> None:
    config = _config(args, n=args.n)
    s_values = args.s or config.s_grid
    target = args.target if args.target is not None else config.target_rate
    results = [estimate_min_m(config.n, s, target, config) for s in s_values]
    _emit({"n": config.n, "target_rate": target, "results": results}, args.output)


def _cmd_noise_sweep(args: argparse.Namespace) -> None:
    config = _config(args)
    m = args.m or config.m_grid[0]
    s = args.s if args.s is not None else config.s_grid[0]
    eta_grid = args.eta or config.eta_grid
    sweep = run_noise_sweep(config.n, m, s, eta_grid, config.q, config, quantized=args.quantized, output=args.output)
    if not args.output:
        sys.stdout.write(sweep.to_frame().to_csv(index=False))
    logger.info("fitted slope %.6g, intercept %.6g", sweep.slope, sweep.intercept)


def _cmd_certify(args: argparse.Namespace) -> None:
    A = read_matrix(args.matrix)
    cert = lm14_certify(A, args.r, args.nu, samples=args.samples, seed=args.seed or 0)
    cone = cone_bound_check(A, cert, samples=args.samples, seed=args.seed or 0)
    _emit({"certificate": cert, "cone_check": cone}, args.output)


def _cmd_structure_check(args: argparse.Namespace) -> None:
    U, W, O = hadamard_triple(args.n, args.kind)
    params = compute_parameters(args.n, args.r)
    report = structure_check(
        args.n, args.r, U, W, O, args.ensemble, args.samples, args.seed or 0, params=params, alpha=args.alpha
    )
    if args.output and Path(args.output).suffix == ".csv":
        write_csv(args.output, report.rows, ("sample", "support", "l2_scaled", "topk_scaled", "regular"))
        write_json(Path(args.output).with_suffix(".json"), report)
    else:
        _emit(report, args.output)


def _cmd_params(args: argparse.Namespace) -> None:
    params = compute_parameters(args.n, args.r, kappa4=args.kappa4)
    _emit(params, args.output)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Sparse recovery from subsampled random convolutions.")
    parser.add_argument("--log-level", default="INFO", help="Python logging level (default: INFO)")
    parser.add_argument("--seed", type=int, default=None, help="Override the master seed")
    parser.add_argument("--config", default=None, help="Experiment config (.toml or .json)")
    parser.add_argument("--output", default=None, help="Output path (CSV or JSON); stdout when omitted")
    parser.add_argument("--workers", type=int, default=None, help="Worker threads for trials")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("recover", help="Solve one instance from vector and mask files.")
    p.add_argument("--xi", required=True, help="Generator vector (binary)")
    p.add_argument("--mask", required=True, help="Selector mask (JSON)")
    p.add_argument("--y", required=True, help="Measurements (binary)")
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--q", default=None, help="2 or inf")
    p.add_argument("--x-out", default=None, help="Write the recovered vector here (binary)")
    p.set_defaults(handler=_cmd_recover)

    p = sub.add_parser("phase-diagram", help="Success rates over the (s, m) grid.")
    p.set_defaults(handler=_cmd_phase_diagram)

    p = sub.add_parser("min-m", help="Bisect for the smallest m reaching a target success rate.")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--s", type=int, nargs="*", default=None)
    p.add_argument("--target", type=float, default=None)
    p.set_defaults(handler=_cmd_min_m)

    p = sub.add_parser("noise-sweep", help="Median error versus noise level.")
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--s", type=int, default=None)
    p.add_argument("--eta", type=float, nargs="*", default=None)
    p.add_argument("--quantized", action="store_true", help="Quantize Bx with step 2*eta and decode with q=inf")
    p.set_defaults(handler=_cmd_noise_sweep)

    p = sub.add_parser("certify", help="Null space certificate for a dense matrix.")
    p.add_argument("--matrix", required=True, help="Matrix file (.npy, .csv or whitespace text)")
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--nu", type=float, default=0.5)
    p.add_argument("--samples", type=int, default=1000)
    p.set_defaults(handler=_cmd_certify)

    p = sub.add_parser("structure-check", help="Monte Carlo structure of Gamma_v xi over sparse v.")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--kind", default="fourier", help="fourier, dft, idft, walsh or dct")
    p.add_argument("--ensemble", default="gaussian")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--alpha", type=float, default=0.5)
    p.set_defaults(handler=_cmd_structure_check)

    p = sub.add_parser("params", help="Print the sparsity parameters for (n, r).")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--kappa4", type=float, default=None)
    p.set_defaults(handler=_cmd_params)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.INFO))

    telemetry = get_telemetry_logger()
    try:
        with telemetry.timed_operation("cli", args.command, payload={"seed": args.seed}, component="cli"):
            args.handler(args)
    except DOMAIN_ERRORS as e:
        parser.error(str(e))
    finally:
        telemetry.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
