"""Command-line interface for latgp."""

import argparse
import io
import json
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd
from loguru import logger
from scipy.linalg import LinAlgError

from . import __version__
from .analytic_model import (
    EVALUATION_HARDWARE,
    explore_parallelism,
    network_latency,
    read_hardware,
    read_network,
)
from .baselines import LINEAR_FORMAT, fit_linear, load_linear, predict_linear, save_linear
from .dataset import Dataset, DistortionSpec, generate_synthetic, load_csv, write_csv
from .evaluation import (
    EvalReport,
    EvaluationConfig,
    FoldError,
    HyperGrid,
    MethodId,
    SelectionCriterion,
    SelectionError,
    compare_methods,
    loocv_mae,
    select_hyperparameters,
)
from .gp_regression import MeanFunctionSpec, fit, load_model, predict, save_model
from .kernels import KernelKind
from .observability import configure_logging, log_stage

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _number_list(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(item) for item in text.split(",") if item.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("expected at least one number")
    return values


def _int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(item) for item in text.split(",") if item.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated integers, got {text!r}"
        ) from exc
    if not values:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return values


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _frame_text(frame: pd.DataFrame) -> str:
    return frame.to_string(index=False, float_format=lambda value: f"{value:.6f}") + "\n"


def _frame_csv(frame: pd.DataFrame) -> str:
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, float_format="%.17g")
    return buffer.getvalue()


def _grid(args) -> HyperGrid:
    defaults = HyperGrid()
    kernels = (KernelKind(args.kernel),) if args.kernel else defaults.kernels
    return HyperGrid(
        lengthscales=args.lengthscales or defaults.lengthscales,
        signal_variance_factors=args.signal_factors or defaults.signal_variance_factors,
        noise_factors=args.noise_factors or defaults.noise_factors,
        kernels=kernels,
        mean_scales=args.mean_scales or defaults.mean_scales,
    )


def cmd_estimate(args) -> int:
    layers = read_network(args.network)
    hardware = read_hardware(args.hw)
    result = network_latency(layers, hardware)
    if args.format == "json":
        document = {
            "hardware": hardware.to_dict(),
            "layers": [breakdown.to_dict() for breakdown in result.per_layer],
            "total_ms": result.total,
        }
        _emit(json.dumps(document, indent=2) + "\n", args.out)
        return EXIT_OK
    frame = pd.DataFrame([breakdown.to_dict() for breakdown in result.per_layer])
    frame.insert(0, "layer", range(len(result.per_layer)))
    if args.format == "csv":
        _emit(_frame_csv(frame), args.out)
    else:
        _emit(_frame_text(frame) + f"total_ms: {result.total:.6f}\n", args.out)
    return EXIT_OK


def cmd_synth(args) -> int:
    hardware = read_hardware(args.hw) if args.hw else EVALUATION_HARDWARE
    distortion = DistortionSpec() if args.distortion == "default" else DistortionSpec.none()
    samples = generate_synthetic(args.seed, args.count, hardware, distortion)
    if args.out is None:
        buffer = io.StringIO()
        write_csv(samples, buffer)
        sys.stdout.write(buffer.getvalue())
    else:
        write_csv(samples, args.out)
    return EXIT_OK


def cmd_fit(args) -> int:
    dataset = Dataset(load_csv(args.data))
    if args.method == MethodId.LINREG.value:
        save_linear(fit_linear(dataset.X, dataset.y), args.model)
        return EXIT_OK
    mean = MeanFunctionSpec.analytic() if args.mean == "analytic" else MeanFunctionSpec.zero()
    X = dataset.design_matrix(with_position=mean.uses_position_column)
    choice = select_hyperparameters(
        X, dataset.y, _grid(args), mean, SelectionCriterion(args.select)
    )
    model = fit(X, dataset.y, choice.kernel, choice.mean, choice.noise_variance)
    save_model(model, args.model)
    logger.bind(event="model_saved", path=str(args.model), choice=choice.describe()).info(
        "model_saved"
    )
    return EXIT_OK


def cmd_predict(args) -> int:
    document = json.loads(Path(args.model).read_text())
    found = document.get("format") if isinstance(document, dict) else None
    dataset = Dataset(load_csv(args.data))
    if found == LINEAR_FORMAT:
        means = predict_linear(load_linear(args.model), dataset.X)
        variances = np.full(len(dataset), np.nan)
    else:
        model = load_model(args.model)
        posterior = predict(
            model, dataset.design_matrix(with_position=model.mean.uses_position_column)
        )
        means, variances = posterior.mean, posterior.variance
    frame = pd.DataFrame(
        {
            "sample": range(len(dataset)),
            "mean_ms": means,
            "variance_ms2": variances,
            "target_ms": dataset.y,
        }
    )
    if args.format == "json":
        records = [
            {key: None if isinstance(value, float) and np.isnan(value) else value
             for key, value in record.items()}
            for record in frame.to_dict(orient="records")
        ]
        _emit(json.dumps(records, indent=2) + "\n", args.out)
    elif args.format == "csv":
        _emit(_frame_csv(frame), args.out)
    else:
        _emit(_frame_text(frame), args.out)
    return EXIT_OK


def _report_output(report: EvalReport, args) -> None:
    if args.format == "json":
        _emit(report.to_json(), args.out)
    elif args.format == "csv":
        _emit(_frame_csv(report.errors_frame()), args.out)
    else:
        _emit(report.to_text(), args.out)


def cmd_loocv(args) -> int:
    dataset = Dataset(load_csv(args.data))
    config = EvaluationConfig(
        grid=_grid(args), criterion=SelectionCriterion(args.select), workers=args.workers
    )
    result = loocv_mae(MethodId(args.method), dataset, config)
    report = EvalReport(
        sample_count=len(dataset),
        targets=tuple(float(value) for value in dataset.y),
        entries=(result,),
    )
    _report_output(report, args)
    return EXIT_OK


def cmd_compare(args) -> int:
    dataset = Dataset(load_csv(args.data))
    report = compare_methods(
        dataset, _grid(args), SelectionCriterion(args.select), workers=args.workers
    )
    _report_output(report, args)
    return EXIT_NUMERICAL if report.failed else EXIT_OK


def cmd_explore(args) -> int:
    layers = read_network(args.network)
    hardware = read_hardware(args.hw)
    candidates = explore_parallelism(layers, hardware, args.pf, args.pc)
    frame = pd.DataFrame(
        {
            "rank": range(1, len(candidates) + 1),
            "pf": [candidate.hardware.pf for candidate in candidates],
            "pc": [candidate.hardware.pc for candidate in candidates],
            "total_ms": [candidate.total for candidate in candidates],
        }
    )
    if args.format == "json":
        _emit(json.dumps(frame.to_dict(orient="records"), indent=2) + "\n", args.out)
    elif args.format == "csv":
        _emit(_frame_csv(frame), args.out)
    else:
        _emit(_frame_text(frame), args.out)
    return EXIT_OK


def _add_format(parser, default: str) -> None:
    parser.add_argument("--format", choices=("json", "csv", "text"), default=default)
    parser.add_argument("--out", type=Path, help="Write output here instead of stdout")


def _add_grid(parser) -> None:
    parser.add_argument("--kernel", choices=[kind.value for kind in KernelKind])
    parser.add_argument("--select", choices=[item.value for item in SelectionCriterion],
                        default=SelectionCriterion.LOOCV_MAE.value)
    parser.add_argument("--lengthscales", type=_number_list)
    parser.add_argument("--signal-factors", type=_number_list)
    parser.add_argument("--noise-factors", type=_number_list)
    parser.add_argument("--mean-scales", type=_number_list)


def _add_workers(parser) -> None:
    parser.add_argument("--workers", type=int, default=max(os.cpu_count() or 1, 1),
                        help="Parallel LOOCV folds; output does not depend on it")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="latgp", description="Latency estimation for FPGA CNN accelerators.")
    parser.add_argument("--version", action="version", version=f"latgp {__version__}")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    estimate = commands.add_parser("estimate", help="Analytic per-layer and network latency")
    estimate.add_argument("--network", type=Path, required=True)
    estimate.add_argument("--hw", type=Path, required=True)
    _add_format(estimate, "text")
    estimate.set_defaults(handler=cmd_estimate)

    synth = commands.add_parser("synth", help="Write a synthetic profiling dataset")
    synth.add_argument("--seed", type=int, default=42)
    synth.add_argument("--count", type=int, default=156)
    synth.add_argument("--hw", type=Path)
    synth.add_argument("--distortion", choices=("default", "none"), default="default")
    synth.add_argument("--out", type=Path)
    synth.set_defaults(handler=cmd_synth)

    fit_parser = commands.add_parser("fit", help="Select hyperparameters and save a model")
    fit_parser.add_argument("--data", type=Path, required=True)
    fit_parser.add_argument("--model", type=Path, required=True)
    fit_parser.add_argument("--mean", choices=("zero", "analytic"), default="analytic")
    fit_parser.add_argument("--method", choices=("gp", MethodId.LINREG.value), default="gp")
    _add_grid(fit_parser)
    fit_parser.set_defaults(handler=cmd_fit)

    predict_parser = commands.add_parser("predict", help="Predict latencies with a saved model")
    predict_parser.add_argument("--data", type=Path, required=True)
    predict_parser.add_argument("--model", type=Path, required=True)
    _add_format(predict_parser, "text")
    predict_parser.set_defaults(handler=cmd_predict)

    loocv = commands.add_parser("loocv", help="Leave-one-out MAE of one method")
    loocv.add_argument("--data", type=Path, required=True)
    loocv.add_argument("--method", choices=[method.value for method in MethodId], required=True)
    _add_grid(loocv)
    _add_workers(loocv)
    _add_format(loocv, "text")
    loocv.set_defaults(handler=cmd_loocv)

    compare = commands.add_parser("compare", help="Rank all methods by leave-one-out MAE")
    compare.add_argument("--data", type=Path, required=True)
    _add_grid(compare)
    _add_workers(compare)
    _add_format(compare, "text")
    compare.set_defaults(handler=cmd_compare)

    explore = commands.add_parser("explore", help="Rank filter/channel parallelism choices")
    explore.add_argument("--network", type=Path, required=True)
    explore.add_argument("--hw", type=Path, required=True)
    explore.add_argument("--pf", type=_int_list, default=(8, 16, 32, 64, 128))
    explore.add_argument("--pc", type=_int_list, default=(8, 16, 32, 64, 128))
    _add_format(explore, "text")
    explore.set_defaults(handler=cmd_explore)
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, FoldError) and exc.__cause__ is not None:
        return _exit_code(exc.__cause__)
    if isinstance(exc, (ArithmeticError, LinAlgError, SelectionError)):
        return EXIT_NUMERICAL
    if isinstance(exc, (ValueError, OSError, KeyError)):
        return EXIT_DATA
    return EXIT_NUMERICAL


def main(argv: list[str] | None = None) -> int:
    """Main CLI entry point."""
    configure_logging()
    args = build_parser().parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        with log_stage("command", command=args.command):
            return args.handler(args)
    except (ValueError, OSError, KeyError, ArithmeticError, LinAlgError,
            SelectionError, FoldError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
