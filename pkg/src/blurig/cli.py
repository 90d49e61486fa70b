"""Command-line front end.

Exit codes: 0 success, 1 a checked axiom failed, 2 invalid flags,
3 a model, input or output file could not be read or written,
4 inputs of mismatched shape.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, io
from .attribution import (InsufficientBlurWarning, PathSpec, attribute, prediction_trend,
                          resolve_sigma_max)
from .axioms import SUITES, run_suite
from .errors import InputFormatError, ModelFormatError, ParameterError, ValidationError
from .evaluation import (METHODS, SHAPE_KINDS, compare_methods, generate_shape_dataset,
                         load_dataset, write_comparison)
from .model import (DifferentiableModel, builtin_models, load_model, load_packaged_model,
                    save_model)
from .plotting import COLORMAPS, RenderConfig, render_saliency, render_trend

EXIT_OK, EXIT_AXIOM, EXIT_USAGE, EXIT_LOAD, EXIT_SHAPE = 0, 1, 2, 3, 4
META_FORMAT_VERSION = 1


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# -- helpers -----------------------------------------------------------------

def _load_model(spec: str) -> DifferentiableModel:
    """``path``, ``packaged:<name>`` or ``builtin:<name>[:HxW[:seed]]``."""
    try:
        if spec.startswith("packaged:"):
            return load_packaged_model(spec.split(":", 1)[1])
        if spec.startswith("builtin:"):
            parts = spec.split(":")
            shape = _shape(parts[2]) if len(parts) > 2 else (16, 16)
            seed = int(parts[3]) if len(parts) > 3 else 0
            models = builtin_models(shape, seed)
            if parts[1] not in models:
                raise CliError(EXIT_USAGE, f"unknown built-in model {parts[1]!r}; "
                                           f"expected one of {tuple(models)}")
            return models[parts[1]]
        return load_model(spec)
    except (ModelFormatError, ValidationError) as exc:
        raise CliError(EXIT_LOAD, f"cannot load model: {exc}") from exc
    except ValueError as exc:
        raise CliError(EXIT_USAGE, f"bad model specification {spec!r}: {exc}") from exc


def _load_input(path: str, model: DifferentiableModel) -> np.ndarray:
    try:
        x = io.read_input(path)
    except InputFormatError as exc:
        raise CliError(EXIT_LOAD, str(exc)) from exc
    if x.shape != tuple(model.input_shape):
        if x.ndim == 2 and 1 in x.shape and x.size == np.prod(model.input_shape):
            x = x.reshape(model.input_shape)  # a signal stored as one CSV row
        else:
            raise CliError(EXIT_SHAPE, f"input {path} has shape {x.shape}, "
                                       f"model expects {tuple(model.input_shape)}")
    return x


def _shape(text: str) -> tuple:
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise ValueError(f"expected HxW, got {text!r}")
    return int(parts[0]), int(parts[1])


def _class_list(text: str) -> list:
    try:
        classes = [int(c) for c in text.split(",") if c.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated class indices, got {text!r}")
    if not classes:
        raise argparse.ArgumentTypeError("at least one class is required")
    return classes


def _baseline(text: str):
    if text in ("black", "grayscale"):
        return text, None
    if text.startswith("random"):
        seed = text.split(":", 1)[1] if ":" in text else "0"
        try:
            return "random", int(seed)
        except ValueError:
            pass
    raise argparse.ArgumentTypeError(f"baseline must be black, grayscale or random:<seed>, got {text!r}")


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        value = 0
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        value = float("nan")
    if not value > 0 or not np.isfinite(value):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return value


def _flags(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "handler"}


def _comments(args) -> list:
    return [f"blurig {__version__}", "flags: " + json.dumps(_flags(args), sort_keys=True)]


def _round(value: float) -> float:
    """Round to the printed precision so metadata is stable across platforms."""
    return float(io.format_float(value))


def _write_json(path, doc) -> None:
    io.write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _check_output_prefix(prefix: str) -> None:
    parent = Path(prefix).parent
    if not parent.is_dir():
        raise CliError(EXIT_LOAD, f"output directory {parent} does not exist")


def _path_spec(args) -> PathSpec:
    if args.method == "blur-ig":
        if args.baseline is not None:
            raise CliError(EXIT_USAGE, "--baseline applies to --method ig only")
        return PathSpec.blur(args.sigma_max, args.steps, args.boundary)
    if args.sigma_max is not None:
        raise CliError(EXIT_USAGE, "--sigma-max applies to --method blur-ig only")
    kind, seed = args.baseline or ("black", None)
    return PathSpec.intensity(kind, args.steps, seed)


# -- commands ----------------------------------------------------------------

def cmd_attribute(args) -> int:
    path = _path_spec(args)
    _check_output_prefix(args.out)
    model = _load_model(args.model)
    x = _load_input(args.input, model)
    if not 0 <= args.cls < model.num_outputs:
        raise CliError(EXIT_USAGE, f"--class {args.cls} is outside 0..{model.num_outputs - 1}")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", InsufficientBlurWarning)
        result = attribute(model, x, args.cls, path)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    comments = _comments(args)
    io.write_grid_csv(f"{args.out}.attr.csv", result.values, comments)
    config = RenderConfig(args.colormap, args.clip, args.overlay)
    render_saliency(result.values, f"{args.out}.saliency.png", config, image=x)
    meta = {
        "format_version": META_FORMAT_VERSION,
        "version": __version__,
        "command": "attribute",
        "flags": _flags(args),
        "path": path.to_dict(),
        "output_index": result.output_index,
        "input_shape": list(x.shape),
        "f_start": _round(result.f_start),
        "f_end": _round(result.f_end),
        "total": _round(result.total),
        "completeness_residual": _round(result.completeness_residual),
        "relative_residual": _round(result.relative_residual),
        "warnings": [str(w.message) for w in caught],
    }
    if path.kind == "blur":
        meta["sigma_max_used"] = _round(resolve_sigma_max(x, path))
    _write_json(f"{args.out}.meta.json", meta)
    return EXIT_OK


def cmd_trend(args) -> int:
    path = _path_spec(args)
    _check_output_prefix(args.out)
    model = _load_model(args.model)
    x = _load_input(args.input, model)
    for c in args.classes:
        if not 0 <= c < model.num_outputs:
            raise CliError(EXIT_USAGE, f"class {c} is outside 0..{model.num_outputs - 1}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", InsufficientBlurWarning)
        curve = prediction_trend(model, x, args.classes, path, args.scores)
    header = ["sigma", "alpha"] + [f"score_{c}" for c in curve.tracked_classes] + ["cumulative_mass"]
    rows = [[float(curve.sigmas[i]), float(curve.alphas[i])]
            + [float(v) for v in curve.scores[i]] + [float(curve.cumulative_mass[i])]
            for i in range(len(curve.alphas))]
    io.write_text(f"{args.out}.trend.csv", io.csv_text(header, rows, _comments(args)))
    if not args.no_plot:
        render_trend(curve, f"{args.out}.trend.png", model.class_names)
    return EXIT_OK


def cmd_axioms(args) -> int:
    report_path = Path(args.report)
    if not report_path.parent.is_dir() or report_path.is_dir():
        raise CliError(EXIT_LOAD, f"cannot write report to {report_path}")
    report = run_suite(args.suite, args.seed, broken=args.broken)
    doc = {"format_version": META_FORMAT_VERSION, "version": __version__,
           "flags": _flags(args)}
    doc.update(report.to_dict())
    try:
        _write_json(report_path, doc)
    except OSError as exc:
        raise CliError(EXIT_LOAD, f"cannot write report: {exc}") from exc
    for entry in report.entries:
        if entry.asserted and not entry.passed:
            print(f"FAILED {entry.name}: {json.dumps(entry.report, default=str)[:300]}",
                  file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_AXIOM


def _dataset(spec: str, size, kinds, center: bool = False):
    if spec.startswith("generate:"):
        parts = spec.split(":")
        try:
            n, seed = int(parts[1]), int(parts[2]) if len(parts) > 2 else 0
        except (IndexError, ValueError):
            raise CliError(EXIT_USAGE, f"--dataset expects generate:<n>:<seed>, got {spec!r}")
        if n < 1:
            raise CliError(EXIT_USAGE, "--dataset needs at least one sample")
        return generate_shape_dataset(n, size, kinds, seed=seed, center=center)
    try:
        return load_dataset(spec)
    except InputFormatError as exc:
        raise CliError(EXIT_LOAD, str(exc)) from exc
    except ValidationError as exc:
        raise CliError(EXIT_SHAPE, str(exc)) from exc


def cmd_eval(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown or not methods:
        raise CliError(EXIT_USAGE, f"unknown methods {unknown}; expected some of {METHODS}")
    kinds = tuple(k.strip() for k in args.kinds.split(","))
    if any(k not in SHAPE_KINDS for k in kinds):
        raise CliError(EXIT_USAGE, f"--kinds must be drawn from {SHAPE_KINDS}")
    _check_output_prefix(args.out)
    model = _load_model(args.model)
    dataset = _dataset(args.dataset, args.size, kinds, args.center)
    if not dataset:
        raise CliError(EXIT_LOAD, "the dataset is empty")
    for i, s in enumerate(dataset):
        if s.field.shape != tuple(model.input_shape):
            raise CliError(EXIT_SHAPE, f"sample {i} has shape {s.field.shape}, "
                                       f"model expects {tuple(model.input_shape)}")
        if not 0 <= s.label < model.num_outputs:
            raise CliError(EXIT_SHAPE, f"sample {i} has class {s.label} outside the model outputs")
    result = compare_methods(model, dataset, methods, args.steps, args.sigma_max, args.seed)
    write_comparison(result, args.out, _comments(args),
                     {"format_version": META_FORMAT_VERSION, "version": __version__,
                      "flags": _flags(args)})
    summary = [[m, v["auc"], v["f1"], v["mae"], v["n"]] for m, v in result.summary().items()]
    io.write_text(f"{args.out}.summary.csv",
                  io.csv_text(["method", "auc", "f1", "mae", "n"], summary, _comments(args)))
    return EXIT_OK


def cmd_fit(args) -> int:
    from .training import accuracy, fit_convnet_small

    kinds = tuple(k.strip() for k in args.kinds.split(","))
    if any(k not in SHAPE_KINDS for k in kinds):
        raise CliError(EXIT_USAGE, f"--kinds must be drawn from {SHAPE_KINDS}")
    out = Path(args.out)
    if not out.parent.is_dir():
        raise CliError(EXIT_LOAD, f"output directory {out.parent} does not exist")
    data = generate_shape_dataset(args.samples, args.size, kinds, seed=args.data_seed,
                                  center=args.center)
    images = np.stack([s.field for s in data])
    labels = np.array([s.label for s in data])
    model, history = fit_convnet_small(images, labels, len(kinds), epochs=args.epochs,
                                       learning_rate=args.learning_rate, seed=args.seed,
                                       class_names=kinds)
    save_model(model, out)
    print(f"final training loss {history.loss[-1]:.4f}, "
          f"accuracy {accuracy(model, images, labels):.3f}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def _add_path_flags(p) -> None:
    p.add_argument("--method", choices=("ig", "blur-ig"), default="blur-ig")
    p.add_argument("--model", required=True,
                   help="weights JSON, packaged:<name> or builtin:<name>[:HxW[:seed]]")
    p.add_argument("--input", required=True, help="PNG/PGM image or CSV grid")
    p.add_argument("--steps", type=_positive_int, default=200)
    p.add_argument("--sigma-max", type=_positive_float, default=None)
    p.add_argument("--baseline", type=_baseline, default=None,
                   help="black, grayscale or random:<seed> (ig only)")
    p.add_argument("--boundary", choices=("reflect", "clamp"), default="reflect")
    p.add_argument("--out", required=True, help="output prefix")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blurig", description="Blur Integrated Gradients and path-method attribution.")
    parser.add_argument("--version", action="version", version=f"blurig {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attribute", help="attribution map for one class")
    _add_path_flags(p)
    p.add_argument("--class", dest="cls", type=int, required=True)
    p.add_argument("--colormap", choices=COLORMAPS, default="signed_green_red")
    p.add_argument("--clip", type=float, default=99.0, help="percentile clip for rendering")
    p.add_argument("--overlay", action="store_true", help="blend the map over the input")
    p.set_defaults(handler=cmd_attribute)

    p = sub.add_parser("trend", help="class scores and accrued attribution along the path")
    _add_path_flags(p)
    p.add_argument("--classes", type=_class_list, required=True)
    p.add_argument("--scores", choices=("auto", "softmax", "raw"), default="auto")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(handler=cmd_trend)

    p = sub.add_parser("axioms", help="run the axiom checks on built-in fixtures")
    p.add_argument("--suite", choices=SUITES, default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True, help="JSON report path")
    p.add_argument("--broken", action="store_true",
                   help="use a deliberately broken method (negative control)")
    p.set_defaults(handler=cmd_axioms)

    p = sub.add_parser("eval", help="localization metrics against shape masks")
    p.add_argument("--methods", default="blur-ig,random",
                   help=f"comma-separated subset of {','.join(METHODS)}")
    p.add_argument("--dataset", required=True, help="generate:<n>:<seed> or a dataset directory")
    p.add_argument("--model", required=True)
    p.add_argument("--size", type=_shape, default=(32, 32))
    p.add_argument("--kinds", default=",".join(SHAPE_KINDS))
    p.add_argument("--center", action="store_true", help="shift generated images to a common mean")
    p.add_argument("--steps", type=_positive_int, default=200)
    p.add_argument("--sigma-max", type=_positive_float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("fit", help="train convnet_small on generated shapes")
    p.add_argument("--kinds", default=",".join(SHAPE_KINDS))
    p.add_argument("--samples", type=_positive_int, default=1500)
    p.add_argument("--size", type=_shape, default=(32, 32))
    p.add_argument("--data-seed", type=int, default=1000)
    p.add_argument("--center", action="store_true", help="shift every image to a common mean")
    p.add_argument("--epochs", type=_positive_int, default=30)
    p.add_argument("--learning-rate", type=_positive_float, default=0.005)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="weights JSON path")
    p.set_defaults(handler=cmd_fit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except CliError as exc:
        print(f"blurig: error: {exc}", file=sys.stderr)
        if exc.code == EXIT_USAGE:
            parser.print_usage(sys.stderr)
        return exc.code
    except ParameterError as exc:
        print(f"blurig: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        print(f"blurig: error: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except OSError as exc:
        print(f"blurig: error: {exc}", file=sys.stderr)
        return EXIT_LOAD


if __name__ == "__main__":
    sys.exit(main())
