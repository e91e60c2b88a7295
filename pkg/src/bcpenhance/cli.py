"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 solver non-convergence
or training divergence, 4 self-test failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .enhance import PipelineConfig, enhance_pair
from .image import ImageFormatError, RasterImage, load_image, save_image, thread_cap
from .network import TrainConfig, TrainingDiverged, save_checkpoint, train
from .prior import PatchSpec, bright_channel
from .selftest import format_table, run_selftest
from .solver import ConvergenceError

REPORT_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_SOLVER, EXIT_SELFTEST = 0, 1, 2, 3, 4

log = logging.getLogger("bcpenhance")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _ambient_arg(text):
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated values")
    return tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bcpenhance", description="Thermal-guided low-light enhancement")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def pair_and_model(p):
        p.add_argument("--visible", required=True, type=Path)
        p.add_argument("--thermal", required=True, type=Path)
        p.add_argument("--lambda", dest="lam", type=float, default=1e-2)
        p.add_argument("--gamma", type=float, default=2.0)
        p.add_argument("--patch-radius", type=int, default=7)
        p.add_argument("--t-min", type=float, default=0.05)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--report", type=Path, help="JSON report; a summary figure is written beside it")
        p.add_argument("--no-figures", action="store_true", help="skip the matplotlib summary figure")

    e = sub.add_parser("enhance", help="enhance an aligned visible/thermal pair")
    pair_and_model(e)
    e.add_argument("--out", required=True, type=Path)
    e.add_argument("--solver", choices=("direct", "network"), default="direct")
    e.add_argument("--beta", type=float, default=0.1)
    e.add_argument("--ambient", type=_ambient_arg, help="override the estimated ambient light, R,G,B")
    e.add_argument("--tolerance", type=float, default=1e-6)
    e.add_argument("--max-iterations", type=int, default=2000)
    e.add_argument("--steps", type=int, default=500, help="training steps for --solver network")
    e.add_argument("--lr", type=float, default=1.0, help="learning rate for --solver network")
    e.add_argument("--dump-intermediates", type=Path, metavar="DIR")

    t = sub.add_parser("train", help="train the enhancement network on one pair")
    pair_and_model(t)
    t.add_argument("--steps", type=int, default=500)
    t.add_argument("--lr", type=float, default=1.0)
    t.add_argument("--checkpoint", type=Path, required=True)

    s = sub.add_parser("selftest", help="run the embedded property suite")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    return parser


def _load_pair(args):
    visible, thermal = load_image(args.visible), load_image(args.thermal)
    if visible.size != thermal.size:
        raise UsageError(
            f"image sizes differ: visible {visible.width}x{visible.height}, "
            f"thermal {thermal.width}x{thermal.height}"
        )
    if visible.channels != 3:
        raise UsageError(f"visible image must be RGB, got {visible.channels} channel(s)")
    return visible, thermal


def _json_safe(value):
    # NaN and inf are not JSON; a diverged solve reports them as null
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _write_json(path: Path, payload: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_json_safe(payload), indent=2, sort_keys=True, allow_nan=False) + "\n")


def _sidecar(report: Path, tag: str, suffix: str) -> Path:
    return report.with_name(f"{report.stem}_{tag}{suffix}")


def _finish_report(args, report: dict, timings: dict, figure=None):
    """Write the report, its timings sidecar and figure; record every path written."""
    if args.report is None:
        return
    args.report.parent.mkdir(parents=True, exist_ok=True)
    paths = report.setdefault("paths", {})
    timing_path = _sidecar(args.report, "timings", ".json")
    paths["timings"] = str(timing_path)
    if figure is not None and not args.no_figures:
        fig_path = _sidecar(args.report, "figure", ".png")
        try:
            figure(fig_path)
            paths["figure"] = str(fig_path)
        except Exception as exc:  # a broken figure must not lose the report
            log.warning("figure rendering failed: %s", exc)
    paths["report"] = str(args.report)
    # wall-clock times live in a sidecar so the report itself is reproducible
    _write_json(timing_path, {"report_version": REPORT_VERSION, "seconds": timings})
    _write_json(args.report, report)


def _dump(directory: Path, name: str, field, written: dict, scaling: dict):
    path = directory / f"{name}.png"
    save_image(RasterImage(np.clip(field, 0.0, 1.0)), path)
    written[name] = str(path)
    scaling[name] = {"offset": 0.0, "scale": 255.0}


def cmd_enhance(args) -> int:
    started = time.perf_counter()
    cfg = PipelineConfig(
        patch=PatchSpec(args.patch_radius),
        lam=args.lam,
        gamma=args.gamma,
        t_min=args.t_min,
        beta=args.beta,
        solver=args.solver,
        tolerance=args.tolerance,
        max_iterations=args.max_iterations,
        learning_rate=args.lr,
        steps=args.steps,
        seed=args.seed,
        ambient=args.ambient,
    )
    visible, thermal = _load_pair(args)
    load_time = time.perf_counter() - started
    report = {"report_version": REPORT_VERSION, "command": "enhance", "config": cfg.as_dict(),
              "inputs": {"visible": str(args.visible), "thermal": str(args.thermal),
                         "width": visible.width, "height": visible.height}}
    try:
        result = enhance_pair(visible, thermal, cfg)
    except (ConvergenceError, TrainingDiverged) as exc:
        report["status"] = "solver_failed"
        report["error"] = str(exc)
        if isinstance(exc, ConvergenceError):
            report["solver"] = {"iterations": exc.iterations, "residual": exc.residual}
        else:
            report["solver"] = {"diverged_at_step": exc.step}
        _finish_report(args, report, {"load": load_time})
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    write_start = time.perf_counter()
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_image(result.enhanced, args.out)
    written = {"enhanced": str(args.out)}
    scaling = {}
    if args.dump_intermediates is not None:
        d = args.dump_intermediates
        d.mkdir(parents=True, exist_ok=True)
        _dump(d, "t", result.t.values, written, scaling)
        _dump(d, "t_tilde", result.t_tilde.values, written, scaling)
        _dump(d, "attention", result.attention.values, written, scaling)
        _dump(d, "bright_channel", bright_channel(visible, cfg.patch).data[0], written, scaling)

    report.update(
        status="ok",
        ambient=list(result.ambient.as_tuple()),
        loss={
            "initial": result.loss_initial.as_dict(),
            "refined": result.loss_refined.as_dict(),
            "final": result.loss_final.as_dict(),
        },
        objective={
            "initial": result.loss_initial.total,
            "refined": result.loss_refined.total,
            "final": result.loss_final.total,
            "nonincreasing": result.objective_nonincreasing,
        },
        total_loss=result.detector.as_dict(),
        bright_channel_mean={"input": result.bright_in, "output": result.bright_out},
        clamp_counts={"enhanced_low": result.clamped_low, "enhanced_high": result.clamped_high,
                      "illumination": result.t_clamped},
        solver={"iterations": result.solver_iterations, "residual": result.solver_residual},
        intermediate_scaling=scaling,
        paths=written,
    )
    if result.train_history:
        report["train_loss_history"] = [h.total for h in result.train_history]
    timings = dict(load=load_time, **result.timings, write=time.perf_counter() - write_start)

    def figure(path):
        from .plotting import enhance_figure

        enhance_figure(visible, thermal, result, path)

    _finish_report(args, report, timings, figure)
    log.info("wrote %s (objective %.4g -> %.4g)", args.out, result.loss_initial.total, result.loss_refined.total)
    return EXIT_OK


def cmd_train(args) -> int:
    started = time.perf_counter()
    cfg = TrainConfig(
        learning_rate=args.lr, steps=args.steps, lam=args.lam, seed=args.seed, gamma=args.gamma,
        patch=PatchSpec(args.patch_radius), t_min=args.t_min,
    )
    visible, thermal = _load_pair(args)
    report = {"report_version": REPORT_VERSION, "command": "train",
              "config": {"learning_rate": cfg.learning_rate, "steps": cfg.steps, "lambda": cfg.lam,
                         "seed": cfg.seed, "gamma": cfg.gamma, "patch_radius": cfg.patch.radius,
                         "t_min": cfg.t_min},
              "inputs": {"visible": str(args.visible), "thermal": str(args.thermal)}}
    try:
        result = train(visible, thermal, cfg)
    except TrainingDiverged as exc:
        report.update(status="diverged", diverged_at_step=exc.step, error=str(exc),
                      loss_history=[h.total for h in exc.history])
        _finish_report(args, report, {"train": time.perf_counter() - started})
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    train_time = time.perf_counter() - started
    args.checkpoint.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.params, args.checkpoint)
    history = result.history
    report.update(
        status="ok",
        ambient=list(result.ambient.as_tuple()),
        loss_history=[h.total for h in history],
        data_term_history=[h.data_term for h in history],
        smoothness_term_history=[h.smoothness_term for h in history],
        initial_loss=history[0].total,
        final_loss=history[-1].total,
        paths={"checkpoint": str(args.checkpoint)},
    )

    def figure(path):
        from .plotting import training_figure

        training_figure(history, path)

    _finish_report(args, report, {"train": train_time}, figure)
    return EXIT_OK


def cmd_selftest(args) -> int:
    results = run_selftest(args.seed, args.inject_fault)
    print(format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_SELFTEST


COMMANDS = {"enhance": cmd_enhance, "train": cmd_train, "selftest": cmd_selftest}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        with threadpool_limits(limits=thread_cap()):
            return COMMANDS[args.command](args)
    except (ImageFormatError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, ValueError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
