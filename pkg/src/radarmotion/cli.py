"""Command-line entry point: ``radarmotion <command> [flags]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings

from . import pipeline
from .autodiff import NumericalError, TrainingError
from .autodiff.nn import ConfigError as LayerConfigError
from .condition import ConditionError, EstimationError, SelectionError
from .config import PROFILES, ConfigError, load_config
from .dataset import PipelineError
from .io import DataError
from .metrics import MetricError
from .radar import MeasurementError

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

# flag dest -> config key
FLAG_KEYS = {
    "actors": "sim.actors", "frames": "sim.frames", "fps": "sim.fps", "seed": "seed",
    "H": "pipeline.H", "F": "pipeline.F", "thre": "pipeline.thre", "pad_to": "pipeline.pad_to",
    "window": "pipeline.window",
    "n2": "codec.n2", "anchors": "fdm.anchors", "feat_dim": "fdm.feat_dim",
    "K": "diffusion.K", "blocks": "gst.blocks", "d_model": "gst.d_model", "n1": "codec.n1",
    "ddim_steps": "sampler.ddim_steps", "reverse_rule": "sampler.reverse_rule",
    "k": "eval.k", "mm_threshold": "eval.mm_threshold",
}
# --steps / --lr mean different keys for the two training commands
STAGE_FLAG_KEYS = {
    "train-fdm": {"steps": "fdm.steps", "lr": "fdm.lr"},
    "train": {"steps": "diffusion.steps", "lr": "diffusion.lr"},
}


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="radarmotion", description=__doc__.splitlines()[0])
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        c = sub.add_parser(name, help=help_text)
        c.add_argument("--config", help="TOML config file")
        c.add_argument("--profile", choices=sorted(PROFILES))
        c.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key")
        return c

    c = command("simulate", "synthesize actors and their radar point clouds")
    c.add_argument("--actors", type=int)
    c.add_argument("--frames", type=int)
    c.add_argument("--fps", type=float)
    c.add_argument("--seed", type=int)
    c.add_argument("--out-poses", required=True)
    c.add_argument("--out-radar", required=True)

    c = command("preprocess", "window, crop and split into a dataset file")
    c.add_argument("--poses", required=True)
    c.add_argument("--radar", required=True)
    c.add_argument("--H", type=int)
    c.add_argument("--F", type=int)
    c.add_argument("--thre", type=float)
    c.add_argument("--pad-to", type=int)
    c.add_argument("--window", type=int)
    c.add_argument("--seed", type=int)
    c.add_argument("--out", required=True)

    c = command("train-fdm", "train the pose estimator and the frequency-domain motion network")
    c.add_argument("--dataset", required=True)
    c.add_argument("--n2", type=int)
    c.add_argument("--anchors", type=int)
    c.add_argument("--feat-dim", type=int)
    c.add_argument("--steps", type=int)
    c.add_argument("--lr", type=float)
    c.add_argument("--seed", type=int)
    c.add_argument("--checkpoint-out", required=True)

    c = command("train", "train the conditioned diffusion model")
    c.add_argument("--dataset", required=True)
    c.add_argument("--fdm-checkpoint", required=True)
    c.add_argument("--K", type=int)
    c.add_argument("--blocks", type=int)
    c.add_argument("--d-model", type=int)
    c.add_argument("--n1", type=int)
    c.add_argument("--steps", type=int)
    c.add_argument("--lr", type=float)
    c.add_argument("--seed", type=int)
    c.add_argument("--checkpoint-out", required=True)

    c = command("predict", "sample future hypotheses for the test split")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--dataset", required=True)
    c.add_argument("--hypotheses", type=int, default=10)
    c.add_argument("--ddim-steps", type=int)
    c.add_argument("--reverse-rule", choices=("standard", "paper-literal"))
    c.add_argument("--seed", type=int)
    c.add_argument("--out", required=True)

    c = command("evaluate", "score predictions against the test split")
    c.add_argument("--predictions", required=True)
    c.add_argument("--dataset", required=True)
    c.add_argument("--k", type=int)
    c.add_argument("--mm-threshold", type=float)
    c.add_argument("--out-csv", required=True)

    c = command("run", "all stages with caching and a manifest")
    c.add_argument("--workdir", required=True)

    c = command("sweep", "one run per value of a config key")
    c.add_argument("--workdir", required=True)
    c.add_argument("--axis", required=True)
    c.add_argument("--values", required=True, help="comma-separated values")
    c.add_argument("--out-csv", required=True)
    return p


def config_from_args(args):
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected KEY=VALUE")
        key, value = item.split("=", 1)
        overrides[key.strip()] = _parse_value(value.strip())
    keys = {**FLAG_KEYS, **STAGE_FLAG_KEYS.get(args.command, {})}
    for dest, key in keys.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[key] = value
    return load_config(args.config, args.profile, overrides)


def dispatch(args) -> None:
    cfg = config_from_args(args)
    cmd = args.command
    if cmd == "simulate":
        pipeline.simulate(cfg, args.out_poses, args.out_radar)
    elif cmd == "preprocess":
        n_train, n_test = pipeline.preprocess(cfg, args.poses, args.radar, args.out)
        print(f"{n_train} train / {n_test} test samples -> {args.out}")
    elif cmd == "train-fdm":
        pipeline.train_fdm_stage(cfg, args.dataset, args.checkpoint_out)
    elif cmd == "train":
        pipeline.train_stage(cfg, args.dataset, args.fdm_checkpoint, args.checkpoint_out)
    elif cmd == "predict":
        pipeline.predict(cfg, args.checkpoint, args.dataset, args.out, hypotheses=args.hypotheses)
    elif cmd == "evaluate":
        report = pipeline.evaluate_stage(cfg, args.predictions, args.dataset, args.out_csv)
        agg = report.aggregate
        print(" ".join(f"{k}={'-' if v is None else f'{v:.4f}'}" for k, v in agg.items()))
    elif cmd == "run":
        manifest = pipeline.run_pipeline(cfg, args.workdir)
        print(f"manifest {manifest['manifest_hash'][:16]} -> {args.workdir}/manifest.json")
    elif cmd == "sweep":
        values = [_parse_value(v.strip()) for v in args.values.split(",") if v.strip()]
        rows = pipeline.sweep(cfg, args.axis, values, args.workdir, args.out_csv)
        print(f"{len(rows)} rows -> {args.out_csv}")


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, pipeline.StageError):
        return exit_code(exc.cause)
    if isinstance(exc, (NumericalError, TrainingError, FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(exc, (DataError, PipelineError, ConditionError, SelectionError, EstimationError,
                        MetricError, MeasurementError, OSError)):
        return EXIT_DATA
    if isinstance(exc, (ConfigError, LayerConfigError, ValueError)):
        return EXIT_CONFIG
    return 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    warnings.simplefilter("default")
    try:
        dispatch(args)
    except Exception as exc:
        code = exit_code(exc)
        if code == 1:
            raise
        print(f"error: {exc}", file=sys.stderr)
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
