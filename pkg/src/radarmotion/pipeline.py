"""Stage functions and the cached end-to-end runner.

Every stage writes into ``<workdir>/stages/<name>-<hash>/`` where the hash
covers the stage's own config keys and the hashes of the stages it reads.
A stage whose directory already holds a completion record is skipped, so
reruns, and sweeps that only touch downstream keys, reuse upstream work.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io
from .autodiff import checkpoint
from .condition import FdmConfig, FrequencyMotionNet, LearnedPoseEstimator
from .config import ConfigError, ExperimentConfig
from .dataset import PipelineConfig, build_dataset, process_streams
from .diffusion import SamplerConfig, cosine_schedule
from .gst import GstConfig
from .metrics import evaluate
from .radar import RadarConfig, generate_motion, random_actor, simulate_radar
from .training import (MotionDiffuser, StageOneConfig, StageTwoConfig, estimate_histories,
                       sample_features, sample_futures, train_diffusion, train_estimator, train_fdm)

log = logging.getLogger(__name__)

STAGES = ("simulate", "preprocess", "train-fdm", "train", "predict", "evaluate")

# config namespaces read by each stage, and the stages it depends on
STAGE_KEYS = {
    "simulate": ("seed", "sim"),
    "preprocess": ("seed", "pipeline"),
    "train-fdm": ("seed", "fdm", "codec.n2"),
    "train": ("seed", "gst", "diffusion", "codec.n1"),
    "predict": ("seed", "sampler", "eval.k", "eval.max_samples"),
    "evaluate": ("eval",),
}
STAGE_DEPS = {
    "simulate": (),
    "preprocess": ("simulate",),
    "train-fdm": ("preprocess",),
    "train": ("train-fdm", "preprocess"),
    "predict": ("train", "preprocess"),
    "evaluate": ("predict", "preprocess"),
}
STAGE_OUTPUTS = {
    "simulate": ("poses.jsonl", "radar.jsonl"),
    "preprocess": ("dataset.jsonl",),
    "train-fdm": ("fdm.ckpt",),
    "train": ("model.ckpt",),
    "predict": ("predictions.jsonl",),
    "evaluate": ("evaluation.csv",),
}


class StageError(RuntimeError):
    """A stage failed; ``cause`` keeps the original exception for exit-code mapping."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


# -- typed views of the flat config -----------------------------------------
def radar_config(cfg: ExperimentConfig) -> RadarConfig:
    return RadarConfig(points_per_segment=cfg["sim.points_per_segment"], dropout=cfg["sim.dropout"],
                       dropout_correlation=cfg["sim.dropout_correlation"],
                       ghost_rate=cfg["sim.ghost_rate"], noise_std=cfg["sim.noise_std"],
                       wall_x=cfg["sim.wall_x"])


def pipeline_config(cfg: ExperimentConfig) -> PipelineConfig:
    return PipelineConfig(H=cfg["pipeline.H"], F=cfg["pipeline.F"], window=cfg["pipeline.window"],
                          pad_to=cfg["pipeline.pad_to"], crop=cfg["pipeline.crop"],
                          thre=cfg["pipeline.thre"], split=cfg["pipeline.split"], seed=cfg["seed"])


def stage_one_config(cfg: ExperimentConfig, history: int | None = None) -> StageOneConfig:
    fdm = FdmConfig(H=history or cfg["pipeline.H"], n2=cfg["codec.n2"], anchors=cfg["fdm.anchors"],
                    neighbors=cfg["fdm.neighbors"], feat_dim=cfg["fdm.feat_dim"],
                    layers=cfg["fdm.layers"], heads=cfg["fdm.heads"])
    return StageOneConfig(fdm=fdm, steps=cfg["fdm.steps"], estimator_steps=cfg["fdm.estimator_steps"],
                          batch=cfg["fdm.batch"], lr=cfg["fdm.lr"], seed=cfg["seed"])


def resolve_n1(cfg: ExperimentConfig, span: int) -> int:
    """``codec.n1`` for a dataset whose windows have ``span`` frames."""
    n1 = cfg["codec.n1"] or min(span, 20)
    if n1 > span:
        raise ConfigError(f"codec.n1: must not exceed H + F = {span} (got {n1})")
    return n1


def stage_two_config(cfg: ExperimentConfig, span: int | None = None) -> StageTwoConfig:
    n1 = cfg.n1 if span is None else resolve_n1(cfg, span)
    gst = GstConfig(n1=n1, d_model=cfg["gst.d_model"], blocks=cfg["gst.blocks"],
                    heads=cfg["gst.heads"], d_cond=cfg["gst.d_cond"], s_blocks=cfg["gst.s_blocks"],
                    f_blocks=cfg["gst.f_blocks"], K=cfg["diffusion.K"])
    return StageTwoConfig(gst=gst, steps=cfg["diffusion.steps"], batch=cfg["diffusion.batch"],
                          lr=cfg["diffusion.lr"], clip=cfg["diffusion.clip"], seed=cfg["seed"])


def sampler_config(cfg: ExperimentConfig) -> SamplerConfig:
    return SamplerConfig(mode=cfg["sampler.mode"], ddim_steps=cfg["sampler.ddim_steps"],
                         reverse_rule=cfg["sampler.reverse_rule"], eta=cfg["sampler.eta"],
                         seed=cfg["seed"])


# -- stages -----------------------------------------------------------------
def simulate(cfg: ExperimentConfig, out_poses, out_radar) -> None:
    seed, rc = cfg["seed"], radar_config(cfg)
    poses, radar = {}, {}
    for i in range(cfg["sim.actors"]):
        sid = f"s{i:03d}"
        actor = random_actor(np.random.default_rng([seed, i, 0]))
        poses[sid] = generate_motion(actor, cfg["sim.frames"], cfg["sim.fps"], seed=[seed, i, 1])
        radar[sid] = simulate_radar(poses[sid], rc, seed=[seed, i, 2])
    io.save_poses(out_poses, poses)
    io.save_radar(out_radar, radar)


def preprocess(cfg: ExperimentConfig, poses_path, radar_path, out) -> tuple[int, int]:
    poses, radar = io.load_poses(poses_path), io.load_radar(radar_path)
    missing = sorted(set(poses) ^ set(radar))
    if missing:
        raise io.DataError(f"sequences without both poses and radar: {', '.join(missing)}")
    ids = sorted(poses)
    pc = pipeline_config(cfg)
    seqs, streams = [poses[i] for i in ids], [radar[i] for i in ids]
    processed = process_streams(seqs, streams, pc)
    train, test = build_dataset(seqs, streams, pc, ids=ids, processed=processed)
    meta = {"H": pc.H, "F": pc.F, "window": pc.window, "pad_to": pc.pad_to, "crop": pc.crop,
            "thre": pc.thre, "split": pc.split, "seed": pc.seed}
    io.save_dataset(out, train, test, dict(zip(ids, processed)), meta)
    return len(train), len(test)


def save_stage_one(path, fdm: FrequencyMotionNet, est: LearnedPoseEstimator, fcfg: FdmConfig) -> None:
    tensors = {f"fdm.{k}": v for k, v in fdm.state_dict().items()}
    tensors.update({f"estimator.{k}": v for k, v in est.state_dict().items()})
    checkpoint.save(path, tensors, meta={"kind": "stage-one", "fdm": asdict(fcfg)})


def load_stage_one(path) -> tuple[FrequencyMotionNet, LearnedPoseEstimator, FdmConfig]:
    tensors, meta = checkpoint.load(path)
    if not meta or meta.get("kind") not in ("stage-one", "model"):
        raise io.DataError(f"{path}: not a stage-one checkpoint")
    fcfg = FdmConfig(**meta["fdm"])
    rng = np.random.default_rng(0)
    fdm = FrequencyMotionNet(fcfg, rng)
    est = LearnedPoseEstimator(fcfg.joints, fcfg.feat_dim, fcfg.anchors, fcfg.neighbors, rng)
    fdm.load_state_dict({k[4:]: v for k, v in tensors.items() if k.startswith("fdm.")})
    est.load_state_dict({k[10:]: v for k, v in tensors.items() if k.startswith("estimator.")})
    return fdm, est, fcfg


def train_fdm_stage(cfg: ExperimentConfig, dataset_path, out) -> None:
    meta, train, _ = io.load_dataset(dataset_path)
    if not train:
        raise io.DataError(f"{dataset_path}: the training split is empty")
    if cfg["codec.n2"] > meta["H"]:
        raise ConfigError(f"codec.n2: must not exceed H = {meta['H']} (got {cfg['codec.n2']})")
    c1 = stage_one_config(cfg, meta["H"])
    feats = sample_features(train, c1.fdm)
    fdm, _ = train_fdm(train, feats, c1)
    est, _ = train_estimator(train, c1)
    save_stage_one(out, fdm, est, c1.fdm)


def train_stage(cfg: ExperimentConfig, dataset_path, fdm_ckpt, out) -> None:
    meta, train, _ = io.load_dataset(dataset_path)
    if not train:
        raise io.DataError(f"{dataset_path}: the training split is empty")
    fdm, est, fcfg = load_stage_one(fdm_ckpt)
    c2 = stage_two_config(cfg, meta["H"] + meta["F"])
    hist = estimate_histories(train, sample_features(train, fcfg), fdm, est, meta["F"], c2.gst.n1)
    model, _ = train_diffusion(train, hist, c2, cosine_schedule(c2.gst.K))
    tensors = {f"fdm.{k}": v for k, v in fdm.state_dict().items()}
    tensors.update({f"estimator.{k}": v for k, v in est.state_dict().items()})
    tensors.update({f"diffuser.{k}": v for k, v in model.state_dict().items()})
    tensors["bounds.lo"], tensors["bounds.hi"] = model.x0_bounds
    checkpoint.save(out, tensors, meta={"kind": "model", "fdm": asdict(fcfg), "gst": asdict(c2.gst),
                                        "H": meta["H"], "F": meta["F"]})


def load_model(path):
    tensors, meta = checkpoint.load(path)
    if not meta or meta.get("kind") != "model":
        raise io.DataError(f"{path}: not a trained model checkpoint")
    fdm, est, fcfg = load_stage_one(path)
    model = MotionDiffuser(GstConfig(**meta["gst"]))
    model.load_state_dict({k[9:]: v for k, v in tensors.items() if k.startswith("diffuser.")})
    model.x0_bounds = (tensors["bounds.lo"], tensors["bounds.hi"])
    return model, fdm, est, fcfg, meta


def evaluation_subset(samples, max_samples: int):
    """Evenly spaced subset of ``max_samples`` samples (all when 0)."""
    if max_samples <= 0 or len(samples) <= max_samples:
        return list(samples)
    idx = np.linspace(0, len(samples) - 1, max_samples).round().astype(int)
    return [samples[i] for i in idx]


def predict(cfg: ExperimentConfig, ckpt, dataset_path, out, hypotheses: int | None = None) -> None:
    _, _, test = io.load_dataset(dataset_path)
    if not test:
        raise io.DataError(f"{dataset_path}: the test split is empty")
    test = evaluation_subset(test, cfg["eval.max_samples"])
    model, fdm, est, fcfg, meta = load_model(ckpt)
    hist = estimate_histories(test, sample_features(test, fcfg), fdm, est, meta["F"], model.cfg.n1)
    preds = sample_futures(model, [s.sample_id for s in test], hist, meta["H"], meta["F"],
                           cosine_schedule(model.cfg.K), sampler_config(cfg),
                           hypotheses or cfg["eval.k"], clamp=cfg["sampler.clamp"])
    io.save_predictions(out, preds)


def evaluate_stage(cfg: ExperimentConfig, predictions_path, dataset_path, out_csv):
    _, _, test = io.load_dataset(dataset_path)
    preds = io.load_predictions(predictions_path)
    unknown = sorted(set(preds) - {s.sample_id for s in test})
    if unknown:
        raise io.DataError(f"prediction for unknown sample {unknown[0]}")
    report = evaluate(preds, test, k=cfg["eval.k"], mm_threshold=cfg["eval.mm_threshold"])
    io.save_evaluation(out_csv, report)
    return report


# -- cached runner ----------------------------------------------------------
def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def stage_hashes(cfg: ExperimentConfig) -> dict[str, str]:
    hashes: dict[str, str] = {}
    for name in STAGES:
        own = cfg.subset(*STAGE_KEYS[name])
        if name == "train":
            own["codec.n1"] = cfg.n1  # resolved value, so 0 and its default hash alike
        hashes[name] = _digest({"stage": name, "config": own,
                                "deps": [hashes[d] for d in STAGE_DEPS[name]]})[:16]
    return hashes


def _run_stage(name: str, cfg: ExperimentConfig, d: dict[str, Path]) -> None:
    out = d[name]
    if name == "simulate":
        simulate(cfg, out / "poses.jsonl", out / "radar.jsonl")
    elif name == "preprocess":
        sim = d["simulate"]
        preprocess(cfg, sim / "poses.jsonl", sim / "radar.jsonl", out / "dataset.jsonl")
    elif name == "train-fdm":
        train_fdm_stage(cfg, d["preprocess"] / "dataset.jsonl", out / "fdm.ckpt")
    elif name == "train":
        train_stage(cfg, d["preprocess"] / "dataset.jsonl", d["train-fdm"] / "fdm.ckpt", out / "model.ckpt")
    elif name == "predict":
        predict(cfg, d["train"] / "model.ckpt", d["preprocess"] / "dataset.jsonl", out / "predictions.jsonl")
    elif name == "evaluate":
        evaluate_stage(cfg, d["predict"] / "predictions.jsonl", d["preprocess"] / "dataset.jsonl",
                       out / "evaluation.csv")


def run_pipeline(cfg: ExperimentConfig, workdir) -> dict:
    """Run (or reuse) every stage and write ``manifest.json``; returns the manifest."""
    workdir = Path(workdir)
    hashes = stage_hashes(cfg)
    dirs = {n: workdir / "stages" / f"{n}-{hashes[n]}" for n in STAGES}
    stages = {}
    for name in STAGES:
        d = dirs[name]
        record = d / "stage.json"
        if record.exists():
            info = json.loads(record.read_text())
            log.info("stage %s: cached (%s)", name, hashes[name])
        else:
            d.mkdir(parents=True, exist_ok=True)
            started = time.strftime("%Y-%m-%dT%H:%M:%S")
            log.info("stage %s: running (%s)", name, hashes[name])
            try:
                _run_stage(name, cfg, dirs)
            except Exception as exc:  # every failure names its stage
                raise StageError(name, exc) from exc
            info = {"hash": hashes[name], "started": started,
                    "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
                    "outputs": {o: file_digest(d / o) for o in STAGE_OUTPUTS[name]}}
            record.write_text(json.dumps(info, indent=1, sort_keys=True))
        stages[name] = {**info, "dir": str(d.relative_to(workdir))}
    manifest = {"config": cfg.values, "seed": cfg["seed"], "stages": stages,
                "outputs": {n: [str((dirs[n] / o).relative_to(workdir)) for o in STAGE_OUTPUTS[n]]
                            for n in STAGES}}
    manifest["manifest_hash"] = _digest({
        "config": cfg.values,
        "stages": {n: {"hash": s["hash"], "outputs": s["outputs"]} for n, s in stages.items()},
    })
    (workdir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


SWEEP_COLUMNS = ("value", "ade", "fde", "limb_error", "limb_jitter")


def sweep(cfg: ExperimentConfig, axis: str, values: list, workdir, out_csv=None) -> list[dict]:
    """One pipeline run per value of ``axis``; rows mirror a sensitivity table."""
    if axis not in cfg.values:
        raise ConfigError(f"{axis}: unknown configuration key")
    rows = []
    for v in values:
        run_cfg = cfg.replace(**{axis: v})
        manifest = run_pipeline(run_cfg, workdir)
        agg = io.load_evaluation(Path(workdir) / manifest["outputs"]["evaluate"][0])[-1]
        rows.append({"value": v, **{k: agg[k] for k in SWEEP_COLUMNS[1:]}})
    if out_csv is not None:
        Path(out_csv).parent.mkdir(parents=True, exist_ok=True)
        with open(out_csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_COLUMNS)
            for r in rows:
                w.writerow([r["value"], *("%.9g" % r[k] for k in SWEEP_COLUMNS[1:])])
    return rows
