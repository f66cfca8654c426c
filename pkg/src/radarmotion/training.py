"""Two-stage training and batched prediction.

Stage one fits the per-frame pose estimator and the frequency-domain motion
network on radar features. Stage two freezes both, fuses their history
estimates into the per-joint condition, and trains the noise predictor
together with the fusion MLPs.
"""
from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Adam, Module, Tensor, sum_squares
from .codec import PoseSequence, build_basis, dct, idct
from .condition import (ConditionFusion, FdmConfig, FrequencyMotionNet, LearnedPoseEstimator,
                        NoisyOracleEstimator, RadarFeatures, anchor_neighborhoods, extract_features,
                        fdm_loss, history_coefficients, tpr_estimate, SelectionError)
from .dataset import MotionSample
from .diffusion import (InpaintMask, NoiseSchedule, SamplerConfig, cosine_schedule, history_coeffs,
                        reverse_sample, training_loss)
from .gst import GST, GstConfig

log = logging.getLogger(__name__)


@dataclass
class StageOneConfig:
    fdm: FdmConfig = field(default_factory=FdmConfig)
    steps: int = 300
    estimator_steps: int = 300
    batch: int = 32
    lr: float = 2e-3
    seed: int = 0


@dataclass
class StageTwoConfig:
    gst: GstConfig = field(default_factory=GstConfig)
    steps: int = 1000
    batch: int = 32
    lr: float = 2e-3
    clip: float = 1.0
    seed: int = 0


def _batches(n: int, batch: int, steps: int, rng: np.random.Generator):
    """``steps`` index batches drawn from repeated shuffles of ``range(n)``."""
    order = np.empty(0, dtype=int)
    for _ in range(steps):
        if len(order) < batch:
            order = np.concatenate([order, rng.permutation(n)])
        yield order[:batch]
        order = order[batch:]


def clip_gradients(params, max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    total = float(np.sqrt(sum(np.sum(g * g) for g in grads)))
    if max_norm > 0 and total > max_norm:
        for p in params:
            if p.grad is not None:
                p.grad *= max_norm / total
    return total


def _cosine_lr(base: float, step: int, total: int) -> float:
    return base * (0.1 + 0.9 * 0.5 * (1 + np.cos(np.pi * step / max(total, 1))))


def _fit(params, loss_fn, n: int, steps: int, batch: int, lr: float, seed, clip: float = 0.0,
         label: str = "") -> list[float]:
    opt = Adam(params, lr=lr)
    rng = np.random.default_rng(seed)
    losses = []
    for i, idx in enumerate(_batches(n, batch, steps, rng)):
        opt.state.lr = _cosine_lr(lr, i, steps)
        loss = loss_fn(idx, rng)
        loss.backward()
        if clip:
            clip_gradients(params, clip)
        opt.step()
        losses.append(loss.item())
        if (i + 1) % max(steps // 5, 1) == 0:
            log.info("%s step %d/%d loss %.4f", label, i + 1, steps, np.mean(losses[-20:]))
    return losses


# -- stage one --------------------------------------------------------------
def sample_features(samples: list[MotionSample], cfg: FdmConfig) -> list[RadarFeatures]:
    return [extract_features(s.radar_history, cfg.anchors, cfg.neighbors) for s in samples]


def train_fdm(samples, features, cfg: StageOneConfig) -> tuple[FrequencyMotionNet, list[float]]:
    model = FrequencyMotionNet(cfg.fdm, np.random.default_rng([cfg.seed, 1]))
    anchors = np.stack([f.anchors for f in features])
    neigh = np.stack([f.neighborhoods for f in features])
    hist = np.stack([s.gt_history.frames for s in samples])

    def loss_fn(idx, rng):
        return fdm_loss(model(anchors[idx], neigh[idx]), hist[idx]) * (1.0 / len(idx))

    losses = _fit(model.parameters(), loss_fn, len(samples), cfg.steps, cfg.batch, cfg.lr,
                  [cfg.seed, 2], label="fdm")
    return model, losses


def train_estimator(samples, cfg: StageOneConfig) -> tuple[LearnedPoseEstimator, list[float]]:
    f = cfg.fdm
    model = LearnedPoseEstimator(f.joints, f.feat_dim, f.anchors, f.neighbors,
                                 np.random.default_rng([cfg.seed, 3]))
    seen, anchors, neigh, poses = set(), [], [], []
    for s in samples:
        seq = s.sample_id.split("-")[0]
        for fr, pose in zip(s.radar_history, s.gt_history.frames):
            key = (seq, fr.timestamp)
            if key in seen:
                continue
            seen.add(key)
            try:
                a, nb = anchor_neighborhoods(fr, f.anchors, f.neighbors)
            except SelectionError:
                continue
            anchors.append(a)
            neigh.append(nb)
            poses.append(pose)
    anchors, neigh, poses = np.stack(anchors), np.stack(neigh), np.stack(poses)

    def loss_fn(idx, rng):
        return sum_squares(model(anchors[idx], neigh[idx]), Tensor(poses[idx])) * (1.0 / len(idx))

    losses = _fit(model.parameters(), loss_fn, len(poses), cfg.estimator_steps, cfg.batch, cfg.lr,
                  [cfg.seed, 4], label="estimator")
    return model, losses


# -- conditions -------------------------------------------------------------
@dataclass
class HistoryEstimates:
    """Per-sample branch outputs, already re-expressed over ``H + F`` frames."""
    x_time: np.ndarray     # (S, H, J, 3) refined time-branch poses
    time_coeffs: np.ndarray  # (S, N1, J, 3)
    freq_coeffs: np.ndarray  # (S, N1, J, 3)


def estimate_histories(samples, features, fdm: FrequencyMotionNet, estimator, future: int, n1: int,
                       oracle_noise: float | None = None, seed: int = 0) -> HistoryEstimates:
    """Run both branches on every sample (no ground-truth future is read)."""
    xt = []
    for i, s in enumerate(samples):
        est = estimator
        if oracle_noise is not None:
            est = NoisyOracleEstimator.for_sample(s, noise_std=oracle_noise,
                                                  seed=zlib.crc32(f"{seed}:{s.sample_id}".encode()))
        xt.append(tpr_estimate(s.radar_history, est))
    xt = np.stack(xt)
    xf = []
    for lo in range(0, len(samples), 64):
        chunk = features[lo:lo + 64]
        xf.append(fdm(np.stack([f.anchors for f in chunk]), np.stack([f.neighborhoods for f in chunk])).data)
    xf = np.concatenate(xf)
    tc, fc = history_coefficients(xt, xf, future, n1)
    return HistoryEstimates(xt, tc, fc)


# -- stage two --------------------------------------------------------------
class MotionDiffuser(Module):
    """Noise predictor plus the condition fusion it is trained with."""

    def __init__(self, cfg: GstConfig, seed: int = 0):
        self.cfg = cfg
        self.fusion = ConditionFusion(cfg.n1, cfg.d_cond, np.random.default_rng([seed, 5]))
        self.gst = GST(cfg, np.random.default_rng([seed, 6]))
        self.x0_bounds: tuple[np.ndarray, np.ndarray] | None = None

    def condition(self, time_coeffs, freq_coeffs) -> Tensor:
        return self.fusion(time_coeffs, freq_coeffs)

    def forward(self, x, k, cond) -> Tensor:
        return self.gst(x, k, cond)


def diffusion_targets(samples, n1: int) -> np.ndarray:
    """DCT of every full (history + future) ground-truth window."""
    full = np.stack([s.full for s in samples])
    return dct(full, build_basis(n1, full.shape[1]), axis=-3)


def coefficient_bounds(x0: np.ndarray, margin: float = 0.25) -> tuple[np.ndarray, np.ndarray]:
    """Per-entry range of the training targets, widened by ``margin`` of its span."""
    lo, hi = x0.min(axis=0), x0.max(axis=0)
    pad = margin * (hi - lo) + 1e-6
    return lo - pad, hi + pad


def train_diffusion(samples, hist: HistoryEstimates, cfg: StageTwoConfig,
                    sched: NoiseSchedule | None = None) -> tuple[MotionDiffuser, list[float]]:
    g = cfg.gst
    sched = sched or cosine_schedule(g.K)
    model = MotionDiffuser(g, cfg.seed)
    x0 = diffusion_targets(samples, g.n1)
    model.x0_bounds = coefficient_bounds(x0)

    def loss_fn(idx, rng):
        cond = model.condition(hist.time_coeffs[idx], hist.freq_coeffs[idx])
        return training_loss(lambda xk, k: model(xk, k, cond), x0[idx], sched, rng)

    losses = _fit(model.parameters(), loss_fn, len(samples), cfg.steps, cfg.batch, cfg.lr,
                  [cfg.seed, 7], clip=cfg.clip, label="diffusion")
    return model, losses


# -- prediction -------------------------------------------------------------
def chain_rng(seed: int, sample_id: str, hypothesis: int) -> np.random.Generator:
    """Independent of batch composition: keyed by seed, sample id and hypothesis."""
    return np.random.default_rng([int(seed), zlib.crc32(sample_id.encode()), int(hypothesis)])


def sample_futures(model: MotionDiffuser, sample_ids, hist: HistoryEstimates, history: int, future: int,
                   sched: NoiseSchedule, sampler: SamplerConfig, n_hypotheses: int,
                   chunk: int = 320, clamp: bool = True) -> dict[str, list[np.ndarray]]:
    """``n_hypotheses`` futures ``(F, J, 3)`` per sample, batched over chains."""
    n1 = model.cfg.n1
    basis = build_basis(n1, history + future)
    mask = InpaintMask(history, future)
    cond = model.condition(hist.time_coeffs, hist.freq_coeffs).data  # (S, J, Dc)
    x_hist = history_coeffs(hist.x_time, future, n1)
    chains = [(i, h) for i in range(len(sample_ids)) for h in range(n_hypotheses)]
    out: dict[str, list[np.ndarray]] = {sid: [None] * n_hypotheses for sid in sample_ids}
    for lo in range(0, len(chains), chunk):
        part = chains[lo:lo + chunk]
        idx = np.array([i for i, _ in part])
        rngs = [chain_rng(sampler.seed, sample_ids[i], h) for i, h in part]

        def eps_fn(x, k, c):
            return model(x, k, c).data

        x0 = reverse_sample(eps_fn, x_hist[idx], cond[idx], sched, sampler, mask, rngs,
                            x0_bounds=model.x0_bounds if clamp else None)
        frames = idct(x0, basis, axis=-3)[:, history:]
        for (i, h), f in zip(part, frames):
            out[sample_ids[i]][h] = f
    return out


def zero_velocity(hist: HistoryEstimates, future: int) -> np.ndarray:
    """Repeat the last estimated history frame, ``(S, F, J, 3)``."""
    last = hist.x_time[:, -1:]
    return np.repeat(last, future, axis=1)


def as_sequences(frames: list[np.ndarray], frame_rate: float = 15.0) -> list[PoseSequence]:
    return [PoseSequence(f, frame_rate) for f in frames]
