"""History estimation from radar and its fusion into a per-joint condition.

Two branches estimate the observed motion:

* time branch: a per-frame pose estimator followed by a refiner that smooths
  over time and projects limbs onto stable lengths;
* frequency branch: anchor features from farthest-point sampled radar points
  go through a transformer together with joint template tokens, and a decoder
  emits the first few DCT coefficients of every joint's trajectory.

Both are re-expressed over the full history+future horizon and mapped by two
per-joint MLPs whose outputs are summed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import kernels
from .autodiff import (MLP, Module, Parameter, SelfAttentionLayer, Tensor, concat,
                       sum_squares, tmax)
from .codec import build_basis, dct, pad_repeat, recompress
from .radar import RadarFrame
from .skeleton import LIMBS, NUM_JOINTS, PARENTS, limb_lengths, rest_pose


class SelectionError(ValueError):
    """No valid points to sample anchors from."""


class EstimationError(RuntimeError):
    pass


class ConditionError(RuntimeError):
    pass


# -- anchors and neighbourhoods ---------------------------------------------
def fps(points: np.ndarray, k: int) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise SelectionError("no valid points")
    return kernels.fps(pts, k)


def anchor_neighborhoods(frame: RadarFrame, n_anchors: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Anchor positions ``(n_anchors, 3)`` and neighbourhood features
    ``(n_anchors, k, 6)`` = offset to anchor, velocity, energy, amplitude."""
    pts = frame.valid
    if len(pts) == 0:
        raise SelectionError(f"frame {frame.timestamp} has no valid points")
    idx = fps(pts[:, :3], min(n_anchors, len(pts)))
    if len(idx) < n_anchors:
        idx = np.resize(idx, n_anchors)
    anchors = pts[idx, :3]
    nb = kernels.knn(pts[:, :3], anchors, k)
    feats = pts[nb].copy()
    feats[..., :3] -= anchors[:, None, :]
    return anchors, feats


@dataclass
class RadarFeatures:
    anchors: np.ndarray        # (H, N', 3)
    neighborhoods: np.ndarray  # (H, N', K, 6)
    empty: np.ndarray          # (H,) frames that had no valid points


def extract_features(frames: list[RadarFrame], n_anchors: int, k: int) -> RadarFeatures:
    """Per-frame anchors; empty frames reuse the nearest earlier (else later) frame."""
    got: list = []
    for fr in frames:
        try:
            got.append(anchor_neighborhoods(fr, n_anchors, k))
        except SelectionError:
            got.append(None)
    empty = np.array([g is None for g in got])
    if empty.all():
        raise ConditionError("every radar frame in the history is empty")
    first = next(g for g in got if g is not None)
    prev = first
    for i, g in enumerate(got):
        if g is None:
            got[i] = prev
        else:
            prev = g
    return RadarFeatures(np.stack([g[0] for g in got]), np.stack([g[1] for g in got]), empty)


# -- networks ---------------------------------------------------------------
class PointEncoder(Module):
    """Shared per-point MLP with max-pooling over each neighbourhood."""

    def __init__(self, d_in: int, d_feat: int, rng):
        self.mlp = MLP(d_in, d_feat, d_feat, rng)

    def forward(self, neigh: np.ndarray) -> Tensor:
        return tmax(self.mlp(Tensor(neigh)), axis=-2)


@dataclass
class FdmConfig:
    H: int = 8
    n2: int = 3
    joints: int = NUM_JOINTS
    anchors: int = 8
    neighbors: int = 16
    feat_dim: int = 64
    layers: int = 2
    heads: int = 4


class FrequencyMotionNet(Module):
    """Radar history to the first ``n2`` DCT coefficients of every joint."""

    def __init__(self, cfg: FdmConfig, rng: np.random.Generator):
        d = cfg.feat_dim
        self.cfg = cfg
        self.encoder = PointEncoder(6, d, rng)
        self.position = MLP(4, d, d, rng)
        self.joint_tokens = Parameter(np.zeros((cfg.joints, d)))
        self.layers = [SelfAttentionLayer(d, cfg.heads, rng) for _ in range(cfg.layers)]
        self.decoder = MLP(d, d, cfg.n2 * 3, rng)

    def forward(self, anchors: np.ndarray, neigh: np.ndarray) -> Tensor:
        """``anchors`` (B, H, N', 3), ``neigh`` (B, H, N', K, 6) -> (B, n2, J, 3)."""
        b, h, n = anchors.shape[:3]
        d = self.cfg.feat_dim
        t = np.broadcast_to(np.arange(1, h + 1, dtype=np.float64)[None, :, None, None], (b, h, n, 1))
        feats = self.encoder(neigh) + self.position(Tensor(np.concatenate([anchors, t], axis=-1)))
        tokens = feats.reshape(b, h * n, d)
        joints = self.joint_tokens + Tensor(np.zeros((b, self.cfg.joints, d)))
        x = concat([tokens, joints], axis=1)
        for layer in self.layers:
            x = layer(x)
        out = self.decoder(x[:, h * n:])  # (B, J, n2*3)
        return out.reshape(b, self.cfg.joints, self.cfg.n2, 3).transpose(0, 2, 1, 3)


def fdm_target(gt_history: np.ndarray, n2: int) -> np.ndarray:
    """DCT (not inverse DCT) of the ground-truth history with the ``n2``-row basis."""
    h = gt_history.shape[-3]
    return dct(gt_history, build_basis(n2, h), axis=-3)


def fdm_loss(pred: Tensor, gt_history: np.ndarray) -> Tensor:
    """Sum of squared coefficient errors."""
    return sum_squares(pred, Tensor(fdm_target(gt_history, pred.shape[-3])))


class PoseEstimator(Protocol):
    def estimate(self, frame: RadarFrame) -> np.ndarray:
        """Pelvis-relative ``(J, 3)`` pose; raises :class:`EstimationError` on failure."""


class LearnedPoseEstimator(Module):
    """Per-frame regressor: anchor neighbourhood encoder, max-pool over anchors, MLP head."""

    def __init__(self, joints: int, feat_dim: int, anchors: int, neighbors: int, rng):
        self.joints = joints
        self.n_anchors, self.n_neighbors = anchors, neighbors
        self.encoder = PointEncoder(6, feat_dim, rng)
        self.position = MLP(3, feat_dim, feat_dim, rng)
        self.head = MLP(feat_dim, 2 * feat_dim, joints * 3, rng)

    def forward(self, anchors: np.ndarray, neigh: np.ndarray) -> Tensor:
        """``anchors`` (M, N', 3), ``neigh`` (M, N', K, 6) -> (M, J, 3)."""
        f = self.encoder(neigh) + self.position(Tensor(anchors))
        return self.head(tmax(f, axis=-2)).reshape(len(anchors), self.joints, 3)

    def estimate(self, frame: RadarFrame) -> np.ndarray:
        try:
            a, nb = anchor_neighborhoods(frame, self.n_anchors, self.n_neighbors)
        except SelectionError as exc:
            raise EstimationError(str(exc)) from exc
        return self.forward(a[None], nb[None]).data[0]


class NoisyOracleEstimator:
    """Ground truth plus Gaussian noise; each joint independently keeps its
    previous estimate with probability ``dropout``. Keyed by frame timestamp."""

    def __init__(self, truth: dict[int, np.ndarray], noise_std: float = 0.03,
                 dropout: float = 0.0, seed: int = 0):
        self.truth = truth
        self.noise_std = noise_std
        self.dropout = dropout
        self.rng = np.random.default_rng(seed)
        self._prev: np.ndarray | None = None

    @classmethod
    def for_sample(cls, sample, **kw) -> "NoisyOracleEstimator":
        truth = {fr.timestamp: sample.gt_history.frames[i] for i, fr in enumerate(sample.radar_history)}
        return cls(truth, **kw)

    def estimate(self, frame: RadarFrame) -> np.ndarray:
        if frame.timestamp not in self.truth:
            raise EstimationError(f"no reference pose for frame {frame.timestamp}")
        est = self.truth[frame.timestamp] + self.rng.normal(0.0, self.noise_std, (len(self.truth[frame.timestamp]), 3))
        if self._prev is not None and self.dropout > 0:
            stale = self.rng.random(len(est)) < self.dropout
            est[stale] = self._prev[stale]
        self._prev = est
        return est


def fill_failures(estimates: list, rest: np.ndarray) -> np.ndarray:
    """Replace failed (``None``) frames by the previous estimate, or ``rest`` at the start."""
    out, prev = [], None
    for e in estimates:
        if e is None:
            e = prev if prev is not None else rest
        out.append(e)
        prev = e
    return np.stack(out)


def refine_poses(poses: np.ndarray, parents=PARENTS) -> np.ndarray:
    """Temporal [0.25, 0.5, 0.25] smoothing, then limb-length projection.

    Smoothing renormalises the kernel at the sequence ends. Each child joint is
    then placed along its (smoothed) parent-limb direction at the running median
    of that limb's length, root to leaves.
    """
    x = np.asarray(poses, dtype=np.float64)
    n = len(x)
    if n >= 2:
        w = np.array([0.25, 0.5, 0.25])
        padded = np.concatenate([x[:1] * 0, x, x[:1] * 0])
        norm = np.full(n, 1.0)
        norm[0] -= 0.25
        norm[-1] -= 0.25
        y = (w[0] * padded[:-2] + w[1] * padded[1:-1] + w[2] * padded[2:]) / norm[:, None, None]
    else:
        y = x.copy()
    limbs = [(p, j) for j, p in enumerate(parents) if p >= 0]
    lengths = limb_lengths(y, limbs)  # (T, L)
    target = np.stack([np.median(lengths[: t + 1], axis=0) for t in range(n)])
    out = y.copy()
    for li, (p, j) in enumerate(limbs):
        vec = y[:, j] - y[:, p]
        norm_v = np.linalg.norm(vec, axis=1, keepdims=True)
        unit = np.where(norm_v > 1e-12, vec / np.maximum(norm_v, 1e-12), 0.0)
        out[:, j] = out[:, p] + np.where(norm_v > 1e-12, target[:, li:li + 1] * unit, vec)
    return out


def tpr_estimate(radar_history: list[RadarFrame], estimator: PoseEstimator, refine: bool = True,
                 rest: np.ndarray | None = None, parents=PARENTS) -> np.ndarray:
    """Per-frame estimates with failure substitution, optionally refined; ``(H, J, 3)``."""
    if len(radar_history) < 1:
        raise ConditionError("empty history")
    rest = rest_pose() if rest is None else rest
    ests = []
    for fr in radar_history:
        try:
            ests.append(np.asarray(estimator.estimate(fr), dtype=np.float64))
        except EstimationError:
            ests.append(None)
    x = fill_failures(ests, rest)
    return refine_poses(x, parents) if refine else x


# -- fusion -----------------------------------------------------------------
def history_coefficients(x_time: np.ndarray, x_freq: np.ndarray, future: int, n1: int):
    """Both branches over ``H + future`` frames with ``n1`` coefficients.

    ``x_time`` is ``(..., H, J, 3)``, ``x_freq`` is ``(..., n2, J, 3)``.
    """
    h = x_time.shape[-3]
    long = build_basis(n1, h + future)
    xt = dct(pad_repeat(x_time, h + future, axis=-3), long, axis=-3)
    xf = recompress(x_freq, h, future, n1, axis=-3)
    return xt, xf


@dataclass
class ConditionEmbedding:
    per_joint: np.ndarray  # (J, D_cond)

    @property
    def pooled(self) -> np.ndarray:
        return self.per_joint.mean(axis=-2, keepdims=True)


class ConditionFusion(Module):
    """``C = f1(time branch) + f2(frequency branch)``, one row per joint."""

    def __init__(self, n1: int, d_cond: int, rng):
        self.time_mlp = MLP(n1 * 3, d_cond, d_cond, rng, activation="silu")
        self.freq_mlp = MLP(n1 * 3, d_cond, d_cond, rng, activation="silu")

    @staticmethod
    def _per_joint(x: np.ndarray) -> Tensor:
        # (..., N1, J, 3) -> (..., J, N1*3)
        x = np.swapaxes(np.asarray(x), -3, -2)
        return Tensor(x.reshape(*x.shape[:-2], -1))

    def branches(self, x_time: np.ndarray, x_freq: np.ndarray) -> tuple[Tensor, Tensor]:
        return self.time_mlp(self._per_joint(x_time)), self.freq_mlp(self._per_joint(x_freq))

    def forward(self, x_time: np.ndarray, x_freq: np.ndarray) -> Tensor:
        a, b = self.branches(x_time, x_freq)
        return a + b


def fuse_condition(x_time: np.ndarray, x_freq: np.ndarray, future: int, n1: int,
                   fusion: ConditionFusion) -> ConditionEmbedding:
    xt, xf = history_coefficients(x_time, x_freq, future, n1)
    return ConditionEmbedding(fusion(xt, xf).data)
