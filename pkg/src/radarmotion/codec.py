"""Orthonormal type-II DCT motion representation.

Pose sequences are arrays with time on ``axis`` (0 by default), e.g. ``(T, J, 3)``;
the transform is applied independently to every other coordinate.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .skeleton import JOINT_NAMES


@dataclass
class PoseSequence:
    frames: np.ndarray  # (T, J, 3) metres
    frame_rate: float = 15.0
    joint_schema: tuple[str, ...] = field(default=JOINT_NAMES)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[2] != 3 or min(self.frames.shape[:2]) < 1:
            raise ValueError(f"pose frames must be (T>=1, J>=1, 3), got {self.frames.shape}")
        if len(self.joint_schema) != self.frames.shape[1]:
            raise ValueError("joint schema length does not match joint count")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("pose coordinates must be finite")

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class DctBasis:
    matrix: np.ndarray  # (N, T)

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def cols(self) -> int:
        return self.matrix.shape[1]


@lru_cache(maxsize=128)
def _basis_matrix(n: int, t: int) -> np.ndarray:
    k = np.arange(n)[:, None]
    ts = np.arange(t)[None, :]
    alpha = np.where(k == 0, np.sqrt(1.0 / t), np.sqrt(2.0 / t))
    m = alpha * np.cos(np.pi / t * (ts + 0.5) * k)
    m.setflags(write=False)
    return m


def build_basis(n_coeffs: int, n_frames: int) -> DctBasis:
    """First ``n_coeffs`` rows of the orthonormal DCT-II matrix for ``n_frames`` samples."""
    if not 1 <= n_coeffs <= n_frames:
        raise ValueError(f"need 1 <= N <= T, got N={n_coeffs}, T={n_frames}")
    return DctBasis(_basis_matrix(int(n_coeffs), int(n_frames)))


def _apply(m: np.ndarray, x: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(m, x, axes=(1, axis)), 0, axis)


def dct(x, basis: DctBasis, axis: int = 0) -> np.ndarray:
    x = np.asarray(getattr(x, "frames", x), dtype=np.float64)
    if x.shape[axis] != basis.cols:
        raise ValueError(f"basis expects {basis.cols} frames, got {x.shape[axis]}")
    return _apply(basis.matrix, x, axis)


def idct(coeffs, basis: DctBasis, axis: int = 0) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape[axis] != basis.rows:
        raise ValueError(f"basis has {basis.rows} coefficients, got {coeffs.shape[axis]}")
    return _apply(basis.matrix.T, coeffs, axis)


def pad_repeat(x, target_frames: int, axis: int = 0) -> np.ndarray:
    """Extend to ``target_frames`` by repeating the last frame."""
    x = np.asarray(getattr(x, "frames", x), dtype=np.float64)
    t = x.shape[axis]
    if target_frames < t:
        raise ValueError(f"target {target_frames} is shorter than the sequence ({t})")
    if target_frames == t:
        return x.copy()
    last = np.take(x, [t - 1], axis=axis)
    reps = [1] * x.ndim
    reps[axis] = target_frames - t
    return np.concatenate([x, np.tile(last, reps)], axis=axis)


def recompress(coeffs, history: int, future: int, n_out: int, axis: int = 0) -> np.ndarray:
    """Re-express history coefficients over ``history + future`` frames.

    Inverse transform with the short basis, repeat-pad, forward transform with
    the ``n_out``-row long basis.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    short = build_basis(coeffs.shape[axis], history)
    long = build_basis(n_out, history + future)
    return dct(pad_repeat(idct(coeffs, short, axis), history + future, axis), long, axis)


def normalize_pelvis(x) -> np.ndarray:
    """Subtract each frame's pelvis (joint 0) from all joints; works on ``(..., J, 3)``."""
    x = np.asarray(getattr(x, "frames", x), dtype=np.float64)
    return x - x[..., :1, :]


def motion_energy(x) -> float:
    """Sum over frames of the squared norm of the first-frame-relative pose."""
    x = np.asarray(getattr(x, "frames", x), dtype=np.float64)
    flow = x - x[:1]
    return float(np.sum(flow * flow))
