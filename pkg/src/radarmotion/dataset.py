"""Turning aligned pose/radar streams into (radar history, pose history, pose future) samples."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .codec import PoseSequence, motion_energy, normalize_pelvis
from .radar import RadarFrame


class PipelineError(ValueError):
    pass


@dataclass
class PipelineConfig:
    H: int = 8
    F: int = 16
    window: int = 4
    pad_to: int = 256
    crop: float = 1.6
    thre: float = 3.0
    split: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if self.H < 1 or self.F < 0:
            raise ValueError("H must be >= 1 and F >= 0")
        if self.window < 1 or self.pad_to < 1:
            raise ValueError("window and pad_to must be >= 1")
        if self.thre < 0 or self.crop <= 0:
            raise ValueError("thre must be >= 0 and crop > 0")
        if not 0.0 <= self.split <= 1.0:
            raise ValueError("split ratio must lie in [0, 1]")


PROFILES = {
    "mmbody-like": dict(H=8, F=16, window=4, pad_to=5000, thre=3.0),
    "mmfi-like": dict(H=5, F=10, window=5, pad_to=5000, thre=0.0),
}


@dataclass
class MotionSample:
    sample_id: str
    radar_history: list[RadarFrame]
    gt_history: PoseSequence
    gt_future: PoseSequence
    tag: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def full(self) -> np.ndarray:
        return np.concatenate([self.gt_history.frames, self.gt_future.frames])


def sliding_window_concat(frames: list[RadarFrame], window: int) -> list[RadarFrame]:
    """Frame ``i`` gets the valid points of input frames ``i-window+1 .. i``."""
    if not frames:
        raise PipelineError("no radar frames")
    if window < 1:
        raise PipelineError("window must be >= 1")
    out = []
    for i, fr in enumerate(frames):
        parts = [f.valid for f in frames[max(0, i - window + 1): i + 1]]
        pts = np.concatenate(parts) if parts else np.zeros((0, 6))
        out.append(RadarFrame(pts, timestamp=fr.timestamp, valid_count=len(pts)))
    return out


def crop_region(frame: RadarFrame, center, half_extent: float) -> RadarFrame:
    """Keep valid points inside the closed axis-aligned box around ``center``."""
    if half_extent <= 0:
        raise PipelineError("half extent must be positive")
    pts = frame.valid
    off = np.abs(pts[:, :3] - np.asarray(center, dtype=np.float64))
    # closed interval; the slack absorbs rounding in (center + h) - center
    keep = np.all(off <= half_extent * (1 + 1e-12), axis=1)
    kept = pts[keep]
    return RadarFrame(kept, timestamp=frame.timestamp, valid_count=len(kept))


def zero_pad(frame: RadarFrame, pad_to: int, rng: np.random.Generator | None = None) -> RadarFrame:
    """Exactly ``pad_to`` rows; over-full frames are randomly subsampled."""
    pts = frame.valid
    if len(pts) > pad_to:
        warnings.warn(f"frame {frame.timestamp}: {len(pts)} points exceed pad_to={pad_to}; subsampling",
                      RuntimeWarning, stacklevel=2)
        rng = rng or np.random.default_rng(0)
        pts = pts[np.sort(rng.choice(len(pts), pad_to, replace=False))]
    out = np.zeros((pad_to, 6))
    out[: len(pts)] = pts
    return RadarFrame(out, timestamp=frame.timestamp, valid_count=len(pts))


def select_motion_samples(windows, thre: float) -> list:
    """Keep windows whose motion energy reaches ``thre``."""
    return [w for w in windows if motion_energy(w) >= thre]


def process_radar(frames: list[RadarFrame], pelvis: np.ndarray, cfg: PipelineConfig,
                  rng: np.random.Generator) -> list[RadarFrame]:
    """Concatenate, crop around the pelvis, move the origin to the pelvis, pad."""
    out = []
    for fr, c in zip(sliding_window_concat(frames, cfg.window), pelvis):
        cropped = crop_region(fr, c, cfg.crop)
        pts = cropped.valid.copy()
        pts[:, :3] -= c
        out.append(zero_pad(RadarFrame(pts, timestamp=fr.timestamp), cfg.pad_to, rng))
    return out


def sequence_ids(n: int) -> list[str]:
    return [f"s{i:03d}" for i in range(n)]


def process_streams(poses: list[PoseSequence], radar: list[list[RadarFrame]],
                    cfg: PipelineConfig) -> list[list[RadarFrame]]:
    """Processed (concatenated, cropped, pelvis-centred, padded) radar per sequence."""
    if len(poses) != len(radar):
        raise PipelineError(f"{len(poses)} pose sequences but {len(radar)} radar streams")
    out = []
    for s, (seq, frames) in enumerate(zip(poses, radar)):
        if len(seq) != len(frames):
            raise PipelineError(f"sequence {s}: {len(seq)} pose frames vs {len(frames)} radar frames")
        out.append(process_radar(frames, seq.frames[:, 0], cfg, np.random.default_rng([cfg.seed, s])))
    return out


def build_dataset(poses: list[PoseSequence], radar: list[list[RadarFrame]],
                  cfg: PipelineConfig, ids: list[str] | None = None,
                  processed: list[list[RadarFrame]] | None = None
                  ) -> tuple[list[MotionSample], list[MotionSample]]:
    """Windowed samples with stride 1, split chronologically inside each sequence.

    The first ``split`` fraction of every sequence feeds training windows and
    the rest test windows; no window straddles the cut.
    """
    ids = ids or sequence_ids(len(poses))
    if len(ids) != len(poses):
        raise PipelineError("one id per sequence required")
    processed = processed or process_streams(poses, radar, cfg)
    span = cfg.H + cfg.F
    train, test = [], []
    for seq_id, seq, frames in zip(ids, poses, processed):
        norm = normalize_pelvis(seq.frames)
        cut = int(round(cfg.split * len(seq)))
        for start in range(len(seq) - span + 1):
            if start < cut < start + span:
                continue
            window = norm[start:start + span]
            if motion_energy(window) < cfg.thre:
                continue
            sample = MotionSample(
                sample_id=f"{seq_id}-f{start:05d}",
                radar_history=frames[start:start + cfg.H],
                gt_history=PoseSequence(window[:cfg.H], seq.frame_rate, seq.joint_schema),
                gt_future=PoseSequence(window[cfg.H:], seq.frame_rate, seq.joint_schema)
                if cfg.F else None,
                meta={"sequence": seq_id, "start": start},
            )
            (train if start + span <= cut else test).append(sample)
    order = np.random.default_rng(cfg.seed).permutation(len(train))
    return [train[i] for i in order], test
