"""Stochastic motion-prediction metrics.

Per-frame distances use the norm of the flattened ``J*3`` pose difference.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .skeleton import LIMBS, limb_lengths


class MetricError(ValueError):
    pass


def _frame_dist(pred, gt) -> np.ndarray:
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise MetricError(f"shape mismatch {pred.shape} vs {gt.shape}")
    d = (pred - gt).reshape(len(pred), -1)
    return np.sqrt(np.sum(d * d, axis=1))


def ade(pred, gt) -> float:
    return float(np.mean(_frame_dist(pred, gt)))


def fde(pred, gt) -> float:
    return float(_frame_dist(pred, gt)[-1])


def best_of_k(hypotheses: Sequence[np.ndarray], gt, metric: Callable = ade) -> tuple[float, int]:
    if len(hypotheses) == 0:
        raise MetricError("no hypotheses")
    values = [metric(h, gt) for h in hypotheses]
    best = int(np.argmin(values))  # first minimum
    return float(values[best]), best


def apd(hypotheses: Sequence[np.ndarray]) -> float | None:
    """Mean pairwise distance between flattened hypotheses; ``None`` for K < 2."""
    k = len(hypotheses)
    if k < 2:
        return None
    flat = np.asarray(hypotheses, dtype=np.float64).reshape(k, -1)
    d = np.sqrt(np.sum((flat[:, None] - flat[None]) ** 2, axis=2))
    iu = np.triu_indices(k, 1)
    return float(np.mean(d[iu]))


def build_multimodal_gt(samples, threshold: float = 0.5) -> dict[str, list[np.ndarray]]:
    """For every sample, the futures whose first frame lies within ``threshold``
    of that sample's last history frame (its own future always included)."""
    ids = [s.sample_id for s in samples]
    junction = np.stack([s.gt_history.frames[-1].ravel() for s in samples])
    starts = np.stack([s.gt_future.frames[0].ravel() for s in samples])
    d = np.sqrt(np.sum((junction[:, None] - starts[None]) ** 2, axis=2))
    out = {}
    for i, sid in enumerate(ids):
        near = d[i] <= threshold
        near[i] = True
        out[sid] = [samples[j].gt_future.frames for j in np.flatnonzero(near)]
    return out


def mmade(hypotheses, futures) -> float:
    if len(futures) == 0:
        raise MetricError("empty multimodal set")
    return float(np.mean([best_of_k(hypotheses, f, ade)[0] for f in futures]))


def mmfde(hypotheses, futures) -> float:
    if len(futures) == 0:
        raise MetricError("empty multimodal set")
    return float(np.mean([best_of_k(hypotheses, f, fde)[0] for f in futures]))


def limb_length_error(pred, gt, limbs=LIMBS) -> float:
    """Mean over frames and limbs of ``|len_pred - len_gt| / len_gt``."""
    lp, lg = limb_lengths(np.asarray(pred), limbs), limb_lengths(np.asarray(gt), limbs)
    if np.any(lg <= 0):
        raise MetricError("zero-length ground-truth limb")
    return float(np.mean(np.abs(lp - lg) / lg))


def limb_length_jitter(pred, limbs=LIMBS) -> float:
    """Mean over consecutive frame pairs and limbs of ``|len_t+1 - len_t| / len_t``."""
    pred = np.asarray(pred)
    if len(pred) < 2:
        raise MetricError("jitter needs at least two frames")
    ln = limb_lengths(pred, limbs)
    if np.any(ln[:-1] <= 0):
        raise MetricError("zero-length limb")
    return float(np.mean(np.abs(ln[1:] - ln[:-1]) / ln[:-1]))


METRIC_NAMES = ("ade", "fde", "apd", "mmade", "mmfde", "limb_error", "limb_jitter")


@dataclass
class EvalReport:
    k: int
    mm_threshold: float
    per_sample: list[dict] = field(default_factory=list)

    @property
    def aggregate(self) -> dict[str, float | None]:
        agg = {}
        for name in METRIC_NAMES:
            vals = [r[name] for r in self.per_sample if r[name] is not None]
            agg[name] = float(np.mean(vals)) if vals else None
        return agg


def evaluate_sample(hypotheses, gt_future, multimodal, limbs=LIMBS) -> dict:
    """All metrics for one sample; realism metrics use the best-ADE hypothesis."""
    a, best = best_of_k(hypotheses, gt_future, ade)
    chosen = hypotheses[best]
    return {
        "ade": a,
        "fde": best_of_k(hypotheses, gt_future, fde)[0],
        "apd": apd(hypotheses),
        "mmade": mmade(hypotheses, multimodal),
        "mmfde": mmfde(hypotheses, multimodal),
        "limb_error": limb_length_error(chosen, gt_future, limbs),
        "limb_jitter": limb_length_jitter(chosen, limbs) if len(chosen) > 1 else 0.0,
    }


def evaluate(predictions: dict[str, list[np.ndarray]], samples, k: int = 10,
             mm_threshold: float = 0.5, limbs=LIMBS) -> EvalReport:
    """``predictions`` maps sample id to its hypotheses (the first ``k`` are used)."""
    mm = build_multimodal_gt(samples, mm_threshold)
    report = EvalReport(k=k, mm_threshold=mm_threshold)
    for s in samples:
        if s.sample_id not in predictions:
            continue
        hyps = [np.asarray(h) for h in predictions[s.sample_id][:k]]
        row = {"sample_id": s.sample_id}
        row.update(evaluate_sample(hyps, s.gt_future.frames, mm[s.sample_id], limbs))
        report.per_sample.append(row)
    return report
