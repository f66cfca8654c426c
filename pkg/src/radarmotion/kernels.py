"""Point-cloud kernels with a compiled backend and a numpy fallback.

The compiled extension (``radarmotion._kernels``) is used when it was built
and importable; otherwise the numpy implementations below are used. Setting
``RADARMOTION_PURE_PYTHON=1`` forces the fallback.

Both backends share exact semantics:

* ``fps`` starts at index 0 and then repeatedly takes the unselected point
  maximising the minimum squared distance to the selected set; ties go to the
  lowest index.
* ``knn`` returns, per query, the ``k`` nearest point indices ordered by
  distance with ties broken by index. When fewer than ``k`` points exist the
  row is filled up with the nearest index.
* ``segment_distance`` is the Euclidean distance from each point to the
  closest of a set of segments.
"""
from __future__ import annotations

import os

import numpy as np

__all__ = ["BACKEND", "fps", "knn", "segment_distance", "py_fps", "py_knn", "py_segment_distance"]


def _as_points(a) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a, dtype=np.float64).reshape(-1, 3))


def py_fps(points: np.ndarray, k: int) -> np.ndarray:
    pts = _as_points(points)
    sel = np.empty(k, dtype=np.int64)
    sel[0] = 0
    mind = np.full(len(pts), np.inf)
    mind[0] = -1.0  # selected points are never picked again
    last = 0
    for s in range(1, k):
        d = np.sum((pts - pts[last]) ** 2, axis=1)
        np.minimum(mind, d, out=mind)
        last = int(np.argmax(mind))  # argmax returns the first maximum
        sel[s] = last
        mind[last] = -1.0
    return sel


def py_knn(points: np.ndarray, queries: np.ndarray, k: int) -> np.ndarray:
    pts = _as_points(points)
    qs = _as_points(queries)
    d = np.sum((qs[:, None, :] - pts[None, :, :]) ** 2, axis=2)
    order = np.argsort(d, axis=1, kind="stable")[:, :k]
    if order.shape[1] < k:
        fill = np.repeat(order[:, :1], k - order.shape[1], axis=1)
        order = np.concatenate([order, fill], axis=1)
    return order.astype(np.int64)


def py_segment_distance(points: np.ndarray, seg_a: np.ndarray, seg_b: np.ndarray) -> np.ndarray:
    p = _as_points(points)[:, None, :]
    a = _as_points(seg_a)[None]
    ab = _as_points(seg_b)[None] - a
    denom = np.sum(ab * ab, axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(denom > 0, np.sum((p - a) * ab, axis=2) / denom, 0.0)
    t = np.clip(t, 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.sqrt(np.min(np.sum((p - closest) ** 2, axis=2), axis=1))


_ext = None
if not os.environ.get("RADARMOTION_PURE_PYTHON"):
    try:
        from radarmotion import _kernels as _ext  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        _ext = None

BACKEND = "compiled" if _ext is not None else "python"


def _check_k(n: int, k: int) -> None:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if n < 1:
        raise ValueError("no points")


def fps(points: np.ndarray, k: int) -> np.ndarray:
    """Farthest point sampling; ``k`` may not exceed the number of points."""
    pts = _as_points(points)
    _check_k(len(pts), k)
    if k > len(pts):
        raise ValueError(f"cannot select {k} of {len(pts)} points")
    if _ext is not None:
        return _ext.fps(pts, k)
    return py_fps(pts, k)


def knn(points: np.ndarray, queries: np.ndarray, k: int) -> np.ndarray:
    pts = _as_points(points)
    _check_k(len(pts), k)
    if _ext is not None:
        return _ext.knn(pts, _as_points(queries), k)
    return py_knn(pts, queries, k)


def segment_distance(points: np.ndarray, seg_a: np.ndarray, seg_b: np.ndarray) -> np.ndarray:
    if _ext is not None:
        return _ext.segment_distance(_as_points(points), _as_points(seg_a), _as_points(seg_b))
    return py_segment_distance(points, seg_a, seg_b)
