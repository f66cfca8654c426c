"""Central finite-difference checks for reverse-mode gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numeric_grad(f: Callable[[], Tensor], t: Tensor, eps: float = 1e-6,
                 max_entries: int | None = None, rng: np.random.Generator | None = None):
    """Central differences of scalar ``f()`` w.r.t. entries of ``t.data``.

    With ``max_entries`` only a random subset of entries is probed; returns
    ``(flat_indices, values)``.
    """
    flat = t.data.reshape(-1)
    idx = np.arange(flat.size)
    if max_entries is not None and flat.size > max_entries:
        idx = np.sort((rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False))
    out = np.empty(len(idx))
    for n, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + eps
        hi = f().item()
        flat[i] = old - eps
        lo = f().item()
        flat[i] = old
        out[n] = (hi - lo) / (2 * eps)
    return idx, out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-7) -> float:
    """``|a - n| / (|a| + |n|)`` over the whole vector (2-norms).

    Gradients that vanish analytically (e.g. a bias feeding a softmax) leave
    only finite-difference round-off; below ``atol`` the absolute difference
    is returned instead.
    """
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = np.linalg.norm(a) + np.linalg.norm(n)
    diff = np.linalg.norm(a - n)
    return float(diff if scale < atol else diff / scale)


def check_gradients(f: Callable[[], Tensor], tensors: Sequence[Tensor], eps: float = 1e-6,
                    max_entries: int | None = None, seed: int = 0) -> dict[str, float]:
    """Relative error between backprop and central differences for every tensor.

    ``f`` must rebuild the graph on every call. Keys are tensor names (or
    positions when unnamed).
    """
    for t in tensors:
        t.grad = None
    f().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    rng = np.random.default_rng(seed)
    errs = {}
    for i, (t, g) in enumerate(zip(tensors, analytic)):
        idx, num = numeric_grad(f, t, eps, max_entries, rng)
        errs[t.name or str(i)] = relative_error(g.reshape(-1)[idx], num)
    return errs
