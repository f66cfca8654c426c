"""DDPM over DCT motion coefficients with history inpainting.

Step indices run ``1..K``; ``alpha_bar[0] == 1`` is the clean data. Sampling
keeps the observed history pinned: after every reverse step the state is
moved to the time domain, its first ``H`` frames are replaced by the history
noised to the state's level, and it is moved back.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor, sum_squares
from .codec import DctBasis, build_basis, dct, idct, pad_repeat

EpsFn = Callable[[np.ndarray, np.ndarray, object], np.ndarray]


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray       # (K,) beta[k-1] is the variance added at step k
    alpha_bar: np.ndarray  # (K+1,) alpha_bar[0] == 1

    @property
    def K(self) -> int:
        return len(self.beta)

    def beta_at(self, k: int) -> float:
        return float(self.beta[k - 1])


def schedule_from_betas(beta) -> NoiseSchedule:
    beta = np.asarray(beta, dtype=np.float64)
    return NoiseSchedule(beta, np.concatenate([[1.0], np.cumprod(1.0 - beta)]))


def cosine_schedule(K: int, s: float = 0.008, max_beta: float = 0.999) -> NoiseSchedule:
    if K < 1:
        raise ValueError("K must be >= 1")
    steps = np.arange(K + 1) / K
    f = np.cos((steps + s) / (1 + s) * np.pi / 2) ** 2
    ratio = f[1:] / f[:-1]
    beta = np.clip(1.0 - ratio, 1e-12, max_beta)
    return schedule_from_betas(beta)


def forward_sample(x0, k: int, eps, sched: NoiseSchedule) -> np.ndarray:
    """Closed-form marginal ``sqrt(ab_k) x0 + sqrt(1 - ab_k) eps``."""
    x0, eps = np.asarray(x0, dtype=np.float64), np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"noise shape {eps.shape} does not match data {x0.shape}")
    ab = sched.alpha_bar[k]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def forward_stepwise(x0, k: int, sched: NoiseSchedule, rng: np.random.Generator) -> np.ndarray:
    """Iterate ``x_i = sqrt(1 - b_i) x_{i-1} + sqrt(b_i) e_i`` for ``i = 1..k``."""
    x = np.asarray(x0, dtype=np.float64)
    for i in range(1, k + 1):
        b = sched.beta_at(i)
        x = np.sqrt(1.0 - b) * x + np.sqrt(b) * rng.standard_normal(x.shape)
    return x


def posterior_std(k: int, sched: NoiseSchedule) -> float:
    ab, ab_prev = sched.alpha_bar[k], sched.alpha_bar[k - 1]
    return float(np.sqrt(sched.beta_at(k) * (1.0 - ab_prev) / (1.0 - ab)))


def reverse_step(x_k, eps_hat, k: int, sched: NoiseSchedule, rule: str = "standard", z=None) -> np.ndarray:
    """One ancestral step ``k -> k-1``.

    ``standard`` is the DDPM posterior mean plus ``sigma_k z``; ``paper-literal``
    is ``(x_k - beta_k eps) / (1 - beta_k)`` and ignores ``z``.
    """
    if not 1 <= k <= sched.K:
        raise ValueError(f"step {k} outside [1, {sched.K}]")
    b = sched.beta_at(k)
    if rule == "paper-literal":
        return (x_k - b * eps_hat) / (1.0 - b)
    if rule != "standard":
        raise ValueError(f"unknown reverse rule {rule!r}")
    mean = (x_k - b / np.sqrt(1.0 - sched.alpha_bar[k]) * eps_hat) / np.sqrt(1.0 - b)
    if k == 1 or z is None:
        return mean
    return mean + posterior_std(k, sched) * z


def ddim_plan(K: int, steps: int) -> list[int]:
    """Evenly spaced, strictly decreasing steps from ``K`` towards 1."""
    if not 1 <= steps <= K:
        raise ValueError(f"need 1 <= steps <= K, got {steps} for K={K}")
    if steps == 1:
        return [K]
    return [int(v) for v in np.round(np.linspace(K, 1, steps))]


def ddim_step(x_k, eps_hat, k: int, k_prev: int, sched: NoiseSchedule, eta: float = 0.0,
              z=None, rule: str = "standard") -> np.ndarray:
    """Jump ``k -> k_prev`` (``k_prev`` may be 0). ``eta = 1`` with ``k_prev = k-1``
    reproduces the ancestral step."""
    ab, ab_prev = sched.alpha_bar[k], sched.alpha_bar[k_prev]
    if rule == "paper-literal":
        b = 1.0 - ab / ab_prev
        return (x_k - b * eps_hat) / (1.0 - b)
    x0 = (x_k - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)
    var = eta ** 2 * (1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev)
    out = np.sqrt(ab_prev) * x0 + np.sqrt(max(1.0 - ab_prev - var, 0.0)) * eps_hat
    if z is not None and var > 0:
        out = out + np.sqrt(var) * z
    return out


@dataclass(frozen=True)
class InpaintMask:
    history: int
    future: int

    @property
    def values(self) -> np.ndarray:
        return np.concatenate([np.ones(self.history), np.zeros(self.future)])


def complete(x_hat, x_hist_noised, mask: InpaintMask, basis: DctBasis) -> np.ndarray:
    """``DCT[M * iDCT(hist) + (1 - M) * iDCT(x_hat)]`` on ``(..., N1, J, 3)`` arrays."""
    m = mask.values.reshape(-1, 1, 1)
    t_hist = idct(x_hist_noised, basis, axis=-3)
    t_hat = idct(x_hat, basis, axis=-3)
    return dct(m * t_hist + (1.0 - m) * t_hat, basis, axis=-3)


def noise_history(x_hist, k: int, sched: NoiseSchedule, noise) -> np.ndarray:
    """History coefficients at the noise level of step ``k`` (identity at ``k = 0``)."""
    return forward_sample(x_hist, k, noise, sched)


def dct_completion(x_hat_k, x_hist, mask: InpaintMask, k: int, sched: NoiseSchedule,
                   rng: np.random.Generator, basis: DctBasis | None = None) -> np.ndarray:
    basis = basis or build_basis(x_hat_k.shape[-3], mask.history + mask.future)
    noised = noise_history(x_hist, k, sched, rng.standard_normal(np.shape(x_hist)))
    return complete(x_hat_k, noised, mask, basis)


def history_coeffs(x_time_history: np.ndarray, future: int, n1: int) -> np.ndarray:
    """Repeat-pad an ``(..., H, J, 3)`` history and keep ``n1`` DCT coefficients."""
    h = x_time_history.shape[-3]
    return dct(pad_repeat(x_time_history, h + future, axis=-3), build_basis(n1, h + future), axis=-3)


@dataclass
class SamplerConfig:
    mode: str = "ddim"
    ddim_steps: int = 60
    reverse_rule: str = "standard"
    eta: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("ddpm", "ddim"):
            raise ValueError(f"unknown sampler mode {self.mode!r}")
        if self.reverse_rule not in ("standard", "paper-literal"):
            raise ValueError(f"unknown reverse rule {self.reverse_rule!r}")


def clamp_noise(x_k, eps_hat, k: int, sched: NoiseSchedule, bounds) -> np.ndarray:
    """Noise estimate whose implied clean sample lies inside ``bounds = (lo, hi)``.

    Near ``k = K`` the implied ``X_0`` divides by ``sqrt(alpha_bar_k)``, so small
    noise errors become huge; clamping it keeps every reverse rule stable.
    """
    ab = sched.alpha_bar[k]
    x0 = (x_k - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)
    x0c = np.clip(x0, bounds[0], bounds[1])
    return (x_k - np.sqrt(ab) * x0c) / np.sqrt(1.0 - ab)


def reverse_sample(eps_fn: EpsFn, x_hist: np.ndarray, cond, sched: NoiseSchedule,
                   sampler: SamplerConfig, mask: InpaintMask, rngs: Sequence[np.random.Generator],
                   callback: Callable[[int, np.ndarray, np.ndarray], None] | None = None,
                   x0_bounds=None) -> np.ndarray:
    """Reverse diffusion for a batch of ``B`` chains with history completion.

    ``x_hist`` holds the padded history coefficients ``(B, N1, J, 3)``; chain
    ``b`` draws all of its noise from ``rngs[b]``. ``callback(k, state, noised_hist)``
    sees every completed state. ``x0_bounds`` optionally clamps the implied clean
    sample (see :func:`clamp_noise`). Returns ``X_0``.
    """
    x_hist = np.asarray(x_hist, dtype=np.float64)
    n1 = x_hist.shape[-3]
    basis = build_basis(n1, mask.history + mask.future)
    shape = x_hist.shape[1:]

    def draw():
        return np.stack([r.standard_normal(shape) for r in rngs])

    K = sched.K
    noised = noise_history(x_hist, K, sched, draw())
    x = noised  # the chain starts from the noised history
    if callback:
        callback(K, x, noised)
    if sampler.mode == "ddpm":
        plan = list(range(K, 0, -1))
    else:
        plan = ddim_plan(K, sampler.ddim_steps)
    targets = plan[1:] + [0]
    for k, k_prev in zip(plan, targets):
        eps = eps_fn(x, np.full(len(x), k), cond)
        if x0_bounds is not None:
            eps = clamp_noise(x, eps, k, sched, x0_bounds)
        z = draw()
        if sampler.mode == "ddpm":
            x = reverse_step(x, eps, k, sched, sampler.reverse_rule, z)
        else:
            x = ddim_step(x, eps, k, k_prev, sched, sampler.eta, z, sampler.reverse_rule)
        noised = noise_history(x_hist, k_prev, sched, draw()) if k_prev > 0 else x_hist
        x = complete(x, noised, mask, basis)
        if callback:
            callback(k_prev, x, noised)
    return x


def training_loss(eps_fn_tensor: Callable[[np.ndarray, np.ndarray], Tensor], x0: np.ndarray,
                  sched: NoiseSchedule, rng: np.random.Generator) -> Tensor:
    """Noise-prediction loss for a batch ``(B, N1, J, 3)``: mean over the batch of
    the per-sample squared error."""
    b = len(x0)
    k = rng.integers(1, sched.K + 1, size=b)
    eps = rng.standard_normal(x0.shape)
    ab = sched.alpha_bar[k].reshape(-1, *([1] * (x0.ndim - 1)))
    xk = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    return sum_squares(eps_fn_tensor(xk, k), Tensor(eps)) * (1.0 / b)


def training_step(model, x0: np.ndarray, cond, sched: NoiseSchedule, seed) -> Tensor:
    """Loss for one sample or batch; gradients are populated on ``model``."""
    rng = np.random.default_rng(seed)
    x0 = np.asarray(x0, dtype=np.float64)
    single = x0.ndim == 3
    if single:
        x0 = x0[None]
        cond = cond[None] if not isinstance(cond, Tensor) else cond.reshape(1, *cond.shape)
    loss = training_loss(lambda xk, k: model(xk, k, cond), x0, sched, rng)
    loss.backward()
    return loss
