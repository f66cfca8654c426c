"""Skeleton/frequency transformer that predicts diffusion noise on DCT motion.

Latents have shape ``(B, N1, J, D)``: one token per (frequency, joint). An
S-block lets joints attend to each other and is modulated per joint by the
condition; an F-block lets frequencies attend to each other and is modulated
by the joint-pooled condition. Attention in either block is factorised: the
S-block runs one joint-axis attention per frequency, the F-block one
frequency-axis attention per joint, with projections shared across the other
axis. Information therefore crosses joints only through S-blocks and crosses
frequencies only through F-blocks.

Blocks are pre-norm residual: ``h + Attn(FiLM(LN(h)))``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (LayerNorm, MLP, Module, MultiHeadAttention, Parameter, Tensor,
                       film, sinusoidal_embedding)


@dataclass
class GstConfig:
    n1: int = 20
    joints: int = 17
    d_model: int = 32
    blocks: int = 4
    heads: int = 4
    d_cond: int = 32
    s_blocks: bool = True
    f_blocks: bool = True
    K: int = 100

    def __post_init__(self):
        if self.blocks < 2 or self.blocks % 2:
            raise ValueError("blocks must be a positive even count")
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")


class SBlock(Module):
    def __init__(self, cfg: GstConfig, rng):
        d = cfg.d_model
        self.n1, self.d = cfg.n1, d
        self.norm = LayerNorm(d)
        self.film = MLP(cfg.d_cond, cfg.d_cond, 2 * cfg.n1 * d, rng, activation="silu", zero_out=True)
        self.attn = MultiHeadAttention(d, cfg.heads, rng)

    def modulation(self, cond: Tensor) -> tuple[Tensor, Tensor]:
        """``alpha, beta`` of shape (B, N1, J, D) from the per-joint condition (B, J, Dc)."""
        b, j = cond.shape[:2]
        ab = self.film(cond).reshape(b, j, 2, self.n1, self.d)
        alpha = ab[:, :, 0].transpose(0, 2, 1, 3) + 1.0
        beta = ab[:, :, 1].transpose(0, 2, 1, 3)
        return alpha, beta

    def forward(self, h: Tensor, cond: Tensor) -> Tensor:
        alpha, beta = self.modulation(cond)
        return h + self.attn(film(self.norm(h), alpha, beta))  # attention over J


class FBlock(Module):
    def __init__(self, cfg: GstConfig, rng):
        d = cfg.d_model
        self.joints, self.d = cfg.joints, d
        self.norm = LayerNorm(d)
        self.film = MLP(cfg.d_cond, cfg.d_cond, 2 * cfg.joints * d, rng, activation="silu", zero_out=True)
        self.attn = MultiHeadAttention(d, cfg.heads, rng)

    def modulation(self, pooled: Tensor) -> tuple[Tensor, Tensor]:
        """``alpha, beta`` of shape (B, 1, J, D), shared by every frequency token."""
        b = pooled.shape[0]
        ab = self.film(pooled).reshape(b, 2, 1, self.joints, self.d)
        return ab[:, 0] + 1.0, ab[:, 1]

    def forward(self, h: Tensor, pooled: Tensor) -> Tensor:
        alpha, beta = self.modulation(pooled)
        m = film(self.norm(h), alpha, beta).transpose(0, 2, 1, 3)  # (B, J, N1, D)
        return h + self.attn(m).transpose(0, 2, 1, 3)


class GST(Module):
    """Noise predictor ``eps(X_k, k, C)`` over ``(B, N1, J, 3)`` DCT motion."""

    def __init__(self, cfg: GstConfig, rng: np.random.Generator):
        d = cfg.d_model
        self.cfg = cfg
        self.embed = MLP(3, d, d, rng, activation="silu")
        self.pos = Parameter(np.zeros((cfg.n1, cfg.joints, d)))
        self.step_mlp = MLP(cfg.d_cond, cfg.d_cond, cfg.d_cond, rng, activation="silu")
        self.s_layers = [SBlock(cfg, rng) for _ in range(cfg.blocks)] if cfg.s_blocks else []
        self.f_layers = [FBlock(cfg, rng) for _ in range(cfg.blocks)] if cfg.f_blocks else []
        self.out_norm = LayerNorm(d)
        self.head = MLP(d, d, 3, rng, activation="silu")

    def embed_tokens(self, x: np.ndarray) -> Tensor:
        if x.shape[-3:] != (self.cfg.n1, self.cfg.joints, 3):
            raise ValueError(f"expected (..., {self.cfg.n1}, {self.cfg.joints}, 3), got {x.shape}")
        return self.embed(Tensor(x)) + self.pos

    def step_condition(self, cond: Tensor, k: np.ndarray) -> tuple[Tensor, Tensor]:
        k = np.asarray(k).reshape(-1)
        if np.any(k < 0) or np.any(k > self.cfg.K):
            raise ValueError(f"diffusion step outside [0, {self.cfg.K}]")
        emb = self.step_mlp(Tensor(sinusoidal_embedding(k, self.cfg.d_cond)))  # (B or 1, Dc)
        b = emb.shape[0]
        c = cond + emb.reshape(b, 1, self.cfg.d_cond)
        return c, c.mean(axis=1)

    def _pair(self, i: int, h: Tensor, c: Tensor, pooled: Tensor) -> Tensor:
        if self.s_layers:
            h = self.s_layers[i](h, c)
        if self.f_layers:
            h = self.f_layers[i](h, pooled)
        return h

    def forward(self, x: np.ndarray, k, cond) -> Tensor:
        """``x`` (B, N1, J, 3), ``k`` scalar or (B,), ``cond`` (B, J, Dc) -> (B, N1, J, 3)."""
        x = np.asarray(x, dtype=np.float64)
        cond = cond if isinstance(cond, Tensor) else Tensor(cond)
        c, pooled = self.step_condition(cond, k)
        h = self.embed_tokens(x)
        half = self.cfg.blocks // 2
        skips = []
        for i in range(half):
            h = self._pair(i, h, c, pooled)
            skips.append(h)
        for i in range(half, self.cfg.blocks):
            h = h + skips.pop()
            h = self._pair(i, h, c, pooled)
        return self.head(self.out_norm(h))
