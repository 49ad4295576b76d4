"""Single-head scaled dot-product attention blocks.

All three blocks normalize each query's weights jointly over every key it
sums over, so each row of weights is a probability distribution.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Linear, Module, ResidualMLP
from .tensor import Tensor


@dataclass
class AttentionWeights:
    alpha: np.ndarray  # (queries, keys...)
    axis_spec: str

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        rows = self.alpha.reshape(self.alpha.shape[0], -1)
        if (rows < 0).any() or np.abs(rows.sum(axis=1) - 1.0).max(initial=0.0) > 1e-6:
            raise ValueError("attention rows must be distributions")

    def within_segment(self) -> np.ndarray:
        """Diagonal (k' = k) slices of (K, K, N) cross-attention weights -> (K, N)."""
        K = self.alpha.shape[0]
        return self.alpha[np.arange(K), np.arange(K)]


class QKV(Module):
    """The three bias-free projections producing queries, keys and values."""

    def __init__(self, d_in: int, d: int, rng: np.random.Generator):
        self.q = Linear(d_in, d, rng, bias=False, init="lecun")
        self.k = Linear(d_in, d, rng, bias=False, init="lecun")
        self.v = Linear(d_in, d, rng, bias=False, init="lecun")
        self.d = d


def qkv_project(features, wq, wk, wv):
    """Project (..., d_in) features with three (d_in, d) matrices."""
    f = T.as_tensor(features)
    for w in (wq, wk, wv):
        if T.as_tensor(w).shape[0] != f.shape[-1]:
            raise T.ShapeError("qkv_project", f.shape, T.as_tensor(w).shape)
    return f @ wq, f @ wk, f @ wv


def attention_logits(q: Tensor, k: Tensor) -> Tensor:
    """(M, d) x (L, d) -> (M, L) scaled dot products."""
    return (q @ k.transpose()) * (1.0 / np.sqrt(q.shape[-1]))


class SelfAttention(Module):
    """Attention over a flat set of tokens followed by the residual MLP refinement."""

    def __init__(self, d: int, hidden: int, rng: np.random.Generator):
        self.qkv = QKV(d, d, rng)
        self.refine = ResidualMLP(d, hidden, rng)

    def __call__(self, f: Tensor) -> tuple[Tensor, Tensor]:
        """(M, d) tokens -> refined (M, d) tokens and (M, M) weights."""
        if f.shape[0] == 0:
            raise ValueError("self-attention over an empty token set")
        q, k, v = qkv_project(f, self.qkv.q.weight, self.qkv.k.weight, self.qkv.v.weight)
        alpha = T.softmax(attention_logits(q, k), axis=-1)
        return self.refine(f + alpha @ v), alpha


def visual_self_attention(sroi: Tensor, block: SelfAttention) -> tuple[Tensor, Tensor]:
    """(K, N, d) SROI features -> (K, N, d) refined features, (K*N, K*N) weights.

    Every (segment, region) query attends to all K*N regions of the clip.
    """
    sroi = T.as_tensor(sroi)
    K, N, d = sroi.shape
    if K * N == 0:
        raise ValueError("visual self-attention needs at least one SROI")
    z, alpha = block(sroi.reshape(K * N, d))
    return z.reshape(K, N, d), alpha


def audio_self_attention(f_a: Tensor, block: SelfAttention) -> tuple[Tensor, Tensor]:
    """(K, d) segment features -> (K, d), (K, K) weights."""
    f_a = T.as_tensor(f_a)
    if f_a.shape[0] < 1:
        raise ValueError("audio self-attention needs K >= 1")
    return block(f_a)


class CrossAttention(Module):
    """Audio queries against SROI keys/values."""

    def __init__(self, d: int, hidden: int, rng: np.random.Generator):
        self.qkv = QKV(d, d, rng)
        self.refine = ResidualMLP(d, hidden, rng)

    def __call__(self, z_a: Tensor, z_v: Tensor) -> tuple[Tensor, Tensor]:
        return av_cross_attention(z_a, z_v, self)


def av_cross_attention(z_a, z_v, block: CrossAttention) -> tuple[Tensor, Tensor]:
    """(K, d) audio and (K, N, d) visual -> fused (K, d) and weights (K, K, N).

    ``alpha[k, k', i]`` is normalized over all (k', i) for each audio segment k.
    """
    z_a, z_v = T.as_tensor(z_a), T.as_tensor(z_v)
    K, N, d = z_v.shape
    if z_a.shape != (K, d):
        raise T.ShapeError("av_cross_attention", z_a.shape, z_v.shape)
    flat = z_v.reshape(K * N, d)
    q = z_a @ block.qkv.q.weight
    k = flat @ block.qkv.k.weight
    v = flat @ block.qkv.v.weight
    alpha = T.softmax(attention_logits(q, k), axis=-1)
    z = block.refine(z_a + alpha @ v)
    return z, alpha.reshape(K, K, N)


def within_segment(alpha: Tensor) -> Tensor:
    """Differentiable (K, K, N) -> (K, N) diagonal slice alpha[k, k, :]."""
    K = alpha.shape[0]
    idx = np.arange(K)
    return alpha[idx, idx]
