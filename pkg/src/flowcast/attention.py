"""Attention kernels over joint space-time token sequences.

``softmax_attention`` is the quadratic reference: it materializes the full
score matrix. ``linear_attention`` replaces the softmax with a positive
exponential feature map and exploits matmul associativity: the key-value
summary (d x d) and key normalizer (d) are accumulated once, so time and
memory are linear in the token count instead of quadratic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

__all__ = [
    "AttentionConfig",
    "AttentionParams",
    "to_joint_tokens",
    "from_joint_tokens",
    "softmax_attention",
    "similarity_attention",
    "feature_map_exp",
    "linear_attention",
    "multi_head_attention",
    "DegenerateAttentionError",
]


class DegenerateAttentionError(ArithmeticError):
    """An attention normalizer underflowed to (near) zero."""


@dataclass(frozen=True)
class AttentionConfig:
    """Head count, per-head width, and the model width they multiply to."""

    heads: int
    head_dim: int
    model_dim: int

    def __post_init__(self):
        if self.heads < 1 or self.head_dim < 1:
            raise ValueError("heads and head_dim must be positive")
        if self.model_dim != self.heads * self.head_dim:
            raise ValueError(
                f"model_dim {self.model_dim} != heads {self.heads} "
                f"x head_dim {self.head_dim}"
            )


@dataclass
class AttentionParams:
    """Per-head query/key/value projections (F x d) plus output map (F x F)."""

    w_q: list[Tensor]
    w_k: list[Tensor]
    w_v: list[Tensor]
    w_o: Tensor

    def named(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, (wq, wk, wv) in enumerate(zip(self.w_q, self.w_k, self.w_v)):
            out[f"{prefix}.h{i}.w_q"] = wq
            out[f"{prefix}.h{i}.w_k"] = wk
            out[f"{prefix}.h{i}.w_v"] = wv
        out[f"{prefix}.w_o"] = self.w_o
        return out


# ---------------------------------------------------------------------------
# Token layout

def to_joint_tokens(x: Tensor) -> Tensor:
    """Flatten (T, N, F) into (T*N, F) tokens, time-major."""
    if x.data.ndim != 3:
        raise ShapeError(f"expected a (T, N, F) tensor, got {x.shape}")
    steps, nodes, width = x.shape
    return T.reshape(x, (steps * nodes, width))


def from_joint_tokens(tokens: Tensor, steps: int, nodes: int) -> Tensor:
    """Inverse of :func:`to_joint_tokens`; bit-exact round trip."""
    if tokens.data.ndim != 2 or tokens.shape[0] != steps * nodes:
        raise ShapeError(
            f"cannot fold {tokens.shape} into ({steps}, {nodes}, features)"
        )
    return T.reshape(tokens, (steps, nodes, tokens.shape[1]))


# ---------------------------------------------------------------------------
# Quadratic reference

def _check_qkv(q: Tensor, k: Tensor, v: Tensor) -> None:
    if q.data.ndim != 2 or k.data.ndim != 2 or v.data.ndim != 2:
        raise ShapeError("attention operands must be 2-D")
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"query dim {q.shape} vs key dim {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"key rows {k.shape} vs value rows {v.shape}")


def softmax_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(Q K^T / sqrt(d)) V — O(M^2) time and memory."""
    _check_qkv(q, k, v)
    d = q.shape[1]
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(d))
    return T.matmul(T.softmax(scores, axis=-1), v)


def similarity_attention(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, sim=None
) -> np.ndarray:
    """Generalized attention: out_i = sum_j sim(q_i,k_j) v_j / sum_j sim.

    With the default ``sim = exp(q k^T / sqrt(d))`` this equals
    :func:`softmax_attention`; with ``sim = phi(q) . phi(k)`` it is the
    unrewritten form of :func:`linear_attention`. Plain-array evaluation,
    used as a correctness reference.
    """
    q, k, v = np.asarray(q), np.asarray(k), np.asarray(v)
    d = q.shape[1]
    if sim is None:
        def sim(qi, kj):
            return math.exp(float(qi @ kj) / math.sqrt(d))

    out = np.zeros((q.shape[0], v.shape[1]))
    for i in range(q.shape[0]):
        weights = np.array([sim(q[i], k[j]) for j in range(k.shape[0])])
        out[i] = (weights[:, None] * v).sum(axis=0) / weights.sum()
    return out


# ---------------------------------------------------------------------------
# Linear attention

def feature_map_exp(x: Tensor, shift: str = "none") -> Tensor:
    """Strictly positive exponential feature map.

    ``shift`` subtracts a gradient-detached maximum before exponentiating:
    "rows" per row, "global" one scalar for the whole matrix. Both rescale
    an attention numerator and denominator identically, so the attention
    ratio is unchanged while exp stays in range.
    """
    if shift == "none":
        return T.exp(x)
    if shift == "rows":
        m = x.data.max(axis=-1, keepdims=True)
    elif shift == "global":
        m = x.data.max()
    else:
        raise ValueError(f"unknown shift mode {shift!r}")
    return T.exp(T.sub(x, Tensor(m)))


def linear_attention(
    q: Tensor, k: Tensor, v: Tensor, stabilize: bool = True
) -> Tensor:
    """Kernelized attention in right-associated order: O(M) in tokens.

    Accumulates S = sum_j phi(k_j)^T v_j (d x d) and z = sum_j phi(k_j)
    once, then each output row is (phi(q_i) S) / (phi(q_i) . z). The
    q shift is per row and the k shift global; a per-row k shift would
    not cancel from the ratio and is therefore never applied.
    """
    _check_qkv(q, k, v)
    phi_q = feature_map_exp(q, "rows" if stabilize else "none")
    phi_k = feature_map_exp(k, "global" if stabilize else "none")
    summary = T.matmul(T.transpose(phi_k), v)  # (d, d_v)
    normalizer = T.sum_(phi_k, axis=0)  # (d,)
    num = T.matmul(phi_q, summary)  # (M, d_v)
    den = T.matmul(phi_q, T.reshape(normalizer, (normalizer.shape[0], 1)))
    bad = ~(den.data >= 1e-30)  # catches underflow and NaN alike
    if bad.any():
        row = int(np.argmax(bad))
        raise DegenerateAttentionError(
            f"attention normalizer degenerate at query row {row}"
        )
    return T.div(num, den)


def multi_head_attention(
    x: Tensor,
    cross_kv: Tensor | None,
    params: AttentionParams,
    cfg: AttentionConfig,
) -> Tensor:
    """Heads of linear attention, concatenated and output-projected.

    Queries come from ``x``; keys/values from ``cross_kv`` when given
    (cross-attention) and from ``x`` otherwise.
    """
    if x.shape[1] != cfg.model_dim:
        raise ShapeError(f"token width {x.shape[1]} != model dim {cfg.model_dim}")
    source = x if cross_kv is None else cross_kv
    if source.shape[1] != cfg.model_dim:
        raise ShapeError(
            f"key/value width {source.shape[1]} != model dim {cfg.model_dim}"
        )
    heads = []
    for h in range(cfg.heads):
        qh = T.matmul(x, params.w_q[h])
        kh = T.matmul(source, params.w_k[h])
        vh = T.matmul(source, params.w_v[h])
        heads.append(linear_attention(qh, kh, vh))
    return T.matmul(T.concat(heads, axis=1), params.w_o)
