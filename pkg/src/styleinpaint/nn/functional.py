"""Layer-level operations: convolution, linear, attention, feature stats.

conv2d is the hot path. It lowers the padded input to im2col columns with
``sliding_window_view`` so the whole convolution is a single GEMM; the
backward pass rebuilds the columns from the saved padded input (cheaper than
holding them) and scatters dX back through nine strided adds, one per kernel
tap.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor, _accum, _node


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: int = 1, pad_mode: str = "zeros") -> Tensor:
    """2-D convolution (cross-correlation) of [B,Cin,H,W] with [Cout,Cin,k,k]."""
    xp = T.pad2d(x, padding, pad_mode) if padding > 0 else x
    B, Cin, Hp, Wp = xp.data.shape
    Cout, Cin_w, kh, kw = w.data.shape
    if Cin != Cin_w:
        raise ValueError(f"conv2d channel mismatch: input has {Cin}, weight expects {Cin_w}")
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1

    def im2col(xd: np.ndarray) -> np.ndarray:
        win = np.lib.stride_tricks.sliding_window_view(xd, (kh, kw), axis=(2, 3))
        win = win[:, :, ::stride, ::stride]  # [B, Cin, Ho, Wo, kh, kw]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, Cin * kh * kw)
        return np.ascontiguousarray(cols)

    cols = im2col(xp.data)
    wmat = w.data.reshape(Cout, Cin * kh * kw)
    out_data = (cols @ wmat.T).reshape(B, Ho, Wo, Cout).transpose(0, 3, 1, 2)
    if b is not None:
        out_data = out_data + b.data.reshape(1, Cout, 1, 1)
    out_data = np.ascontiguousarray(out_data)

    xp_data = xp.data
    parents = (xp, w) if b is None else (xp, w, b)

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, Cout)
        if w.requires_grad:
            _accum(w, (gm.T @ im2col(xp_data)).reshape(w.data.shape))
        if b is not None and b.requires_grad:
            _accum(b, g.sum(axis=(0, 2, 3)))
        if xp.requires_grad:
            gcols = (gm @ wmat).reshape(B, Ho, Wo, Cin, kh, kw)
            gx = np.zeros_like(xp_data)
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i:i + Ho * stride:stride, j:j + Wo * stride:stride] += \
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            _accum(xp, gx)

    return _node(out_data, parents, backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w.T + b for x of shape [..., in], w of shape [out, in]."""
    out = T.matmul(x, T.transpose(w, (1, 0)))
    if b is not None:
        out = T.add(out, b)
    return out


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 0.0) -> Tensor:
    """Scale rows to unit L2 norm. Raises on an exactly-zero row."""
    sq = T.tsum(T.mul(x, x), axis=axis, keepdims=True)
    if np.any(sq.data <= 0):
        raise ValueError("degenerate zero embedding cannot be normalized")
    return T.div(x, T.sqrt(sq if eps == 0.0 else T.add(sq, eps)))


def channel_mean_std(x: Tensor, eps: float = 1e-5) -> tuple[Tensor, Tensor]:
    """Per-channel spatial mean and std of [B,C,H,W]; population variance,
    stabilized as sqrt(var + eps)."""
    mu = T.tmean(x, axis=(2, 3))
    mu_k = T.reshape(mu, (x.shape[0], x.shape[1], 1, 1))
    d = T.sub(x, mu_k)
    var = T.tmean(T.mul(d, d), axis=(2, 3))
    sigma = T.sqrt(T.add(var, eps))
    return mu, sigma


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d)) v over [B, L, d] operands."""
    if k.shape[1] == 0:
        raise ValueError("attention over an empty key sequence")
    d = q.shape[-1]
    scores = T.mul(T.matmul(q, T.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(d))
    return T.matmul(T.softmax(scores, axis=-1), v)


def sinusoidal_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Classic sin/cos position features for integer timesteps; [B, dim]."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(np.float32)


def flatten_tokens(x: Tensor) -> Tensor:
    """[B, C, H, W] -> [B, H*W, C] token sequence."""
    B, C, H, W = x.shape
    return T.transpose(T.reshape(x, (B, C, H * W)), (0, 2, 1))


def unflatten_tokens(x: Tensor, h: int, w: int) -> Tensor:
    """[B, H*W, C] -> [B, C, H, W]."""
    B, L, C = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1)), (B, C, h, w))
