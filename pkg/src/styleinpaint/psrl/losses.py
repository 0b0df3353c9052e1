"""Statistics-alignment and style-contrastive losses.

L_x / L_y pull the second-order statistics of same-image patches together;
L_xy is a symmetric InfoNCE over projector embeddings where the positive is
another patch of the same image and the negatives are the paired image's
patches. The vectorized form evaluates every (anchor, positive) term as
logaddexp(pos/tau, rowLSE(neg/tau)) - pos/tau.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import (Tensor, add, concat, div, logaddexp, logsumexp, matmul,
                  mul, relu, reshape, sub, transpose, tsum)
from .model import PSRLModel, StyleFeature

_NORM_FLOOR = 1e-24


def _safe_norm(sumsq: Tensor) -> Tensor:
    """sqrt with a floor so identical inputs give zero gradient, not NaN."""
    return (relu(sub(sumsq, _NORM_FLOOR)) + _NORM_FLOOR) ** 0.5


def stats_loss(f_i: StyleFeature, f_j: StyleFeature) -> Tensor:
    """||mu_i - mu_j||_2 + ||sigma_i - sigma_j||_2 for one feature pair."""
    dmu = sub(f_i.mu, f_j.mu)
    dsg = sub(f_i.sigma, f_j.sigma)
    return add(_safe_norm(tsum(mul(dmu, dmu))), _safe_norm(tsum(mul(dsg, dsg))))


def _pairwise_stats_mean(mu: Tensor, sigma: Tensor) -> Tensor:
    """Mean stats_loss over unordered patch pairs; mu/sigma are [..., N, C]."""
    n = mu.shape[-2]
    total = None
    for part in (mu, sigma):
        lead = part.shape[:-2]
        a = reshape(part, lead + (n, 1, part.shape[-1]))
        b = reshape(part, lead + (1, n, part.shape[-1]))
        d = sub(a, b)
        norms = _safe_norm(tsum(mul(d, d), axis=-1))  # [..., N, N]
        iu = np.triu(np.ones((n, n), dtype=np.float32), k=1)
        pairs = tsum(mul(norms, iu)) / (norms.size / (n * n) * n * (n - 1) / 2)
        total = pairs if total is None else add(total, pairs)
    return total


def intra_image_stats_loss(feature: StyleFeature) -> Tensor:
    """L_x for one patch set: mean pair distance of [N, C] statistics."""
    if feature.mu.shape[0] < 2:
        raise ValueError("intra-image statistics loss needs at least 2 patches")
    return _pairwise_stats_mean(feature.mu, feature.sigma)


def contrastive_loss(anchor, positive, negatives, tau: float = 0.07) -> Tensor:
    """-log exp(a.p/tau) / (exp(a.p/tau) + sum_k exp(a.n_k/tau))."""
    anchor = anchor if isinstance(anchor, Tensor) else Tensor(anchor)
    positive = positive if isinstance(positive, Tensor) else Tensor(positive)
    negatives = negatives if isinstance(negatives, Tensor) else Tensor(np.asarray(negatives))
    if negatives.shape[0] == 0:
        raise ValueError("contrastive loss requires at least one negative")
    d = anchor.shape[0]
    ap = tsum(mul(anchor, positive))
    an = reshape(matmul(negatives, reshape(anchor, (d, 1))), (negatives.shape[0],))
    logits = div(concat([reshape(ap, (1,)), an], axis=0), tau)
    return sub(logsumexp(logits, axis=0), div(ap, tau))


def _directed_nce(anchors: Tensor, mates: Tensor, negatives: Tensor, tau: float,
                  pooled_negatives: bool = False) -> Tensor:
    """Sum of InfoNCE terms over ordered same-set pairs (i, j != i).

    anchors/mates are the same [B, N, d] embedding set; negatives is the
    paired set. With pooled_negatives the negative pool is every pair's
    negatives flattened together.
    """
    b, n, d = anchors.shape
    pos = div(matmul(anchors, transpose(mates, (0, 2, 1))), tau)  # [B, N, N]
    if pooled_negatives:
        flat = reshape(negatives, (b * n, d))
        sims = div(matmul(reshape(anchors, (b * n, d)), transpose(flat, (1, 0))), tau)
        lse = reshape(logsumexp(sims, axis=1), (b, n, 1))
    else:
        sims = div(matmul(anchors, transpose(negatives, (0, 2, 1))), tau)
        lse = logsumexp(sims, axis=2, keepdims=True)  # [B, N, 1]
    terms = sub(logaddexp(pos, lse), pos)  # [B, N, N]
    off = 1.0 - np.eye(n, dtype=np.float32)
    return tsum(mul(terms, off))


def style_contrastive_loss(ex: Tensor, ey: Tensor, tau: float = 0.07,
                           pooled_negatives: bool = False) -> Tensor:
    """L_xy symmetrized over X and Y anchors, mean over all ordered pairs."""
    b, n, _ = ex.shape
    if n < 2:
        raise ValueError("style contrastive loss needs at least 2 patches per image")
    total = add(_directed_nce(ex, ex, ey, tau, pooled_negatives),
                _directed_nce(ey, ey, ex, tau, pooled_negatives))
    return div(total, 2.0 * b * n * (n - 1))


@dataclass
class PsrlLossOutput:
    total: Tensor
    l_x: Tensor
    l_y: Tensor
    l_xy: Tensor
    ex: Tensor  # [B, N, d] projector embeddings of X patches
    ey: Tensor
    zx: Tensor  # [B, N, 128] normalized raw statistics of X patches
    zy: Tensor


def psrl_batch_loss(model: PSRLModel, x_patches: np.ndarray, y_patches: np.ndarray,
                    tau: float, stage: int,
                    pooled_negatives: bool = False) -> PsrlLossOutput:
    """Combined loss over a batch of image pairs.

    x_patches/y_patches: [B, N, P, P, 3]. Stage 1 totals L_x + L_y; stage 2
    adds L_xy. L_xy is always evaluated so the log can track it either way.
    """
    if x_patches.shape != y_patches.shape:
        raise ValueError(f"patch set shapes differ: {x_patches.shape} vs {y_patches.shape}")
    b, n, p = x_patches.shape[:3]
    both = np.concatenate([x_patches, y_patches]).reshape(2 * b * n, p, p, 3)
    feat = model.encode(both)
    mu = reshape(feat.mu, (2 * b, n, feat.mu.shape[1]))
    sigma = reshape(feat.sigma, (2 * b, n, feat.sigma.shape[1]))
    l_x = _pairwise_stats_mean(mu[:b], sigma[:b])
    l_y = _pairwise_stats_mean(mu[b:], sigma[b:])
    emb = model.project(feat)
    ex = reshape(emb, (2 * b, n, emb.shape[1]))[:b]
    ey = reshape(emb, (2 * b, n, emb.shape[1]))[b:]
    l_xy = style_contrastive_loss(ex, ey, tau, pooled_negatives)
    zs = model.stats_vector(feat)
    zx = reshape(zs, (2 * b, n, zs.shape[1]))[:b]
    zy = reshape(zs, (2 * b, n, zs.shape[1]))[b:]
    total = add(l_x, l_y)
    if stage >= 2:
        total = add(total, l_xy)
    return PsrlLossOutput(total, l_x, l_y, l_xy, ex, ey, zx, zy)
