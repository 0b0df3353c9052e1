"""Two-stage progressive training of the style encoder and projector.

Stage 1 trains the encoder alone on statistics alignment (L_x + L_y); stage
2 turns on the contrastive term and trains encoder and projector jointly.
The `contrastive_only` mode drops the statistics warm-up and trains every
step on L_xy alone; `stats_only` never leaves stage 1. Each step's patches
and pairings derive from (seed, step), so interrupted runs resume exactly.
"""

from __future__ import annotations

import numpy as np

from ..checkpoint import PSRL_MAGIC, load_checkpoint, save_checkpoint
from ..dataset.io import DatasetSample
from ..dataset.scenes import crop_patches
from ..errors import DataError, NumericsError
from ..nn import AdamState, adam_step, no_grad
from ..rng import derive
from .losses import psrl_batch_loss, style_contrastive_loss
from .model import PSRLModel

LOG_HEADER = "step,stage,L_x,L_y,L_xy,total,pos_cos,neg_cos"
MODES = ("progressive", "contrastive_only", "stats_only")


def _pair_indices(samples, batch: int, pairing: str, rng) -> list[tuple[int, int]]:
    """Image pairs for one step; negatives must differ in style (or identity)."""
    pairs = []
    n = len(samples)
    for _ in range(batch):
        for _attempt in range(1000):
            i = int(rng.integers(0, n))
            j = int(rng.integers(0, n))
            if pairing == "distinct_style":
                if samples[i].style_id != samples[j].style_id:
                    break
            elif i != j:
                break
        else:
            raise DataError("dataset lacks two distinct styles for pairing")
        pairs.append((i, j))
    return pairs


def _cosine_summary(pos_sets: list[np.ndarray], neg_a: np.ndarray, neg_b: np.ndarray) -> tuple[float, float]:
    """Mean same-image (off-diagonal) and cross-image cosines."""
    pos_vals = []
    for e in pos_sets:
        b, n, _ = e.shape
        g = e @ e.transpose(0, 2, 1)
        off = ~np.eye(n, dtype=bool)
        pos_vals.append(g[:, off].mean())
    neg = (neg_a @ neg_b.transpose(0, 2, 1)).mean()
    return float(np.mean(pos_vals)), float(neg)


def train_psrl(samples: list[DatasetSample], config: dict, seed: int,
               checkpoint_path=None, log_path=None, resume=None):
    """Returns (model, log_rows). Writes checkpoint/log when paths given."""
    styles = {s.style_id for s in samples}
    if len(styles) < 2:
        raise DataError("training needs at least 2 styles in the dataset")
    mode = config.get("mode", "progressive")
    if mode not in MODES:
        raise ValueError(f"unknown psrl mode '{mode}'")
    n = int(config.get("n", 8))
    p = int(config.get("p", 16))
    tau = float(config.get("tau", 0.07))
    s1 = int(config.get("s1", 2000))
    s2 = int(config.get("s2", 2000))
    lr = float(config.get("lr", 1e-4))
    batch = int(config.get("batch", 8))
    pairing = config.get("pairing", "distinct_style")
    pooled = bool(int(config.get("in_batch_negatives", 0)))
    freeze_enc = bool(int(config.get("freeze_encoder_stage2", 0)))
    total_steps = s1 + s2

    start_step = 0
    log_rows: list[str] = []
    if resume is not None:
        # every hyperparameter comes from the checkpoint echo so the resumed
        # trajectory is the one the interrupted run would have taken
        rcfg, tensors = load_checkpoint(resume, PSRL_MAGIC)
        model = PSRLModel(rcfg["seed"], patch_size=rcfg["p"])
        opt = AdamState(lr=rcfg["lr"], step=rcfg["opt_step"])
        for name in model.params.paths():
            model.params[name].data[...] = tensors[name]
            opt.m[name] = tensors["opt.m." + name].copy()
            opt.v[name] = tensors["opt.v." + name].copy()
        start_step = int(rcfg["step"])
        seed = int(rcfg["seed"])
        mode = rcfg["mode"]
        s1, s2 = int(rcfg["s1"]), int(rcfg["s2"])
        n, p, tau, lr = int(rcfg["n"]), int(rcfg["p"]), float(rcfg["tau"]), float(rcfg["lr"])
        batch, pairing = int(rcfg["batch"]), rcfg["pairing"]
        pooled = bool(rcfg["in_batch_negatives"])
        freeze_enc = bool(rcfg["freeze_encoder_stage2"])
        total_steps = s1 + s2
    else:
        model = PSRLModel(seed, patch_size=p)
        opt = AdamState(lr=lr)

    enc_paths = model.encoder_paths()
    proj_paths = model.projector_paths()

    for step in range(start_step, total_steps):
        if mode == "progressive":
            stage = 1 if step < s1 else 2
        elif mode == "stats_only":
            stage = 1
        else:
            stage = 2
        if mode == "contrastive_only":
            trainable = enc_paths | proj_paths
        elif stage == 1:
            trainable = enc_paths
        else:
            trainable = proj_paths if freeze_enc else enc_paths | proj_paths
        model.params.set_trainable(trainable)

        rng = derive(seed, "psrl-step", step)
        pairs = _pair_indices(samples, batch, pairing, rng)
        xs, ys = [], []
        for i, j in pairs:
            sx = int(rng.integers(0, 2 ** 63))
            sy = int(rng.integers(0, 2 ** 63))
            xs.append(crop_patches(samples[i].pixels, n, p, sx).patches)
            ys.append(crop_patches(samples[j].pixels, n, p, sy).patches)
        x_patches = np.stack(xs)
        y_patches = np.stack(ys)

        out = psrl_batch_loss(model, x_patches, y_patches, tau, stage, pooled)
        loss = out.l_xy if mode == "contrastive_only" else out.total
        if not np.isfinite(loss.data):
            raise NumericsError(f"non-finite loss at step {step}")
        loss.backward()
        adam_step(model.params, opt)

        if stage == 1:
            pos_cos, neg_cos = _cosine_summary([out.zx.data, out.zy.data],
                                               out.zx.data, out.zy.data)
        else:
            pos_cos, neg_cos = _cosine_summary([out.ex.data, out.ey.data],
                                               out.ex.data, out.ey.data)
        log_rows.append(f"{step},{stage},{out.l_x.item():.6f},{out.l_y.item():.6f},"
                        f"{out.l_xy.item():.6f},{loss.item():.6f},"
                        f"{pos_cos:.6f},{neg_cos:.6f}")

    model.params.set_trainable(None)
    if checkpoint_path is not None:
        save_psrl_checkpoint(model, opt, config={
            "seed": int(seed), "step": total_steps, "s1": s1, "s2": s2,
            "mode": mode, "n": n, "p": p, "tau": tau, "lr": lr,
            "batch": batch, "pairing": pairing,
            "in_batch_negatives": int(pooled),
            "freeze_encoder_stage2": int(freeze_enc),
        }, path=checkpoint_path)
    if log_path is not None:
        write_log(log_path, log_rows, LOG_HEADER)
    return model, log_rows


def save_psrl_checkpoint(model: PSRLModel, opt: AdamState, config: dict, path) -> None:
    config = dict(config, opt_step=opt.step)
    tensors = {name: t.data for name, t in model.params.items()}
    for name, _ in model.params.items():
        tensors["opt.m." + name] = opt.m.get(name, np.zeros_like(model.params[name].data))
        tensors["opt.v." + name] = opt.v.get(name, np.zeros_like(model.params[name].data))
    save_checkpoint(path, PSRL_MAGIC, config, tensors)


def write_log(path, rows: list[str], header: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(header + "\n")
        for row in rows:
            f.write(row + "\n")


def held_out_margin(model: PSRLModel, samples: list[DatasetSample], n: int, p: int,
                    seed: int, use_projector: bool = True) -> tuple[float, float, np.ndarray, np.ndarray]:
    """Intra-image vs inter-image mean cosine on held-out patches.

    Returns (intra, inter, embeddings, image_labels); the margin intra-inter
    is the headline separation number.
    """
    embs, labels = [], []
    for idx, s in enumerate(samples):
        ps = crop_patches(s.pixels, n, p, derive(seed, "heldout", idx).integers(2 ** 63))
        with no_grad():
            embs.append(model.embed_patches(ps.patches, use_projector=use_projector))
        labels.extend([idx] * n)
    e = np.concatenate(embs)
    labels = np.array(labels)
    g = e @ e.T
    same = labels[:, None] == labels[None, :]
    off = ~np.eye(len(labels), dtype=bool)
    intra = float(g[same & off].mean())
    inter = float(g[~same].mean())
    return intra, inter, e, labels
