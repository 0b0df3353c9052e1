"""Two-phase training of the conditioned denoiser.

Phase A trains the denoiser and semantic encoder with the style path off
(lambda = 0), building the generative prior. Phase B freezes that prior and
trains only the style cross-attention key/value projections, the reference
network, and its zero connectors at lambda = 1, so background and style
control attach without disturbing what phase A learned. Every step derives
its randomness from (seed, step), making interrupted runs resume exactly.
"""

from __future__ import annotations

import numpy as np

from ..checkpoint import NSDM_MAGIC, load_checkpoint, save_checkpoint
from ..dataset.io import DatasetSample
from ..dataset.scenes import mask_from_rect
from ..errors import DataError, NumericsError
from ..nn import AdamState, ParameterSet, Tensor, adam_step
from ..psrl.model import PSRLModel, embed_style
from ..psrl.train import write_log
from ..reference import ReferenceNet, build_ref_input
from ..rng import derive
from .model import ConditioningBundle, Denoiser, SemanticEncoder
from .schedule import build_schedule, forward_noise

LOG_HEADER = "step,phase,loss"


class NSDModel:
    """Denoiser, semantic encoder, and reference path in one parameter set."""

    def __init__(self, seed: int, T: int = 100, kind: str = "cosine"):
        self.seed = int(seed)
        self.params = ParameterSet()
        rng = derive(seed, "nsd-init")
        self.denoiser = Denoiser(self.params, rng, T)
        self.encoder = SemanticEncoder(self.params, rng)
        self.refnet = ReferenceNet(self.params, rng, T)
        self.schedule = build_schedule(T, kind)

    def phase_a_paths(self) -> set[str]:
        """Everything the prior needs: denoiser + semantic encoder, minus the
        style key/value projections that stay inert while lambda = 0."""
        return {p for p in self.params.paths()
                if (p.startswith("den/") or p.startswith("sem/"))
                and "/ca/sty/" not in p}

    def phase_b_paths(self) -> set[str]:
        return {p for p in self.params.paths()
                if "/ca/sty/" in p or p.startswith("ref/") or p.startswith("con/")}

    @classmethod
    def from_checkpoint(cls, path) -> tuple["NSDModel", dict]:
        config, tensors = load_checkpoint(path, NSDM_MAGIC)
        model = cls(config["seed"], T=config["T"], kind=config["kind"])
        for name in model.params.paths():
            model.params[name].data[...] = tensors[name]
        return model, config


def to_diffusion_space(images: np.ndarray) -> np.ndarray:
    """[B,H,W,3] pixels in [0,1] -> [B,3,H,W] float32 in [-1,1]."""
    arr = np.asarray(images, np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    return np.ascontiguousarray(arr.transpose(0, 3, 1, 2)) * 2.0 - 1.0


def from_diffusion_space(x: np.ndarray) -> np.ndarray:
    """[B,3,H,W] in [-1,1] -> [B,H,W,3] pixels clipped to [0,1]."""
    arr = (np.asarray(x, np.float32).transpose(0, 2, 3, 1) + 1.0) / 2.0
    return np.clip(arr, 0.0, 1.0)


def training_loss(denoiser, encoder, images, token_ids, schedule, *,
                  lam: float = 0.0, style_tokens=None, refnet=None, masks=None,
                  rng=None, t=None, eps=None) -> Tensor:
    """Full-image MSE between true and predicted noise; t uniform and eps
    standard normal per sample unless pinned by the caller."""
    x0 = to_diffusion_space(images)
    b = x0.shape[0]
    if t is None:
        t = rng.integers(0, schedule.T, size=b)
    if eps is None:
        eps = rng.standard_normal(x0.shape).astype(np.float32)
    x_t = forward_noise(x0, t, eps, schedule)
    sty = None
    if style_tokens is not None:
        sty = style_tokens if isinstance(style_tokens, Tensor) \
            else Tensor(np.asarray(style_tokens, np.float32))
    bundle = ConditioningBundle(encoder(token_ids), sty, lam)
    refs = None
    if refnet is not None:
        if masks is None:
            raise ValueError("reference-path training needs per-sample masks")
        m = np.asarray(masks, np.float32)[:, None]  # [B,1,H,W]
        refs = refnet.connected_features(build_ref_input(x_t, x0 * (1.0 - m), m), t)
    eps_hat = denoiser.predict_noise(x_t, t, bundle, refs)
    diff = eps_hat - Tensor(np.asarray(eps, np.float32))
    return (diff * diff).mean()


def _style_token_batch(psrl: PSRLModel, batch_samples, k: int, seeds,
                       use_projector: bool) -> np.ndarray:
    toks = []
    for s, ss in zip(batch_samples, seeds):
        mask = mask_from_rect(s.pixels, s.mask_rect)
        toks.append(embed_style(psrl, s.pixels, mask, k, ss,
                                use_projector=use_projector))
    return np.stack(toks).astype(np.float32)


def train_nsd(samples: list[DatasetSample], psrl: PSRLModel, config: dict,
              seed: int, checkpoint_path=None, log_path=None, resume=None):
    """Returns (model, log_rows). Writes checkpoint/log when paths given."""
    if not samples:
        raise DataError("cannot train on an empty dataset")
    T = int(config.get("T", 100))
    kind = config.get("kind", "cosine")
    phase_a = int(config.get("phase_a", 600))
    phase_b = int(config.get("phase_b", 400))
    lr = float(config.get("lr", 1e-4))
    batch = int(config.get("batch", 4))
    lam = float(config.get("lam", 1.0))
    k = int(config.get("k", 4))
    use_projector = bool(int(config.get("use_projector", 1)))

    start_step = 0
    log_rows: list[str] = []
    if resume is not None:
        rcfg, tensors = load_checkpoint(resume, NSDM_MAGIC)
        model = NSDModel(rcfg["seed"], T=rcfg["T"], kind=rcfg["kind"])
        opt = AdamState(lr=rcfg["lr"], step=rcfg["opt_step"])
        for name in model.params.paths():
            model.params[name].data[...] = tensors[name]
            opt.m[name] = tensors["opt.m." + name].copy()
            opt.v[name] = tensors["opt.v." + name].copy()
        start_step = int(rcfg["step"])
        seed = int(rcfg["seed"])
        T, kind = int(rcfg["T"]), rcfg["kind"]
        phase_a, phase_b = int(rcfg["phase_a"]), int(rcfg["phase_b"])
        lr, batch, lam = float(rcfg["lr"]), int(rcfg["batch"]), float(rcfg["lam"])
        k = int(rcfg["k"])
        use_projector = bool(rcfg["use_projector"])
    else:
        model = NSDModel(seed, T=T, kind=kind)
        opt = AdamState(lr=lr)

    a_paths = model.phase_a_paths()
    b_paths = model.phase_b_paths()
    n = len(samples)
    for step in range(start_step, phase_a + phase_b):
        in_phase_a = step < phase_a
        model.params.set_trainable(a_paths if in_phase_a else b_paths)
        rng = derive(seed, "nsd-step", step)
        idx = rng.integers(0, n, size=batch)
        t = rng.integers(0, T, size=batch)
        picked = [samples[int(i)] for i in idx]
        images = np.stack([s.pixels for s in picked])
        tokens = np.array([s.tokens for s in picked])
        eps = rng.standard_normal((batch, 3) + images.shape[1:3]).astype(np.float32)

        if in_phase_a:
            loss = training_loss(model.denoiser, model.encoder, images, tokens,
                                 model.schedule, lam=0.0, t=t, eps=eps)
        else:
            seeds = [int(rng.integers(0, 2 ** 63)) for _ in range(batch)]
            sty = _style_token_batch(psrl, picked, k, seeds, use_projector)
            masks = np.stack([mask_from_rect(s.pixels, s.mask_rect).mask
                              for s in picked])
            loss = training_loss(model.denoiser, model.encoder, images, tokens,
                                 model.schedule, lam=lam, style_tokens=sty,
                                 refnet=model.refnet, masks=masks, t=t, eps=eps)
        if not np.isfinite(loss.data):
            raise NumericsError(f"non-finite loss at step {step}")
        loss.backward()
        adam_step(model.params, opt)
        log_rows.append(f"{step},{'A' if in_phase_a else 'B'},{loss.item():.6f}")

    model.params.set_trainable(None)
    if checkpoint_path is not None:
        save_nsd_checkpoint(model, opt, config={
            "seed": int(seed), "step": phase_a + phase_b, "T": T, "kind": kind,
            "phase_a": phase_a, "phase_b": phase_b, "lr": lr, "batch": batch,
            "lam": lam, "k": k, "use_projector": int(use_projector),
        }, path=checkpoint_path)
    if log_path is not None:
        write_log(log_path, log_rows, LOG_HEADER)
    return model, log_rows


def save_nsd_checkpoint(model: NSDModel, opt: AdamState, config: dict, path) -> None:
    config = dict(config, opt_step=opt.step)
    tensors = {name: t.data for name, t in model.params.items()}
    for name, _ in model.params.items():
        tensors["opt.m." + name] = opt.m.get(name, np.zeros_like(model.params[name].data))
        tensors["opt.v." + name] = opt.v.get(name, np.zeros_like(model.params[name].data))
    save_checkpoint(path, NSDM_MAGIC, config, tensors)
