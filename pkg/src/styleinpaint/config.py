"""Flat key=value run configuration with namespaced keys and typed defaults.

A config file is plain text: one `key=value` per line, `#` starts a comment,
blank lines ignored. Every key below has a working default, so an empty file
(or none at all) is a valid configuration. Command-line flags override file
values, which override defaults.
"""

from __future__ import annotations

from .errors import UsageError

# the value's Python type doubles as the parse rule for that key
DEFAULTS = {
    "seed": 0,                  # global seed; every RNG derives from it
    "out": "runs",              # output directory for all artifacts

    "dataset.count": 64,        # scenes to render
    "dataset.styles": 8,        # distinct styles cycled through the scenes
    "dataset.size": 64,         # square image side, multiple of 4
    "dataset.mask_lo": 0.15,    # min mask area fraction
    "dataset.mask_hi": 0.35,    # max mask area fraction
    "dataset.file": "dataset.s3im",

    "psrl.mode": "progressive",  # progressive | contrastive_only | stats_only
    "psrl.n": 8,                # patches per image per step
    "psrl.p": 16,               # patch side in pixels
    "psrl.tau": 0.07,           # contrastive temperature, > 0
    "psrl.s1": 50,              # stage-1 steps (statistics warm-up)
    "psrl.s2": 550,             # stage-2 steps (adds the contrastive term)
    "psrl.lr": 1e-4,
    "psrl.batch": 8,            # images per step
    "psrl.pairing": "distinct_style",  # or distinct_image
    "psrl.in_batch_negatives": 0,      # 1 pools negatives across the batch
    "psrl.freeze_encoder_stage2": 0,
    "psrl.checkpoint": "psrl.ckpt",
    "psrl.log": "psrl_log.csv",

    "nsd.T": 100,               # diffusion timesteps
    "nsd.kind": "cosine",       # cosine | linear noise schedule
    "nsd.phase_a": 600,         # prior-training steps (style path off)
    "nsd.phase_b": 400,         # style/reference fine-tuning steps
    "nsd.lr": 1e-4,
    "nsd.batch": 4,
    "nsd.lam": 1.0,             # style attention weight, >= 0
    "nsd.k": 4,                 # style patches per image
    "nsd.use_projector": 1,     # 0 embeds styles with raw feature statistics
    "nsd.checkpoint": "nsd.ckpt",
    "nsd.log": "nsd_log.csv",

    "sample.steps": 50,         # denoising steps, <= nsd.T
    "sample.lam": 1.0,
    "sample.k": 4,
    "sample.paste_background": 0,  # 1 copies unmasked input pixels verbatim
    "sample.file": "inpaint.ppm",

    "eval.count": 50,           # held-out tasks to score
    "eval.k": 4,                # patches per side of the cosine protocol
    "eval.steps": 50,
    "eval.lam": 1.0,
    "eval.paste_background": 0,
    "eval.report": "report.csv",
    "eval.summary": "summary.txt",

    "viz.count": 8,             # images to embed for the projection export
    "viz.n": 8,                 # patches per image
    "viz.file": "projection.csv",
}


def _coerce(key: str, raw) -> object:
    kind = type(DEFAULTS[key])
    if isinstance(raw, kind):
        return raw
    try:
        return kind(raw)
    except (TypeError, ValueError):
        raise UsageError(f"invalid value {raw!r} for config key '{key}' "
                         f"(expected {kind.__name__})") from None


def parse_assignment(line: str) -> tuple[str, str]:
    if "=" not in line:
        raise UsageError(f"malformed config line {line!r}, expected key=value")
    key, value = line.split("=", 1)
    return key.strip(), value.strip()


def load_config_file(path) -> dict:
    values = {}
    with open(path, "r", encoding="utf-8") as f:
        for raw in f:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, value = parse_assignment(line)
            values[key] = value
    return values


def build_config(file_values: dict | None = None,
                 overrides: dict | None = None) -> dict:
    """Defaults <- file <- overrides, with unknown-key and type checks."""
    cfg = dict(DEFAULTS)
    for layer in (file_values or {}), (overrides or {}):
        for key, value in layer.items():
            if key not in DEFAULTS:
                raise UsageError(f"unknown config key '{key}'")
            cfg[key] = _coerce(key, value)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    if cfg["psrl.tau"] <= 0:
        raise UsageError("psrl.tau must be > 0")
    for key in ("nsd.lam", "sample.lam", "eval.lam"):
        if cfg[key] < 0:
            raise UsageError(f"{key} must be >= 0")
    for key in ("dataset.count", "dataset.styles", "psrl.n", "psrl.p",
                "psrl.s1", "psrl.s2", "psrl.batch", "nsd.T", "nsd.phase_a",
                "nsd.phase_b", "nsd.batch", "nsd.k", "sample.steps",
                "sample.k", "eval.count", "eval.k", "eval.steps",
                "viz.count", "viz.n"):
        if cfg[key] < 0:
            raise UsageError(f"{key} must be >= 0")
    if cfg["dataset.size"] % 4 != 0 or cfg["dataset.size"] <= 0:
        raise UsageError("dataset.size must be a positive multiple of 4")
    if not cfg["dataset.mask_lo"] <= cfg["dataset.mask_hi"]:
        raise UsageError("dataset.mask_lo must be <= dataset.mask_hi")


def subconfig(cfg: dict, prefix: str) -> dict:
    """The keys under `prefix.` with the prefix stripped."""
    head = prefix + "."
    return {k[len(head):]: v for k, v in cfg.items() if k.startswith(head)}
