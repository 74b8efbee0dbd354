"""Rate-distortion training.

Loss per batch::

    L = lam * (1 - D) + a1 * R_bkg + a2 * R_obj

with ``D`` the MS-SSIM between the (clamped) reconstruction and the input
and both rates in bits per pixel.  Latents are quantized with additive
uniform noise; each layer's latent rate counts only its active positions
and its hyper rate only when the layer is non-empty, which mirrors what the
codec actually writes.
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from . import tensor as T
from .data import Sample, load_corpus, random_crop
from .entropy import gaussian_likelihood_tensor, rate_bits_tensor
from .masking import PixelMask, downsample_mask
from .msssim import msssim, msssim_tensor
from .tensor import NonFiniteError, Tensor
from .transforms import LATENT_STRIDE, CodecNetworks

LAMBDA_SWEEP = (4.0, 8.0, 16.0, 32.0)


class ConfigError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class RDConfig:
    lam: float = 8.0
    a1: float = 2.0
    a2: float = 1.0
    mask_domain: str = "feature"
    autoregressive: bool = True
    lr_initial: float = 1e-5
    lr_after_epoch10: float = 5e-6
    lr_step_epoch: int = 10
    epochs: int = 12
    batch_size: int = 4
    crop_size: int = 64
    seed: int = 0
    max_steps: int | None = None
    channels: int = 32
    hyper_channels: int = 16
    allow_a1_le_a2: bool = False
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if not self.lam >= 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if not (self.a1 > 0 and self.a2 > 0):
            raise ConfigError(f"a1 and a2 must be positive, got a1={self.a1}, a2={self.a2}")
        if self.a1 <= self.a2 and not self.allow_a1_le_a2:
            raise ConfigError(
                f"a1={self.a1} <= a2={self.a2}: background would not be cheaper than object; "
                "set allow_a1_le_a2=true to override"
            )
        if self.mask_domain not in ("feature", "pixel"):
            raise ConfigError(f"mask_domain must be feature or pixel, got {self.mask_domain!r}")
        if self.crop_size <= 0 or self.crop_size % LATENT_STRIDE:
            raise ConfigError(f"crop_size {self.crop_size} must be a positive multiple of {LATENT_STRIDE}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if not (self.lr_initial > 0 and self.lr_after_epoch10 > 0):
            raise ConfigError("learning rates must be positive")

    @classmethod
    def from_pairs(cls, pairs, base: "RDConfig | None" = None) -> "RDConfig":
        """Build from ``key=value`` strings; ``lambda`` is accepted for ``lam``."""
        kinds = {f.name: f.type for f in dataclasses.fields(cls)}
        values = dataclasses.asdict(base) if base else {}
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"expected key=value, got {pair!r}")
            key, raw = (s.strip() for s in pair.split("=", 1))
            key = {"lambda": "lam"}.get(key, key)
            if key not in kinds:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _coerce(key, kinds[key], raw)
        return cls(**values)


def _coerce(key, kind, raw: str):
    kind = str(kind)
    if raw.lower() in ("none", "null") and "None" in kind:
        return None
    try:
        if kind.startswith("bool"):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def lr_at_epoch(epoch: int, cfg: RDConfig) -> float:
    """Epochs count from 1; the step happens after ``lr_step_epoch``."""
    if epoch < 1:
        raise ValueError("epochs count from 1")
    return cfg.lr_initial if epoch <= cfg.lr_step_epoch else cfg.lr_after_epoch10


def lagrangian(distortion, r_obj, r_bkg, cfg: RDConfig):
    """``lam * (1 - D) + a1 * R_bkg + a2 * R_obj``; works on floats or Tensors.

    ``distortion`` is the MS-SSIM value ``D`` and both rates are in bpp.
    """
    for name, v in (("distortion", distortion), ("r_obj", r_obj), ("r_bkg", r_bkg)):
        data = v.data if isinstance(v, Tensor) else v
        if not np.all(np.isfinite(data)):
            raise ValueError(f"{name} is not finite")
    return (1.0 - distortion) * cfg.lam + r_bkg * cfg.a1 + r_obj * cfg.a2


def rd_loss(i_in: np.ndarray, i_out: np.ndarray, r_obj: float, r_bkg: float, cfg: RDConfig) -> float:
    """Loss for an (input, reconstruction) pair of H x W x 3 images and rates in bpp."""
    return float(lagrangian(msssim(i_out, i_in), r_obj, r_bkg, cfg))


# ---------------------------------------------------------------- forward pass

@dataclass
class StepTerms:
    loss: Tensor
    distortion: Tensor
    r_obj: Tensor
    r_bkg: Tensor
    reconstruction: Tensor


def _layer_rate(nets, layer, y_layer, latent_mask, rng, autoregressive):
    """Noisy latents and the bit estimate (hyper + masked latent) for one layer."""
    models = nets.layer(layer)
    nonempty = latent_mask.reshape(latent_mask.shape[0], -1).any(axis=1).astype(y_layer.dtype)
    z = T.uniform_noise(nets.hyper_analyze_tensor(y_layer, layer), rng)
    p_z = models.factorized.likelihood_tensor(z)
    bits = rate_bits_tensor(p_z, nonempty[:, None, None, None])

    y_noisy = T.uniform_noise(y_layer, rng) * latent_mask
    ctx = nets.hyper_synthesize_tensor(z, layer, y_layer.shape[2:])
    mu, sigma = models.conditional.params_tensor(ctx, y_noisy, autoregressive)
    p_y = gaussian_likelihood_tensor(y_noisy, mu, sigma)
    bits = bits + rate_bits_tensor(p_y, np.broadcast_to(latent_mask, p_y.shape))
    return y_noisy, bits


def forward(nets: CodecNetworks, images: np.ndarray, masks: np.ndarray, cfg: RDConfig, rng) -> StepTerms:
    """``images`` (N, 3, H, W) in [0, 1]; ``masks`` (N, H, W) binary pixel masks."""
    dtype = nets.dtype
    x = Tensor(np.asarray(images, dtype=dtype))
    n, _, h, w = x.shape
    lm = np.stack([downsample_mask(PixelMask(m), LATENT_STRIDE).bits for m in masks])[:, None].astype(dtype)
    obj_m, bkg_m = lm, 1 - lm
    if cfg.mask_domain == "feature":
        y = nets.analyze_tensor(x)
        y_obj, y_bkg = y * obj_m, y * bkg_m
    else:
        pm = np.asarray(masks, dtype=dtype)[:, None]
        y_obj = nets.analyze_tensor(x * pm) * obj_m
        y_bkg = nets.analyze_tensor(x * (1 - pm)) * bkg_m
    yo, bits_obj = _layer_rate(nets, "obj", y_obj, obj_m, rng, cfg.autoregressive)
    yb, bits_bkg = _layer_rate(nets, "bkg", y_bkg, bkg_m, rng, cfg.autoregressive)
    pixels = float(n * h * w)
    r_obj, r_bkg = bits_obj * (1.0 / pixels), bits_bkg * (1.0 / pixels)
    recon = T.clamp(nets.synthesize_tensor(yo + yb), 0.0, 1.0)
    d = msssim_tensor(recon, x)
    return StepTerms(lagrangian(d, r_obj, r_bkg, cfg), d, r_obj, r_bkg, recon)


# ---------------------------------------------------------------- optimizer

class Adam:
    def __init__(self, params: dict, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, lr: float):
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            update = lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype)


# ---------------------------------------------------------------- loop

@dataclass
class TrainResult:
    networks: CodecNetworks
    log: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)


def _batches(samples, cfg, rng):
    order = rng.permutation(len(samples))
    for start in range(0, len(order), cfg.batch_size):
        crops = [random_crop(samples[i], cfg.crop_size, rng) for i in order[start : start + cfg.batch_size]]
        images = np.stack([c[0].transpose(2, 0, 1) for c in crops])
        masks = np.stack([c[1] for c in crops])
        yield images, masks


def train(corpus, cfg: RDConfig, networks: CodecNetworks | None = None, on_step=None) -> TrainResult:
    """Train (or fine-tune) ``networks`` on ``corpus`` (a directory or a list of samples).

    Every step appends ``{step, epoch, lr, loss, distortion, r_obj, r_bkg,
    seconds}`` to the log; ``on_step`` gets the same record.
    """
    samples = load_corpus(corpus) if isinstance(corpus, (str, Path)) else list(corpus)
    if not samples:
        raise ValueError("empty corpus")
    if not all(isinstance(s, Sample) for s in samples):
        raise TypeError("corpus must be a directory or a list of Sample")
    nets = networks or CodecNetworks(cfg.channels, cfg.hyper_channels, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    params = nets.parameters()
    opt = Adam(params)
    result = TrainResult(nets)
    ckpt_dir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        lr = lr_at_epoch(epoch, cfg)
        for images, masks in _batches(samples, cfg, rng):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
            t0 = time.perf_counter()
            nets.zero_grad()
            try:
                terms = forward(nets, images, masks, cfg, rng)
                terms.loss.backward()
            except NonFiniteError as exc:
                raise TrainingDiverged(f"step {step + 1}: {exc}") from exc
            if not all(p.grad is None or np.isfinite(p.grad).all() for p in params.values()):
                raise TrainingDiverged(f"step {step + 1}: non-finite gradient")
            opt.step(lr)
            step += 1
            record = {
                "step": step,
                "epoch": epoch,
                "lr": lr,
                "loss": float(terms.loss.data),
                "distortion": float(terms.distortion.data),
                "r_obj": float(terms.r_obj.data),
                "r_bkg": float(terms.r_bkg.data),
                "seconds": time.perf_counter() - t0,
            }
            if not math.isfinite(record["loss"]):
                raise TrainingDiverged(f"step {step}: loss is not finite")
            result.log.append(record)
            if on_step:
                on_step(record)
        if ckpt_dir:
            path = ckpt_dir / f"epoch_{epoch:03d}.obicw"
            checkpoint.save(nets, path)
            result.checkpoints.append(path)
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break
    return result


def smoothed(values, window: int = 10) -> np.ndarray:
    """Trailing mean; entry ``k`` averages ``values[max(0, k-window+1) : k+1]``."""
    v = np.asarray(values, dtype=np.float64)
    c = np.concatenate(([0.0], np.cumsum(v)))
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)
