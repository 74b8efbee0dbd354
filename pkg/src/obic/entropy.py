"""Quantization, probability models and rate estimation.

Two models per layer:

* a factorized model for the hyper latent: one logistic distribution per
  channel, integrated over unit-width bins;
* a conditional Gaussian for the main latent whose mean and scale come from
  fusing hyper-decoder features with a causal (masked) context of already
  coded latents.

Rates are ``-sum(log2 P)`` over coded elements.  Latent positions outside a
layer's mask are never coded: they are exactly zero by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from . import kernels
from . import tensor as T
from .kernels import PROB_TOTAL
from .tensor import Tensor
from .transforms import LEAK, Conv2d, MaskedConv2d, Module, Sequential

ALPHABET_MIN = -128
ALPHABET_MAX = 127
ALPHABET_SIZE = ALPHABET_MAX - ALPHABET_MIN + 1
PROB_FLOOR = 2.0**-16
SIGMA_FLOOR = 1e-6
MAX_LOG_SCALE = 8.0
DIVERGENCE_LIMIT = 200.0

_LN2 = np.log(2.0)
_BIN_EDGES = np.arange(ALPHABET_MIN, ALPHABET_MAX + 2, dtype=np.float64) - 0.5


class DivergenceError(ValueError):
    """Latent magnitude beyond what the alphabet can plausibly hold."""


class CausalityError(AssertionError):
    pass


@dataclass
class QuantizedLatents:
    values: np.ndarray          # int64, (C, h, w)
    layer: str | None = None
    mask: np.ndarray | None = None  # (h, w) active set, 1 = coded
    clip_count: int = 0

    def __post_init__(self):
        v = self.values
        if v.min(initial=0) < ALPHABET_MIN or v.max(initial=0) > ALPHABET_MAX:
            raise ValueError("quantized values outside the alphabet")
        if self.mask is not None and np.any(v[:, self.mask == 0] != 0):
            raise ValueError("inactive positions of quantized latents must be zero")


# ---------------------------------------------------------------- quantization

def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize(features, mode: str = "round", rng: np.random.Generator | None = None, mask=None, layer=None):
    """``noise``: additive U[-0.5, 0.5) with identity gradient (training).
    ``round``: half-away-from-zero rounding, clipped to the alphabet.
    """
    if mode == "noise":
        return T.uniform_noise(T.as_tensor(features), rng or np.random.default_rng())
    if mode != "round":
        raise ValueError(f"unknown quantization mode {mode!r}")
    x = features.data if isinstance(features, Tensor) else np.asarray(features, dtype=np.float64)
    if np.any(np.abs(x) > DIVERGENCE_LIMIT):
        raise DivergenceError(f"latent magnitude {np.abs(x).max():.1f} exceeds {DIVERGENCE_LIMIT}")
    r = round_half_away(x)
    clipped = np.clip(r, ALPHABET_MIN, ALPHABET_MAX)
    clip_count = int(np.count_nonzero(clipped != r))
    return QuantizedLatents(clipped.astype(np.int64), layer=layer, mask=mask, clip_count=clip_count)


# ---------------------------------------------------------------- CDF tables

def build_cdf_tables(pmf: np.ndarray) -> np.ndarray:
    """Rows of symbol masses -> 16-bit CDF rows ``[0, ..., 65536]``.

    Every symbol keeps at least one count; output depends only on ``pmf``.
    """
    pmf = np.ascontiguousarray(np.atleast_2d(pmf), dtype=np.float64)
    n, a = pmf.shape
    if a < 1 or a > PROB_TOTAL:
        raise ValueError(f"degenerate table: alphabet of {a} symbols")
    if not np.isfinite(pmf).all() or np.any(pmf < 0):
        raise ValueError("degenerate table: masses must be finite and non-negative")
    if np.any(pmf.sum(axis=1) <= 0):
        raise ValueError("degenerate table: zero total mass")
    return kernels.quantize_pmf(pmf)


def logistic_pmf(loc: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """Floored bin masses over the alphabet, one row per (loc, scale)."""
    loc = np.asarray(loc, dtype=np.float64)[:, None]
    scale = np.asarray(scale, dtype=np.float64)[:, None]
    c = special.expit((_BIN_EDGES[None, :] - loc) / scale)
    return np.maximum(np.diff(c, axis=1), PROB_FLOOR)


def gaussian_pmf(mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    mu = np.asarray(mu, dtype=np.float64).reshape(-1, 1)
    sigma = np.asarray(sigma, dtype=np.float64).reshape(-1, 1)
    c = special.ndtr((_BIN_EDGES[None, :] - mu) / sigma)
    return np.maximum(np.diff(c, axis=1), PROB_FLOOR)


def symbol_index(values) -> np.ndarray:
    return np.asarray(values, dtype=np.int64) - ALPHABET_MIN


# ---------------------------------------------------------------- factorized model

class FactorizedModel(Module):
    def __init__(self, channels: int, dtype=np.float64):
        self.loc = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.log_scale = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)

    @property
    def channels(self) -> int:
        return self.loc.shape[0]

    def likelihood_tensor(self, z: Tensor) -> Tensor:
        """Floored bin probability of every element of (N, C, h, w) ``z``."""
        c = self.channels
        loc = T.reshape(self.loc, (1, c, 1, 1))
        inv_scale = T.exp(T.reshape(self.log_scale, (1, c, 1, 1)) * -1.0)
        upper = T.logistic_cdf((z + 0.5 - loc) * inv_scale)
        lower = T.logistic_cdf((z - 0.5 - loc) * inv_scale)
        return T.lower_bound(upper - lower, PROB_FLOOR)

    def _params(self):
        loc = self.loc.data.astype(np.float64)
        scale = np.exp(self.log_scale.data.astype(np.float64))
        if not (np.isfinite(loc).all() and np.isfinite(scale).all()):
            raise ValueError("factorized model has non-finite parameters")
        return loc, scale

    def pmf(self) -> np.ndarray:
        """(C, 256) floored probabilities over the alphabet."""
        return logistic_pmf(*self._params())

    def cdf_tables(self) -> np.ndarray:
        return build_cdf_tables(self.pmf())


def factorized_likelihood(q, model: FactorizedModel) -> np.ndarray:
    """Per-element probabilities of integer hyper symbols ``q`` (C, h, w)."""
    q = q.values if isinstance(q, QuantizedLatents) else np.asarray(q)
    if q.min(initial=0) < ALPHABET_MIN or q.max(initial=0) > ALPHABET_MAX:
        raise ValueError("symbols outside the alphabet")
    pmf = model.pmf()
    return pmf[np.arange(q.shape[0])[:, None, None], symbol_index(q)]


# ---------------------------------------------------------------- conditional model

class ConditionalModel(Module):
    """Gaussian (mean, scale) per latent element from hyper + causal context."""

    def __init__(self, channels: int, rng=None, dtype=np.float64, kernel: int = 5):
        rng = rng or np.random.default_rng(0)
        c = channels
        self.context = MaskedConv2d(c, 2 * c, kernel, rng, dtype)
        self.fusion = Sequential(Conv2d(4 * c, 3 * c, 1, 1, rng, dtype), Conv2d(3 * c, 2 * c, 1, 1, rng, dtype, gain=0.5))
        self.channels = c

    def params_tensor(self, hyper_ctx: Tensor, y_hat: Tensor, autoregressive: bool = True):
        """Parallel (training) path: returns (mu, sigma), each (N, C, h, w)."""
        if hyper_ctx.shape[1] != 2 * self.channels or hyper_ctx.shape[2:] != y_hat.shape[2:]:
            raise ValueError(f"hyper context {hyper_ctx.shape} not aligned with latents {y_hat.shape}")
        if autoregressive:
            ar = self.context(y_hat)
        else:
            ar = Tensor(np.zeros(hyper_ctx.shape, dtype=hyper_ctx.dtype))
        raw = self.fusion(T.concat([hyper_ctx, ar], axis=1))
        c = self.channels
        mu = raw[:, :c]
        sigma = T.lower_bound(T.exp(T.clamp(raw[:, c:], -60.0, MAX_LOG_SCALE)), SIGMA_FLOOR)
        return mu, sigma

    # -- coding path --------------------------------------------------------
    # Encoder and decoder both go through ``coder()``: the same kernel, the
    # same inputs, so the CDF tables agree bit for bit.

    def coder(self, autoregressive: bool = True) -> "ContextCoder":
        return ContextCoder(self, autoregressive)


class ContextCoder:
    """Frozen float64 snapshot of a :class:`ConditionalModel` for entropy coding."""

    def __init__(self, model: ConditionalModel, autoregressive: bool):
        c = model.channels
        w = model.context.weight.data.astype(np.float64)
        self.channels = c
        self.autoregressive = autoregressive
        self.offsets = model.context.offsets()
        self.radius = model.context.mask.shape[0] // 2
        dy = np.array([o[0] for o in self.offsets]) + self.radius
        dx = np.array([o[1] for o in self.offsets]) + self.radius
        # (2C, C, taps) -> (2C, C*taps); patches are flattened the same way
        self.wc = np.ascontiguousarray(w[:, :, dy, dx].reshape(w.shape[0], -1))
        self.bc = model.context.bias.data.astype(np.float64)
        l1, l2 = model.fusion.layers
        self.w1 = np.ascontiguousarray(l1.weight.data.astype(np.float64)[:, :, 0, 0])
        self.b1 = l1.bias.data.astype(np.float64)
        self.w2 = np.ascontiguousarray(l2.weight.data.astype(np.float64)[:, :, 0, 0])
        self.b2 = l2.bias.data.astype(np.float64)

    def patches(self, y_hat: np.ndarray, positions) -> np.ndarray:
        """Causal neighbourhoods (P, C*taps) of integer latents ``y_hat`` (C, h, w)."""
        r = self.radius
        yp = np.pad(np.asarray(y_hat, dtype=np.float64), ((0, 0), (r, r), (r, r)))
        positions = np.asarray(positions, dtype=np.int64).reshape(-1, 2)
        rows = positions[:, 0:1] + r + np.array([o[0] for o in self.offsets])[None, :]
        cols = positions[:, 1:2] + r + np.array([o[1] for o in self.offsets])[None, :]
        # (C, P, taps) -> (P, C, taps) -> (P, C*taps)
        return np.ascontiguousarray(yp[:, rows, cols].transpose(1, 0, 2).reshape(len(positions), -1))

    def params(self, hyper_ctx: np.ndarray, y_hat: np.ndarray, positions):
        """(mu, sigma), each (P, C), at ``positions`` given hyper features (2C, h, w)."""
        positions = np.asarray(positions, dtype=np.int64).reshape(-1, 2)
        hyper = np.ascontiguousarray(hyper_ctx[:, positions[:, 0], positions[:, 1]].T, dtype=np.float64)
        if self.autoregressive:
            patches = self.patches(y_hat, positions)
        else:
            patches = np.zeros((len(positions), self.wc.shape[1]))
        raw = kernels.fusion(
            hyper, patches, self.wc, self.bc, self.w1, self.b1, self.w2, self.b2, self.autoregressive, LEAK
        )
        c = self.channels
        mu = raw[:, :c]
        sigma = np.maximum(np.exp(np.minimum(raw[:, c:], MAX_LOG_SCALE)), SIGMA_FLOOR)
        return mu, sigma

    def pmf(self, hyper_ctx, y_hat, positions) -> np.ndarray:
        """(P*C, 256) floored probabilities, positions outer, channels inner."""
        mu, sigma = self.params(hyper_ctx, y_hat, positions)
        return gaussian_pmf(mu.ravel(), sigma.ravel())


def active_positions(mask: np.ndarray) -> np.ndarray:
    """(P, 2) raster-ordered coordinates of cells with mask == 1."""
    return np.argwhere(np.asarray(mask) != 0)


def gaussian_likelihood_tensor(y: Tensor, mu: Tensor, sigma: Tensor) -> Tensor:
    upper = T.normal_cdf((y + 0.5 - mu) / sigma)
    lower = T.normal_cdf((y - 0.5 - mu) / sigma)
    return T.lower_bound(upper - lower, PROB_FLOOR)


def conditional_likelihood(q: QuantizedLatents, hyper_ctx: np.ndarray, model: ConditionalModel, autoregressive=True):
    """Probabilities of the active elements of ``q`` in coding order.

    Order is raster over positions with channels innermost; positions where
    ``q.mask`` is 0 emit nothing.
    """
    values = q.values
    mask = q.mask if q.mask is not None else np.ones(values.shape[1:], dtype=np.uint8)
    pos = active_positions(mask)
    if len(pos) == 0:
        return np.zeros(0)
    pmf = model.coder(autoregressive).pmf(hyper_ctx, values, pos)
    sym = symbol_index(values[:, pos[:, 0], pos[:, 1]].T.ravel())
    return pmf[np.arange(len(sym)), sym]


# ---------------------------------------------------------------- rates

def estimate_rate(probabilities) -> float:
    """``-sum(log2 P)`` in bits; every P must lie in (0, 1]."""
    p = np.asarray(probabilities, dtype=np.float64)
    if np.any(p <= 0) or np.any(p > 1) or not np.isfinite(p).all():
        raise ValueError("probabilities must lie in (0, 1]")
    return float(-np.sum(np.log2(p)))


def rate_bits_tensor(p: Tensor, weight=None) -> Tensor:
    """Differentiable ``-sum(w * log2 P)``."""
    nll = T.log(p) * (-1.0 / _LN2)
    if weight is not None:
        nll = nll * weight
    return T.sum(nll)
