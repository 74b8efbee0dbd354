"""Analysis/synthesis transforms and the per-layer hyper networks.

A plain strided-conv VAE: four stride-2 stages down to the latent (1/16),
two more stride-2 stages for the hyper latent (1/64).  The analysis and
synthesis transforms are shared by both layers; every hyper network and
entropy model exists once per layer.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

LAYERS = ("obj", "bkg")
LATENT_STRIDE = 16
HYPER_STRIDE = 4
LEAK = 0.01


class Module:
    """Parameters are Tensor attributes with ``requires_grad``; children are Modules (or lists of them)."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> dict:
        return dict(self.named_parameters())

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = None


def _param(arr, dtype) -> Tensor:
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)


class Conv2d(Module):
    def __init__(self, cin, cout, k, stride=1, rng=None, dtype=np.float64, gain=1.0):
        rng = rng or np.random.default_rng(0)
        std = gain * np.sqrt(2.0 / (cin * k * k))
        self.weight = _param(rng.normal(0.0, std, (cout, cin, k, k)), dtype)
        self.bias = _param(np.zeros(cout), dtype)
        self.stride = stride
        self.padding = k // 2

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvTranspose2d(Module):
    """Stride-2 transposed conv that exactly doubles H and W."""

    def __init__(self, cin, cout, k, stride=2, rng=None, dtype=np.float64, gain=1.0):
        rng = rng or np.random.default_rng(0)
        std = gain * np.sqrt(2.0 / (cin * k * k / (stride * stride)))
        self.weight = _param(rng.normal(0.0, std, (cin, cout, k, k)), dtype)
        self.bias = _param(np.zeros(cout), dtype)
        self.stride = stride
        self.padding = k // 2

    def __call__(self, x):
        return T.conv_transpose2d(
            x, self.weight, self.bias, stride=self.stride, padding=self.padding, output_padding=self.stride - 1
        )


class MaskedConv2d(Module):
    """Causal (mask type A) conv: output at p sees only inputs strictly before p in raster order."""

    def __init__(self, cin, cout, k=5, rng=None, dtype=np.float64, gain=1.0):
        rng = rng or np.random.default_rng(0)
        self.mask = T.causal_kernel_mask(k)
        fan_in = cin * self.mask.sum()
        self.weight = _param(rng.normal(0.0, gain * np.sqrt(2.0 / fan_in), (cout, cin, k, k)) * self.mask, dtype)
        self.bias = _param(np.zeros(cout), dtype)

    def __call__(self, x):
        return T.masked_conv2d(x, self.weight, self.bias, self.mask)

    def offsets(self):
        """Causal (dy, dx) taps in raster order."""
        c = self.mask.shape[0] // 2
        return [(i - c, j - c) for i, j in zip(*np.nonzero(self.mask))]


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.leaky_relu(x, LEAK)
        return x


class GeometryError(ValueError):
    pass


class HyperPair(Module):
    def __init__(self, c, c_h, rng, dtype):
        self.analysis = Sequential(Conv2d(c, c_h, 5, 2, rng, dtype), Conv2d(c_h, c_h, 5, 2, rng, dtype))
        self.synthesis = Sequential(
            ConvTranspose2d(c_h, c, 5, 2, rng, dtype), ConvTranspose2d(c, 2 * c, 5, 2, rng, dtype, gain=0.5)
        )


class CodecNetworks(Module):
    """All learnable parts of the codec, entropy models included.

    Parameter names are prefixed ``analysis.``, ``synthesis.``, ``obj.`` and
    ``bkg.``; the two layer prefixes share nothing.
    """

    def __init__(self, channels: int = 32, hyper_channels: int = 16, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        c, ch = channels, hyper_channels
        self.channels = c
        self.hyper_channels = ch
        self.dtype = np.dtype(dtype)
        self.analysis = Sequential(
            Conv2d(3, c, 5, 2, rng, dtype),
            Conv2d(c, c, 5, 2, rng, dtype),
            Conv2d(c, c, 5, 2, rng, dtype),
            Conv2d(c, c, 5, 2, rng, dtype),
        )
        self.synthesis = Sequential(
            ConvTranspose2d(c, c, 5, 2, rng, dtype),
            ConvTranspose2d(c, c, 5, 2, rng, dtype),
            ConvTranspose2d(c, c, 5, 2, rng, dtype),
            ConvTranspose2d(c, 3, 5, 2, rng, dtype, gain=0.25),
        )
        self.synthesis.layers[-1].bias.data[:] = 0.5
        self.obj = LayerModels(c, ch, rng, dtype)
        self.bkg = LayerModels(c, ch, rng, dtype)

    def layer(self, name: str) -> "LayerModels":
        if name not in LAYERS:
            raise ValueError(f"unknown layer {name!r}; expected one of {LAYERS}")
        return getattr(self, name)

    # -- the four codec boxes --------------------------------------------

    def analyze_tensor(self, x: Tensor) -> Tensor:
        _check_divisible(x.shape[2:], LATENT_STRIDE, "image")
        return self.analysis(x)

    def synthesize_tensor(self, y: Tensor) -> Tensor:
        if y.shape[1] != self.channels:
            raise GeometryError(f"latent has {y.shape[1]} channels, networks expect {self.channels}")
        return self.synthesis(y)

    def hyper_analyze_tensor(self, y: Tensor, layer: str) -> Tensor:
        """Latent extents that are not multiples of 4 are zero-padded first."""
        return self.layer(layer).hyper.analysis(_pad_to_multiple(y, HYPER_STRIDE))

    def hyper_synthesize_tensor(self, z: Tensor, layer: str, extent=None) -> Tensor:
        """``extent`` crops the output back to the latent's (h, w)."""
        if z.shape[1] != self.hyper_channels:
            raise GeometryError(f"hyper latent has {z.shape[1]} channels, networks expect {self.hyper_channels}")
        out = self.layer(layer).hyper.synthesis(z)
        if extent is not None and tuple(extent) != out.shape[2:]:
            out = out[:, :, : extent[0], : extent[1]]
        return out

    # numpy conveniences (H x W x 3 images, C x h x w feature maps)

    def analyze(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image)
        if image.ndim != 3 or image.shape[2] != 3:
            raise GeometryError(f"expected an H x W x 3 image, got {image.shape}")
        x = Tensor(image.transpose(2, 0, 1)[None].astype(self.dtype))
        return self.analyze_tensor(x).data[0]

    def synthesize(self, latent: np.ndarray) -> np.ndarray:
        y = Tensor(np.asarray(latent, dtype=self.dtype)[None])
        out = self.synthesize_tensor(y).data[0]
        return np.clip(out, 0.0, 1.0).transpose(1, 2, 0)

    def hyper_analyze(self, latent: np.ndarray, layer: str) -> np.ndarray:
        y = Tensor(np.asarray(latent, dtype=self.dtype)[None])
        return self.hyper_analyze_tensor(y, layer).data[0]

    def hyper_synthesize(self, hyper: np.ndarray, layer: str, extent=None) -> np.ndarray:
        z = Tensor(np.asarray(hyper, dtype=self.dtype)[None])
        return self.hyper_synthesize_tensor(z, layer, extent).data[0]


class LayerModels(Module):
    def __init__(self, c, c_h, rng, dtype):
        from .entropy import ConditionalModel, FactorizedModel

        self.hyper = HyperPair(c, c_h, rng, dtype)
        self.factorized = FactorizedModel(c_h, dtype)
        self.conditional = ConditionalModel(c, rng, dtype)


def hyper_extent(h: int, w: int) -> tuple[int, int]:
    """Hyper-latent grid for an (h, w) latent grid."""
    return -(-h // HYPER_STRIDE), -(-w // HYPER_STRIDE)


def _pad_to_multiple(x: Tensor, m: int) -> Tensor:
    n, c, h, w = x.shape
    ph, pw = -h % m, -w % m
    if ph:
        x = T.concat([x, Tensor(np.zeros((n, c, ph, w), dtype=x.dtype))], axis=2)
    if pw:
        x = T.concat([x, Tensor(np.zeros((n, c, h + ph, pw), dtype=x.dtype))], axis=3)
    return x


def _check_divisible(hw, stride, what):
    h, w = hw
    if h % stride or w % stride:
        raise GeometryError(f"{what} extent {h}x{w} is not divisible by {stride}")
