"""Multi-scale SSIM, differentiable through :mod:`obic.tensor`.

Conventions: data range 1.0, K1=0.01, K2=0.03, separable 11-tap Gaussian
window (sigma 1.5) applied "valid", 2x2 average pooling between scales,
contrast-structure terms clipped at zero, per-channel scores averaged.
Five scales with the standard weights when the short side is >= 176,
otherwise three scales with the first three weights renormalized.  Scales
smaller than the window use the largest odd window that fits.
"""

import numpy as np

from . import tensor as T

WEIGHTS_5 = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
C1 = 0.01**2
C2 = 0.03**2
WIN_SIZE = 11
WIN_SIGMA = 1.5
MIN_SIDE = 32
FIVE_SCALE_SIDE = 176
_CLIP = 1e-12


def gaussian_window(size: int = WIN_SIZE, sigma: float = WIN_SIGMA) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-(coords**2) / (2 * sigma**2))
    return g / g.sum()


def scale_weights(min_side: int) -> tuple:
    if min_side < MIN_SIDE:
        raise ValueError(f"MS-SSIM needs a short side of at least {MIN_SIDE} pixels, got {min_side}")
    if min_side >= FIVE_SCALE_SIDE:
        return WEIGHTS_5
    w = np.array(WEIGHTS_5[:3])
    return tuple(w / w.sum())


def _blur(x: T.Tensor, win: np.ndarray) -> T.Tensor:
    n, c, h, w = x.shape
    k = win.size
    flat = T.reshape(x, (n * c, 1, h, w))
    kx = T.Tensor(win.reshape(1, 1, 1, k).astype(x.dtype))
    ky = T.Tensor(win.reshape(1, 1, k, 1).astype(x.dtype))
    out = T.conv2d(T.conv2d(flat, kx), ky)
    return T.reshape(out, (n, c) + out.shape[2:])


def _ssim_terms(x: T.Tensor, y: T.Tensor):
    """Per-(batch, channel) mean SSIM and mean contrast-structure."""
    side = min(x.shape[2:])
    size = min(WIN_SIZE, side if side % 2 else side - 1)
    win = gaussian_window(size)
    mu_x = _blur(x, win)
    mu_y = _blur(y, win)
    mu_xx = mu_x * mu_x
    mu_yy = mu_y * mu_y
    mu_xy = mu_x * mu_y
    var_x = _blur(x * x, win) - mu_xx
    var_y = _blur(y * y, win) - mu_yy
    cov = _blur(x * y, win) - mu_xy
    cs_map = (2.0 * cov + C2) / (var_x + var_y + C2)
    ssim_map = (2.0 * mu_xy + C1) / (mu_xx + mu_yy + C1) * cs_map
    return T.mean(ssim_map, axis=(2, 3)), T.mean(cs_map, axis=(2, 3))


def msssim_tensor(x: T.Tensor, y: T.Tensor) -> T.Tensor:
    """Batch-mean MS-SSIM of two (N, C, H, W) tensors; returns a scalar tensor."""
    x, y = T.as_tensor(x), T.as_tensor(y)
    if x.shape != y.shape:
        raise ValueError(f"MS-SSIM inputs differ in shape: {x.shape} vs {y.shape}")
    if x.ndim != 4:
        raise ValueError("MS-SSIM expects (N, C, H, W) tensors")
    weights = scale_weights(min(x.shape[2:]))
    score = None
    for level, w in enumerate(weights):
        ssim, cs = _ssim_terms(x, y)
        last = level == len(weights) - 1
        term = T.power(T.lower_bound(ssim if last else cs, _CLIP), w)
        score = term if score is None else score * term
        if not last:
            x, y = T.avg_pool2(x), T.avg_pool2(y)
    return T.mean(score)


def to_nchw(img: np.ndarray) -> np.ndarray:
    """Accept H x W x 3, H x W, or N x C x H x W arrays."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img[None, None]
    if img.ndim == 3:
        return img.transpose(2, 0, 1)[None]
    return img


def msssim(a: np.ndarray, b: np.ndarray) -> float:
    """MS-SSIM in [0, 1] between two images with values in [0, 1]."""
    a, b = to_nchw(a), to_nchw(b)
    if a.shape != b.shape:
        raise ValueError(f"image dimensions differ: {a.shape} vs {b.shape}")
    return float(msssim_tensor(T.Tensor(a), T.Tensor(b)).data)
