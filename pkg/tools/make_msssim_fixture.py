"""Regenerate the MS-SSIM reference fixture.

Needs ``torch`` and ``pytorch_msssim`` (not package dependencies); run once
and commit the output.  The pair is stored as 8-bit PNGs so the inputs are
exact, and the reference is computed in float64.
"""

import json
from pathlib import Path

import numpy as np
import pytorch_msssim
import torch

from obic.data import synthetic_scene
from obic.images import load_image, save_image

OUT = Path(__file__).resolve().parents[1] / "src" / "obic" / "data" / "fixtures"


def main():
    rng = np.random.default_rng(20240)
    a, _ = synthetic_scene(rng, 192)
    b = np.clip(a + rng.normal(0, 0.06, a.shape) + 0.05 * np.sin(np.arange(192) / 7.0)[None, :, None], 0, 1)
    OUT.mkdir(parents=True, exist_ok=True)
    save_image(a, OUT / "msssim_a.png")
    save_image(b, OUT / "msssim_b.png")
    a, b = load_image(OUT / "msssim_a.png"), load_image(OUT / "msssim_b.png")
    ta = torch.from_numpy(a.transpose(2, 0, 1)[None].copy()).double()
    tb = torch.from_numpy(b.transpose(2, 0, 1)[None].copy()).double()
    value = pytorch_msssim.ms_ssim(ta, tb, data_range=1.0, size_average=True, win_size=11, win_sigma=1.5)
    record = {
        "a": "msssim_a.png",
        "b": "msssim_b.png",
        "msssim": float(value),
        "oracle": f"pytorch_msssim {pytorch_msssim.__version__ if hasattr(pytorch_msssim, '__version__') else '1.0.0'}, float64",
    }
    (OUT / "msssim_reference.json").write_text(json.dumps(record, indent=2) + "\n")
    print(record)


if __name__ == "__main__":
    main()
