"""Object-layered learned image codec.

An image and a binary object mask go in; a container with separately
decodable object and background layers comes out.
"""

from .codec import decode, decode_image, decode_layer, encode, encode_image
from .container import extract_substream, read_container, write_container
from .masking import LatentMask, PixelMask, downsample_mask, merge_latents, split_latent
from .msssim import msssim
from .transforms import CodecNetworks

__version__ = "0.1.0"

__all__ = [
    "CodecNetworks",
    "LatentMask",
    "PixelMask",
    "decode",
    "decode_image",
    "decode_layer",
    "downsample_mask",
    "encode",
    "encode_image",
    "extract_substream",
    "merge_latents",
    "msssim",
    "read_container",
    "split_latent",
    "write_container",
]
