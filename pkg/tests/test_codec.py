import os
import subprocess
import sys

import numpy as np
import pytest

from obic import checkpoint, codec
from obic.codec import ModelMismatchError
from obic.container import extract_substream, read_container, write_container
from obic.rangecoder import CorruptStreamError
from obic.transforms import CodecNetworks, GeometryError

from .conftest import scene_with_mask


@pytest.fixture(scope="module")
def coded(nets):
    image, mask = scene_with_mask(1, 64, 96)
    return image, mask, codec.encode(image, mask, nets, record_tables=True)


def test_round_trip_recovers_the_rounded_latents(nets, coded):
    image, _, enc = coded
    dec = codec.decode(enc.data, nets)
    assert dec.image.shape == image.shape
    for layer in ("obj", "bkg"):
        assert np.array_equal(dec.latents[layer], enc.layers[layer].latent)
        assert np.array_equal(dec.hyper[layer], enc.layers[layer].hyper)
        assert dec.table_hashes[layer] == enc.layers[layer].table_hashes
        assert len(dec.table_hashes[layer]) == int(enc.latent_mask.sum() if layer == "obj" else (1 - enc.latent_mask).sum())


def test_encode_and_decode_are_deterministic(nets, coded):
    image, mask, enc = coded
    assert codec.encode_image(image, mask, nets) == enc.data
    assert np.array_equal(codec.decode_image(enc.data, nets), codec.decode_image(enc.data, nets))


def test_serial_and_threaded_paths_agree(nets, coded):
    image, mask, enc = coded
    assert codec.encode(image, mask, nets, parallel=False).data == enc.data
    assert np.array_equal(codec.decode(enc.data, nets, parallel=False).image, codec.decode_image(enc.data, nets))


def test_inactive_positions_are_zero(nets, coded):
    _, _, enc = coded
    m = enc.latent_mask
    assert not enc.layers["obj"].latent[:, m == 0].any()
    assert not enc.layers["bkg"].latent[:, m == 1].any()


def test_geometry_of_a_320_pixel_image(nets, rng):
    image = rng.random((320, 320, 3))
    mask = np.zeros((320, 320), np.uint8)
    mask[100:220, 60:200] = 1
    data = codec.encode_image(image, mask, nets, autoregressive=False)
    c = read_container(data)
    assert c.mask.shape == (20, 20) and len(c.segments) == 4
    assert all(len(s) > 0 for s in c.segments)


def test_all_background_mask_leaves_object_streams_empty(nets, rng):
    image = rng.random((64, 64, 3))
    data = codec.encode_image(image, np.zeros((64, 64), np.uint8), nets)
    c = read_container(data)
    assert c.segment("obj-hyper") == b"" and c.segment("obj-latent") == b""
    full = codec.decode_image(data, nets)
    assert np.array_equal(codec.decode_layer(data, nets, "bkg"), full)


def test_decode_layer_is_decode_of_the_extracted_stream(nets, coded):
    _, _, enc = coded
    for layer in ("obj", "bkg"):
        a = codec.decode_layer(enc.data, nets, layer)
        b = codec.decode_image(extract_substream(enc.data, layer), nets)
        assert np.array_equal(a, b)


def test_extracted_object_latents_match_the_full_decode(nets, coded):
    _, _, enc = coded
    full = codec.decode(enc.data, nets)
    part = codec.decode(extract_substream(enc.data, "obj"), nets)
    m = enc.latent_mask == 1
    assert np.array_equal(part.latents["obj"][:, m], full.latents["obj"][:, m])
    assert not part.latents["bkg"].any()


def test_context_free_mode_round_trips(nets, coded):
    image, mask, _ = coded
    enc = codec.encode(image, mask, nets, autoregressive=False)
    assert not read_container(enc.data).header.autoregressive
    dec = codec.decode(enc.data, nets)
    assert all(np.array_equal(dec.latents[k], enc.layers[k].latent) for k in ("obj", "bkg"))


def test_pixel_domain_mode_is_flagged_and_decodable(nets, coded):
    image, mask, _ = coded
    enc = codec.encode(image, mask, nets, mask_domain="pixel")
    assert read_container(enc.data).header.pixel_domain
    dec = codec.decode(enc.data, nets)
    assert all(np.array_equal(dec.latents[k], enc.layers[k].latent) for k in ("obj", "bkg"))


def test_per_stream_bits_stay_close_to_the_estimate(nets, coded):
    _, _, enc = coded
    est, act = enc.estimated_bits(), enc.actual_bits()
    for name in est:
        assert act[name] <= est[name] * 1.01 + 256, name


def test_wrong_weights_are_refused(coded):
    _, _, enc = coded
    with pytest.raises(ModelMismatchError):
        codec.decode(enc.data, CodecNetworks(seed=4))
    with pytest.raises(ModelMismatchError):
        codec.decode(enc.data, CodecNetworks(channels=16, hyper_channels=8))


def test_a_layer_with_one_missing_segment_is_corrupt(nets, coded):
    _, _, enc = coded
    c = read_container(enc.data)
    segs = list(c.segments)
    segs[0] = b""
    with pytest.raises(CorruptStreamError):
        codec.decode(write_container(c.header, c.mask, segs), nets)


def test_input_validation(nets, rng):
    with pytest.raises(GeometryError):
        codec.encode(rng.random((72, 64, 3)), np.ones((72, 64), np.uint8), nets)
    with pytest.raises(GeometryError):
        codec.encode(rng.random((64, 64, 3)), np.ones((64, 48), np.uint8), nets)
    with pytest.raises(ValueError):
        codec.encode(rng.random((64, 64, 3)), np.ones((64, 64), np.uint8), nets, mask_domain="both")


def test_non_square_multiple_of_16(nets, rng):
    image = rng.random((48, 80, 3))
    mask = np.zeros((48, 80), np.uint8)
    mask[:24, 20:60] = 1
    enc = codec.encode(image, mask, nets)
    dec = codec.decode(enc.data, nets)
    assert dec.image.shape == (48, 80, 3)
    assert np.array_equal(dec.latents["obj"], enc.layers["obj"].latent)


def test_numpy_fallback_writes_identical_containers(tmp_path, coded):
    image, mask, _ = coded
    nets = CodecNetworks(channels=8, hyper_channels=4, seed=2)
    weights = tmp_path / "w.obicw"
    checkpoint.save(nets, weights)
    np.save(tmp_path / "img.npy", image)
    np.save(tmp_path / "mask.npy", mask)
    script = (
        "import sys, numpy as np\n"
        "from obic import checkpoint, codec\n"
        f"d = {str(tmp_path)!r}\n"
        "nets = checkpoint.load(d + '/w.obicw')\n"
        "data = codec.encode_image(np.load(d + '/img.npy'), np.load(d + '/mask.npy'), nets)\n"
        "img = codec.decode_image(data, nets)\n"
        "sys.stdout.write(data.hex() + ' ' + img.tobytes().hex()[:4096])\n"
    )
    outs = []
    for flag in ("0", "1"):
        env = dict(os.environ, OBIC_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", script], env=env, capture_output=True, text=True, check=True)
        outs.append(res.stdout)
    assert outs[0] == outs[1]
