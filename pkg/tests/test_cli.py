import json

import numpy as np
import pytest

from obic import checkpoint
from obic.cli import main, resolve_weights
from obic.container import read_container
from obic.data import bundled
from obic.images import load_image
from obic.transforms import CodecNetworks


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    checkpoint.save(CodecNetworks(channels=8, hyper_channels=4, seed=1), d / "w.obicw")
    return d


def run(*args):
    return main([str(a) for a in args])


def test_encode_decode_extract_eval(workdir, capsys):
    img = bundled("corpus") / "scene003.png"
    mask = bundled("corpus") / "scene003_mask.png"
    out = workdir / "a.obic"
    assert run("encode", "-i", img, "-m", mask, "-w", workdir / "w.obicw", "-o", out) == 0
    assert "bpp" in capsys.readouterr().out
    assert run("decode", "-i", out, "-w", workdir / "w.obicw", "-o", workdir / "rec.png") == 0
    assert load_image(workdir / "rec.png").shape == (64, 64, 3)
    assert run("extract", "-i", out, "--layer", "obj", "-o", workdir / "obj.obic") == 0
    c = read_container((workdir / "obj.obic").read_bytes())
    assert c.segment("bkg-latent") == b""
    assert run("decode", "-i", out, "-w", workdir / "w.obicw", "-o", workdir / "obj.png", "--layer", "obj") == 0
    capsys.readouterr()
    assert run("eval", "-i", img, "-c", out, "-w", workdir / "w.obicw", "--json") == 0
    report = json.loads(capsys.readouterr().out)
    assert report["bpp_total"] == 8 * out.stat().st_size / 4096
    assert set(report) == {"bpp_total", "bpp_obj", "bpp_bkg", "bpp_overhead", "psnr_db", "msssim", "clip_count"}
    assert run("eval", "-i", img, "-c", out, "-w", workdir / "w.obicw") == 0
    assert "reference" in capsys.readouterr().out


def test_encode_options(workdir):
    img = bundled("corpus") / "scene004.png"
    mask = bundled("corpus") / "scene004_mask.png"
    out = workdir / "b.obic"
    assert run("encode", "-i", img, "-m", mask, "-w", workdir / "w.obicw", "-o", out,
               "--mask-domain", "pixel", "--no-context") == 0
    hdr = read_container(out.read_bytes()).header
    assert hdr.pixel_domain and not hdr.autoregressive


def test_weights_directory_lookup(workdir, tmp_path):
    d = tmp_path / "ws"
    d.mkdir()
    data = (workdir / "w.obicw").read_bytes()
    (d / "lambda_2.obicw").write_bytes(data)
    (d / "lambda_2_a1_8_a2_1.obicw").write_bytes(data)
    assert resolve_weights(d, 2).name == "lambda_2.obicw"
    assert resolve_weights(d, 2, 8.0, 1.0).name == "lambda_2_a1_8_a2_1.obicw"
    with pytest.raises(FileNotFoundError):
        resolve_weights(d, 3)
    with pytest.raises(FileNotFoundError):
        resolve_weights(d)


def test_train_subcommand(tmp_path, capsys):
    out = tmp_path / "t.obicw"
    log = tmp_path / "log.jsonl"
    code = run("train", "--corpus", bundled("corpus"), "-o", out, "--log", log, "--print-every", "1",
               "--config", "channels=8", "hyper_channels=4", "max_steps=2", "epochs=1")
    assert code == 0
    assert out.read_bytes()[:5] == b"OBICW"
    lines = [json.loads(x) for x in log.read_text().splitlines()]
    assert [r["step"] for r in lines] == [1, 2]
    assert "loss" in capsys.readouterr().out


def test_errors_exit_nonzero(tmp_path, capsys):
    assert run("decode", "-i", tmp_path / "missing.obic", "-w", tmp_path, "-o", tmp_path / "x.png") == 1
    assert "obic decode" in capsys.readouterr().err
    bad = tmp_path / "bad.obic"
    bad.write_bytes(b"JUNKJUNK")
    assert run("extract", "-i", bad, "--layer", "obj", "-o", tmp_path / "y.obic") == 1
    assert run("train", "--corpus", tmp_path, "--config", "a1=0.5") == 1
