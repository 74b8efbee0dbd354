"""``obic`` command line: encode, decode, extract, train, eval."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import checkpoint, codec
from .container import extract_substream, read_container
from .images import load_image, load_mask, save_image

WEIGHTS_SUFFIX = ".obicw"


def _fmt(x: float) -> str:
    return f"{x:g}"


def resolve_weights(path, lambda_id=None, a1=None, a2=None) -> Path:
    """A checkpoint file, or ``lambda_<N>[_a1_<X>_a2_<Y>].obicw`` inside a directory."""
    path = Path(path)
    if path.is_file():
        return path
    if not path.is_dir():
        raise FileNotFoundError(f"weights {path} not found")
    if lambda_id is None:
        found = sorted(path.glob(f"*{WEIGHTS_SUFFIX}"))
        if len(found) == 1:
            return found[0]
        raise FileNotFoundError(f"{path} holds {len(found)} checkpoints; pick one with --lambda-id")
    stem = f"lambda_{lambda_id}"
    if a1 is not None or a2 is not None:
        if a1 is None or a2 is None:
            raise ValueError("--a1 and --a2 go together")
        stem += f"_a1_{_fmt(a1)}_a2_{_fmt(a2)}"
    candidate = path / (stem + WEIGHTS_SUFFIX)
    if not candidate.is_file():
        have = ", ".join(p.name for p in sorted(path.glob(f"*{WEIGHTS_SUFFIX}"))) or "none"
        raise FileNotFoundError(f"no {candidate.name} in {path} (available: {have})")
    return candidate


def cmd_encode(args) -> int:
    nets = checkpoint.load(resolve_weights(args.weights, args.lambda_id, args.a1, args.a2))
    image = load_image(args.input)
    mask = load_mask(args.mask)
    result = codec.encode(
        image, mask, nets, autoregressive=not args.no_context, mask_domain=args.mask_domain
    )
    Path(args.output).write_bytes(result.data)
    pixels = image.shape[0] * image.shape[1]
    bits = result.actual_bits()
    obj = (bits["obj-hyper"] + bits["obj-latent"]) / pixels
    bkg = (bits["bkg-hyper"] + bits["bkg-latent"]) / pixels
    line = f"{args.output}: {len(result.data)} bytes, {8 * len(result.data) / pixels:.4f} bpp (obj {obj:.4f}, bkg {bkg:.4f})"
    if args.a1 is not None and args.a2 is not None:
        line += f", weighted rate {args.a1 * bkg + args.a2 * obj:.4f}"
    print(line)
    if result.clip_count:
        print(f"warning: {result.clip_count} latent elements clipped to the alphabet", file=sys.stderr)
    return 0


def cmd_decode(args) -> int:
    nets = checkpoint.load(resolve_weights(args.weights))
    data = Path(args.input).read_bytes()
    image = codec.decode_layer(data, nets, args.layer) if args.layer else codec.decode_image(data, nets)
    save_image(image, args.output)
    print(f"{args.output}: {image.shape[1]}x{image.shape[0]}")
    return 0


def cmd_extract(args) -> int:
    data = Path(args.input).read_bytes()
    out = extract_substream(data, args.layer)
    Path(args.output).write_bytes(out)
    print(f"{args.output}: {args.layer} layer, {len(out)} of {len(data)} bytes")
    return 0


def cmd_train(args) -> int:
    from .train import RDConfig, train

    cfg = RDConfig.from_pairs(args.config)
    nets = checkpoint.load(args.init) if args.init else None
    log_file = open(args.log, "w") if args.log else None

    def on_step(rec):
        if log_file:
            log_file.write(json.dumps(rec) + "\n")
        if rec["step"] % args.print_every == 0:
            print(
                f"step {rec['step']:5d} epoch {rec['epoch']:3d} lr {rec['lr']:.2e} loss {rec['loss']:.4f} "
                f"D {rec['distortion']:.4f} R_obj {rec['r_obj']:.4f} R_bkg {rec['r_bkg']:.4f}"
            )

    try:
        result = train(args.corpus, cfg, nets, on_step=on_step)
    finally:
        if log_file:
            log_file.close()
    checkpoint.save(result.networks, args.output)
    print(f"{args.output}: {len(result.log)} steps, final loss {result.log[-1]['loss']:.4f}" if result.log else args.output)
    return 0


def cmd_eval(args) -> int:
    from .evaluate import REFERENCE_OPERATING_POINT, evaluate

    nets = checkpoint.load(resolve_weights(args.weights))
    original = load_image(args.input)
    data = Path(args.container).read_bytes()
    mask = load_mask(args.mask) if args.mask else None
    report = evaluate(original, data, nets, pixel_mask=mask)
    if args.json:
        print(json.dumps(report.to_json_dict()))
        return 0
    hdr = read_container(data).header
    print(f"{args.container}: {hdr.width}x{hdr.height}")
    print(f"  bpp total     {report.bpp_total:.4f}")
    print(f"  bpp object    {report.bpp_obj:.4f}")
    print(f"  bpp background{report.bpp_bkg:.4f}")
    print(f"  bpp overhead  {report.bpp_overhead:.4f}")
    print(f"  PSNR          {report.psnr_db:.2f} dB")
    print(f"  MS-SSIM       {report.msssim:.4f}")
    print(f"  clipped       {report.clip_count}")
    ref = REFERENCE_OPERATING_POINT
    print(f"  reference (full-scale model): {ref['bpp']} bpp, MS-SSIM {ref['msssim']}, PSNR {ref['psnr_db']} dB")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="obic", description="Object-layered learned image codec")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("encode", help="image + mask -> .obic")
    e.add_argument("-i", "--input", required=True)
    e.add_argument("-m", "--mask", required=True, help="PNG/PGM; any nonzero pixel is object")
    e.add_argument("-w", "--weights", required=True, help="checkpoint file or directory of checkpoints")
    e.add_argument("-o", "--output", required=True)
    e.add_argument("--lambda-id", type=int, help="pick lambda_<N>.obicw from a weights directory")
    e.add_argument("--a1", type=float, help="background rate weight the checkpoint was trained with")
    e.add_argument("--a2", type=float, help="object rate weight the checkpoint was trained with")
    e.add_argument("--mask-domain", choices=("feature", "pixel"), default="feature")
    e.add_argument("--no-context", action="store_true", help="hyperprior only, no autoregressive context")
    e.set_defaults(func=cmd_encode)

    d = sub.add_parser("decode", help=".obic -> image")
    d.add_argument("-i", "--input", required=True)
    d.add_argument("-w", "--weights", required=True)
    d.add_argument("-o", "--output", required=True)
    d.add_argument("--layer", choices=("obj", "bkg"), help="reconstruct a single layer")
    d.set_defaults(func=cmd_decode)

    x = sub.add_parser("extract", help="keep one layer's sub-streams")
    x.add_argument("-i", "--input", required=True)
    x.add_argument("--layer", choices=("obj", "bkg"), required=True)
    x.add_argument("-o", "--output", required=True)
    x.set_defaults(func=cmd_extract)

    t = sub.add_parser("train", help="rate-distortion training")
    t.add_argument("--corpus", required=True)
    t.add_argument("--config", nargs="*", default=[], metavar="KEY=VALUE")
    t.add_argument("-o", "--output", default="weights.obicw")
    t.add_argument("--init", help="checkpoint to fine-tune from")
    t.add_argument("--log", help="write per-step JSON lines here")
    t.add_argument("--print-every", type=int, default=10)
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("eval", help="rate and quality report")
    v.add_argument("-i", "--input", required=True, help="original image")
    v.add_argument("-c", "--container", required=True)
    v.add_argument("-w", "--weights", required=True)
    v.add_argument("-m", "--mask", help="pixel mask, for pixel-domain clip counts")
    v.add_argument("--json", action="store_true")
    v.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, ArithmeticError) as exc:
        print(f"obic {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
