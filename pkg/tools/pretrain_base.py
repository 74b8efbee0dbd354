"""Train the bundled base weights that the rate-allocation checks fine-tune.

Runs on freshly generated synthetic scenes (not the 16-image corpus, which
overfits).  Takes roughly 15 minutes on one CPU core.
"""

import argparse
from pathlib import Path

from obic import checkpoint
from obic.data import synthetic_samples
from obic.train import RDConfig, train

OUT = Path(__file__).resolve().parents[1] / "src" / "obic" / "data" / "weights" / "base.obicw"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=6000)
    ap.add_argument("--lam", type=float, default=16.0)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--samples", type=int, default=4096)
    ap.add_argument("-o", "--output", type=Path, default=OUT)
    args = ap.parse_args()
    cfg = RDConfig(lam=args.lam, lr_initial=args.lr, lr_after_epoch10=args.lr, epochs=10_000, max_steps=args.steps)

    def report(row):
        if row["step"] % 500 == 0:
            print(f"step {row['step']} D {row['distortion']:.3f} r_obj {row['r_obj']:.4f} r_bkg {row['r_bkg']:.4f}",
                  flush=True)

    res = train(synthetic_samples(args.samples, seed=99), cfg, on_step=report)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    checkpoint.save(res.networks, args.output)
    print(f"wrote {args.output}")


if __name__ == "__main__":
    main()
