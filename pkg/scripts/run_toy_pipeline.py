#!/usr/bin/env python3
"""End-to-end desk-scale pipeline on generated phantoms.

Builds a toy "real" cohort on disk, then drives the CLI through every
stage: make-dataset -> pretrain -> finetune -> posttrain -> eval. The final
Dice report lands in <out>/report.csv.

Example:
    python scripts/run_toy_pipeline.py --out /tmp/toyrun --ratio 4 --seed 7
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from asymforge import phantoms, volume
from asymforge.cli import dispatch


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--n-real", type=int, default=10)
    parser.add_argument("--dims", type=int, default=20, help="cube side of toy volumes")
    parser.add_argument("--ratio", type=int, default=4)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--workers", type=int, default=2)
    parser.add_argument("--pretrain-epochs", type=int, default=150)
    parser.add_argument("--finetune-epochs", type=int, default=100)
    parser.add_argument("--posttrain-epochs", type=int, default=100)
    parser.add_argument("--k", type=int, default=5)
    parser.add_argument("--lr", type=float, default=0.02)
    args = parser.parse_args()

    out = Path(args.out)
    real_dir = out / "real"
    dims = (args.dims,) * 3
    print(f"generating {args.n_real} toy subjects at {dims} ...")
    for s in phantoms.make_toy_dataset(args.n_real, dims, args.seed):
        volume.save_sample(s.image, s.labels, real_dir / s.sample_id, stem=s.sample_id)

    n_train = max(2, int(round(args.n_real * 0.6)))
    n_val = max(1, int(round(args.n_real * 0.2)))
    n_test = args.n_real - n_train - n_val
    manifest = out / "ds" / "manifest.json"

    stages = [
        ["make-dataset", "--real", str(real_dir), "--out", str(out / "ds"),
         "--ratio", str(args.ratio), "--splits", f"{n_train},{n_val},{n_test}",
         "--seed", str(args.seed), "--workers", str(args.workers)],
        ["pretrain", "--manifest", str(manifest), "--out", str(out / "pretrained.bin"),
         "--epochs", str(args.pretrain_epochs), "--lr", str(args.lr),
         "--seed", str(args.seed), "--log", str(out / "pretrain.csv")],
        ["finetune", "--manifest", str(manifest), "--model", str(out / "pretrained.bin"),
         "--out", str(out / "finetuned.bin"), "--epochs", str(args.finetune_epochs),
         "--lr", str(args.lr), "--seed", str(args.seed), "--log", str(out / "finetune.csv")],
        ["posttrain", "--manifest", str(manifest), "--model", str(out / "finetuned.bin"),
         "--out", str(out / "student.bin"), "--k", str(args.k),
         "--epochs", str(args.posttrain_epochs), "--lr", str(args.lr),
         "--seed", str(args.seed), "--log", str(out / "posttrain.csv")],
        ["eval", "--manifest", str(manifest), "--model", str(out / "student.bin"),
         "--split", "test", "--out", str(out / "report.csv")],
    ]
    for argv in stages:
        print(f"\n=== asymforge {' '.join(argv[:1])} ===")
        rc = dispatch(argv)
        if rc != 0:
            print(f"stage {argv[0]} failed with exit code {rc}", file=sys.stderr)
            return rc
    print(f"\ndone; report at {out / 'report.csv'}")
    print((out / "report.csv").read_text())
    return 0


if __name__ == "__main__":
    sys.exit(main())
