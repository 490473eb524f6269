#!/usr/bin/env python3
"""Ablation grid on the toy benchmark: synthetic:real ratio, synthesis
method (asymmetry transplants vs mixup), and fine-tuning regime (real-only
vs mixed). Writes one CSV row per cell with the mean test Dice.

Example:
    python scripts/ablation_grid.py --out /tmp/ablations.csv --seeds 3
"""

import argparse
import csv
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from asymforge import dataset as ds
from asymforge import metrics, phantoms, volume
from asymforge import model as M
from asymforge import train as T


def mean_dice(net, test_pairs):
    wt, tc, et = metrics.evaluate(
        lambda img: M.predict_labels(net, img), test_pairs, (0, 1, 2, 3)
    )
    return (wt + tc + et) / 3.0


def load_pairs(entries):
    out = []
    for e in entries:
        sample = ds.load_entry(e)
        out.append((sample.image, sample.labels))
    return out


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--dims", type=int, default=14)
    parser.add_argument("--n-real", type=int, default=4)
    parser.add_argument("--n-test", type=int, default=4)
    parser.add_argument("--ratios", default="1,2,4,8")
    parser.add_argument("--seeds", type=int, default=3)
    parser.add_argument("--pretrain-epochs", type=int, default=120)
    parser.add_argument("--finetune-epochs", type=int, default=80)
    parser.add_argument("--lr", type=float, default=0.02)
    parser.add_argument("--seed", type=int, default=5)
    args = parser.parse_args()

    dims = (args.dims,) * 3
    ratios = [int(r) for r in args.ratios.split(",")]
    work = Path(tempfile.mkdtemp(prefix="ablation_"))

    real = phantoms.make_toy_dataset(args.n_real, dims, args.seed)
    test_pairs = phantoms.normalized_pairs(
        phantoms.make_toy_dataset(args.n_test, dims, args.seed + 1, prefix="t")
    )
    real_dir = work / "real"
    for s in real:
        volume.save_sample(s.image, s.labels, real_dir / s.sample_id, stem=s.sample_id)
    files = ds.discover_samples(real_dir)
    manifest = ds.make_splits(sorted(files), (args.n_real, 0, 0), seed=args.seed, files=files)
    real_pairs = phantoms.normalized_pairs(real)

    rows = []

    def train_cell(synth_pairs, regime, seed):
        init = M.ToyModel.init(16, np.random.default_rng(seed))
        pre_cfg = T.TrainConfig(epochs=args.pretrain_epochs, lr=args.lr, seed=seed)
        fin_cfg = T.TrainConfig(epochs=args.finetune_epochs, lr=args.lr, seed=seed)
        if regime == "scratch":
            net, _ = T.train_standard(init, real_pairs, fin_cfg)
        elif regime == "real-only":
            net, _ = T.pretrain_then_finetune(init, synth_pairs, real_pairs, pre_cfg, fin_cfg)
        else:  # mixed
            staged, _ = T.train_standard(init, synth_pairs, pre_cfg, stage="pretrain")
            net, _ = T.train_standard(staged, real_pairs + synth_pairs, fin_cfg)
        return mean_dice(net, test_pairs)

    scratch = [train_cell([], "scratch", s) for s in range(args.seeds)]
    rows.append(("none", 0, "scratch", float(np.mean(scratch))))
    print(f"scratch: {rows[-1][3]:.3f}")

    for method in ("asymmetry", "mixup"):
        for ratio in ratios:
            t0 = time.time()
            result = ds.generate_corpus(
                manifest, ratio=ratio, workers=2, seed=args.seed,
                out_dir=work / f"{method}_r{ratio}", method=method,
            )
            if not result.ok:
                print(f"{method} ratio {ratio}: generation failures, skipping")
                continue
            synth_pairs = load_pairs(result.manifest.select(kind="synthetic"))
            for regime in ("real-only", "mixed"):
                scores = [train_cell(synth_pairs, regime, s) for s in range(args.seeds)]
                rows.append((method, ratio, regime, float(np.mean(scores))))
                print(
                    f"{method} ratio {ratio} {regime}: {rows[-1][3]:.3f} "
                    f"({time.time() - t0:.0f}s)"
                )

    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "ratio", "finetune_regime", "mean_dice"])
        writer.writerows(rows)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
