#!/usr/bin/env python3
"""Synthesis throughput across worker counts (80^3 four-modality samples).

Example:
    python scripts/benchmark_throughput.py --workers 1,2,4,8 --ratio 8
"""

import argparse
import os
import sys
import tempfile
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from asymforge import dataset as ds
from asymforge import phantoms, volume


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workers", default="1,2,4,8")
    parser.add_argument("--n-real", type=int, default=12)
    parser.add_argument("--ratio", type=int, default=8)
    parser.add_argument("--side", type=int, default=80)
    parser.add_argument("--seed", type=int, default=3)
    args = parser.parse_args()

    work = Path(tempfile.mkdtemp(prefix="throughput_"))
    dims = (args.side,) * 3
    print(f"building {args.n_real} subjects at {dims} ...")
    real_dir = work / "real"
    for s in phantoms.make_toy_dataset(args.n_real, dims, args.seed):
        volume.save_sample(s.image, s.labels, real_dir / s.sample_id, stem=s.sample_id)
    files = ds.discover_samples(real_dir)
    manifest = ds.make_splits(sorted(files), (args.n_real, 0, 0), seed=args.seed, files=files)

    n_tasks = args.ratio * args.n_real
    print(f"{n_tasks} synthesis tasks per measurement; cpu count {os.cpu_count()}")
    baseline = None
    for workers in (int(w) for w in args.workers.split(",")):
        out = work / f"syn_w{workers}"
        start = time.perf_counter()
        result = ds.generate_corpus(
            manifest, ratio=args.ratio, workers=workers, seed=args.seed, out_dir=out
        )
        elapsed = time.perf_counter() - start
        if not result.ok:
            print(f"workers={workers}: {len(result.failures)} failures")
            continue
        rate = n_tasks / elapsed
        baseline = baseline or rate
        print(
            f"workers={workers}: {n_tasks} samples in {elapsed:.2f}s -> "
            f"{rate:.1f} samples/s (speedup {rate / baseline:.2f}x)"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
