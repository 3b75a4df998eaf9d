"""Write a 5000-image MNIST subset as IDX files for offline machines.

The images come from ``mnist_5k.csv.gz`` inside the mlxtend wheel (BSD-3),
which pip can fetch from a package index even when the MNIST hosts are
unreachable.  Rows are 784 pixels followed by the label, sorted by class, so
the rows are written in one fixed shuffled order; any prefix of the IDX file
is then a class-mixed subset.

    python3 scripts/fetch_mnist_subset.py [--wheel PATH] [--out data/mnist]
"""

import argparse
import gzip
import io
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

import numpy as np

from wae_lab.data import write_idx

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def download_wheel(dest):
    subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "--only-binary=:all:",
                    "mlxtend", "-d", str(dest)], check=True)
    return next(Path(dest).glob("mlxtend-*.whl"))


def read_subset(wheel):
    with zipfile.ZipFile(wheel) as zf:
        raw = gzip.decompress(zf.read(MEMBER))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",", dtype=np.int64)
    if table.shape[1] != 785 or table.min() < 0 or table[:, :-1].max() > 255:
        raise SystemExit(f"unexpected table layout {table.shape}")
    table = table[np.random.default_rng(0).permutation(len(table))]
    return table[:, :-1].astype(np.uint8).reshape(-1, 28, 28), table[:, -1].astype(np.uint8)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--wheel", help="mlxtend wheel already on disk (default: pip download)")
    ap.add_argument("--out", default="data/mnist")
    args = ap.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        wheel = Path(args.wheel) if args.wheel else download_wheel(tmp)
        images, labels = read_subset(wheel)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "train-images-idx3-ubyte", images)
    write_idx(out / "train-labels-idx1-ubyte", labels)
    print(f"wrote {len(images)} images to {out}")


if __name__ == "__main__":
    main()
