#!/usr/bin/env python3
"""Write a 5,000-sample MNIST subset as IDX files.

The subset ships inside the mlxtend wheel (mlxtend/data/data/mnist_5k.csv.gz,
500 images per digit drawn from the MNIST training split). This script pulls
the CSV out of an installed mlxtend package or a wheel file, performs a
stratified 400/100 per-class train/test split with a fixed seed, and writes
the four standard IDX files:

    train-images-idx3-ubyte  train-labels-idx1-ubyte
    t10k-images-idx3-ubyte   t10k-labels-idx1-ubyte

Usage:
    pip download --no-deps mlxtend -d /tmp/wheels
    python tools/make_mnist_subset.py --wheel /tmp/wheels/mlxtend-*.whl --out data/mnist-5k
"""

import argparse
import gzip
import importlib.util
import pathlib
import random
import struct
import zipfile

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_csv_bytes(wheel):
    if wheel:
        with zipfile.ZipFile(wheel) as z:
            return gzip.decompress(z.read(CSV_MEMBER))
    spec = importlib.util.find_spec("mlxtend")
    if spec is None:
        raise SystemExit("mlxtend is not installed; pass --wheel")
    root = pathlib.Path(spec.origin).parent
    return gzip.decompress((root / "data" / "data" / "mnist_5k.csv.gz").read_bytes())


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--wheel", help="path to an mlxtend wheel")
    ap.add_argument("--out", default="data/mnist-5k")
    ap.add_argument("--test-per-class", type=int, default=100)
    ap.add_argument("--seed", type=int, default=20240601)
    args = ap.parse_args()

    rows = read_csv_bytes(args.wheel).decode().splitlines()
    by_class = {}
    for line in rows:
        vals = [int(v) for v in line.split(",")]
        by_class.setdefault(vals[-1], []).append(vals[:-1])

    rng = random.Random(args.seed)
    train, test = [], []
    for label in sorted(by_class):
        items = by_class[label]
        rng.shuffle(items)
        test += [(img, label) for img in items[: args.test_per_class]]
        train += [(img, label) for img in items[args.test_per_class :]]
    rng.shuffle(train)
    rng.shuffle(test)

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idx_images(out / "train-images-idx3-ubyte", [x for x, _ in train])
    write_idx_labels(out / "train-labels-idx1-ubyte", [y for _, y in train])
    write_idx_images(out / "t10k-images-idx3-ubyte", [x for x, _ in test])
    write_idx_labels(out / "t10k-labels-idx1-ubyte", [y for _, y in test])
    print(f"wrote {len(train)} train / {len(test)} test samples to {out}")


if __name__ == "__main__":
    main()
