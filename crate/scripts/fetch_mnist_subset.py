#!/usr/bin/env python3
"""Build a desk-scale MNIST split in IDX format.

The 5,000-image MNIST sample bundled with the `mlxtend` wheel (500 images per
digit) is split into 4,000 training and 1,000 test images, stratified by class
and shuffled with a fixed seed. Output files use the standard MNIST names so
the regular IDX loader reads them unchanged.

Usage: scripts/fetch_mnist_subset.py [OUT_DIR] [--wheel PATH]
"""

import argparse
import glob
import gzip
import os
import random
import struct
import subprocess
import sys
import tempfile
import zipfile

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"
SEED = 20211206
TEST_PER_CLASS = 100


def find_wheel(explicit):
    if explicit:
        return explicit
    tmp = tempfile.mkdtemp(prefix="mlxtend-")
    subprocess.check_call(
        [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", tmp, "mlxtend==0.24.0"]
    )
    return glob.glob(os.path.join(tmp, "*.whl"))[0]


def write_idx_images(path, images):
    with open(path + ".tmp", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    os.replace(path + ".tmp", path)


def write_idx_labels(path, labels):
    with open(path + ".tmp", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))
    os.replace(path + ".tmp", path)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out", nargs="?", default=os.path.join(os.path.dirname(__file__), "..", "data", "mnist"))
    ap.add_argument("--wheel")
    args = ap.parse_args()

    wheel = find_wheel(args.wheel)
    raw = gzip.decompress(zipfile.ZipFile(wheel).read(MEMBER)).decode()
    by_class = {d: [] for d in range(10)}
    for line in raw.strip().splitlines():
        fields = [int(float(x)) for x in line.split(",")]
        pixels, label = fields[:784], fields[784]
        by_class[label].append(pixels)

    rng = random.Random(SEED)
    train, test = [], []
    for label in range(10):
        items = by_class[label]
        rng.shuffle(items)
        test += [(p, label) for p in items[:TEST_PER_CLASS]]
        train += [(p, label) for p in items[TEST_PER_CLASS:]]
    rng.shuffle(train)
    rng.shuffle(test)

    os.makedirs(args.out, exist_ok=True)
    write_idx_images(os.path.join(args.out, "train-images-idx3-ubyte"), [p for p, _ in train])
    write_idx_labels(os.path.join(args.out, "train-labels-idx1-ubyte"), [l for _, l in train])
    write_idx_images(os.path.join(args.out, "t10k-images-idx3-ubyte"), [p for p, _ in test])
    write_idx_labels(os.path.join(args.out, "t10k-labels-idx1-ubyte"), [l for _, l in test])
    print(f"wrote {len(train)} train / {len(test)} test images to {args.out}")


if __name__ == "__main__":
    main()
