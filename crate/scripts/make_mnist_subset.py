#!/usr/bin/env python3
"""Convert the digit JSON files of the `mnist` npm package (10,000 MNIST
digits, 1.1.0) into gzipped IDX files: an 8,000-sample train split and a
2,000-sample test split, shuffled with a fixed seed.

usage: make_mnist_subset.py <path-to-npm-package-dir> <out-dir>
"""
import gzip
import json
import os
import random
import struct
import sys

SEED = 20230227
TRAIN = 8000


def main():
    pkg, out = sys.argv[1], sys.argv[2]
    samples = []
    for digit in range(10):
        with open(os.path.join(pkg, "src", "digits", f"{digit}.json")) as f:
            data = json.load(f)["data"]
        assert len(data) % 784 == 0
        for i in range(len(data) // 784):
            px = bytes(min(255, max(0, round(v * 255))) for v in data[i * 784:(i + 1) * 784])
            samples.append((px, digit))
    random.Random(SEED).shuffle(samples)
    os.makedirs(out, exist_ok=True)
    for name, part in (("train", samples[:TRAIN]), ("t10k", samples[TRAIN:])):
        with gzip.GzipFile(os.path.join(out, f"{name}-images-idx3-ubyte.gz"), "wb", mtime=0) as f:
            f.write(struct.pack(">IIII", 0x00000803, len(part), 28, 28))
            for px, _ in part:
                f.write(px)
        with gzip.GzipFile(os.path.join(out, f"{name}-labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
            f.write(struct.pack(">II", 0x00000801, len(part)))
            f.write(bytes(label for _, label in part))


if __name__ == "__main__":
    main()
