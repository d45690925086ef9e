#!/usr/bin/env python3
"""Build a 10,000-digit MNIST subset in IDX format without direct internet access.

The digits come from the `mnist` npm package (10,000 samples stored as JSON,
pixels normalised to three decimals). Pixels are mapped back to bytes, shuffled
with a fixed seed, and split 9,000 train / 1,000 test.

Usage: python3 scripts/fetch_mnist.py [out_dir]   (default: data/mnist)
"""
import json
import os
import struct
import subprocess
import sys
import tarfile
import tempfile

import numpy as np


def write_idx(path, arr):
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">BBBB", 0, 0, 0x08, arr.ndim))
        for d in arr.shape:
            f.write(struct.pack(">I", d))
        f.write(arr.tobytes())


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "data/mnist"
    os.makedirs(out, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True, stderr=subprocess.DEVNULL,
                       stdout=subprocess.DEVNULL)
        with tarfile.open(os.path.join(tmp, "mnist-1.1.0.tgz")) as tar:
            tar.extractall(tmp)
        images, labels = [], []
        for digit in range(10):
            with open(os.path.join(tmp, "package", "src", "digits", f"{digit}.json")) as f:
                flat = np.array(json.load(f)["data"], dtype=np.float64)
            px = np.round(flat * 255.0).clip(0, 255).astype(np.uint8).reshape(-1, 28, 28)
            images.append(px)
            labels += [digit] * len(px)
    images = np.concatenate(images)
    labels = np.array(labels, dtype=np.uint8)
    order = np.random.RandomState(0).permutation(len(labels))
    images, labels = images[order], labels[order]
    n_train = 9000
    write_idx(os.path.join(out, "train-images-idx3-ubyte"), images[:n_train])
    write_idx(os.path.join(out, "train-labels-idx1-ubyte"), labels[:n_train])
    write_idx(os.path.join(out, "t10k-images-idx3-ubyte"), images[n_train:])
    write_idx(os.path.join(out, "t10k-labels-idx1-ubyte"), labels[n_train:])
    print(f"wrote {n_train} train / {len(labels) - n_train} test digits to {out}")


if __name__ == "__main__":
    main()
