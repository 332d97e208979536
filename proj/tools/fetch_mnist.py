#!/usr/bin/env python3
"""Rebuild the canonical MNIST IDX files from the pickle bundled in the
`mnist_hub` wheel on PyPI.

The pickle stores pixels as byte/256 in float32 (exactly representable), in the
canonical order: 50k train + 10k validation (together the 60k IDX training
file) and the 10k test file. The bytes written here are identical to the
original train-images-idx3-ubyte / t10k-* files.

usage: tools/fetch_mnist.py [OUT_DIR]   (default: data/mnist)
"""
import glob
import gzip
import io
import os
import pickle
import struct
import subprocess
import sys
import tempfile
import zipfile

import numpy as np


def write_idx_images(path, images):
    n = images.shape[0]
    with gzip.open(path, "wb", compresslevel=6) as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with gzip.open(path, "wb", compresslevel=6) as f:
        f.write(struct.pack(">II", 0x00000801, labels.shape[0]))
        f.write(labels.astype(np.uint8).tobytes())


def to_bytes(x):
    scaled = np.round(x.astype(np.float64) * 256.0)
    if np.any(np.abs(scaled - x.astype(np.float64) * 256.0) > 0) or scaled.max() > 255:
        raise SystemExit("unexpected pixel encoding in pickle")
    return scaled.astype(np.uint8)


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join("data", "mnist")
    os.makedirs(out, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "mnist_hub==0.1.4", "-d", tmp],
            check=True,
        )
        wheel = glob.glob(os.path.join(tmp, "*.whl"))[0]
        blob = zipfile.ZipFile(wheel).read("mnist/data/mnist.pkl.gz")
    train, valid, test = pickle.load(gzip.open(io.BytesIO(blob)), encoding="latin1")
    train_x = np.concatenate([to_bytes(train[0]), to_bytes(valid[0])])
    train_y = np.concatenate([train[1], valid[1]])
    write_idx_images(os.path.join(out, "train-images-idx3-ubyte.gz"), train_x)
    write_idx_labels(os.path.join(out, "train-labels-idx1-ubyte.gz"), train_y)
    write_idx_images(os.path.join(out, "t10k-images-idx3-ubyte.gz"), to_bytes(test[0]))
    write_idx_labels(os.path.join(out, "t10k-labels-idx1-ubyte.gz"), test[1])
    print(f"wrote MNIST IDX files to {out}: train {train_x.shape[0]}, test {test[0].shape[0]}")


if __name__ == "__main__":
    main()
