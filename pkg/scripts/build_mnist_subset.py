"""Rebuild the bundled MNIST subset from the npm ``mnist`` package (MIT).

Usage: npm pack mnist && tar xzf mnist-*.tgz
       python scripts/build_mnist_subset.py package/src/digits src/manifool/datasets
"""
import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np

N_TRAIN = 8000


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + payload)


def main(src, dst):
    images, labels = [], []
    for digit in range(10):
        raw = np.asarray(json.loads(Path(src, f"{digit}.json").read_text())["data"])
        raw = np.round(raw * 255).astype(np.uint8).reshape(-1, 28, 28)
        images.append(raw)
        labels.append(np.full(len(raw), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(0).permutation(len(labels))
    images, labels = images[order], labels[order]
    dst = Path(dst)
    for name, sl in (("train", slice(0, N_TRAIN)), ("test", slice(N_TRAIN, None))):
        im, lb = images[sl], labels[sl]
        write_idx(dst / f"{name}-images-idx3-ubyte.gz", 0x803, im.shape, im.tobytes())
        write_idx(dst / f"{name}-labels-idx1-ubyte.gz", 0x801, lb.shape, lb.tobytes())


if __name__ == "__main__":
    main(*sys.argv[1:3])
