"""Convert MNIST to the ``pixels..., digit`` CSV read by ``read_mnist_csv``.

Accepts either the original IDX pair (images and labels, optionally
gzipped) or an existing CSV whose last column is the digit. A random
class-balanced subset can be taken with ``--per-digit``.

    python scripts/mnist_to_csv.py train-images-idx3-ubyte.gz \
        --labels train-labels-idx1-ubyte.gz --out ~/.cache/mtocc/mnist.csv.gz
"""

import argparse
import gzip
import os
import struct

import numpy as np


def _open(path):
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def read_idx(path):
    with _open(path) as fh:
        zero, dtype, ndim = struct.unpack(">HBB", fh.read(4))
        if zero != 0 or dtype != 0x08:
            raise ValueError(f"{path}: not an unsigned-byte IDX file")
        shape = struct.unpack(f">{ndim}I", fh.read(4 * ndim))
        return np.frombuffer(fh.read(), dtype=np.uint8).reshape(shape)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("images", help="IDX image file, or a CSV with the digit last")
    p.add_argument("--labels", help="IDX label file (required for IDX input)")
    p.add_argument("--out", required=True)
    p.add_argument("--per-digit", type=int, help="keep this many images per digit")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    if args.labels:
        X = read_idx(args.images).reshape(-1, 28 * 28)
        y = read_idx(args.labels).astype(np.int64)
    else:
        raw = np.loadtxt(args.images, delimiter=",")
        X, y = raw[:, :-1], raw[:, -1].astype(np.int64)
    if args.per_digit:
        rng = np.random.default_rng(args.seed)
        keep = np.concatenate(
            [rng.permutation(np.flatnonzero(y == d))[: args.per_digit] for d in range(10)]
        )
        X, y = X[np.sort(keep)], y[np.sort(keep)]
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    rows = np.column_stack([X.astype(np.int64), y])
    np.savetxt(args.out, rows, fmt="%d", delimiter=",")
    print(f"wrote {len(y)} images to {args.out}")


if __name__ == "__main__":
    main()
