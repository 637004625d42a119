"""Export a reduced MNIST subset as IDX files.

Source: the 5000-image MNIST sample shipped inside the ``mlxtend`` package
(``mlxtend/data/data/mnist_5k.csv.gz``). Images are shuffled with a fixed
seed and 2x2 max-pooled to 14x14 so that desk-scale certification stays
fast.

Usage: python export_mnist_subset.py [mnist_5k.csv.gz] [out_dir]
"""

import gzip
import struct
import sys
from pathlib import Path

import numpy as np


def locate_source(arg):
    if arg:
        return Path(arg)
    import mlxtend  # noqa: F401  (only used to find the bundled file)

    return Path(mlxtend.__file__).parent / "data" / "data" / "mnist_5k.csv.gz"


def main():
    src = locate_source(sys.argv[1] if len(sys.argv) > 1 else None)
    out_dir = Path(sys.argv[2]) if len(sys.argv) > 2 else Path("data/mnist14")
    raw = np.loadtxt(gzip.open(src), delimiter=",")
    labels = raw[:, -1].astype(np.uint8)
    images = raw[:, :-1].reshape(-1, 28, 28)
    pooled = images.reshape(-1, 14, 2, 14, 2).max(axis=(2, 4))
    pooled = np.rint(pooled).astype(np.uint8)

    order = np.random.default_rng(0).permutation(len(labels))
    pooled, labels = pooled[order], labels[order]

    n = len(labels)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "mnist14-images-idx3-ubyte", "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, n, 14, 14))
        fh.write(pooled.tobytes())
    with open(out_dir / "mnist14-labels-idx1-ubyte", "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, n))
        fh.write(labels.tobytes())
    print(f"wrote {n} images of 14x14 to {out_dir}")


if __name__ == "__main__":
    main()
