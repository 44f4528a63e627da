"""Convert the 5000-image MNIST subset bundled with mlxtend into IDX files.

Usage: python scripts/mnist5k_to_idx.py path/to/mlxtend-*.whl data/mnist5k

The wheel (or an installed mlxtend) ships ``mlxtend/data/data/mnist_5k.csv.gz``
with 784 grayscale pixel columns followed by the digit label.
"""
import gzip
import io
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_csv(source):
    source = Path(source)
    if source.suffix == ".whl":
        with zipfile.ZipFile(source) as zf:
            blob = zf.read(MEMBER)
    else:
        blob = source.read_bytes()
    table = np.loadtxt(io.StringIO(gzip.decompress(blob).decode()), delimiter=",")
    return table[:, :784].astype(np.uint8), table[:, 784].astype(np.uint8)


def write_idx(path, pixels, labels):
    n = pixels.shape[0]
    with gzip.GzipFile(path / "train-images-idx3-ubyte.gz", "wb", mtime=0) as fh:
        fh.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        fh.write(pixels.tobytes())
    with gzip.GzipFile(path / "train-labels-idx1-ubyte.gz", "wb", mtime=0) as fh:
        fh.write(struct.pack(">II", 0x00000801, n))
        fh.write(labels.tobytes())


if __name__ == "__main__":
    pixels, labels = read_csv(sys.argv[1])
    out = Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out, pixels, labels)
    print(f"wrote {pixels.shape[0]} images to {out}")
