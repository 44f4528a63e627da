"""Binary 28x28 image datasets: IDX files, synthetic noise, batching."""
from __future__ import annotations

import gzip
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mathops import SeededRng

log = logging.getLogger(__name__)

IDX_IMAGE_MAGIC = 0x00000803
SIDE = 28
PIXELS = SIDE * SIDE

# (train, test) sizes used when a complete file is supplied
SPLIT_SIZES = {"mnist": (55000, 10000), "omniglot": (24345, 8069)}
FILENAMES = {"train": "train-images-idx3-ubyte", "test": "t10k-images-idx3-ubyte"}


class DataError(Exception):
    code = "data"


class IdxHeaderError(DataError):
    code = "header"


class IdxMagicError(DataError):
    code = "magic"


class IdxDimensionError(DataError):
    code = "dims"


class IdxTruncatedError(DataError):
    code = "truncated"


@dataclass
class Dataset:
    images: np.ndarray  # (N, 784) uint8 in {0, 1}
    indices: np.ndarray  # original position of each row
    split: str = "train"
    name: str = ""

    def __post_init__(self):
        if self.images.ndim != 2 or self.images.shape[1] != PIXELS:
            raise IdxDimensionError(f"expected (N, {PIXELS}) images, got {self.images.shape}")
        if len(self.indices) != len(self.images):
            raise ValueError("one index per image")

    def __len__(self):
        return self.images.shape[0]

    def head(self, n: int) -> "Dataset":
        return Dataset(self.images[:n], self.indices[:n], self.split, self.name)


def binarize(pixels, threshold=128) -> np.ndarray:
    """Fixed threshold; already-binary input (max 1) passes through unchanged."""
    pixels = np.asarray(pixels)
    if pixels.size and pixels.max() <= 1:
        return pixels.astype(np.uint8)
    return (pixels >= threshold).astype(np.uint8)


def _open(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def load_idx(path, limit=None, split="train", dynamic_seed=None) -> Dataset:
    """Parse a big-endian IDX image file (optionally gzipped).

    With ``dynamic_seed`` the grayscale values are binarised by Bernoulli
    sampling instead of thresholding at 128.
    """
    path = Path(path)
    with _open(path) as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise IdxHeaderError(f"{path}: header is {len(header)} bytes, need 16")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGE_MAGIC:
            raise IdxMagicError(f"{path}: magic {magic:#010x} is not an image file")
        if rows != SIDE or cols != SIDE:
            raise IdxDimensionError(f"{path}: images are {rows}x{cols}, need 28x28")
        n = count if limit is None else min(count, int(limit))
        raw = fh.read(n * PIXELS)
    if len(raw) < n * PIXELS:
        raise IdxTruncatedError(f"{path}: {len(raw)} pixel bytes, header promises {n * PIXELS}")
    gray = np.frombuffer(raw, dtype=np.uint8).reshape(n, PIXELS)
    if dynamic_seed is not None:
        u = SeededRng(dynamic_seed, ("binarize", split)).uniform(gray.shape)
        images = (u < gray / 255.0).astype(np.uint8)
    else:
        images = binarize(gray)
    return Dataset(images, np.arange(n), split, path.name)


def write_idx(path, images):
    """Write uint8 images (N, 28, 28) or (N, 784) as an IDX file; ``.gz`` compresses."""
    images = np.asarray(images, dtype=np.uint8).reshape(-1, PIXELS)
    path = Path(path)
    opener = (lambda p: gzip.GzipFile(p, "wb", mtime=0)) if path.suffix == ".gz" else (lambda p: open(p, "wb"))
    with opener(path) as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, images.shape[0], SIDE, SIDE))
        fh.write(images.tobytes())


def synth_random_images(n: int, p_on: float, seed: int) -> Dataset:
    if not 0.0 < p_on < 1.0:
        raise ValueError("p_on must lie strictly between 0 and 1")
    u = SeededRng(seed, ("random-images",)).uniform((n, PIXELS))
    return Dataset((u < p_on).astype(np.uint8), np.arange(n), "train", f"random-{p_on}")


def find_split_file(data_path, split) -> Path | None:
    data_path = Path(data_path)
    if data_path.is_file():
        return data_path if split == "train" else None
    for suffix in ("", ".gz"):
        cand = data_path / (FILENAMES[split] + suffix)
        if cand.exists():
            return cand
    return None


def load_dataset(name, data_path=None, split="train", limit=None, seed=0, p_on=0.5, dynamic=False):
    """Resolve a dataset id to a Dataset, or None when the split file is absent.

    ``random`` is synthetic; ``mnist``/``omniglot`` read IDX files named like
    the MNIST distribution from ``data_path``.
    """
    if name == "random":
        n = limit or 1000
        if split == "test":
            return synth_random_images(n, p_on, seed + 1)
        return synth_random_images(n, p_on, seed)
    if name not in SPLIT_SIZES:
        raise DataError(f"unknown dataset {name!r}")
    if data_path is None:
        raise DataError(f"dataset {name} needs --data-path")
    path = find_split_file(data_path, split)
    if path is None:
        if split == "train":
            raise DataError(f"no {FILENAMES['train']} under {data_path}")
        return None
    expected = SPLIT_SIZES[name][0 if split == "train" else 1]
    cap = expected if limit is None else min(int(limit), expected)
    ds = load_idx(path, cap, split, dynamic_seed=seed if dynamic else None)
    if limit is None and len(ds) < expected:
        log.warning("%s %s split has %d images (full set is %d)", name, split, len(ds), expected)
    ds.name = name
    return ds


@dataclass
class BatchPlan:
    batch_size: int
    seed: int
    drop_last: bool = False

    def permutation(self, n: int, epoch: int) -> np.ndarray:
        return SeededRng(self.seed, ("shuffle", epoch)).permutation(n)


def batches(dataset: Dataset, plan: BatchPlan, epoch: int):
    """Yield ``(original_indices, images)`` covering the epoch's permutation."""
    n = len(dataset)
    if plan.batch_size > n:
        raise ValueError(f"batch size {plan.batch_size} exceeds dataset size {n}")
    order = plan.permutation(n, epoch)
    stop = n - n % plan.batch_size if plan.drop_last else n
    for start in range(0, stop, plan.batch_size):
        rows = order[start:start + plan.batch_size]
        yield dataset.indices[rows], dataset.images[rows]


def write_pgm(path, images, cols=8):
    """Tile float images in [0, 1] (N, 784) into one 8-bit binary PGM (P5)."""
    images = np.clip(np.asarray(images, dtype=np.float64), 0.0, 1.0).reshape(-1, SIDE, SIDE)
    n = images.shape[0]
    rows = -(-n // cols)
    grid = np.zeros((rows * SIDE, cols * SIDE), dtype=np.uint8)
    for k in range(n):
        r, c = divmod(k, cols)
        grid[r * SIDE:(r + 1) * SIDE, c * SIDE:(c + 1) * SIDE] = np.round(images[k] * 255.0)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{grid.shape[1]} {grid.shape[0]}\n255\n".encode("ascii"))
        fh.write(grid.tobytes())


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P5":
        raise DataError(f"{path}: not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)
