"""MNIST-format ingestion, splits, target-score encoding, augmentation.

Files are the standard IDX containers (big-endian, magic 2051 for images and
2049 for labels), optionally gzipped.  Pixels are scaled to [0, 1]; labels
stay integers until encoded into blurred target-score rows.
"""

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DomainError, IdxFormatError
from .tensor import Tensor

IMAGE_MAGIC = 0x00000803  # 2051
LABEL_MAGIC = 0x00000801  # 2049


@dataclass
class Dataset:
    images: np.ndarray      # (N, 1, H, W) float32 in [0, 1]
    labels: np.ndarray      # (N,) int64 in [0, K)
    split: str = ""

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(
                f"{len(self.images)} images vs {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    def subset(self, indices, split: str = "") -> "Dataset":
        return Dataset(self.images[indices], self.labels[indices],
                       split or self.split)


@dataclass(frozen=True)
class TargetEncoding:
    mu: float = 1e-6
    range: str = "unit"      # "unit" [0,1] rows, "symmetric" 2*row-1
    k: int = 10

    def __post_init__(self):
        if not 0.0 <= self.mu < 1.0:
            raise ValueError(f"mu must be in [0, 1), got {self.mu}")
        if self.range not in ("unit", "symmetric"):
            raise ValueError(f"range must be unit|symmetric, got {self.range!r}")


def _open(path):
    return gzip.open(path, "rb") if str(path).endswith(".gz") else open(path, "rb")


def _read_exact(fh, n, path, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise IdxFormatError(
            f"{path}: truncated {what}: expected {n} bytes, got {len(buf)}")
    return buf


def load_idx(path):
    """Parse one IDX file.

    Returns float32 images (N, 1, rows, cols) scaled by 1/255, or int64
    labels (N,), depending on the file's magic number."""
    with _open(path) as fh:
        (magic,) = struct.unpack(">I", _read_exact(fh, 4, path, "header"))
        if magic == IMAGE_MAGIC:
            n, rows, cols = struct.unpack(">III", _read_exact(fh, 12, path, "header"))
            raw = _read_exact(fh, n * rows * cols, path, "pixel payload")
            images = np.frombuffer(raw, dtype=np.uint8).astype(np.float32) / 255.0
            return images.reshape(n, 1, rows, cols)
        if magic == LABEL_MAGIC:
            (n,) = struct.unpack(">I", _read_exact(fh, 4, path, "header"))
            raw = _read_exact(fh, n, path, "label payload")
            return np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
        raise IdxFormatError(f"{path}: bad magic 0x{magic:08x}")


def write_idx(path, array):
    """Inverse of load_idx: float images in [0,1] or integer labels."""
    with open(path, "wb") as fh:
        if array.ndim == 1:
            fh.write(struct.pack(">II", LABEL_MAGIC, len(array)))
            fh.write(array.astype(np.uint8).tobytes())
        else:
            n = array.shape[0]
            rows, cols = array.shape[-2], array.shape[-1]
            fh.write(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols))
            pixels = np.clip(np.round(array.reshape(n, rows, cols) * 255.0), 0, 255)
            fh.write(pixels.astype(np.uint8).tobytes())


_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _find(data_dir, stem):
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx"),
                 stem.replace("-idx", ".idx") + ".gz"):
        path = os.path.join(data_dir, name)
        if os.path.exists(path):
            return path
    raise FileNotFoundError(f"{stem}[.gz] not found under {data_dir}")


def load_mnist(data_dir, split: str = "train") -> Dataset:
    img_stem, lbl_stem = _FILES[split]
    images = load_idx(_find(data_dir, img_stem))
    labels = load_idx(_find(data_dir, lbl_stem))
    return Dataset(images, labels, split)


def split_train_val(full: Dataset, seed: int):
    """Disjoint, exhaustive 54000/6000 split of the full 60000-image set."""
    if len(full) != 60000:
        raise ValueError(f"expected 60000 examples, got {len(full)}")
    return split_fraction(full, 6000, seed)


def split_fraction(full: Dataset, val_count: int, seed: int):
    """Seed-deterministic random split into (train, val) of any size."""
    perm = np.random.default_rng(seed).permutation(len(full))
    val_idx = np.sort(perm[:val_count])
    train_idx = np.sort(perm[val_count:])
    return full.subset(train_idx, "train"), full.subset(val_idx, "val")


def encode_targets(labels, enc: TargetEncoding) -> Tensor:
    """Blurred one-hot rows: 1-mu at the true class, mu/(K-1) elsewhere;
    symmetric range applies the affine map 2*row - 1."""
    labels = np.asarray(labels)
    if np.any(labels >= enc.k) or np.any(labels < 0):
        raise DomainError(f"label out of range [0, {enc.k})")
    rows = np.full((len(labels), enc.k), enc.mu / (enc.k - 1), dtype=np.float64)
    rows[np.arange(len(labels)), labels] = 1.0 - enc.mu
    if enc.range == "symmetric":
        rows = 2.0 * rows - 1.0
    return Tensor(rows)


def encode_for_normalization(labels, norm_kind: str, mu: float = 1e-6,
                             k: int = 10, p: float = 2.0) -> Tensor:
    """Targets matched to a normalization's output range.

    [-1,1]-ranged activations get the symmetric encoding; pnorm targets are
    the p-normalized blurred rows (a documented guess: nothing pins down how
    unit-sphere targets should be encoded)."""
    if norm_kind in ("tanh", "hardtanh"):
        return encode_targets(labels, TargetEncoding(mu, "symmetric", k))
    rows = encode_targets(labels, TargetEncoding(mu, "unit", k)).data
    if norm_kind == "pnorm":
        rows = rows / np.linalg.norm(rows, ord=p, axis=1, keepdims=True)
    return Tensor(rows)


def augment(batch: np.ndarray, rng: np.random.Generator,
            max_shift: float = 2.0, max_rotate_deg: float = 10.0) -> np.ndarray:
    """Per-image random translation and rotation, bilinear, zero fill."""
    out = np.empty_like(batch)
    n = batch.shape[0]
    h, w = batch.shape[-2], batch.shape[-1]
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    shifts = rng.uniform(-max_shift, max_shift, size=(n, 2))
    angles = rng.uniform(-max_rotate_deg, max_rotate_deg, size=n)
    for i in range(n):
        theta = np.deg2rad(angles[i])
        c, s = np.cos(theta), np.sin(theta)
        matrix = np.array([[c, -s], [s, c]])
        offset = center - matrix @ (center + shifts[i])
        out[i, 0] = ndimage.affine_transform(
            batch[i, 0], matrix, offset=offset, order=1, mode="constant", cval=0.0)
    return out


def batches(ds: Dataset, n_b: int, seed: int, encode=None):
    """Seed-deterministic shuffled minibatches; the last short batch is kept.

    Yields (images Tensor, encoded-target Tensor) when an encode callable is
    given, otherwise (images Tensor, integer label array)."""
    if n_b < 1:
        raise ValueError(f"batch size must be >= 1, got {n_b}")
    perm = np.random.default_rng(seed).permutation(len(ds))
    for start in range(0, len(ds), n_b):
        idx = perm[start:start + n_b]
        images = Tensor(ds.images[idx])
        labels = ds.labels[idx]
        yield images, (encode(labels) if encode else labels)
