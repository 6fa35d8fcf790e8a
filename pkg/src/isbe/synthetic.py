"""Synthetic digit dataset writer, in exact MNIST IDX layout.

Renders digit glyphs (PIL's bundled font at several sizes), perturbs each
sample with a random rotation, sub-pixel shift, intensity jitter and noise,
and writes the four standard files (train-images-idx3-ubyte, ...) so every
loader-facing code path is exercised when the real corpus is unavailable.

Run as a module:  python -m isbe.synthetic --out DIR [--train-n N] [--test-n N]
"""

import argparse
import os

import numpy as np
from PIL import Image, ImageDraw, ImageFont
from scipy import ndimage

from .data import write_idx

SIDE = 28
GLYPH_SIZES = (16, 18, 20, 22)


def _render_glyphs() -> np.ndarray:
    """(10, len(GLYPH_SIZES), 28, 28) float32 base images in [0, 1]."""
    bases = np.zeros((10, len(GLYPH_SIZES), SIDE, SIDE), dtype=np.float32)
    for si, size in enumerate(GLYPH_SIZES):
        font = ImageFont.load_default(size=size)
        for digit in range(10):
            im = Image.new("L", (SIDE, SIDE), 0)
            draw = ImageDraw.Draw(im)
            left, top, right, bottom = draw.textbbox((0, 0), str(digit), font=font)
            draw.text(((SIDE - (right - left)) / 2 - left,
                       (SIDE - (bottom - top)) / 2 - top),
                      str(digit), fill=255, font=font)
            bases[digit, si] = np.asarray(im, dtype=np.float32) / 255.0
    return bases


def make_dataset(n: int, seed: int):
    """Returns (images (n,1,28,28) float32, labels (n,) int64)."""
    rng = np.random.default_rng(seed)
    bases = _render_glyphs()
    labels = rng.integers(0, 10, size=n).astype(np.int64)
    images = np.empty((n, 1, SIDE, SIDE), dtype=np.float32)
    center = np.array([(SIDE - 1) / 2.0] * 2)
    for i in range(n):
        base = bases[labels[i], rng.integers(len(GLYPH_SIZES))]
        theta = np.deg2rad(rng.uniform(-12.0, 12.0))
        c, s = np.cos(theta), np.sin(theta)
        matrix = np.array([[c, -s], [s, c]])
        shift = rng.uniform(-3.0, 3.0, size=2)
        offset = center - matrix @ (center + shift)
        img = ndimage.affine_transform(base, matrix, offset=offset, order=1,
                                       mode="constant", cval=0.0)
        img = img * rng.uniform(0.7, 1.0)
        img = img + rng.normal(0.0, 0.04, size=img.shape)
        images[i, 0] = np.clip(img, 0.0, 1.0)
    return images, labels


def write_mnist_layout(out_dir, train_n: int = 60000, test_n: int = 10000,
                       seed: int = 0):
    os.makedirs(out_dir, exist_ok=True)
    train_images, train_labels = make_dataset(train_n, seed)
    test_images, test_labels = make_dataset(test_n, seed + 1)
    write_idx(os.path.join(out_dir, "train-images-idx3-ubyte"), train_images)
    write_idx(os.path.join(out_dir, "train-labels-idx1-ubyte"), train_labels)
    write_idx(os.path.join(out_dir, "t10k-images-idx3-ubyte"), test_images)
    write_idx(os.path.join(out_dir, "t10k-labels-idx1-ubyte"), test_labels)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="write a synthetic digit dataset in MNIST IDX layout")
    parser.add_argument("--out", required=True)
    parser.add_argument("--train-n", type=int, default=60000)
    parser.add_argument("--test-n", type=int, default=10000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    write_mnist_layout(args.out, args.train_n, args.test_n, args.seed)
    print(f"wrote {args.train_n} train / {args.test_n} test images to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
