"""Dataset ingestion: the built-in toy3 pattern set and manifest-described image directories."""
from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass

import numpy as np

from . import _rng
from .embeddings import balanced_plan
from .exceptions import DatasetError, InvalidArgumentError

log = logging.getLogger(__name__)

BUILTINS = ("toy3",)
MANIFEST = "labels"
MAX_FAILURE_RATE = 0.01


@dataclass
class Split:
    images: np.ndarray  # [n, c, h, w] in [0, 1]
    labels: np.ndarray  # [n] int64

    def __len__(self):
        return self.labels.shape[0]


def _toy3_images(labels, rng, size=16):
    yy, xx = (np.mgrid[0:size, 0:size] + 0.5) / size
    out = np.empty((len(labels), 1, size, size))
    for i, c in enumerate(labels):
        centre = rng.uniform(0.3, 0.7, size=2)
        width = rng.uniform(0.08, 0.14)
        if c == 0:
            d2 = (yy - centre[0]) ** 2
        elif c == 1:
            d2 = (xx - centre[1]) ** 2
        else:
            d2 = ((yy - centre[0]) ** 2 + (xx - centre[1]) ** 2) / 2.0
        img = 0.1 + 0.8 * np.exp(-d2 / (2 * width ** 2))
        img = img + rng.normal(0, 0.08, size=img.shape)
        out[i, 0] = np.clip(img, 0.0, 1.0)
    return out


def toy3(seed: int = 0, n_train: int = 2000, n_test: int = 1000):
    """Seeded 3-class 16x16 patterns: a horizontal bar, a vertical bar, a round blob."""
    splits = []
    for name, n in (("train", n_train), ("test", n_test)):
        rng = _rng.stream(seed, f"toy3.{name}")
        labels = rng.permutation(balanced_plan(n, 3)).astype(np.int64)
        splits.append(Split(_toy3_images(labels, rng), labels))
    return splits[0], splits[1], 3


def _is_test(rel_path: str, seed: int) -> bool:
    digest = hashlib.sha256(f"{seed}:{rel_path}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % 10 == 0


def _load_image(path, image_shape):
    from PIL import Image

    c, h, w = image_shape
    with Image.open(path) as img:
        if img.mode not in ("L", "RGB", "RGBA", "P", "LA"):
            raise ValueError(f"unsupported image mode {img.mode}")
        img = img.convert("L" if c == 1 else "RGB")
        if img.size != (w, h):
            img = img.resize((w, h), Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float64) / 255.0
    return arr[None] if c == 1 else arr.transpose(2, 0, 1)


def load_directory(root, image_shape=(1, 16, 16), seed: int = 0, num_classes: int | None = None):
    """Read ``root/labels`` (``relative_path<TAB>class_index`` per line) and the referenced images.

    Bad rows are logged and skipped; more than 1% failures aborts.
    """
    manifest = os.path.join(root, MANIFEST)
    if not os.path.isfile(manifest):
        raise DatasetError(f"missing manifest {manifest}")
    rows, diagnostics = [], []
    with open(manifest, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                diagnostics.append(f"{manifest}:{lineno}: expected 'path<TAB>class'")
                continue
            try:
                label = int(parts[1])
            except ValueError:
                diagnostics.append(f"{manifest}:{lineno}: bad class index {parts[1]!r}")
                continue
            rows.append((parts[0], label))
    if num_classes is None:
        num_classes = max((lab for _, lab in rows if lab >= 0), default=-1) + 1
    train, test = ([], []), ([], [])
    for rel, label in rows:
        if not 0 <= label < num_classes:
            diagnostics.append(f"{rel}: label {label} out of range [0, {num_classes})")
            continue
        try:
            img = _load_image(os.path.join(root, rel), image_shape)
        except (OSError, ValueError) as exc:
            diagnostics.append(f"{rel}: unreadable image ({exc})")
            continue
        target = test if _is_test(rel, seed) else train
        target[0].append(img)
        target[1].append(label)
    total = len(rows) + sum(1 for d in diagnostics if d.startswith(manifest))
    for d in diagnostics:
        log.warning(d)
    if total == 0 or len(diagnostics) > MAX_FAILURE_RATE * total:
        raise DatasetError(f"{len(diagnostics)} of {total} manifest entries failed", diagnostics)

    def pack(part):
        images = np.stack(part[0]) if part[0] else np.empty((0, *image_shape))
        return Split(images, np.asarray(part[1], dtype=np.int64))

    return pack(train), pack(test), num_classes, diagnostics


def ingest_dataset(spec: str, image_shape=(1, 16, 16), seed: int = 0):
    """``(train, test, num_classes)`` for a builtin name or a dataset directory."""
    if spec in BUILTINS:
        if tuple(image_shape) != (1, 16, 16):
            raise InvalidArgumentError("toy3 provides 1x16x16 images only")
        return toy3(seed)
    if os.path.isdir(spec):
        train, test, num_classes, _ = load_directory(spec, image_shape, seed)
        return train, test, num_classes
    raise DatasetError(f"unknown dataset {spec!r}: not a builtin {BUILTINS} or a directory")
