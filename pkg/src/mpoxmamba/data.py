"""Dataset indexing, image ingestion, fold splitting, synthetic data.

Datasets follow the class-per-folder layout ``<root>/<class_name>/*.png|jpg|
jpeg``. Class indices come from sorted class-folder names; entries are sorted
by path, so the index is deterministic. Images are decoded to RGB, resized
bilinearly and scaled to [0, 1]; there is no augmentation or mean/std
normalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass
class DatasetEntry:
    path: str          # relative to the dataset root
    label: int
    class_name: str


@dataclass
class DatasetIndex:
    root: Path
    entries: List[DatasetEntry]
    class_names: List[str]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def __len__(self) -> int:
        return len(self.entries)

    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.entries], dtype=np.int64)


def load_dataset(root: Union[str, Path]) -> DatasetIndex:
    """Index a class-per-folder image tree.

    Raises DataError for a missing/empty root or an empty class folder.
    Decoding problems surface when images are read, naming the file.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} does not exist")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DataError(f"dataset root {root} has no class folders")
    class_names = [p.name for p in class_dirs]
    entries: List[DatasetEntry] = []
    for label, class_dir in enumerate(class_dirs):
        files = sorted(p for p in class_dir.iterdir()
                       if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())
        if not files:
            raise DataError(f"class folder {class_dir} contains no images")
        for p in files:
            entries.append(DatasetEntry(str(p.relative_to(root)), label, class_dir.name))
    return DatasetIndex(root=root, entries=entries, class_names=class_names)


def load_image(path: Union[str, Path], hw: Tuple[int, int]) -> np.ndarray:
    """Decode one image to [3, H, W] float32 in [0, 1] (bilinear resize)."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB").resize((hw[1], hw[0]), Image.BILINEAR)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    arr = np.asarray(rgb, dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


class ImageStore:
    """Decoded-image access over a :class:`DatasetIndex`, with optional cache."""

    def __init__(self, index: DatasetIndex, hw: Tuple[int, int], cache: bool = True):
        self.index = index
        self.hw = hw
        self._cache: Optional[Dict[int, np.ndarray]] = {} if cache else None

    def get(self, i: int) -> np.ndarray:
        if self._cache is not None and i in self._cache:
            return self._cache[i]
        entry = self.index.entries[i]
        arr = load_image(self.index.root / entry.path, self.hw)
        if self._cache is not None:
            self._cache[i] = arr
        return arr

    def batch(self, ids: Sequence[int]) -> np.ndarray:
        return np.stack([self.get(i) for i in ids])


@dataclass
class FoldSplit:
    """k disjoint, exhaustive, per-class-stratified index lists."""

    folds: List[np.ndarray]

    @property
    def k(self) -> int:
        return len(self.folds)

    def val_indices(self, fold: int) -> np.ndarray:
        return self.folds[fold]

    def train_indices(self, fold: int) -> np.ndarray:
        rest = [f for i, f in enumerate(self.folds) if i != fold]
        return np.concatenate(rest)


def kfold_split(index_or_labels, k: int = 5, seed: int = 0) -> FoldSplit:
    """Stratified k-fold assignment: seeded per-class shuffle, then round robin.

    The round-robin cursor continues across classes, so overall fold sizes
    differ by at most one, and per-class counts per fold differ by at most
    one. Deterministic for a fixed seed.
    """
    if isinstance(index_or_labels, DatasetIndex):
        labels = index_or_labels.labels()
    else:
        labels = np.asarray(index_or_labels, dtype=np.int64)
    if k < 2:
        raise ConfigError(f"kfold_split: k must be >= 2, got {k}")
    rng = np.random.default_rng(seed)
    folds: List[List[int]] = [[] for _ in range(k)]
    cursor = 0
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        if members.size < k:
            raise ConfigError(
                f"class {cls} has {members.size} samples, fewer than k={k}")
        rng.shuffle(members)
        for idx in members:
            folds[cursor % k].append(int(idx))
            cursor += 1
    return FoldSplit(folds=[np.array(f, dtype=np.int64) for f in folds])


def make_synthetic_dataset(n: int = 64, hw: Tuple[int, int] = (64, 64),
                           seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Two-class synthetic images with distinct color and texture statistics.

    Class 0 is warm-toned with a smooth low-frequency pattern; class 1 is
    cool-toned with a high-frequency texture. Balanced labels, fixed seed,
    pixel values already in [0, 1], shaped [n, 3, H, W].
    """
    rng = np.random.default_rng(seed)
    h, w = hw
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float32),
                         np.arange(w, dtype=np.float32), indexing="ij")
    images = np.empty((n, 3, h, w), dtype=np.float32)
    labels = np.arange(n, dtype=np.int64) % 2
    for i in range(n):
        phase = rng.uniform(0, 2 * np.pi)
        if labels[i] == 0:
            base = np.array([0.75, 0.30, 0.25], dtype=np.float32)
            pattern = 0.15 * np.sin(2 * np.pi * (xs + ys) / max(h, w) + phase)
        else:
            base = np.array([0.20, 0.45, 0.75], dtype=np.float32)
            pattern = 0.15 * np.sign(np.sin(2 * np.pi * xs / 4 + phase)
                                     * np.sin(2 * np.pi * ys / 4 + phase))
        noise = rng.normal(scale=0.05, size=(3, h, w)).astype(np.float32)
        images[i] = base[:, None, None] + pattern[None] + noise
    np.clip(images, 0.0, 1.0, out=images)
    return images, labels
