"""Datasets: synthetic class-template images, IDX ingestion, few-shot subsets."""
from __future__ import annotations

import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (ConfigError, DataError, IdxCountMismatchError, IdxMagicError,
                     IdxTruncatedError)
from .tensor import Rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

_SPLIT_TAGS = {"train": 0, "test": 1}


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) float32
    labels: np.ndarray  # (N,) int64
    num_classes: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DataError(f"images must be (N, C, H, W), got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], self.num_classes)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class ShiftSpec:
    """Downstream shift: x -> contrast_scale * x + mean_shift, y -> perm[y]."""

    mean_shift: float = 0.0
    contrast_scale: float = 1.0
    label_permutation: tuple | None = None

    @property
    def is_identity(self) -> bool:
        perm = self.label_permutation
        return (self.mean_shift == 0.0 and self.contrast_scale == 1.0
                and (perm is None or list(perm) == list(range(len(perm)))))

    def apply(self, images: np.ndarray, labels: np.ndarray):
        if self.is_identity:
            return images, labels
        images = (self.contrast_scale * images + self.mean_shift).astype(np.float32)
        if self.label_permutation is not None:
            labels = np.asarray(self.label_permutation, dtype=np.int64)[labels]
        return images, labels


@dataclass(frozen=True)
class SyntheticSource:
    """Gaussian class templates plus per-example Gaussian noise.

    ``template_seed`` fixes the class templates, so the train and test splits
    of one task (and a shifted copy of it) share templates while ``seed``
    drives the per-example noise.
    """

    classes: int = 3
    per_class: int = 100
    image_side: int = 16
    channels: int = 1
    noise: float = 0.5
    template_seed: int = 0
    smooth: int = 2
    shift: ShiftSpec = field(default_factory=ShiftSpec)


@dataclass(frozen=True)
class IdxSource:
    images_path: str
    labels_path: str


@dataclass(frozen=True)
class DatasetSpec:
    source: SyntheticSource | IdxSource
    split: str = "train"
    seed: int = 0

    def __post_init__(self):
        if self.split not in _SPLIT_TAGS:
            raise ConfigError(f"split must be 'train' or 'test', got {self.split!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["source_kind"] = "idx" if isinstance(self.source, IdxSource) else "synthetic"
        return d


def _box_blur(x: np.ndarray, k: int) -> np.ndarray:
    """Separable box blur of width 2k+1 over the last two axes, wrap-around."""
    if k <= 0:
        return x
    out = x
    for axis in (-1, -2):
        acc = np.zeros_like(out)
        for s in range(-k, k + 1):
            acc += np.roll(out, s, axis=axis)
        out = acc / (2 * k + 1)
    return out


def class_templates(src: SyntheticSource) -> np.ndarray:
    """Unit-variance smooth random templates, shape (classes, C, H, W)."""
    rng = Rng(src.template_seed).spawn(7)
    raw = rng.normal((src.classes, src.channels, src.image_side, src.image_side))
    t = _box_blur(raw, src.smooth)
    t = t - t.mean(axis=(1, 2, 3), keepdims=True)
    t = t / t.std(axis=(1, 2, 3), keepdims=True)
    return t


def synth_generate(spec: DatasetSpec) -> Dataset:
    """Deterministic in (spec, seed); balanced, then shuffled."""
    src = spec.source
    if isinstance(src, IdxSource):
        return load_idx(src.images_path, src.labels_path)
    if src.classes < 1 or src.per_class < 1:
        raise ConfigError("synthetic data needs classes >= 1 and per_class >= 1")
    templates = class_templates(src)
    rng = Rng(spec.seed).spawn(_SPLIT_TAGS[spec.split])
    labels = np.repeat(np.arange(src.classes), src.per_class)
    noise = rng.normal((len(labels),) + templates.shape[1:], std=src.noise)
    images = templates[labels] + noise
    order = rng.permutation(len(labels))
    images, labels = images[order], labels[order]
    images, labels = src.shift.apply(images.astype(np.float32), labels)
    return Dataset(images, labels, src.classes)


# -- IDX ---------------------------------------------------------------

def _read_header(buf: bytes, ndim: int, path) -> tuple:
    need = 4 + 4 * ndim
    if len(buf) < need:
        raise IdxTruncatedError(f"{path}: header needs {need} bytes, file has {len(buf)}")
    return struct.unpack(f">{1 + ndim}I", buf[:need])


def load_idx(images_path, labels_path) -> Dataset:
    """Read an IDX image/label pair; pixels scaled to [0, 1]."""
    ib = Path(images_path).read_bytes()
    lb = Path(labels_path).read_bytes()

    if len(ib) >= 4 and struct.unpack(">I", ib[:4])[0] != IDX_IMAGES_MAGIC:
        raise IdxMagicError(f"{images_path}: bad magic 0x{struct.unpack('>I', ib[:4])[0]:08x}, "
                            f"expected 0x{IDX_IMAGES_MAGIC:08x}")
    if len(lb) >= 4 and struct.unpack(">I", lb[:4])[0] != IDX_LABELS_MAGIC:
        raise IdxMagicError(f"{labels_path}: bad magic 0x{struct.unpack('>I', lb[:4])[0]:08x}, "
                            f"expected 0x{IDX_LABELS_MAGIC:08x}")
    _, n_img, rows, cols = _read_header(ib, 3, images_path)
    _, n_lab = _read_header(lb, 1, labels_path)
    if n_img != n_lab:
        raise IdxCountMismatchError(f"{n_img} images but {n_lab} labels")

    body = ib[16:]
    if len(body) != n_img * rows * cols:
        raise IdxTruncatedError(f"{images_path}: expected {n_img * rows * cols} pixel bytes, "
                                f"found {len(body)}")
    lbody = lb[8:]
    if len(lbody) != n_lab:
        raise IdxTruncatedError(f"{labels_path}: expected {n_lab} label bytes, found {len(lbody)}")

    images = np.frombuffer(body, dtype=np.uint8).reshape(n_img, 1, rows, cols)
    labels = np.frombuffer(lbody, dtype=np.uint8).astype(np.int64)
    num_classes = int(labels.max()) + 1 if n_lab else 0
    return Dataset(images.astype(np.float32) / 255.0, labels, num_classes)


def save_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images (N, H, W) and labels (N,) as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">4I", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">2I", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


# -- few-shot ----------------------------------------------------------

def few_shot_sample(dataset: Dataset, k: int, seed: int) -> Dataset:
    """Exactly ``k`` examples per class, drawn without replacement.

    For a fixed seed the subsets are nested: the k-shot set contains the
    j-shot set for every j < k.
    """
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    rng = Rng(seed).spawn(11)
    chosen = []
    for c in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == c)
        if len(idx) < k:
            raise DataError(f"class {c} has {len(idx)} examples, fewer than k={k}")
        chosen.append(np.sort(rng.permutation(idx)[:k]))
    return dataset.subset(np.concatenate(chosen))
