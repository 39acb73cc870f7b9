"""Datasets and class-imbalance scenarios.

Class 0 is the majority class throughout; class 1 is the minority.
"""
from __future__ import annotations

import csv
import gzip
import logging
import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import IdxFormatError, ValidationError

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# standard Fashion-MNIST indices: 0 = T-shirt/top, 6 = shirt
FMNIST_TSHIRT = 0
FMNIST_SHIRT = 6

PAPER_SCENARIOS = ("50:50", "55:45", "60:40", "65:35", "70:30", "75:25",
                   "80:20", "85:15", "90:10", "95:5", "98:2")


@dataclass(frozen=True)
class Dataset:
    samples: np.ndarray
    labels: np.ndarray
    provenance: str = "synthetic"
    image_shape: tuple[int, int] | None = None

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2:
            raise ValidationError("samples must be an N x D matrix")
        if y.shape != (x.shape[0],):
            raise ValidationError(f"{x.shape[0]} samples but {y.size} labels")
        if np.any((y != 0) & (y != 1)):
            raise ValidationError("labels must be 0 or 1")
        if self.provenance not in ("synthetic", "idx"):
            raise ValidationError(f"unknown provenance {self.provenance!r}")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.shape[0]

    def class_counts(self) -> tuple[int, int]:
        return int(np.sum(self.labels == 0)), int(np.sum(self.labels == 1))

    def subset(self, idx) -> Dataset:
        return Dataset(self.samples[idx], self.labels[idx], self.provenance, self.image_shape)


@dataclass(frozen=True)
class ScenarioSpec:
    """A majority:minority proportion such as ``90:10`` over ``total_size`` samples."""

    majority: int
    minority: int
    total_size: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.majority < 0 or self.minority <= 0 or self.majority < self.minority:
            raise ValidationError(f"invalid proportion {self.majority}:{self.minority}")
        if self.total_size < 2:
            raise ValidationError("total_size must be at least 2")
        n0, n1 = self.counts()
        if n0 < 1 or n1 < 1:
            raise ValidationError(
                f"scenario {self.name} of {self.total_size} leaves a class empty ({n0}/{n1})"
            )

    @classmethod
    def parse(cls, text: str, total_size: int = 1000, seed: int = 0) -> ScenarioSpec:
        try:
            a, b = (int(part) for part in str(text).split(":"))
        except ValueError:
            raise ValidationError(f"scenario must look like 'A:B', got {text!r}") from None
        return cls(a, b, total_size, seed)

    @property
    def name(self) -> str:
        return f"{self.majority}:{self.minority}"

    @property
    def majority_fraction(self) -> float:
        return self.majority / (self.majority + self.minority)

    def counts(self) -> tuple[int, int]:
        """Exact (majority, minority) counts, rounding half up on the majority."""
        frac = Fraction(self.majority, self.majority + self.minority) * self.total_size
        n0 = math.floor(frac + Fraction(1, 2))
        return n0, self.total_size - n0


def generate_gaussians(dim: int, center_separation: float, spec: ScenarioSpec) -> Dataset:
    """Two unit-covariance Gaussian blobs ``center_separation`` apart along the diagonal."""
    if dim < 2:
        raise ValidationError("dim must be at least 2")
    if center_separation < 0:
        raise ValidationError("center_separation must be nonnegative")
    n0, n1 = spec.counts()
    rng = np.random.default_rng(spec.seed)
    u = np.ones(dim) / np.sqrt(dim)
    c0, c1 = -0.5 * center_separation * u, 0.5 * center_separation * u
    x = np.concatenate([c0 + rng.standard_normal((n0, dim)),
                        c1 + rng.standard_normal((n1, dim))])
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    order = rng.permutation(len(y))
    return Dataset(x[order], y[order], "synthetic")


# -- IDX ---------------------------------------------------------------------

def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx(path, expected_magic: int) -> np.ndarray:
    """Parse an unsigned-byte IDX file into an array shaped by its header."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise IdxFormatError("file too short for a magic number", len(raw))
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxFormatError(f"bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", 0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"truncated header for {ndim} dimensions", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    need = header + math.prod(dims)
    if len(raw) < need:
        raise IdxFormatError(f"truncated data: need {need} bytes, have {len(raw)}", len(raw))
    if len(raw) > need:
        raise IdxFormatError(f"{len(raw) - need} trailing bytes after data", need)
    return np.frombuffer(raw, dtype=np.uint8, count=math.prod(dims), offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as IDX (1-D -> labels magic, 3-D -> images magic)."""
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise ValidationError("IDX writer only supports uint8 data")
    if arr.ndim not in (1, 3):
        raise ValidationError("IDX writer expects a label vector or an image stack")
    magic = 0x00000800 | arr.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(f">I{arr.ndim}I", magic, *arr.shape))
        fh.write(np.ascontiguousarray(arr).tobytes())


def load_idx(images_path, labels_path, class_a: int = FMNIST_TSHIRT,
             class_b: int = FMNIST_SHIRT) -> Dataset:
    """Load an IDX image/label pair, keeping ``class_a`` (-> 0) and ``class_b`` (-> 1)."""
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"{images.shape[0]} images but {labels.shape[0]} labels", 4)
    if class_a == class_b:
        raise ValidationError("class_a and class_b must differ")
    keep = (labels == class_a) | (labels == class_b)
    rows, cols = images.shape[1:]
    x = images[keep].reshape(-1, rows * cols).astype(np.float64) / 255.0
    y = (labels[keep] == class_b).astype(np.int64)
    return Dataset(x, y, "idx", (rows, cols))


# -- scenario, split, augmentation -------------------------------------------

def apply_scenario(d: Dataset, spec: ScenarioSpec) -> Dataset:
    """Subsample without replacement to the scenario's exact class counts."""
    n0, n1 = spec.counts()
    have0, have1 = d.class_counts()
    if have0 < n0:
        raise ValidationError(f"class 0 has {have0} samples, scenario {spec.name} needs {n0}")
    if have1 < n1:
        raise ValidationError(f"class 1 has {have1} samples, scenario {spec.name} needs {n1}")
    rng = np.random.default_rng(spec.seed)
    pick0 = rng.choice(np.flatnonzero(d.labels == 0), n0, replace=False)
    pick1 = rng.choice(np.flatnonzero(d.labels == 1), n1, replace=False)
    idx = rng.permutation(np.concatenate([pick0, pick1]))
    return d.subset(idx)


def split_train_test(d: Dataset, train_fraction: float = 0.7, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified split; each class contributes ``floor(train_fraction * n_c)`` to train."""
    if not 0 < train_fraction < 1:
        raise ValidationError("train_fraction must lie strictly between 0 and 1")
    frac = Fraction(train_fraction).limit_denominator(10**6)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in (0, 1):
        idx = np.flatnonzero(d.labels == c)
        if len(idx) == 0:
            continue
        if len(idx) < 2:
            raise ValidationError(f"class {c} has {len(idx)} sample(s); need at least 2 to split")
        idx = rng.permutation(idx)
        k = min(max(math.floor(frac * len(idx)), 1), len(idx) - 1)
        train.append(idx[:k])
        test.append(idx[k:])
    tr = rng.permutation(np.concatenate(train))
    te = rng.permutation(np.concatenate(test))
    return d.subset(tr), d.subset(te)


def augment_flip(d: Dataset, image_width: int, seed: int, probability: float = 0.5) -> Dataset:
    """Mirror each image horizontally with the given probability."""
    if d.provenance != "idx":
        log.warning("augment_flip: %s data has no image layout; left unchanged", d.provenance)
        return d
    n, dim = d.samples.shape
    if image_width < 1 or dim % image_width:
        raise ValidationError(f"sample length {dim} is not divisible by width {image_width}")
    rng = np.random.default_rng(seed)
    mask = rng.random(n) < probability
    imgs = d.samples.reshape(n, -1, image_width).copy()
    imgs[mask] = imgs[mask][:, :, ::-1]
    return Dataset(imgs.reshape(n, dim), d.labels.copy(), d.provenance, d.image_shape)


# -- CSV export --------------------------------------------------------------

def write_csv(d: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", *(f"f{i}" for i in range(d.samples.shape[1]))])
        for label, row in zip(d.labels, d.samples):
            w.writerow([int(label), *(repr(float(v)) for v in row)])


def read_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if not header or header[0] != "label":
            raise ValidationError("CSV header must start with 'label'")
        rows = [row for row in r if row]
    y = np.array([int(row[0]) for row in rows], dtype=np.int64)
    x = np.array([[float(v) for v in row[1:]] for row in rows], dtype=np.float64)
    return Dataset(x.reshape(len(rows), len(header) - 1), y, "synthetic")
