"""Sample arrivals, the synthetic Gaussian-blob task and the IDX loader."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from ..model import LabeledDataset

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IDXFormatError(ValueError):
    """Base class for IDX parse failures; ``field`` names the offending part."""

    def __init__(self, message: str, field: str):
        super().__init__(message)
        self.field = field


class IDXMagicError(IDXFormatError):
    pass


class IDXCountMismatchError(IDXFormatError):
    pass


class IDXTruncatedError(IDXFormatError):
    pass


def sample_arrivals(lam: float, rng: np.random.Generator) -> int:
    """One Poisson(lam) draw: the number of new samples this round."""
    if not lam > 0:
        raise ValidationError("arrival rate must be positive")
    return int(rng.poisson(lam))


@dataclass(frozen=True)
class SyntheticTask:
    """Class centers shared by all clients of a scenario."""

    centers: np.ndarray        # (classes, features)

    @property
    def n_classes(self) -> int:
        return self.centers.shape[0]

    @property
    def n_features(self) -> int:
        return self.centers.shape[1]

    @classmethod
    def draw(cls, rng: np.random.Generator, n_classes: int = 10, n_features: int = 16,
             separation: float = 2.0) -> "SyntheticTask":
        """Random center directions scaled to norm ``separation``."""
        c = rng.normal(size=(n_classes, n_features))
        c *= separation / np.linalg.norm(c, axis=1, keepdims=True)
        return cls(c)


@dataclass(frozen=True)
class BlobClient:
    """Per-client view of a synthetic task: feature shift, scale, label noise."""

    shift: np.ndarray
    scale: float = 1.0
    label_noise: float = 0.0


def corrupt_labels(labels: np.ndarray, rate: float, n_classes: int,
                   rng: np.random.Generator) -> np.ndarray:
    """With probability ``rate`` replace a label by a uniform draw from the other classes."""
    flip = rng.random(labels.size) < rate
    offset = rng.integers(1, n_classes, size=labels.size)
    return np.where(flip, (labels + offset) % n_classes, labels)


def generate_synthetic_data(task: SyntheticTask, client: BlobClient, n: int,
                            rng: np.random.Generator) -> LabeledDataset:
    """``n`` samples: uniform class, unit-covariance Gaussian around the class
    center, then the client's affine distortion and label corruption."""
    if n < 0:
        raise ValidationError("sample count must be non-negative")
    y = rng.integers(0, task.n_classes, size=n)
    x = task.centers[y] + rng.normal(size=(n, task.n_features))
    x = x * client.scale + client.shift
    if client.label_noise > 0:
        y = corrupt_labels(y, client.label_noise, task.n_classes, rng)
    return LabeledDataset(x, y, task.n_classes)


def validation_count(n: int) -> int:
    """Validation share of a batch of ``n`` arrivals, rounded up."""
    return (3 * n + 9) // 10


def split_batch(batch: LabeledDataset, rng: np.random.Generator) -> tuple[LabeledDataset, LabeledDataset]:
    """Random 70/30 train/validation split, rounding toward validation."""
    n = len(batch)
    order = rng.permutation(n)
    k = validation_count(n)
    return batch.subset(order[k:]), batch.subset(order[:k])


# --- IDX ----------------------------------------------------------------------

def _read_header(buf: bytes, magic: int, ndim: int, what: str) -> tuple[int, ...]:
    need = 4 + 4 * ndim
    if len(buf) < need:
        raise IDXTruncatedError(f"{what} file too short for its header "
                                f"({len(buf)} < {need} bytes)", f"{what}.header")
    (found,) = struct.unpack(">I", buf[:4])
    if found != magic:
        raise IDXMagicError(f"{what} magic is 0x{found:08x}, expected 0x{magic:08x}",
                            f"{what}.magic")
    return struct.unpack(">" + "I" * ndim, buf[4:need])


def load_idx(images_path, labels_path, n_classes: int = 10) -> LabeledDataset:
    """Read MNIST-style IDX image/label files; pixels are scaled to [0, 1]."""
    with open(images_path, "rb") as fh:
        ibuf = fh.read()
    with open(labels_path, "rb") as fh:
        lbuf = fh.read()
    n_img, rows, cols = _read_header(ibuf, IDX_IMAGES_MAGIC, 3, "images")
    (n_lab,) = _read_header(lbuf, IDX_LABELS_MAGIC, 1, "labels")
    if n_img != n_lab:
        raise IDXCountMismatchError(
            f"{n_img} images but {n_lab} labels", "count")
    pix = ibuf[16:]
    if len(pix) < n_img * rows * cols:
        raise IDXTruncatedError(
            f"images payload has {len(pix)} bytes, header promises {n_img * rows * cols}",
            "images.payload")
    lab = lbuf[8:]
    if len(lab) < n_lab:
        raise IDXTruncatedError(
            f"labels payload has {len(lab)} bytes, header promises {n_lab}", "labels.payload")
    x = np.frombuffer(pix, dtype=np.uint8, count=n_img * rows * cols)
    x = x.reshape(n_img, rows * cols).astype(np.float64) / 255.0
    y = np.frombuffer(lab, dtype=np.uint8, count=n_lab).astype(np.int64)
    return LabeledDataset(x, y, max(n_classes, int(y.max()) + 1 if y.size else n_classes))


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 ``images`` of shape (n, rows, cols) and their labels as IDX."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.size))
        fh.write(labels.tobytes())
