"""Dataset sources: seeded Gaussian clusters and IDX (MNIST) files."""

from __future__ import annotations

import gzip
import logging
import struct
from typing import TYPE_CHECKING

import numpy as np

from .exceptions import IdxFormatError, SpecificationError
from .model import Dataset
from .seeding import make_rng

if TYPE_CHECKING:
    from pathlib import Path

_LOGGER = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
_PIXEL_SCALE = 255.0


def generate_synthetic(
    class_count: int,
    per_class: int,
    input_dim: int,
    separation: float,
    seed: int,
) -> Dataset:
    """
    Balanced Gaussian clusters with unit noise.

    Class means are orthogonal directions scaled so that any two means lie
    ``separation`` apart. Rows are shuffled.
    """
    if class_count < 1 or per_class < 1 or input_dim < 1:
        msg = "class_count, per_class and input_dim must be positive"
        raise SpecificationError(msg)
    if separation < 0:
        msg = f"separation must not be negative, got {separation}"
        raise SpecificationError(msg)
    rng = make_rng(seed, "synthetic")
    basis, _ = np.linalg.qr(rng.standard_normal((max(input_dim, class_count), class_count)))
    if input_dim < class_count:
        # not enough room for orthogonal means; fall back to random unit directions
        directions = rng.standard_normal((class_count, input_dim))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    else:
        directions = basis[:input_dim].T
    means = directions * (separation / np.sqrt(2.0))

    labels = np.repeat(np.arange(class_count, dtype=np.int64), per_class)
    features = means[labels] + rng.standard_normal((labels.shape[0], input_dim))
    order = rng.permutation(labels.shape[0])
    return Dataset(features[order], labels[order], class_count)


def _open(path: Path) -> bytes:
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rb") as handle:
                return handle.read()
        return path.read_bytes()
    except (OSError, EOFError) as err:
        msg = f"Cannot read {path}: {err}"
        raise IdxFormatError(msg) from err


def _header(raw: bytes, path: Path, magic: int, dims: int) -> tuple[int, ...]:
    size = 4 * (dims + 1)
    if len(raw) < size:
        msg = f"{path} is too short for an IDX header"
        raise IdxFormatError(msg)
    found, *shape = struct.unpack(f">{dims + 1}I", raw[:size])
    if found != magic:
        msg = f"{path} has magic {found:#010x}, expected {magic:#010x}"
        raise IdxFormatError(msg)
    expected = size + int(np.prod(shape))
    if len(raw) != expected:
        msg = f"{path} holds {len(raw) - size} data bytes, header announces {expected - size}"
        raise IdxFormatError(msg)
    return tuple(shape)


def load_idx(images_path: Path, labels_path: Path, class_count: int = 10) -> Dataset:
    """
    Read an IDX image/label pair (optionally gzip-compressed).

    Pixels are scaled to [0, 1] and each image is flattened into one row.
    """
    images = _open(images_path)
    labels = _open(labels_path)
    count, rows, cols = _header(images, images_path, IDX_IMAGES_MAGIC, 3)
    (label_count,) = _header(labels, labels_path, IDX_LABELS_MAGIC, 1)
    if count != label_count:
        msg = f"{images_path} has {count} images but {labels_path} has {label_count} labels"
        raise IdxFormatError(msg)

    pixels = np.frombuffer(images, dtype=np.uint8, offset=16).reshape(count, rows * cols)
    targets = np.frombuffer(labels, dtype=np.uint8, offset=8).astype(np.int64)
    if targets.size and targets.max() >= class_count:
        msg = f"{labels_path} contains label {targets.max()} outside {class_count} classes"
        raise IdxFormatError(msg)
    _LOGGER.info("Loaded %s images of %sx%s from %s", count, rows, cols, images_path)
    return Dataset(pixels.astype(np.float64) / _PIXEL_SCALE, targets, class_count)


def split_dataset(data: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Shuffle and split into (first, second) with ``fraction`` of rows in the second."""
    if not 0.0 < fraction < 1.0:
        msg = f"fraction must lie in (0, 1), got {fraction}"
        raise SpecificationError(msg)
    order = make_rng(seed, "split").permutation(len(data))
    cut = len(data) - int(round(len(data) * fraction))
    return data.subset(order[:cut]), data.subset(order[cut:])


def split_groups(data: Dataset, group_count: int, seed: int) -> list[Dataset]:
    """Shuffle ``data`` with the group-index seed and deal it into ``group_count`` groups."""
    if group_count < 1 or group_count > len(data):
        msg = f"Cannot split {len(data)} rows into {group_count} groups"
        raise SpecificationError(msg)
    order = make_rng(seed, "groups").permutation(len(data))
    return [data.subset(part) for part in np.array_split(order, group_count)]
