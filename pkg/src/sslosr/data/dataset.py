from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from sslosr.data import formats
from sslosr.errors import ArgumentError, FormatError, UnsupportedFormatError

DatasetFormat = Literal["cifar-binary", "idx", "raw-tensor"]


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Dataset:
    """Samples with 1-based contiguous category labels.

    ``category_names[i]`` names label ``i + 1``.
    """

    name: str
    samples: np.ndarray
    labels: np.ndarray
    category_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        samples = np.asarray(self.samples)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(samples) != len(labels):
            raise ArgumentError(
                f"{self.name}: {len(samples)} samples but {len(labels)} labels"
            )
        names = tuple(self.category_names)
        if not names and len(labels):
            names = tuple(str(i) for i in range(1, int(labels.max()) + 1))
        if len(labels) and (labels.min() < 1 or labels.max() > len(names)):
            raise ArgumentError(f"{self.name}: labels must lie in 1..{len(names)}")
        object.__setattr__(self, "samples", _frozen(samples))
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "category_names", names)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_categories(self) -> int:
        return len(self.category_names)

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return tuple(self.samples.shape[1:])

    def subset(self, index: np.ndarray, name: str | None = None) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return Dataset(
            name or self.name, self.samples[index], self.labels[index], self.category_names
        )


def scale_pixels(pixels: np.ndarray) -> np.ndarray:
    """Map uint8 pixels to [-1, 1]; floating payloads are taken as already scaled."""
    if pixels.dtype.kind in "ui":
        return pixels.astype(np.float32) / np.float32(127.5) - np.float32(1.0)
    return pixels.astype(np.float32, copy=False)


def remap_labels(raw: np.ndarray) -> tuple[np.ndarray, tuple[str, ...]]:
    values, inverse = np.unique(np.asarray(raw).reshape(-1), return_inverse=True)
    return inverse.astype(np.int64) + 1, tuple(str(v) for v in values)


def _default_labels_path(path: Path, fmt: str) -> Path | None:
    if fmt == "idx":
        name = path.name
        for images, labels in (("images-idx3", "labels-idx1"), ("images.idx", "labels.idx")):
            if images in name:
                return path.with_name(name.replace(images, labels))
        return None
    if fmt == "raw-tensor":
        stem = path.name[: -len(".sslt")] if path.name.endswith(".sslt") else path.name
        return path.with_name(stem + ".labels.sslt")
    return None


def load_dataset(
    path: str | os.PathLike,
    format: DatasetFormat,
    *,
    labels_path: str | os.PathLike | None = None,
    name: str | None = None,
    label_bytes: int = 1,
) -> Dataset:
    """Load one file into a :class:`Dataset`.

    Image pixels are scaled to [-1, 1] and labels remapped to ``1..K_total``.
    IDX and raw-tensor sample files take their labels from a sibling file
    (``*-labels-idx1-*`` or ``<stem>.labels.sslt``) unless ``labels_path``
    is given.
    """
    path = Path(path)
    name = name or path.name
    if format == "cifar-binary":
        pixels, raw_labels = formats.parse_cifar(path.read_bytes(), label_bytes=label_bytes)
    elif format in ("idx", "raw-tensor"):
        parse = formats.parse_idx if format == "idx" else formats.parse_raw_tensor
        pixels = parse(path.read_bytes())
        if pixels.ndim == 0:
            raise FormatError(f"{path}: scalar payload is not a sample array")
        lpath = Path(labels_path) if labels_path else _default_labels_path(path, format)
        if lpath is not None and lpath.exists():
            raw_labels = parse(lpath.read_bytes()).reshape(-1)
        elif len(pixels) == 0:
            raw_labels = np.zeros(0, dtype=np.int64)
        else:
            raise FormatError(f"{path}: no label file found (looked for {lpath})")
        if pixels.ndim == 3 and format == "idx":
            pixels = pixels[:, None]  # [N,H,W] -> [N,1,H,W]
    else:
        raise UnsupportedFormatError(f"unknown dataset format {format!r}")
    labels, names = remap_labels(raw_labels)
    return Dataset(name, scale_pixels(pixels), labels, names)


def concat_datasets(parts: Sequence[Dataset], name: str | None = None) -> Dataset:
    """Concatenate datasets that share a sample shape, merging label vocabularies."""
    if not parts:
        raise ArgumentError("nothing to concatenate")
    vocab = sorted({n for p in parts for n in p.category_names}, key=_natural_key)
    lookup = {n: i + 1 for i, n in enumerate(vocab)}
    samples, labels = [], []
    for part in parts:
        if part.sample_shape != parts[0].sample_shape:
            raise ArgumentError("cannot concatenate datasets with different sample shapes")
        remap = np.array([0] + [lookup[n] for n in part.category_names], dtype=np.int64)
        samples.append(part.samples)
        labels.append(remap[part.labels])
    return Dataset(name or parts[0].name, np.concatenate(samples), np.concatenate(labels), tuple(vocab))


def _natural_key(s: str):
    return (0, int(s), "") if s.lstrip("-").isdigit() else (1, 0, s)


def conform_shape(samples: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    """Center-crop then nearest-neighbour resize ``[N,C,H,W]`` images to ``shape``.

    Channel counts are reconciled by replicating a single channel or
    averaging down to one.
    """
    shape = tuple(shape)
    if samples.shape[1:] == shape:
        return samples
    if samples.ndim != 4 or len(shape) != 3:
        raise ArgumentError(f"cannot conform samples of shape {samples.shape[1:]} to {shape}")
    c, h, w = shape
    n, sc, sh, sw = samples.shape
    if sc != c:
        if sc == 1:
            samples = np.repeat(samples, c, axis=1)
        elif c == 1:
            samples = samples.mean(axis=1, keepdims=True)
        else:
            raise ArgumentError(f"cannot map {sc} channels to {c}")
    # center crop to the target aspect ratio
    target_ratio = h / w
    if sh / sw > target_ratio:
        ch, cw = max(1, round(sw * target_ratio)), sw
    else:
        ch, cw = sh, max(1, round(sh / target_ratio))
    top, left = (sh - ch) // 2, (sw - cw) // 2
    samples = samples[:, :, top : top + ch, left : left + cw]
    rows = np.minimum((np.arange(h) * ch) // h, ch - 1)
    cols = np.minimum((np.arange(w) * cw) // w, cw - 1)
    return np.ascontiguousarray(samples[:, :, rows][:, :, :, cols])
