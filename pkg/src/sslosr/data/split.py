"""Open-set semi-supervised split construction and manifests."""

from __future__ import annotations

import json
import os
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator

import numpy as np

from sslosr.data.dataset import Dataset, _frozen, conform_shape
from sslosr.errors import ArgumentError, IntegrityError

MANIFEST_SCHEMA = 1


@dataclass(frozen=True)
class Pool:
    samples: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "samples", _frozen(np.asarray(self.samples)))
        object.__setattr__(self, "labels", _frozen(np.asarray(self.labels, dtype=np.int64)))

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class SplitIndex:
    """Where every pool member came from, enough to rebuild a split exactly.

    ``novel_origin`` is ``"novel_source"`` (cross-dataset), ``"labelled_test"``
    or ``"labelled_source"`` (held-out categories).
    """

    lab: tuple[int, ...]
    unlab: tuple[int, ...]
    test_known: tuple[int, ...]
    test_novel: tuple[int, ...]
    novel_origin: str
    category_map: tuple[tuple[int, int], ...]  # (source label, split label)


@dataclass(frozen=True)
class OpenSetSplit:
    """Labelled train, unlabelled train and open test pools.

    ``unlab_train.labels`` holds the anticipated labels for bookkeeping
    only; trainers read ``unlab_train.samples``. Test labels lie in
    ``1..K+1`` where ``K+1`` is the unknown category.
    """

    lab_train: Pool
    unlab_train: Pool
    test: Pool
    K: int
    seed: int
    labels_per_category: int
    index: SplitIndex

    @property
    def novel_label(self) -> int:
        return self.K + 1

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return tuple(self.lab_train.samples.shape[1:])


def make_ssl_split(
    labelled_source: Dataset,
    novel_source: Dataset | None = None,
    labels_per_category: int = 100,
    holdout_categories: list[int] | None = None,
    seed: int = 0,
    *,
    labelled_test: Dataset | None = None,
) -> OpenSetSplit:
    """Build an open-set SSL split.

    Exactly one of ``novel_source`` (cross-dataset novelty) and
    ``holdout_categories`` (labels of ``labelled_source`` withheld as novels)
    must be given. ``labelled_test`` supplies the known part of the test
    pool; in holdout mode its held-out categories become novels. Without
    ``labelled_test`` the held-out training samples themselves form the
    novel test pool (they never enter training).
    """
    if (novel_source is None) == (holdout_categories is None):
        raise ArgumentError("give exactly one of novel_source / holdout_categories")
    if labels_per_category < 1:
        raise ArgumentError("labels_per_category must be >= 1")

    all_cats = list(range(1, labelled_source.num_categories + 1))
    held = sorted(set(holdout_categories or []))
    if any(c not in all_cats for c in held):
        raise ArgumentError(f"holdout categories {held} outside 1..{len(all_cats)}")
    kept = [c for c in all_cats if c not in held]
    if len(kept) < 2:
        raise ArgumentError(f"holdout leaves K={len(kept)} < 2 labelled categories")
    cat_map = {c: i + 1 for i, c in enumerate(kept)}

    counts = Counter(labelled_source.labels.tolist())
    smallest = min(counts.get(c, 0) for c in kept)
    if labels_per_category > smallest:
        raise ArgumentError(
            f"labels_per_category={labels_per_category} exceeds smallest class size {smallest}"
        )

    rng = np.random.default_rng(seed)
    lab_idx = []
    for c in kept:
        members = np.flatnonzero(labelled_source.labels == c)
        lab_idx.append(rng.choice(members, size=labels_per_category, replace=False))
    lab_idx = np.sort(np.concatenate(lab_idx))
    train_mask = np.isin(labelled_source.labels, kept)
    train_mask[lab_idx] = False
    unlab_idx = np.flatnonzero(train_mask)

    if labelled_test is not None:
        known_idx = np.flatnonzero(np.isin(labelled_test.labels, kept))
    else:
        known_idx = np.zeros(0, dtype=np.int64)
    if novel_source is not None:
        novel_idx, origin = np.arange(len(novel_source)), "novel_source"
    elif labelled_test is not None:
        novel_idx, origin = np.flatnonzero(np.isin(labelled_test.labels, held)), "labelled_test"
    else:
        novel_idx = np.flatnonzero(np.isin(labelled_source.labels, held))
        origin = "labelled_source"
    if len(novel_idx) == 0:
        raise ArgumentError("open test pool would contain no novel samples")

    index = SplitIndex(
        lab=tuple(lab_idx.tolist()),
        unlab=tuple(unlab_idx.tolist()),
        test_known=tuple(known_idx.tolist()),
        test_novel=tuple(novel_idx.tolist()),
        novel_origin=origin,
        category_map=tuple(cat_map.items()),
    )
    return assemble_split(
        index, labelled_source, labelled_test, novel_source, seed, labels_per_category
    )


def assemble_split(
    index: SplitIndex,
    labelled_source: Dataset,
    labelled_test: Dataset | None,
    novel_source: Dataset | None,
    seed: int,
    labels_per_category: int,
) -> OpenSetSplit:
    cat_map = dict(index.category_map)
    K = len(cat_map)
    lut = np.zeros(max(labelled_source.num_categories, max(cat_map)) + 1, dtype=np.int64)
    for src, dst in cat_map.items():
        lut[src] = dst

    def relabel(labels: np.ndarray) -> np.ndarray:
        out = lut[labels]
        if (out == 0).any():
            raise IntegrityError("split refers to a sample outside the labelled categories")
        return out

    lab = np.asarray(index.lab, dtype=np.int64)
    unlab = np.asarray(index.unlab, dtype=np.int64)
    known = np.asarray(index.test_known, dtype=np.int64)
    novel = np.asarray(index.test_novel, dtype=np.int64)
    shape = labelled_source.sample_shape

    origin = {
        "novel_source": novel_source,
        "labelled_test": labelled_test,
        "labelled_source": labelled_source,
    }.get(index.novel_origin)
    if origin is None:
        raise IntegrityError(f"split needs the {index.novel_origin} dataset")
    if len(known) and labelled_test is None:
        raise IntegrityError("split needs the labelled_test dataset")

    test_parts = []
    test_labels = []
    if len(known):
        test_parts.append(conform_shape(labelled_test.samples[known], shape))
        test_labels.append(relabel(labelled_test.labels[known]))
    test_parts.append(conform_shape(origin.samples[novel], shape))
    test_labels.append(np.full(len(novel), K + 1, dtype=np.int64))

    return OpenSetSplit(
        lab_train=Pool(labelled_source.samples[lab], relabel(labelled_source.labels[lab])),
        unlab_train=Pool(labelled_source.samples[unlab], relabel(labelled_source.labels[unlab])),
        test=Pool(np.concatenate(test_parts), np.concatenate(test_labels)),
        K=K,
        seed=seed,
        labels_per_category=labels_per_category,
        index=index,
    )


def split_manifest(split: OpenSetSplit, sources: dict[str, Any] | None = None) -> dict:
    """Serialisable description of ``split``: parameters plus per-pool indices."""
    ix = split.index
    return {
        "schema": MANIFEST_SCHEMA,
        "K": split.K,
        "seed": split.seed,
        "labels_per_category": split.labels_per_category,
        "sources": sources or {},
        "category_map": [list(p) for p in ix.category_map],
        "novel_origin": ix.novel_origin,
        "pools": {
            "lab_train": list(ix.lab),
            "unlab_train": list(ix.unlab),
            "test_known": list(ix.test_known),
            "test_novel": list(ix.test_novel),
        },
    }


def save_split_manifest(
    split: OpenSetSplit, path: str | os.PathLike, sources: dict[str, Any] | None = None
) -> None:
    Path(path).write_text(json.dumps(split_manifest(split, sources), indent=1) + "\n")


def load_split_manifest(path: str | os.PathLike) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"split manifest {path} does not exist")
    manifest = json.loads(path.read_text())
    if manifest.get("schema") != MANIFEST_SCHEMA:
        raise IntegrityError(f"unsupported split manifest schema {manifest.get('schema')!r}")
    return manifest


def split_from_manifest(
    manifest: dict,
    labelled_source: Dataset,
    labelled_test: Dataset | None = None,
    novel_source: Dataset | None = None,
) -> OpenSetSplit:
    pools = manifest["pools"]
    index = SplitIndex(
        lab=tuple(pools["lab_train"]),
        unlab=tuple(pools["unlab_train"]),
        test_known=tuple(pools["test_known"]),
        test_novel=tuple(pools["test_novel"]),
        novel_origin=manifest["novel_origin"],
        category_map=tuple((int(a), int(b)) for a, b in manifest["category_map"]),
    )
    split = assemble_split(
        index,
        labelled_source,
        labelled_test,
        novel_source,
        manifest["seed"],
        manifest["labels_per_category"],
    )
    if split.K != manifest["K"]:
        raise IntegrityError("manifest K disagrees with its category map")
    return split


class TrackedSplit:
    """Read-counting proxy over an :class:`OpenSetSplit`.

    Used to prove which pools a trainer touched.
    """

    _tracked = ("lab_train", "unlab_train", "test")

    def __init__(self, split: OpenSetSplit):
        self._split = split
        self.reads: Counter[str] = Counter()

    def __getattr__(self, name: str):
        if name in self._tracked:
            self.reads[name] += 1
        return getattr(self._split, name)


def batch_iter(
    pool: np.ndarray | Pool, batch_size: int, seed: int, epoch: int
) -> Iterator[np.ndarray | tuple[np.ndarray, np.ndarray]]:
    """Yield shuffled mini-batches, final short batch included.

    The order depends only on ``(seed, epoch)``. Pools yield
    ``(samples, labels)`` pairs; bare arrays yield array slices.
    """
    if batch_size < 1:
        raise ArgumentError("batch_size must be >= 1")
    n = len(pool)
    if n == 0:
        return
    order = np.random.default_rng([seed, epoch]).permutation(n)
    for start in range(0, n, batch_size):
        take = order[start : start + batch_size]
        if isinstance(pool, Pool):
            yield pool.samples[take], pool.labels[take]
        else:
            yield pool[take]
