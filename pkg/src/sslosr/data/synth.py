from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from sslosr.data.dataset import Dataset
from sslosr.errors import ArgumentError


@dataclass(frozen=True)
class Synth2DSpec:
    """Isotropic Gaussian clusters in the plane.

    ``novel_cluster_indices`` are 1-based positions in ``cluster_centers``.
    A stddev of exactly 0 is accepted and places every sample on its center.
    """

    cluster_centers: tuple[tuple[float, float], ...]
    cluster_stddevs: tuple[float, ...]
    samples_per_cluster: int
    novel_cluster_indices: tuple[int, ...] = ()

    def __post_init__(self):
        centers = tuple((float(x), float(y)) for x, y in self.cluster_centers)
        stds = self.cluster_stddevs
        if np.isscalar(stds):
            stds = (float(stds),) * len(centers)
        stds = tuple(float(s) for s in stds)
        object.__setattr__(self, "cluster_centers", centers)
        object.__setattr__(self, "cluster_stddevs", stds)
        object.__setattr__(self, "novel_cluster_indices", tuple(self.novel_cluster_indices))
        if len(stds) != len(centers):
            raise ArgumentError("one stddev per cluster required")
        if any(not np.isfinite(s) or s < 0 for s in stds):
            raise ArgumentError("cluster stddevs must be finite and non-negative")
        if any(not 1 <= i <= len(centers) for i in self.novel_cluster_indices):
            raise ArgumentError("novel cluster index out of range")
        if len(centers) - len(set(self.novel_cluster_indices)) < 2:
            raise ArgumentError("at least two labelled clusters must remain")
        if self.samples_per_cluster < 0:
            raise ArgumentError("samples_per_cluster must be >= 0")

    @property
    def labelled_clusters(self) -> list[int]:
        return [i for i in range(1, len(self.cluster_centers) + 1) if i not in self.novel_cluster_indices]


def gen_synth2d(spec: Synth2DSpec, seed: int) -> tuple[Dataset, Dataset]:
    """Draw ``(labelled, novel)`` datasets.

    Labelled clusters take labels ``1..K`` in center order; withheld clusters
    are numbered ``K+1..`` in the novel dataset.
    """
    rng = np.random.default_rng(seed)
    n = spec.samples_per_cluster
    draws = []
    for (cx, cy), std in zip(spec.cluster_centers, spec.cluster_stddevs):
        noise = rng.standard_normal((n, 2))
        draws.append(np.array([cx, cy]) + std * noise)

    labelled = spec.labelled_clusters
    novel = list(spec.novel_cluster_indices)
    order = labelled + novel
    names = tuple(f"cluster{i}" for i in order)

    def build(members: Sequence[int], first_label: int, name: str) -> Dataset:
        vocab = names[: first_label - 1 + len(members)]
        if not members:
            return Dataset(name, np.zeros((0, 2)), np.zeros(0, dtype=np.int64), vocab)
        x = np.concatenate([draws[i - 1] for i in members])
        y = np.repeat(np.arange(first_label, first_label + len(members)), n)
        return Dataset(name, x, y, vocab)

    return build(labelled, 1, "synth2d"), build(novel, len(labelled) + 1, "synth2d-novel")
