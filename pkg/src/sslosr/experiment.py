"""Experiment configs, split construction from configs, and multi-trial runs.

Configs are YAML (JSON also parses) with ``schema_version: 1``; unknown
keys are rejected. Relative data paths resolve against ``$SSLOSR_DATA_ROOT``
when set, otherwise against the config file's directory. Trial ``i`` uses
seed ``base_seed + i`` for data generation, the split and training.
"""

from __future__ import annotations

import json
import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from sslosr.data import (
    Dataset,
    OpenSetSplit,
    Synth2DSpec,
    concat_datasets,
    gen_synth2d,
    load_dataset,
    load_split_manifest,
    make_ssl_split,
    save_split_manifest,
    split_from_manifest,
)
from sslosr.errors import ArgumentError
from sslosr.evaluation import EvalReport, evaluate, metrics_csv
from sslosr.images import emit_sample_grid, emit_score_map
from sslosr.training import TrainConfig, checkpoint, train

log = logging.getLogger(__name__)

DATA_ROOT_ENV = "SSLOSR_DATA_ROOT"
SCHEMA_VERSION = 1
TEST_SEED_OFFSET = 100_003


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class Synth2DSource(_Strict):
    kind: Literal["synth2d"]
    centers: list[tuple[float, float]]
    stddevs: float | list[float]
    train_per_cluster: int = Field(ge=1)
    test_per_cluster: int = Field(ge=0)
    novel_clusters: list[int] = []


class FileSet(_Strict):
    paths: list[str] = Field(min_length=1)
    format: Literal["cifar-binary", "idx", "raw-tensor"]
    label_bytes: int = 1


class FileSource(_Strict):
    kind: Literal["files"]
    name: str
    train: FileSet
    test: FileSet | None = None
    novel: FileSet | None = None


class SplitSection(_Strict):
    labels_per_category: int = Field(ge=1)
    holdout_categories: list[int] | None = None


class TrainSection(_Strict):
    model_kind: Literal["softmax", "arp", "fm-gan", "arp-gan"]
    epochs: int = 50
    batch_size: int = 64
    lr_classifier: float = 2e-4
    lr_generator: float = 2e-4
    lr_discriminator: float = 2e-4
    betas: tuple[float, float] = (0.5, 0.999)
    gamma: float = 0.1
    noise_dim: int = 8
    eval_every: int = 0
    steps_per_epoch: int | None = None
    entropy_weight: float = 1.0
    fm_per_pair: bool = False
    fold_labelled_into_real: bool = False
    fresh_noise_for_classifier: bool = True
    divergence_limit: float = 1e4
    hidden: int = 64
    embedding_dim: int | None = None
    conv_channels: tuple[int, ...] = (32, 64, 128, 128)
    dtype: Literal["float32", "float64"] = "float32"


class EmitSection(_Strict):
    sample_grid: bool = False
    grid_rows: int = 8
    grid_cols: int = 8
    score_map: bool = False
    map_resolution: int = 128
    map_bounds: tuple[float, float, float, float] = (-1.0, 1.0, -1.0, 1.0)


class ExperimentConfig(_Strict):
    schema_version: Literal[1]
    name: str
    dataset: Annotated[Union[Synth2DSource, FileSource], Field(discriminator="kind")]
    split: SplitSection
    train: TrainSection
    output_dir: str = "runs"
    emit: EmitSection = EmitSection()
    trials: int = Field(default=1, ge=1)
    base_seed: int = 0
    scorer: Literal["preal", "maxsoftmax"] = "preal"

    @model_validator(mode="after")
    def _novelty_source(self):
        ds = self.dataset
        if isinstance(ds, FileSource):
            if (ds.novel is None) == (self.split.holdout_categories is None):
                raise ValueError("give exactly one of dataset.novel / split.holdout_categories")
        elif self.split.holdout_categories is not None and ds.novel_clusters:
            raise ValueError("synth2d uses novel_clusters; holdout_categories must be unset")
        elif self.split.holdout_categories is None and not ds.novel_clusters:
            raise ValueError("synth2d needs novel_clusters or split.holdout_categories")
        return self

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(seed=seed, **self.train.model_dump())

    def trial_seeds(self) -> list[int]:
        return [self.base_seed + i for i in range(self.trials)]


def load_config(path: str | os.PathLike, base_dir: str | os.PathLike | None = None) -> ExperimentConfig:
    """Parse and validate a config; data paths are checked to exist."""
    path = Path(path)
    raw = yaml.safe_load(path.read_text())
    if not isinstance(raw, dict):
        raise ArgumentError(f"{path}: config must be a mapping")
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ArgumentError(f"{path}: invalid config\n{exc}") from exc
    check_paths(cfg, base_dir or path.parent)
    return cfg


def _resolve(p: str, base_dir) -> Path:
    p = Path(os.path.expandvars(p))
    if p.is_absolute():
        return p
    root = os.environ.get(DATA_ROOT_ENV)
    return Path(root) / p if root else Path(base_dir) / p


def check_paths(cfg: ExperimentConfig, base_dir) -> None:
    if not isinstance(cfg.dataset, FileSource):
        return
    for fs in (cfg.dataset.train, cfg.dataset.test, cfg.dataset.novel):
        for p in fs.paths if fs else ():
            if not _resolve(p, base_dir).exists():
                raise ArgumentError(f"data file {p} not found (resolved to {_resolve(p, base_dir)})")


@dataclass
class Sources:
    labelled: Dataset
    labelled_test: Dataset | None
    novel: Dataset | None


def _load_fileset(fs: FileSet, base_dir, name: str) -> Dataset:
    parts = [load_dataset(_resolve(p, base_dir), fs.format, label_bytes=fs.label_bytes) for p in fs.paths]
    return concat_datasets(parts, name=name)


def build_sources(dataset: Synth2DSource | FileSource, seed: int, base_dir=".") -> Sources:
    if isinstance(dataset, Synth2DSource):
        spec = Synth2DSpec(tuple(dataset.centers), dataset.stddevs, dataset.train_per_cluster, tuple(dataset.novel_clusters))
        labelled, _ = gen_synth2d(spec, seed)
        test_spec = Synth2DSpec(spec.cluster_centers, spec.cluster_stddevs, dataset.test_per_cluster, spec.novel_cluster_indices)
        labelled_test, novel = gen_synth2d(test_spec, seed + TEST_SEED_OFFSET)
        if not dataset.novel_clusters:
            novel = None
        return Sources(labelled, labelled_test if len(labelled_test) else None, novel)
    labelled = _load_fileset(dataset.train, base_dir, dataset.name)
    test = _load_fileset(dataset.test, base_dir, dataset.name + "-test") if dataset.test else None
    novel = _load_fileset(dataset.novel, base_dir, "novel") if dataset.novel else None
    return Sources(labelled, test, novel)


def build_split(cfg: ExperimentConfig, seed: int, base_dir=".") -> tuple[OpenSetSplit, Sources]:
    src = build_sources(cfg.dataset, seed, base_dir)
    split = make_ssl_split(
        src.labelled,
        src.novel if cfg.split.holdout_categories is None else None,
        cfg.split.labels_per_category,
        cfg.split.holdout_categories,
        seed,
        labelled_test=src.labelled_test,
    )
    return split, src


def manifest_sources(cfg: ExperimentConfig, seed: int, base_dir) -> dict:
    return {"dataset": cfg.dataset.model_dump(mode="json"), "data_seed": seed, "base_dir": str(Path(base_dir).resolve())}


def write_split_manifest(cfg: ExperimentConfig, seed: int, path, base_dir=".") -> OpenSetSplit:
    split, _ = build_split(cfg, seed, base_dir)
    save_split_manifest(split, path, manifest_sources(cfg, seed, base_dir))
    return split


def split_from_manifest_file(path) -> OpenSetSplit:
    """Rebuild a split from a manifest written by :func:`write_split_manifest`."""
    manifest = load_split_manifest(path)
    src_info = manifest.get("sources") or {}
    if "dataset" not in src_info:
        raise ArgumentError(f"{path}: manifest does not record its data sources")
    raw = src_info["dataset"]
    dataset = (Synth2DSource if raw.get("kind") == "synth2d" else FileSource).model_validate(raw)
    src = build_sources(dataset, int(src_info["data_seed"]), src_info.get("base_dir", "."))
    return split_from_manifest(manifest, src.labelled, src.labelled_test, src.novel)


# -- runs --------------------------------------------------------------------

@dataclass
class RunLedger:
    name: str
    seeds: list[int]
    rows: list[dict]
    failures: list[dict] = field(default_factory=list)

    def aggregate(self) -> dict[str, dict[str, float]]:
        """Mean and population std of each metric over successful trials."""
        out = {}
        for metric in ("accuracy", "auroc"):
            vals = [float(r[metric]) for r in self.rows if r.get(metric) not in ("", None)]
            if vals:
                out[metric] = {"mean": float(np.mean(vals)), "std": float(np.std(vals)), "n": len(vals)}
        return out

    def aggregate_row(self) -> dict:
        agg = self.aggregate()
        first = self.rows[0] if self.rows else {}
        return {
            "run_id": f"{self.name}/mean",
            "model_kind": first.get("model_kind", ""),
            "dataset": first.get("dataset", ""),
            "labels_per_category": first.get("labels_per_category", ""),
            "seed": "",
            "accuracy": repr(agg["accuracy"]["mean"]) if "accuracy" in agg else "",
            "auroc": repr(agg["auroc"]["mean"]) if "auroc" in agg else "",
        }

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seeds": self.seeds,
            "rows": self.rows,
            "failures": self.failures,
            "aggregate": self.aggregate(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def to_csv(self) -> str:
        return metrics_csv(self.rows + ([self.aggregate_row()] if self.rows else []))

    def table_cell(self) -> str:
        from sslosr.evaluation import format_cell

        agg = self.aggregate()
        return format_cell(agg.get("accuracy", {}).get("mean"), agg.get("auroc", {}).get("mean"))

    @classmethod
    def from_dict(cls, d: dict) -> "RunLedger":
        return cls(d["name"], d["seeds"], d["rows"], d.get("failures", []))


def run_trial(cfg: ExperimentConfig, trial: int, out_dir: Path, base_dir=".") -> EvalReport:
    seed = cfg.base_seed + trial
    tdir = out_dir / f"trial_{trial:02d}"
    tdir.mkdir(parents=True, exist_ok=True)
    split, _ = build_split(cfg, seed, base_dir)
    save_split_manifest(split, tdir / "split.json", manifest_sources(cfg, seed, base_dir))
    state = train(split, cfg.train_config(seed))
    dataset_name = cfg.dataset.name if isinstance(cfg.dataset, FileSource) else "synth2d"
    report = evaluate(
        state,
        split,
        cfg.scorer,
        metadata={
            "run_id": f"{cfg.name}/trial_{trial:02d}",
            "dataset": dataset_name,
            "labels_per_category": cfg.split.labels_per_category,
            "seed": seed,
        },
    )
    report.save(tdir / "report.json")
    checkpoint(state, tdir / "checkpoint")
    if cfg.emit.sample_grid and len(state.arch.input_shape) == 3 and "generator" in state.nets:
        emit_sample_grid(state, cfg.emit.grid_rows, cfg.emit.grid_cols, tdir / "samples.ppm", seed=seed)
    if cfg.emit.score_map and state.arch.input_shape == (2,):
        emit_score_map(state, cfg.emit.map_bounds, cfg.emit.map_resolution, tdir / "score_map.ppm", cfg.scorer)
    return report


def _trial_job(args):
    cfg, trial, out_dir, base_dir = args
    try:
        return trial, run_trial(cfg, trial, Path(out_dir), base_dir).metrics_row(), None
    except Exception as exc:  # one failed trial must not stop the others
        log.error("trial %d failed: %s", trial, exc)
        return trial, None, {"trial": trial, "seed": cfg.base_seed + trial, "error": f"{type(exc).__name__}: {exc}",
                             "traceback": traceback.format_exc(limit=5)}


def run_experiment(cfg: ExperimentConfig, out_dir=None, base_dir=".", jobs: int = 1) -> RunLedger:
    """Run every trial, persist per-trial artifacts and the ledger, return the ledger."""
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.model_dump_json(indent=1) + "\n")
    jobs_args = [(cfg, t, str(out), str(base_dir)) for t in range(cfg.trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_trial_job, jobs_args))
    else:
        results = [_trial_job(a) for a in jobs_args]
    results.sort(key=lambda r: r[0])
    ledger = RunLedger(
        cfg.name,
        cfg.trial_seeds(),
        [row for _, row, _ in results if row is not None],
        [fail for _, _, fail in results if fail is not None],
    )
    (out / "ledger.json").write_text(ledger.to_json() + "\n")
    (out / "metrics.csv").write_text(ledger.to_csv())
    return ledger
