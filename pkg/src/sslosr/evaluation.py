"""Closed-set accuracy, novelty scores and AUROC.

Known (labelled-category) samples are the positive class. Every AUROC is
computed twice, as the pairwise Mann-Whitney win rate and as the
trapezoidal area under the threshold-sweep ROC, and the two must agree.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import torch

from sslosr import losses
from sslosr.errors import ArgumentError, NumericError

AUROC_AGREEMENT = 1e-9
METRICS_FIELDS = ("run_id", "model_kind", "dataset", "labels_per_category", "seed", "accuracy", "auroc")

Scorer = Literal["preal", "maxsoftmax"]


@dataclass(frozen=True)
class Scores:
    """Per-sample known-scores (higher = more likely a labelled category) and
    1-based predicted labels."""

    known_score: np.ndarray
    predicted_label: np.ndarray


def _np(x) -> np.ndarray:
    if torch.is_tensor(x):
        return x.detach().cpu().double().numpy()
    return np.asarray(x, dtype=np.float64)


def score_fm(logits) -> Scores:
    """p(real) = sum exp(l) / (sum exp(l) + 1); label from argmax logits."""
    logits = losses._t(logits)
    if logits.ndim == 1:
        logits = logits[None]
    return Scores(_np(losses.p_fm_real(logits)), _np(logits).argmax(-1) + 1)


def score_maxsoftmax(logits) -> Scores:
    logits = losses._t(logits)
    if logits.ndim == 1:
        logits = logits[None]
    return Scores(_np(losses.softmax_k(logits).max(-1).values), _np(logits).argmax(-1) + 1)


def score_arp(embedding, rp: losses.ReciprocalParams, mode: Literal["maxprob", "maxdist"] = "maxprob") -> Scores:
    """Label = farthest reciprocal point; score = max p_arp (or the raw max distance)."""
    emb = losses._t(embedding)
    if emb.ndim == 1:
        emb = emb[None]
    points = rp.points.to(emb.dtype) if torch.is_tensor(rp.points) else losses._t(rp.points)
    d, _ = losses.arp_logits(emb, points)
    d = _np(d)
    label = d.argmax(-1) + 1
    if mode == "maxdist":
        return Scores(d.max(-1), label)
    return Scores(_np(torch.softmax(torch.as_tensor(d), -1).max(-1).values), label)


# -- AUROC -------------------------------------------------------------------

def _check_pools(known, novel) -> tuple[np.ndarray, np.ndarray]:
    known = np.asarray(known, dtype=np.float64).reshape(-1)
    novel = np.asarray(novel, dtype=np.float64).reshape(-1)
    if len(known) == 0 or len(novel) == 0:
        raise ArgumentError("AUROC needs non-empty known and novel score pools")
    if not (np.isfinite(known).all() and np.isfinite(novel).all()):
        raise NumericError("scores must be finite")
    return known, novel


def auroc(known_scores, novel_scores) -> float:
    """Fraction of (known, novel) pairs ranked correctly, ties counting one half."""
    known, novel = _check_pools(known_scores, novel_scores)
    novel = np.sort(novel)
    below = np.searchsorted(novel, known, side="left")
    ties = np.searchsorted(novel, known, side="right") - below
    wins = 2 * below.sum() + ties.sum()  # doubled to stay in integers
    return float(wins) / (2.0 * len(known) * len(novel))


def roc_curve(known_scores, novel_scores) -> np.ndarray:
    """ROC points ``[(fpr, tpr), ...]`` from (0,0) to (1,1), one per distinct threshold."""
    known, novel = _check_pools(known_scores, novel_scores)
    thresholds = np.unique(np.concatenate([known, novel]))[::-1]
    known_sorted, novel_sorted = np.sort(known), np.sort(novel)
    tp = len(known) - np.searchsorted(known_sorted, thresholds, side="left")
    fp = len(novel) - np.searchsorted(novel_sorted, thresholds, side="left")
    fpr = np.concatenate([[0.0], fp / len(novel)])
    tpr = np.concatenate([[0.0], tp / len(known)])
    return np.stack([fpr, tpr], axis=1)


def trapezoid_area(points: np.ndarray) -> float:
    x, y = points[:, 0], points[:, 1]
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))


# -- reports -----------------------------------------------------------------

@dataclass
class EvalReport:
    closed_accuracy: float | None
    auroc: float | None
    roc_points: list[tuple[float, float]]
    counts: dict[str, int]
    metadata: dict = field(default_factory=dict)
    auroc_trapezoid: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["roc_points"] = [list(p) for p in self.roc_points]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        d["roc_points"] = [tuple(p) for p in d["roc_points"]]
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "EvalReport":
        return cls.from_json(Path(path).read_text())

    def table_cell(self) -> str:
        return format_cell(self.closed_accuracy, self.auroc)

    def metrics_row(self) -> dict:
        m = self.metadata
        return {
            "run_id": m.get("run_id", ""),
            "model_kind": m.get("model_kind", ""),
            "dataset": m.get("dataset", ""),
            "labels_per_category": m.get("labels_per_category", ""),
            "seed": m.get("seed", ""),
            "accuracy": "" if self.closed_accuracy is None else repr(self.closed_accuracy),
            "auroc": "" if self.auroc is None else repr(self.auroc),
        }


def format_cell(accuracy: float | None, auroc_value: float | None) -> str:
    """``accuracy*100 | auroc*100`` with two decimals, ``- - -`` when absent."""
    a = "- - -" if accuracy is None else f"{100 * accuracy:.2f}"
    b = "- - -" if auroc_value is None else f"{100 * auroc_value:.2f}"
    return f"{a} | {b}"


def metrics_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()) if rows else list(METRICS_FIELDS), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


@torch.no_grad()
def score_samples(state, x: np.ndarray, scorer: Scorer = "preal", batch_size: int = 1024) -> Scores:
    """Score raw samples with the classifier of a trained state.

    ``scorer="preal"`` is the default per model kind: p(real) for FM-GANs,
    max softmax for the softmax baseline and max p_arp for reciprocal-point
    models. ``"maxsoftmax"`` switches FM-GANs to max softmax and
    reciprocal-point models to the raw max distance.
    """
    clf = state.nets["classifier"]
    was_training = clf.training
    clf.eval()
    dtype = next(clf.parameters()).dtype
    parts: list[Scores] = []
    for start in range(0, max(len(x), 1), batch_size):
        xb = torch.tensor(np.asarray(x[start : start + batch_size]), dtype=dtype)
        if len(xb) == 0:
            break
        out = clf(xb)
        kind = state.config.model_kind
        if kind in ("arp", "arp-gan"):
            parts.append(score_arp(out.embedding, state.nets["points"], "maxdist" if scorer == "maxsoftmax" else "maxprob"))
        elif kind == "fm-gan" and scorer == "preal":
            parts.append(score_fm(out.logits))
        else:
            parts.append(score_maxsoftmax(out.logits))
    clf.train(was_training)
    if not parts:
        return Scores(np.zeros(0), np.zeros(0, dtype=np.int64))
    return Scores(
        np.concatenate([p.known_score for p in parts]),
        np.concatenate([p.predicted_label for p in parts]).astype(np.int64),
    )


def evaluate(state, split, scorer: Scorer = "preal", metadata: dict | None = None) -> EvalReport:
    """Closed-set accuracy over known test samples and AUROC known-vs-novel."""
    test = split.test
    scores = score_samples(state, test.samples, scorer)
    known = test.labels <= split.K
    novel = ~known
    accuracy = None
    if known.any():
        accuracy = float(np.mean(scores.predicted_label[known] == test.labels[known]))
    auc = auc_trap = None
    points: list[tuple[float, float]] = []
    if known.any() and novel.any():
        auc = auroc(scores.known_score[known], scores.known_score[novel])
        roc = roc_curve(scores.known_score[known], scores.known_score[novel])
        auc_trap = trapezoid_area(roc)
        if abs(auc - auc_trap) > AUROC_AGREEMENT:
            raise NumericError(f"AUROC routes disagree: pairwise {auc} vs trapezoid {auc_trap}")
        points = [(float(a), float(b)) for a, b in roc]
    meta = {"model_kind": state.config.model_kind, "scorer": scorer, "seed": state.config.seed}
    meta.update(metadata or {})
    return EvalReport(
        closed_accuracy=accuracy,
        auroc=auc,
        roc_points=points,
        counts={
            "test_known": int(known.sum()),
            "test_novel": int(novel.sum()),
        },
        metadata=meta,
        auroc_trapezoid=auc_trap,
    )
