"""Objectives for FM-GANs, reciprocal-point classifiers and ARP-GANs.

Every function is pure: tensors in, a :class:`LossValue` (or probability
tensor) out, with gradients flowing through whichever inputs require them.
Category labels are 1-based throughout (``1..K``; ``K+1`` is the
fake/unknown category).

Expectations are batch means. An empty batch makes its term exactly 0 and
records a ``"<term>-vacuous"`` flag.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from sslosr.errors import ArgumentError, NumericError

LOG_EPS = 1e-7


@dataclass
class LossValue:
    """Scalar objective with its additive breakdown.

    ``value`` is always the left-to-right sum of ``terms``.
    """

    name: str
    terms: dict[str, torch.Tensor]
    flags: set[str] = field(default_factory=set)

    @property
    def value(self) -> torch.Tensor:
        total = None
        for t in self.terms.values():
            total = t if total is None else total + t
        return total

    def __float__(self) -> float:
        return float(self.value.detach())

    def items(self) -> dict[str, float]:
        return {k: float(v.detach()) for k, v in self.terms.items()}


class ReciprocalParams(Protocol):
    points: torch.Tensor
    radius: torch.Tensor
    gamma: float


@dataclass
class RPTensors:
    """Plain holder satisfying :class:`ReciprocalParams` (handy for grad checks)."""

    points: torch.Tensor
    radius: torch.Tensor
    gamma: float = 0.1


def _t(x) -> torch.Tensor:
    if torch.is_tensor(x):
        return x
    return torch.as_tensor(np.ascontiguousarray(x, dtype=np.float64))


def _check_finite(x: torch.Tensor, what: str) -> None:
    if not torch.isfinite(x).all():
        raise NumericError(f"{what} contains non-finite values")


def _mean(x: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    if x.numel() == 0:
        return like.new_zeros(())
    return x.mean()


def _label_index(labels, K: int, what: str) -> torch.Tensor:
    labels = torch.as_tensor(np.array(labels) if not torch.is_tensor(labels) else labels).long().reshape(-1)
    if labels.numel() and (labels.min() < 1 or labels.max() > K):
        raise ArgumentError(f"{what} labels must lie in 1..{K}")
    return labels - 1


# -- probabilities -----------------------------------------------------------

def softmax_k(logits) -> torch.Tensor:
    logits = _t(logits)
    _check_finite(logits, "logits")
    return torch.softmax(logits, dim=-1)


def _logsumexp_with_zero(logits: torch.Tensor) -> torch.Tensor:
    """log(sum_i exp(logits_i) + 1): the normaliser once a zero K+1 logit is appended."""
    zero = logits.new_zeros((*logits.shape[:-1], 1))
    return torch.logsumexp(torch.cat([logits, zero], dim=-1), dim=-1)


def p_fm_fake(logits) -> torch.Tensor:
    """Probability of the fixed-zero fake category: 1 / (sum exp(logits) + 1)."""
    logits = _t(logits)
    _check_finite(logits, "logits")
    return torch.exp(-_logsumexp_with_zero(logits))


def p_fm_real(logits) -> torch.Tensor:
    logits = _t(logits)
    _check_finite(logits, "logits")
    return torch.exp(torch.logsumexp(logits, dim=-1) - _logsumexp_with_zero(logits))


# -- FM-GAN ------------------------------------------------------------------

def kplus1_dc_loss(logits_kplus1_fake, logits_kplus1_lab, labels) -> LossValue:
    """Explicit (K+1)-node loss: fakes pushed to node K+1, labelled samples to their class."""
    fake, lab = _t(logits_kplus1_fake), _t(logits_kplus1_lab)
    K = (fake if fake.numel() else lab).shape[-1] - 1
    idx = _label_index(labels, K, "labelled")
    fake_nll = -F.log_softmax(fake, dim=-1)[:, K] if len(fake) else fake.new_zeros(0)
    lab_nll = -F.log_softmax(lab, dim=-1).gather(1, idx[:, None]).squeeze(1) if len(lab) else lab.new_zeros(0)
    loss = LossValue("kplus1_dc", {"fake": _mean(fake_nll, fake), "supervised": _mean(lab_nll, lab)})
    _flag_empty(loss, fake=fake, supervised=lab)
    return loss


def fm_dc_loss(logits_fake, logits_unlab, logits_lab, labels) -> LossValue:
    """Discriminator/classifier loss of an FM-GAN with the K+1 logit fixed at zero.

    Terms: ``fake`` (generated samples judged fake), ``real`` (unlabelled
    samples judged real) and ``supervised`` (cross-entropy on labelled data).
    """
    fake, unlab, lab = _t(logits_fake), _t(logits_unlab), _t(logits_lab)
    K = next(x.shape[-1] for x in (lab, unlab, fake) if x.ndim == 2)
    idx = _label_index(labels, K, "labelled")
    # -log p_fake = log(sum exp + 1); -log(1 - p_fake) = log(sum exp + 1) - log(sum exp)
    fake_nll = _logsumexp_with_zero(fake) if len(fake) else fake.new_zeros(0)
    real_nll = (_logsumexp_with_zero(unlab) - torch.logsumexp(unlab, dim=-1)) if len(unlab) else unlab.new_zeros(0)
    sup_nll = -F.log_softmax(lab, dim=-1).gather(1, idx[:, None]).squeeze(1) if len(lab) else lab.new_zeros(0)
    loss = LossValue(
        "fm_dc",
        {"fake": _mean(fake_nll, fake), "real": _mean(real_nll, unlab), "supervised": _mean(sup_nll, lab)},
    )
    _flag_empty(loss, fake=fake, real=unlab, supervised=lab)
    return loss


def fm_gen_loss(features_real, features_fake, per_pair: bool = False) -> LossValue:
    """Feature-matching generator loss.

    Default: squared L2 distance between the batch means of the penultimate
    features. ``per_pair`` instead averages ``||f_real_i - f_fake_j||^2`` over
    all pairs.
    """
    real, fake = _t(features_real), _t(features_fake)
    if len(real) == 0 or len(fake) == 0:
        raise ArgumentError("feature matching needs non-empty real and fake batches")
    if real.shape[1:] != fake.shape[1:]:
        raise ArgumentError(f"feature widths differ: {real.shape[1:]} vs {fake.shape[1:]}")
    if per_pair:
        diff = real[:, None, :] - fake[None, :, :]
        value = (diff**2).sum(-1).mean()
    else:
        value = ((real.mean(0) - fake.mean(0)) ** 2).sum()
    return LossValue("fm_gen", {"feature_match": value})


# -- reciprocal points -------------------------------------------------------

def arp_distance(embedding, point) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Return ``(d, d_e, d_d)`` with d_e = ||C - P||^2 / m, d_d = C . P, d = d_e - d_d.

    Broadcasts over leading dimensions.
    """
    e, p = _t(embedding), _t(point)
    if e.shape[-1] != p.shape[-1]:
        raise ArgumentError(f"embedding width {e.shape[-1]} != point width {p.shape[-1]}")
    m = e.shape[-1]
    d_e = ((e - p) ** 2).sum(-1) / m
    d_d = (e * p).sum(-1)
    return d_e - d_d, d_e, d_d


def arp_logits(embeddings, points) -> tuple[torch.Tensor, torch.Tensor]:
    """Distances of every embedding to every point: ``(d [..., K], d_e [..., K])``."""
    e, p = _t(embeddings), _t(points)
    d, d_e, _ = arp_distance(e.unsqueeze(-2), p)
    return d, d_e


def p_arp(embedding, points) -> torch.Tensor:
    """Class probabilities: softmax over the distances to the K reciprocal points."""
    points = _t(points)
    if points.ndim != 2 or points.shape[0] < 2:
        raise ArgumentError("p_arp needs K >= 2 reciprocal points")
    d, _ = arp_logits(embedding, points)
    return torch.softmax(d, dim=-1)


def arp_classifier_loss(embeddings, labels, rp: ReciprocalParams) -> LossValue:
    """Reciprocal-point cross-entropy plus the gamma-weighted range hinge."""
    emb = _t(embeddings)
    K = rp.points.shape[0]
    idx = _label_index(labels, K, "labelled")
    if len(emb) == 0:
        zero = rp.points.new_zeros(())
        return LossValue("arp_classifier", {"cross_entropy": zero, "hinge": zero}, {"supervised-vacuous"})
    d, d_e = arp_logits(emb, rp.points)
    ce = -F.log_softmax(d, dim=-1).gather(1, idx[:, None]).squeeze(1)
    d_e_own = d_e.gather(1, idx[:, None]).squeeze(1)
    # relu has zero gradient at the kink, so d_e == R is treated as inactive
    hinge = F.relu(d_e_own - rp.radius[idx])
    return LossValue("arp_classifier", {"cross_entropy": ce.mean(), "hinge": rp.gamma * hinge.mean()})


def entropy_I(embeddings_fake, points) -> torch.Tensor:
    """Mean Shannon entropy of p_arp over a batch (0 log 0 = 0)."""
    emb = _t(embeddings_fake)
    if len(emb) == 0:
        raise ArgumentError("entropy needs a non-empty batch")
    d, _ = arp_logits(emb, points)
    logp = F.log_softmax(d, dim=-1)
    return -(logp.exp() * logp).sum(-1).mean()


# -- ARP-GAN -----------------------------------------------------------------

def arp_gan_d_loss(d_real, d_fake) -> LossValue:
    """Original GAN discriminator loss; log arguments clamped at 1e-7."""
    real, fake = _t(d_real), _t(d_fake)
    loss = LossValue(
        "arp_gan_d",
        {
            "real": _mean(-torch.log(real.clamp(min=LOG_EPS)), real),
            "fake": _mean(-torch.log((1 - fake).clamp(min=LOG_EPS)), fake),
        },
    )
    _flag_empty(loss, real=real, fake=fake)
    return loss


def arp_gan_g_loss(d_fake, embeddings_fake, points, entropy_weight: float = 1.0) -> LossValue:
    """Fool the discriminator while maximising the reciprocal-point entropy."""
    fake = _t(d_fake)
    adv = _mean(-torch.log(fake.clamp(min=LOG_EPS)), fake)
    ent = -entropy_weight * entropy_I(embeddings_fake, points) if entropy_weight else adv.new_zeros(())
    return LossValue("arp_gan_g", {"adversarial": adv, "entropy": ent})


def arp_gan_c_loss(embeddings_fake, embeddings_lab, labels, rp: ReciprocalParams, entropy_weight: float = 1.0) -> LossValue:
    fake = _t(embeddings_fake)
    sup = arp_classifier_loss(embeddings_lab, labels, rp)
    if len(fake) and entropy_weight:
        ent = -entropy_weight * entropy_I(fake, rp.points)
    else:
        ent = rp.points.new_zeros(())
    loss = LossValue("arp_gan_c", {"entropy": ent, **sup.terms}, set(sup.flags))
    if len(fake) == 0:
        loss.flags.add("entropy-vacuous")
    return loss


def _flag_empty(loss: LossValue, **batches: torch.Tensor) -> None:
    for term, batch in batches.items():
        if len(batch) == 0:
            loss.flags.add(f"{term}-vacuous")


# -- gradients ---------------------------------------------------------------

def grad(loss: LossValue, wrt: Sequence[torch.Tensor], retain_graph: bool = False) -> list[torch.Tensor]:
    """Reverse-mode gradient of ``loss.value`` w.r.t. each tensor in ``wrt``.

    Unused inputs get zero gradients. A non-finite gradient raises
    :class:`NumericError` naming the offending term.
    """
    wrt = list(wrt)
    grads = torch.autograd.grad(loss.value, wrt, allow_unused=True, retain_graph=True)
    grads = [torch.zeros_like(w) if g is None else g for w, g in zip(wrt, grads)]
    if not all(torch.isfinite(g).all() for g in grads):
        for name, term in loss.terms.items():
            if not term.requires_grad:
                continue
            parts = torch.autograd.grad(term, wrt, allow_unused=True, retain_graph=True)
            if any(p is not None and not torch.isfinite(p).all() for p in parts):
                raise NumericError(f"non-finite gradient from term {name!r} of {loss.name}")
        raise NumericError(f"non-finite gradient in {loss.name}")
    if not retain_graph:
        # release the graph now that every term has been differentiated
        loss.terms = {k: v.detach() for k, v in loss.terms.items()}
    return grads
