"""Training loops for the softmax/ARP baselines, FM-GANs and ARP-GANs.

A training step is a fixed sequence of *player updates*. Each player owns a
set of parameters and an Adam optimiser; its objective may read other
players' networks but gradients are only taken w.r.t. its own parameters,
so a step never changes anything another player owns.

Mini-batches are a pure function of ``(seed, stream, global step)`` so a
restored checkpoint continues exactly where the original run would have.
"""

from __future__ import annotations

import copy
import itertools
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Callable, Literal

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from sslosr import losses
from sslosr.data.split import OpenSetSplit, Pool, batch_iter
from sslosr.errors import ArgumentError, IntegrityError, NumericError
from sslosr.nets import ArchConfig, ArrayBundle, init_params, load_bundle, save_bundle

ModelKind = Literal["softmax", "arp", "fm-gan", "arp-gan"]
MODEL_KINDS = ("softmax", "arp", "fm-gan", "arp-gan")

# mini-batch stream ids
_LAB, _UNLAB, _REAL = 1, 2, 3


@dataclass(frozen=True)
class TrainConfig:
    model_kind: ModelKind
    epochs: int = 50
    batch_size: int = 64
    lr_classifier: float = 2e-4
    lr_generator: float = 2e-4
    lr_discriminator: float = 2e-4
    betas: tuple[float, float] = (0.5, 0.999)
    seed: int = 0
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
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        if self.model_kind not in MODEL_KINDS:
            raise ArgumentError(f"model_kind must be one of {MODEL_KINDS}")
        if self.epochs < 0 or self.batch_size < 1 or self.noise_dim < 1:
            raise ArgumentError("epochs >= 0, batch_size >= 1 and noise_dim >= 1 required")
        if min(self.lr_classifier, self.lr_generator, self.lr_discriminator) <= 0:
            raise ArgumentError("learning rates must be positive")
        if self.gamma < 0 or self.entropy_weight < 0:
            raise ArgumentError("gamma and entropy_weight must be non-negative")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ArgumentError("steps_per_epoch must be >= 1")

    def arch(self, input_shape, num_classes: int) -> ArchConfig:
        return ArchConfig(
            input_shape=tuple(input_shape),
            num_classes=num_classes,
            embedding_dim=self.embedding_dim,
            noise_dim=self.noise_dim,
            hidden=self.hidden,
            conv_channels=self.conv_channels,
            dtype=self.dtype,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class Player:
    name: str
    params: list[nn.Parameter]
    optimizer: torch.optim.Optimizer
    objective: Callable[["StepBatch"], losses.LossValue]


@dataclass
class StepBatch:
    x_lab: torch.Tensor
    y_lab: np.ndarray
    x_unlab: torch.Tensor | None = None
    x_real: torch.Tensor | None = None
    z_d: torch.Tensor | None = None
    z_g: torch.Tensor | None = None
    z_c: torch.Tensor | None = None


@dataclass
class TrainState:
    config: TrainConfig
    arch: ArchConfig
    nets: dict[str, nn.Module]
    optimizers: dict[str, torch.optim.Optimizer]
    noise: torch.Generator
    step: int = 0
    history: list[dict[str, float]] = field(default_factory=list)

    @property
    def K(self) -> int:
        return self.arch.num_classes

    def players(self) -> list[Player]:
        return _PLAYERS[self.config.model_kind](self)


class TrainingDiverged(NumericError):
    def __init__(self, message: str, last_good: TrainState | None):
        super().__init__(message)
        self.last_good = last_good


# -- construction ------------------------------------------------------------

def _adam(params, lr: float, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=lr, betas=cfg.betas)


def init_state(cfg: TrainConfig, input_shape, K: int) -> TrainState:
    """Fresh networks and optimisers for ``cfg.model_kind``; seeds derive from ``cfg.seed``."""
    arch = cfg.arch(input_shape, K)
    s = cfg.seed * 10
    nets: dict[str, nn.Module] = {}
    opts: dict[str, torch.optim.Optimizer] = {}
    reciprocal = cfg.model_kind in ("arp", "arp-gan")
    nets["classifier"] = init_params("classifier-arp" if reciprocal else "classifier-fm", s + 1, arch)
    clf_params = list(nets["classifier"].parameters())
    if reciprocal:
        nets["points"] = init_params("reciprocal-points", s + 2, arch, gamma=cfg.gamma)
        clf_params += list(nets["points"].parameters())
    opts["classifier"] = _adam(clf_params, cfg.lr_classifier, cfg)
    if cfg.model_kind in ("fm-gan", "arp-gan"):
        nets["generator"] = init_params("generator", s + 3, arch)
        opts["generator"] = _adam(nets["generator"].parameters(), cfg.lr_generator, cfg)
    if cfg.model_kind == "arp-gan":
        nets["discriminator"] = init_params("discriminator", s + 4, arch)
        opts["discriminator"] = _adam(nets["discriminator"].parameters(), cfg.lr_discriminator, cfg)
    noise = torch.Generator().manual_seed(cfg.seed * 10 + 5)
    return TrainState(cfg, arch, nets, opts, noise)


# -- players -----------------------------------------------------------------

def cross_entropy_loss(logits: torch.Tensor, labels) -> losses.LossValue:
    idx = losses._label_index(labels, logits.shape[-1], "labelled")
    return losses.LossValue("softmax_ce", {"cross_entropy": F.cross_entropy(logits, idx)})


def _softmax_players(st: TrainState) -> list[Player]:
    clf = st.nets["classifier"]
    return [
        Player("classifier", list(clf.parameters()), st.optimizers["classifier"],
               lambda b: cross_entropy_loss(clf(b.x_lab).logits, b.y_lab)),
    ]


def _arp_players(st: TrainState) -> list[Player]:
    clf, rp = st.nets["classifier"], st.nets["points"]
    return [
        Player("classifier", list(clf.parameters()) + list(rp.parameters()), st.optimizers["classifier"],
               lambda b: losses.arp_classifier_loss(clf(b.x_lab).embedding, b.y_lab, rp)),
    ]


def _fm_gan_players(st: TrainState) -> list[Player]:
    cfg = st.config
    clf, gen = st.nets["classifier"], st.nets["generator"]

    def dc_objective(b: StepBatch) -> losses.LossValue:
        with torch.no_grad():
            fake = gen(b.z_d)
        real = b.x_unlab
        if cfg.fold_labelled_into_real:
            real = torch.cat([real, b.x_lab])
        return losses.fm_dc_loss(clf(fake).logits, clf(real).logits, clf(b.x_lab).logits, b.y_lab)

    def gen_objective(b: StepBatch) -> losses.LossValue:
        real = b.x_unlab if len(b.x_unlab) else b.x_lab
        with torch.no_grad():
            f_real = clf(real).features
        f_fake = clf(gen(b.z_g)).features
        return losses.fm_gen_loss(f_real, f_fake, per_pair=cfg.fm_per_pair)

    return [
        Player("classifier", list(clf.parameters()), st.optimizers["classifier"], dc_objective),
        Player("generator", list(gen.parameters()), st.optimizers["generator"], gen_objective),
    ]


def _arp_gan_players(st: TrainState) -> list[Player]:
    cfg = st.config
    clf, gen, disc, rp = (st.nets[k] for k in ("classifier", "generator", "discriminator", "points"))

    def d_objective(b: StepBatch) -> losses.LossValue:
        with torch.no_grad():
            fake = gen(b.z_d)
        return losses.arp_gan_d_loss(disc(b.x_real), disc(fake))

    def g_objective(b: StepBatch) -> losses.LossValue:
        fake = gen(b.z_g)
        return losses.arp_gan_g_loss(disc(fake), clf(fake).embedding, rp.points.detach(), cfg.entropy_weight)

    def c_objective(b: StepBatch) -> losses.LossValue:
        with torch.no_grad():
            fake = gen(b.z_c if cfg.fresh_noise_for_classifier else b.z_g)
        return losses.arp_gan_c_loss(clf(fake).embedding, clf(b.x_lab).embedding, b.y_lab, rp, cfg.entropy_weight)

    return [
        Player("discriminator", list(disc.parameters()), st.optimizers["discriminator"], d_objective),
        Player("generator", list(gen.parameters()), st.optimizers["generator"], g_objective),
        Player("classifier", list(clf.parameters()) + list(rp.parameters()), st.optimizers["classifier"], c_objective),
    ]


_PLAYERS = {
    "softmax": _softmax_players,
    "arp": _arp_players,
    "fm-gan": _fm_gan_players,
    "arp-gan": _arp_gan_players,
}


def apply_update(st: TrainState, player: Player, batch: StepBatch) -> losses.LossValue:
    """One optimiser step of ``player`` on ``batch``; returns the pre-step loss."""
    loss = player.objective(batch)
    value = float(loss)
    if not math.isfinite(value) or value > st.config.divergence_limit:
        raise NumericError(f"{loss.name} diverged at step {st.step}: {value}")
    grads = losses.grad(loss, player.params)
    player.optimizer.zero_grad(set_to_none=True)
    for p, g in zip(player.params, grads):
        p.grad = g
    player.optimizer.step()
    if "points" in st.nets and player.name == "classifier":
        st.nets["points"].project_()
    return loss


# -- batching ----------------------------------------------------------------

def _nth_batch(n: int, batch_size: int, seed: int, stream: int, step: int) -> np.ndarray:
    per_pass = math.ceil(n / batch_size)
    epoch, within = divmod(step, per_pass)
    order = batch_iter(np.arange(n), batch_size, seed * 7919 + stream, epoch)
    return next(itertools.islice(order, within, None))


def _steps_per_epoch(cfg: TrainConfig, driver_size: int) -> int:
    if cfg.steps_per_epoch is not None:
        return cfg.steps_per_epoch
    return max(1, math.ceil(driver_size / cfg.batch_size))


def _tensor(st: TrainState, x: np.ndarray) -> torch.Tensor:
    return torch.tensor(np.asarray(x), dtype=st.arch.torch_dtype)


def _noise(st: TrainState, n: int) -> torch.Tensor:
    return torch.randn(n, st.arch.noise_dim, generator=st.noise, dtype=st.arch.torch_dtype)


class _Pools:
    """The training pools a model kind is allowed to read."""

    def __init__(self, split: OpenSetSplit, kind: str):
        self.lab: Pool = split.lab_train
        self.unlab: np.ndarray | None = None
        self.real: np.ndarray | None = None
        if kind in ("fm-gan", "arp-gan"):
            self.unlab = split.unlab_train.samples
        if kind == "arp-gan":
            self.real = np.concatenate([self.lab.samples, self.unlab])

    @property
    def driver_size(self) -> int:
        return len(self.unlab) if self.unlab is not None and len(self.unlab) else len(self.lab)


def make_batch(st: TrainState, pools: _Pools) -> StepBatch:
    cfg, s, bs = st.config, st.step, st.config.batch_size
    take = _nth_batch(len(pools.lab), bs, cfg.seed, _LAB, s)
    batch = StepBatch(_tensor(st, pools.lab.samples[take]), pools.lab.labels[take])
    if pools.unlab is not None:
        if len(pools.unlab):
            batch.x_unlab = _tensor(st, pools.unlab[_nth_batch(len(pools.unlab), bs, cfg.seed, _UNLAB, s)])
        else:
            batch.x_unlab = batch.x_lab[:0]
    if pools.real is not None:
        batch.x_real = _tensor(st, pools.real[_nth_batch(len(pools.real), bs, cfg.seed, _REAL, s)])
    if cfg.model_kind in ("fm-gan", "arp-gan"):
        batch.z_d = _noise(st, bs)
        batch.z_g = _noise(st, bs)
        if cfg.model_kind == "arp-gan":
            batch.z_c = _noise(st, bs)
    return batch


def train_step(st: TrainState, pools: _Pools) -> dict[str, float]:
    batch = make_batch(st, pools)
    record: dict[str, float] = {"step": st.step}
    for player in st.players():
        loss = apply_update(st, player, batch)
        record[loss.name] = float(loss)
        for term, v in loss.items().items():
            record[f"{loss.name}/{term}"] = v
    st.step += 1
    st.history.append(record)
    return record


def train(
    split: OpenSetSplit,
    cfg: TrainConfig,
    state: TrainState | None = None,
    on_epoch_end: Callable[[TrainState, int], None] | None = None,
) -> TrainState:
    """Train ``cfg.model_kind`` on ``split`` for ``cfg.epochs`` epochs.

    Supervised baselines read only ``split.lab_train``; no trainer reads
    ``split.test``. Passing ``state`` resumes from its step counter.
    """
    lab = split.lab_train
    if len(lab) == 0:
        raise ArgumentError("labelled training pool is empty")
    if state is None:
        state = init_state(cfg, lab.samples.shape[1:], split.K)
    elif state.K != split.K:
        raise IntegrityError(f"state has K={state.K} but split has K={split.K}")
    pools = _Pools(split, cfg.model_kind)
    per_epoch = _steps_per_epoch(cfg, pools.driver_size)
    total = cfg.epochs * per_epoch
    for net in state.nets.values():
        net.train()
    last_good = None
    while state.step < total:
        if state.step % per_epoch == 0:
            last_good = snapshot(state)
        try:
            train_step(state, pools)
        except NumericError as exc:
            raise TrainingDiverged(str(exc), last_good) from exc
        if state.step % per_epoch == 0:
            epoch = state.step // per_epoch
            if on_epoch_end is not None and cfg.eval_every and epoch % cfg.eval_every == 0:
                on_epoch_end(state, epoch)
    for net in state.nets.values():
        net.eval()
    return state


def train_softmax_baseline(split: OpenSetSplit, cfg: TrainConfig, **kw) -> TrainState:
    return train(split, _with_kind(cfg, "softmax"), **kw)


def train_arp_baseline(split: OpenSetSplit, cfg: TrainConfig, **kw) -> TrainState:
    return train(split, _with_kind(cfg, "arp"), **kw)


def train_fm_gan(split: OpenSetSplit, cfg: TrainConfig, **kw) -> TrainState:
    return train(split, _with_kind(cfg, "fm-gan"), **kw)


def train_arp_gan(split: OpenSetSplit, cfg: TrainConfig, **kw) -> TrainState:
    return train(split, _with_kind(cfg, "arp-gan"), **kw)


def _with_kind(cfg: TrainConfig, kind: str) -> TrainConfig:
    if cfg.model_kind == kind:
        return cfg
    return TrainConfig.from_dict({**cfg.to_dict(), "model_kind": kind})


# -- checkpoints -------------------------------------------------------------

def state_arrays(st: TrainState) -> dict[str, np.ndarray]:
    arrays = {}
    for name, net in st.nets.items():
        for k, v in net.state_dict().items():
            arrays[f"net/{name}/{k}"] = v.detach().cpu().numpy()
    for name, opt in st.optimizers.items():
        for idx, slot in opt.state_dict()["state"].items():
            for k, v in slot.items():
                arrays[f"opt/{name}/{idx}/{k}"] = torch.as_tensor(v).detach().cpu().numpy()
    arrays["rng/noise"] = st.noise.get_state().numpy()
    return arrays


def snapshot(st: TrainState) -> TrainState:
    """Deep copy of ``st`` sharing no tensors with it."""
    return copy.deepcopy(st)


def checkpoint(st: TrainState, path: str | os.PathLike) -> None:
    meta = {
        "config": st.config.to_dict(),
        "arch": st.arch.to_dict(),
        "step": st.step,
        "history": st.history,
        "param_groups": {
            name: [{k: v for k, v in g.items() if k != "params"} for g in opt.state_dict()["param_groups"]]
            for name, opt in st.optimizers.items()
        },
    }
    save_bundle(path, ArrayBundle(state_arrays(st), json.loads(json.dumps(meta))))


def restore(path: str | os.PathLike, expected_arch: ArchConfig | None = None) -> TrainState:
    bundle = load_bundle(path)
    meta = bundle.meta
    try:
        cfg = TrainConfig.from_dict(meta["config"])
        arch = ArchConfig.from_dict(meta["arch"])
    except (KeyError, TypeError) as exc:
        raise IntegrityError(f"checkpoint metadata incomplete: {exc}") from exc
    if expected_arch is not None and expected_arch != arch:
        raise IntegrityError(f"checkpoint architecture {arch} does not match expected {expected_arch}")
    st = init_state(cfg, arch.input_shape, arch.num_classes)
    if st.arch != arch:
        raise IntegrityError("checkpoint architecture inconsistent with its training config")
    arrays = bundle.arrays
    try:
        for name, net in st.nets.items():
            prefix = f"net/{name}/"
            sd = {k[len(prefix):]: torch.from_numpy(v.copy()) for k, v in arrays.items() if k.startswith(prefix)}
            net.load_state_dict(sd, strict=True)
        for name, opt in st.optimizers.items():
            prefix = f"opt/{name}/"
            state: dict[int, dict] = {}
            for k, v in arrays.items():
                if k.startswith(prefix):
                    idx, slot = k[len(prefix):].split("/", 1)
                    state.setdefault(int(idx), {})[slot] = torch.from_numpy(v.copy())
            sd = opt.state_dict()
            groups = meta["param_groups"][name]
            for g, saved in zip(sd["param_groups"], groups):
                g.update({k: tuple(v) if isinstance(v, list) else v for k, v in saved.items()})
            sd["state"] = state
            opt.load_state_dict(sd)
        st.noise.set_state(torch.from_numpy(arrays["rng/noise"].copy()))
    except (RuntimeError, KeyError, ValueError) as exc:
        raise IntegrityError(f"checkpoint does not fit its architecture: {exc}") from exc
    st.step = int(meta["step"])
    st.history = list(meta.get("history", []))
    for net in st.nets.values():
        net.eval()
    return st
