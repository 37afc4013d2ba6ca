"""Classifier, generator, discriminator and reciprocal-point parameter sets.

Each network family is an ``nn.Module`` whose named parameters are the
``ParamSet``. Two default architecture families exist: small fully
connected nets for flat (2D-domain) inputs and ~4-block convolutional nets
for ``[C, H, W]`` images.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from sslosr.data.formats import parse_raw_tensor, raw_tensor_bytes
from sslosr.errors import ArgumentError, IntegrityError

PROB_EPS = 1e-7
DEFAULT_GAMMA = 0.1

ParamKind = Literal["classifier-fm", "classifier-arp", "generator", "discriminator", "reciprocal-points"]


@dataclass(frozen=True)
class ArchConfig:
    input_shape: tuple[int, ...]
    num_classes: int
    embedding_dim: int | None = None
    noise_dim: int = 8
    hidden: int = 64
    conv_channels: tuple[int, ...] = (32, 64, 128, 128)
    generator_batchnorm: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        if self.embedding_dim is None:
            object.__setattr__(self, "embedding_dim", 8 if self.is_flat else 128)
        if self.num_classes < 2:
            raise ArgumentError("num_classes must be >= 2")
        if self.noise_dim < 1 or self.hidden < 1 or self.embedding_dim < 1:
            raise ArgumentError("noise_dim, hidden and embedding_dim must be positive")
        if len(self.input_shape) not in (1, 3) or min(self.input_shape) < 1:
            raise ArgumentError(f"input_shape {self.input_shape} must be [D] or [C,H,W]")
        if self.dtype not in ("float32", "float64"):
            raise ArgumentError(f"unsupported dtype {self.dtype}")

    @property
    def is_flat(self) -> bool:
        return len(self.input_shape) == 1

    @property
    def torch_dtype(self) -> torch.dtype:
        return getattr(torch, self.dtype)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(**d)


@dataclass
class ClassifierReadout:
    """Batched classifier outputs.

    FM/softmax mode fills ``logits`` and ``features`` (the penultimate
    activations); ARP mode fills ``embedding``.
    """

    logits: torch.Tensor | None = None
    features: torch.Tensor | None = None
    embedding: torch.Tensor | None = None


def _conv_body(in_ch: int, channels: tuple[int, ...]) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i, out_ch in enumerate(channels):
        layers += [nn.Conv2d(in_ch, out_ch, 3, stride=1 if i == 0 else 2, padding=1), nn.LeakyReLU(0.2)]
        in_ch = out_ch
    layers += [nn.AdaptiveAvgPool2d(1), nn.Flatten()]
    return nn.Sequential(*layers)


class Classifier(nn.Module):
    def __init__(self, arch: ArchConfig, mode: Literal["fm", "arp"]):
        super().__init__()
        self.arch = arch
        self.mode = mode
        if arch.is_flat:
            h = arch.hidden
            self.body = nn.Sequential(
                nn.Linear(arch.input_shape[0], h), nn.LeakyReLU(0.2), nn.Linear(h, h), nn.LeakyReLU(0.2)
            )
            width = h
        else:
            self.body = _conv_body(arch.input_shape[0], arch.conv_channels)
            width = arch.conv_channels[-1]
        out = arch.num_classes if mode == "fm" else arch.embedding_dim
        self.head = nn.Linear(width, out)

    def forward(self, x: torch.Tensor) -> ClassifierReadout:
        features = self.body(x)
        out = self.head(features)
        if self.mode == "fm":
            return ClassifierReadout(logits=out, features=features)
        return ClassifierReadout(embedding=out)


class Generator(nn.Module):
    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.arch = arch
        shape = arch.input_shape
        if arch.is_flat:
            h = arch.hidden
            norm = nn.BatchNorm1d if arch.generator_batchnorm else (lambda n: nn.Identity())
            self.net = nn.Sequential(
                nn.Linear(arch.noise_dim, h), norm(h), nn.ReLU(),
                nn.Linear(h, h), norm(h), nn.ReLU(),
                nn.Linear(h, shape[0]),
            )
        else:
            c, hgt, wid = shape
            self.base = (math.ceil(hgt / 4), math.ceil(wid / 4))
            ch = arch.conv_channels[-1]
            norm = nn.BatchNorm2d if arch.generator_batchnorm else (lambda n: nn.Identity())
            self.fc = nn.Linear(arch.noise_dim, ch * self.base[0] * self.base[1])
            self.net = nn.Sequential(
                norm(ch), nn.ReLU(),
                nn.Upsample(scale_factor=2), nn.Conv2d(ch, ch // 2, 3, padding=1), norm(ch // 2), nn.ReLU(),
                nn.Upsample(scale_factor=2), nn.Conv2d(ch // 2, ch // 4, 3, padding=1), norm(ch // 4), nn.ReLU(),
                nn.Conv2d(ch // 4, c, 3, padding=1),
            )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if self.arch.is_flat:
            return torch.tanh(self.net(z))
        h = self.fc(z).view(len(z), -1, *self.base)
        out = self.net(h)
        if out.shape[2:] != self.arch.input_shape[1:]:
            out = F.interpolate(out, size=self.arch.input_shape[1:], mode="nearest")
        return torch.tanh(out)


class Discriminator(nn.Module):
    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.arch = arch
        if arch.is_flat:
            self.net = nn.Sequential(nn.Linear(arch.input_shape[0], arch.hidden), nn.LeakyReLU(0.2), nn.Linear(arch.hidden, 1))
        else:
            channels = arch.conv_channels[:3]
            self.net = nn.Sequential(_conv_body(arch.input_shape[0], channels), nn.Linear(channels[-1], 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.net(x)).squeeze(-1).clamp(PROB_EPS, 1 - PROB_EPS)


class ReciprocalPoints(nn.Module):
    """K learnable reciprocal points of width m with a per-category range R."""

    def __init__(self, num_classes: int, dim: int, gamma: float = DEFAULT_GAMMA):
        super().__init__()
        self.points = nn.Parameter(torch.randn(num_classes, dim))
        self.radius = nn.Parameter(torch.zeros(num_classes))
        self.gamma = float(gamma)

    @property
    def K(self) -> int:
        return self.points.shape[0]

    @property
    def m(self) -> int:
        return self.points.shape[1]

    @torch.no_grad()
    def project_(self) -> None:
        """Keep every range non-negative after an optimizer step."""
        self.radius.clamp_(min=0.0)


def init_params(kind: ParamKind, seed: int, arch: ArchConfig, gamma: float = DEFAULT_GAMMA) -> nn.Module:
    """Build a freshly initialised network (or reciprocal-point set) from ``seed``.

    The global torch RNG is left untouched.
    """
    builders = {
        "classifier-fm": lambda: Classifier(arch, "fm"),
        "classifier-arp": lambda: Classifier(arch, "arp"),
        "generator": lambda: Generator(arch),
        "discriminator": lambda: Discriminator(arch),
        "reciprocal-points": lambda: ReciprocalPoints(arch.num_classes, arch.embedding_dim, gamma),
    }
    if kind not in builders:
        raise ArgumentError(f"unknown parameter kind {kind!r}")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        module = builders[kind]()
    return module.to(arch.torch_dtype)


def _as_input(module: nn.Module, x, shape: tuple[int, ...], what: str) -> torch.Tensor:
    dtype = next(module.parameters()).dtype
    x = torch.as_tensor(x, dtype=dtype) if not torch.is_tensor(x) else x.to(dtype)
    if tuple(x.shape[1:]) != tuple(shape) or x.ndim != len(shape) + 1:
        raise ArgumentError(f"{what}: expected batch of shape [B, {', '.join(map(str, shape))}], got {list(x.shape)}")
    return x


def classifier_forward(model: Classifier, x) -> ClassifierReadout:
    x = _as_input(model, x, model.arch.input_shape, "classifier input")
    return model(x)


def generator_forward(model: Generator, z) -> torch.Tensor:
    z = _as_input(model, z, (model.arch.noise_dim,), "generator noise")
    if len(z) == 0:
        return z.new_zeros((0, *model.arch.input_shape))
    return model(z)


def discriminator_forward(model: Discriminator, x) -> torch.Tensor:
    x = _as_input(model, x, model.arch.input_shape, "discriminator input")
    return model(x)


def sample_noise(n: int, noise_dim: int, generator: torch.Generator, dtype=torch.float32) -> torch.Tensor:
    return torch.randn(n, noise_dim, generator=generator, dtype=dtype)


def param_arrays(module: nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


# -- named-array container -------------------------------------------------

@dataclass
class ArrayBundle:
    arrays: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)


def save_bundle(path: str | os.PathLike, bundle: ArrayBundle) -> None:
    """Write one raw-tensor file per array plus ``manifest.json`` with checksums."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = {}
    for i, (name, array) in enumerate(sorted(bundle.arrays.items())):
        fname = f"a{i:04d}.sslt"
        payload = raw_tensor_bytes(np.asarray(array))
        (root / fname).write_bytes(payload)
        entries[name] = {"file": fname, "sha256": hashlib.sha256(payload).hexdigest()}
    manifest = {"format": "sslosr-bundle", "version": 1, "arrays": entries, "meta": bundle.meta}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def load_bundle(path: str | os.PathLike) -> ArrayBundle:
    root = Path(path)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"unreadable checkpoint manifest in {root}: {exc}") from exc
    if manifest.get("format") != "sslosr-bundle":
        raise IntegrityError(f"{root} is not a checkpoint bundle")
    arrays = {}
    for name, entry in manifest["arrays"].items():
        try:
            payload = (root / entry["file"]).read_bytes()
        except OSError as exc:
            raise IntegrityError(f"missing array file for {name}: {exc}") from exc
        if hashlib.sha256(payload).hexdigest() != entry["sha256"]:
            raise IntegrityError(f"checksum mismatch for array {name}")
        arrays[name] = parse_raw_tensor(payload)
    return ArrayBundle(arrays, manifest.get("meta", {}))
