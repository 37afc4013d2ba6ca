"""Generated-sample grids and 2D score maps as binary PPM (P6) images.

PPM needs no imaging library; convert for viewing with e.g.
``convert samples.ppm samples.png`` or open it directly in most viewers.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import torch

from sslosr.errors import ArgumentError, FormatError

# label 1, 2, ... colours for score maps (cycled beyond ten labels)
PALETTE = np.array(
    [
        [230, 25, 75], [60, 180, 75], [0, 130, 200], [245, 130, 48], [145, 30, 180],
        [70, 240, 240], [240, 50, 230], [210, 245, 60], [250, 190, 212], [0, 128, 128],
    ],
    dtype=np.float64,
)


def write_ppm(path: str | os.PathLike, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ArgumentError("PPM images must be uint8 arrays of shape [H, W, 3]")
    h, w, _ = rgb.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes())


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos)
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P6":
        raise FormatError(f"{path} is not a binary PPM")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise FormatError("only 8-bit PPM images are supported")
    pixels = np.frombuffer(data, dtype=np.uint8, offset=pos + 1)
    if len(pixels) != w * h * 3:
        raise FormatError("PPM payload truncated", offset=len(data))
    return pixels.reshape(h, w, 3)


def to_uint8(x: np.ndarray) -> np.ndarray:
    """Map values in [-1, 1] to [0, 255]."""
    return np.clip(np.rint((np.asarray(x, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


@torch.no_grad()
def sample_grid(state, rows: int, cols: int, seed: int = 0) -> np.ndarray:
    """``rows x cols`` tiles of generator output as an ``[H, W, 3]`` uint8 image."""
    if rows < 1 or cols < 1:
        raise ArgumentError("rows and cols must be >= 1")
    gen = state.nets.get("generator")
    if gen is None:
        raise ArgumentError(f"model kind {state.config.model_kind!r} has no generator")
    shape = state.arch.input_shape
    if len(shape) != 3:
        raise ArgumentError("sample grids need an image-shaped generator ([C, H, W])")
    was_training = gen.training
    gen.eval()
    rng = torch.Generator().manual_seed(seed)
    z = torch.randn(rows * cols, state.arch.noise_dim, generator=rng, dtype=state.arch.torch_dtype)
    x = gen(z).double().numpy()
    gen.train(was_training)
    c, h, w = shape
    if c == 1:
        x = np.repeat(x, 3, axis=1)
    elif c != 3:
        x = x[:, :3] if c > 3 else np.concatenate([x, np.repeat(x[:, -1:], 3 - c, axis=1)], axis=1)
    tiles = x.reshape(rows, cols, 3, h, w).transpose(0, 3, 1, 4, 2).reshape(rows * h, cols * w, 3)
    return to_uint8(tiles)


def emit_sample_grid(state, rows: int, cols: int, path: str | os.PathLike, seed: int = 0) -> np.ndarray:
    img = sample_grid(state, rows, cols, seed)
    write_ppm(path, img)
    return img


def score_map(state, bounds: tuple[float, float, float, float], resolution: int, scorer: str = "preal"):
    """Evaluate a 2D-input classifier on a ``resolution x resolution`` grid.

    ``bounds`` is ``(x_min, x_max, y_min, y_max)``; row 0 of the result is
    ``y_max``. Returns ``(rgb, known_score, predicted_label)`` where hue
    encodes the label and brightness the known-score.
    """
    from sslosr.evaluation import score_samples

    if state.arch.input_shape != (2,):
        raise ArgumentError("score maps need a classifier with 2D inputs")
    if resolution < 1:
        raise ArgumentError("resolution must be >= 1")
    x0, x1, y0, y1 = bounds
    xs = np.linspace(x0, x1, resolution)
    ys = np.linspace(y1, y0, resolution)
    gx, gy = np.meshgrid(xs, ys)
    points = np.stack([gx.ravel(), gy.ravel()], axis=1)
    scores = score_samples(state, points, scorer)
    known = scores.known_score.reshape(resolution, resolution)
    labels = scores.predicted_label.reshape(resolution, resolution)
    colour = PALETTE[(labels - 1) % len(PALETTE)]
    rgb = np.clip(np.rint(colour * known[..., None]), 0, 255).astype(np.uint8)
    return rgb, known, labels


def emit_score_map(state, bounds, resolution: int, path: str | os.PathLike, scorer: str = "preal"):
    rgb, known, labels = score_map(state, bounds, resolution, scorer)
    write_ppm(path, rgb)
    return rgb, known, labels
