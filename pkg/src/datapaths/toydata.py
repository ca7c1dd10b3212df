"""Procedural fixture data and seed models.

The texture dataset replaces any external image corpus: each class is a
distinct oriented pattern (horizontal / vertical / diagonal stripes and a
checker) with per-image frequency, phase, amplitude, and noise jitter, all
drawn from a seeded generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as M

TEXTURE_CLASS_COUNT = 4


@dataclass(frozen=True)
class LabeledDataset:
    images: np.ndarray  # (N, C, H, W)
    labels: np.ndarray  # (N,)

    def __len__(self) -> int:
        return len(self.labels)


def _texture(rng: np.random.Generator, label: int, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    freq = rng.uniform(1.5, 2.5) * 2 * np.pi
    phase = rng.uniform(0, 2 * np.pi)
    if label == 0:
        pattern = np.sin(freq * yy + phase)
    elif label == 1:
        pattern = np.sin(freq * xx + phase)
    elif label == 2:
        pattern = np.sin(freq * (xx + yy) / np.sqrt(2.0) + phase)
    else:
        pattern = np.sin(freq * xx + phase) * np.sin(freq * yy + rng.uniform(0, 2 * np.pi))
    amp = rng.uniform(0.3, 0.45)
    img = 0.5 + amp * pattern + rng.normal(0.0, 0.04, (size, size))
    return np.clip(img, 0.0, 1.0)[None, :, :]


def texture_dataset(n: int, seed: int, size: int = 16, classes: int = TEXTURE_CLASS_COUNT) -> LabeledDataset:
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % classes
    rng.shuffle(labels)
    images = np.stack([_texture(rng, int(lbl), size) for lbl in labels])
    return LabeledDataset(images=images, labels=labels.astype(np.int64))


def blob_dataset(n: int, seed: int, size: int = 6) -> LabeledDataset:
    """Two linearly separable classes: constant images around distinct means."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    rng.shuffle(labels)
    means = (0.3, 0.7)
    images = np.stack(
        [np.clip(rng.normal(means[int(l)], 0.05, (1, size, size)), 0, 1) for l in labels]
    )
    return LabeledDataset(images=images, labels=labels.astype(np.int64))


def _he_conv(rng, out_ch, in_ch, k, scale=1.0):
    std = scale * np.sqrt(2.0 / (in_ch * k * k))
    return M.conv2d(rng.normal(0.0, std, (out_ch, in_ch, k, k)), np.zeros(out_ch), padding=k // 2)


def toy_model_init(seed: int, size: int = 16, channels: int = 8, classes: int = TEXTURE_CLASS_COUNT) -> M.ModelSpec:
    """Untrained 10-conv residual classifier for the texture task.

    Ten gated layers keep the per-layer difference series long enough for
    diverging-merging detection with the default window of 8; the skips make
    the depth trainable with plain gradient descent.
    """
    rng = np.random.default_rng(seed)
    layers = [_he_conv(rng, channels, 1, 3), M.relu()]

    def block(skip_to: int):
        layers.append(_he_conv(rng, channels, channels, 3))
        layers.append(M.relu())
        # Damped init keeps each block near the identity at the start, which
        # plain gradient descent needs at this depth; exact zeros would leave
        # the closing relu permanently dark.
        layers.append(_he_conv(rng, channels, channels, 3, scale=0.1))
        layers.append(M.relu())
        layers.append(M.add_skip(skip_to))

    block(1)  # layers 2-6, skips the stem output
    layers.append(M.maxpool(2))  # 7
    block(7)  # 8-12
    layers.append(M.maxpool(2))  # 13
    block(13)  # 14-18
    block(18)  # 19-23
    layers.append(_he_conv(rng, channels, channels, 3))  # 24
    layers.append(M.relu())  # 25
    layers.append(M.avgpool_global())  # 26
    std = np.sqrt(2.0 / channels)
    layers.append(M.fullyconnected(rng.normal(0.0, std, (classes, channels)), np.zeros(classes)))
    groups = (
        ("stem", 0, 7),
        ("mid", 8, 13),
        ("deep", 14, 23),
        ("head", 24, 27),
    )
    return M.build_model((1, size, size), classes, layers, groups)


def blob_model_init(seed: int, size: int = 6) -> M.ModelSpec:
    rng = np.random.default_rng(seed)
    layers = [
        _he_conv(rng, 2, 1, 3),
        M.relu(),
        M.avgpool_global(),
        M.fullyconnected(rng.normal(0.0, 1.0, (2, 2)), np.zeros(2)),
    ]
    return M.build_model((1, size, size), 2, layers)
