"""Mini-batch gradient descent training for fixture models.

The analysis core treats weights as frozen; everything that mutates weights
lives here.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, TrainingError, ValidationError
from .model import ModelSpec, build_model, LayerSpec
from .network import weight_gradients, forward
from .toydata import LabeledDataset


def _apply_update(model: ModelSpec, grads: dict[int, tuple[np.ndarray, np.ndarray]], lr: float) -> ModelSpec:
    layers = []
    for i, layer in enumerate(model.layers):
        if i in grads:
            dw, db = grads[i]
            layers.append(
                LayerSpec(
                    kind=layer.kind,
                    weights=layer.weights - lr * dw,
                    bias=layer.bias - lr * db,
                    stride=layer.stride,
                    padding=layer.padding,
                )
            )
        else:
            layers.append(layer)
    return build_model(model.input_shape, model.class_count, layers, model.layer_groups)


def train_toy(
    model_init: ModelSpec,
    dataset: LabeledDataset,
    epochs: int,
    learning_rate: float,
    seed: int,
    batch_size: int = 16,
) -> ModelSpec:
    """Train by shuffled mini-batch gradient descent on cross-entropy.

    Deterministic given the seed; raises TrainingError naming the epoch if
    the loss goes non-finite.
    """
    if dataset.images.shape[1:] != model_init.input_shape:
        raise ValidationError(
            f"dataset images {dataset.images.shape[1:]} != model input {model_init.input_shape}"
        )
    model = model_init
    rng = np.random.default_rng(seed)
    n = len(dataset)
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            acc: dict[int, tuple[np.ndarray, np.ndarray]] = {}
            total = 0.0
            for j in batch:
                try:
                    loss, grads = weight_gradients(model, dataset.images[j], int(dataset.labels[j]))
                except NumericError as exc:
                    raise TrainingError(str(exc), epoch) from exc
                total += loss
                for li, (dw, db) in grads.items():
                    if li in acc:
                        acc[li] = (acc[li][0] + dw, acc[li][1] + db)
                    else:
                        acc[li] = (dw, db)
            if not np.isfinite(total):
                raise TrainingError("loss became non-finite", epoch)
            scale = 1.0 / len(batch)
            acc = {li: (dw * scale, db * scale) for li, (dw, db) in acc.items()}
            if learning_rate != 0.0:
                model = _apply_update(model, acc, learning_rate)
    return model


def accuracy(model: ModelSpec, dataset: LabeledDataset) -> float:
    hits = sum(
        forward(model, dataset.images[i]).predicted_label == int(dataset.labels[i])
        for i in range(len(dataset))
    )
    return hits / len(dataset)
