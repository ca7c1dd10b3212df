"""Contribution of earlier feature maps to one target feature map.

Re-runs the gate optimization with the objective switched from output
preservation to preserving the target map's activation (optionally only a
brushed area of it). Only gates in layers strictly before the target move;
everything at or after the target stays at 1. A converged gate value is the
map's contribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import network as NW
from .errors import DimensionError, ExtractionError, NumericError, ValidationError
from .extract import ExtractionParams
from .model import ModelSpec, full_gates


@dataclass(frozen=True)
class NeuronMask:
    feature_map_id: int
    selected: np.ndarray  # boolean grid over the map's spatial shape


@dataclass(frozen=True)
class ContributionResult:
    target_fm: int
    feature_maps: tuple[int, ...]  # gated maps before the target layer, ascending
    layers: tuple[int, ...]  # layer index per entry of feature_maps
    values: np.ndarray  # mean converged gate per map, across examples
    vectors: np.ndarray  # (m, n_prev) converged per-example gates
    losses: np.ndarray  # (m,) converged preservation + sparsity objective


def _predecessors(model: ModelSpec, target_fm: int):
    if not 0 <= target_fm < model.gate_count:
        raise ValidationError(f"unknown feature map {target_fm}", "target_fm")
    t_layer = model.fm_layer(target_fm)
    prev = [fm for fm in range(model.gate_count) if model.fm_layer(fm) < t_layer]
    if not prev:
        raise ValidationError("target feature map has no gated predecessors", "target_fm")
    return prev


def _coupling_grad(vectors: np.ndarray, i: int, gamma: float) -> np.ndarray:
    g = np.zeros(vectors.shape[1])
    for j in range(len(vectors)):
        if j == i:
            continue
        diff = vectors[i] - vectors[j]
        norm = np.linalg.norm(diff)
        if norm > 0:
            g += gamma * diff / norm
    return g


def _solve(model: ModelSpec, examples, target_fm: int, mask, params: ExtractionParams) -> ContributionResult:
    prev = _predecessors(model, target_fm)
    examples = [np.asarray(x, dtype=np.float64) for x in examples]
    if not examples:
        raise ValidationError("examples must be non-empty", "examples")
    m = len(examples)
    refs = [NW.target_activation(model, x, full_gates(model), target_fm) for x in examples]
    specs = [
        NW.LossSpec("activation_preservation", reference=refs[i], target_fm=target_fm, mask=mask)
        for i in range(m)
    ]
    rng = np.random.default_rng(params.seed)
    z = np.ones((m, len(prev)))
    full = full_gates(model)
    for it in range(params.iterations):
        noise = rng.normal(0.0, params.noise_scale, len(prev)) if params.noise_scale > 0 else 0.0
        grads = np.empty_like(z)
        # all gradients read the same snapshot of z, then update together, so
        # identical examples follow identical trajectories
        for i in range(m):
            full[prev] = z[i]
            try:
                g = NW.gate_gradients(model, examples[i], full, specs[i])[prev]
            except NumericError as exc:
                raise ExtractionError(f"example {i}: {exc}", iteration=it) from exc
            grads[i] = g + params.l1_weight + _coupling_grad(z, i, params.coupling_weight) + noise
        z = np.clip(z - params.learning_rate * grads, 0.0, 1.0)
    full = full_gates(model)
    losses = np.empty(m)
    for i in range(m):
        full[prev] = z[i]
        losses[i] = NW.loss_value(model, examples[i], full, specs[i]) + params.l1_weight * z[i].sum()
    return ContributionResult(
        target_fm=target_fm,
        feature_maps=tuple(prev),
        layers=tuple(model.fm_layer(fm) for fm in prev),
        values=z.mean(axis=0),
        vectors=z,
        losses=losses,
    )


def contribution_whole(model: ModelSpec, examples, target_fm: int, params: ExtractionParams) -> ContributionResult:
    """Contributions that preserve the target map's full activation."""
    return _solve(model, examples, target_fm, None, params)


def contribution_area(model: ModelSpec, examples, target_fm: int, mask: NeuronMask,
                      params: ExtractionParams) -> ContributionResult:
    """Contributions that preserve only the brushed area of the target map."""
    if mask.feature_map_id != target_fm:
        raise ValidationError("mask belongs to a different feature map", "mask.feature_map_id")
    selected = np.asarray(mask.selected, dtype=bool)
    if selected.shape != model.fm_shape(target_fm):
        raise DimensionError(
            f"mask shape {selected.shape} does not match map shape {model.fm_shape(target_fm)}"
        )
    if not selected.any():
        raise ValidationError("mask selects no neurons", "mask.selected")
    return _solve(model, examples, target_fm, selected.astype(np.float64), params)


def rank_contributions(result: ContributionResult, k: int, layer_filter: int | None = None):
    """Top-k (feature_map_id, value) pairs, ties broken by ascending id."""
    if k < 1:
        raise ValidationError("k must be >= 1", "k")
    entries = [
        (fm, float(v))
        for fm, layer, v in zip(result.feature_maps, result.layers, result.values)
        if layer_filter is None or layer == layer_filter
    ]
    entries.sort(key=lambda t: (-t[1], t[0]))
    return entries[:k]
