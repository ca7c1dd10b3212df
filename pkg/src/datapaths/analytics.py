"""Datapath geometry and evaluation.

Per-layer distances between gate vectors, the diverging-merging diff series
and its detector, similarity ranking, top-K scoring, set relations for up to
three binarized datapaths, and activation statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnknownIdError, ValidationError
from .extract import Datapath
from .model import ModelSpec
from .network import ForwardResult


@dataclass(frozen=True)
class PatternReport:
    diff_series: np.ndarray
    n_l: int
    r: int
    detected: bool
    max_layer: int  # 1-based position of the series maximum (first if tied)


@dataclass(frozen=True)
class SetRelation:
    # each region: (ids of the member datapaths, feature maps exclusive to
    # exactly that membership)
    regions: tuple[tuple[frozenset, frozenset], ...]


def _check_pair(model: ModelSpec, a: Datapath, b: Datapath):
    if a.model_ref and b.model_ref and a.model_ref != b.model_ref:
        raise ValidationError("datapaths come from different models", "model_ref")
    for dp in (a, b):
        if dp.gates.shape != (model.gate_count,):
            raise ValidationError("gate vector does not match the model", "gates")


def layer_distance(model: ModelSpec, a: Datapath, b: Datapath, layer: int) -> float:
    """L2 distance between the two gate slices owned by one gated layer."""
    _check_pair(model, a, b)
    if layer not in model.gated_layers:
        raise ValidationError(f"layer {layer} owns no gates", "layer")
    sl = model.layer_slice(layer)
    return float(np.linalg.norm(a.gates[sl] - b.gates[sl]))


def diff_series(model: ModelSpec, adv: Datapath, src: Datapath, tar: Datapath) -> np.ndarray:
    """diff(i) per gated layer: distance-to-source minus distance-to-target."""
    return np.array([
        layer_distance(model, adv, src, layer) - layer_distance(model, adv, tar, layer)
        for layer in model.gated_layers
    ])


def river_distances(model: ModelSpec, src: Datapath, adv: Datapath, tar: Datapath):
    """Per-gated-layer distance series feeding the river layout.

    Returns (d1, d2, d3): source-to-target spread, adversarial-to-source, and
    adversarial-to-target.
    """
    d1, d2, d3 = [], [], []
    for layer in model.gated_layers:
        d1.append(layer_distance(model, src, tar, layer))
        d2.append(layer_distance(model, adv, src, layer))
        d3.append(layer_distance(model, adv, tar, layer))
    return d1, d2, d3


def detect_pattern(series: np.ndarray, r: int = 8) -> PatternReport:
    """Diverging-merging detection over the last ``r`` steps of the series.

    Counts strict increases; a tie never counts. Detection additionally needs
    the final value to strictly dominate every earlier layer, so flat series
    cannot detect.
    """
    series = np.asarray(series, dtype=np.float64)
    if r < 1:
        raise ValidationError("r must be >= 1", "r")
    if series.ndim != 1 or len(series) < r + 1:
        raise ValidationError(f"series must hold at least r+1 = {r + 1} layers", "series")
    tail = series[-(r + 1):]
    n_l = int(np.sum(tail[1:] > tail[:-1]))
    max_layer = int(np.argmax(series)) + 1
    detected = n_l == r and max_layer == len(series)
    return PatternReport(diff_series=series, n_l=n_l, r=r, detected=detected, max_layer=max_layer)


def datapath_similarity(a: Datapath, b: Datapath) -> float:
    """1 / L2 distance over full gate vectors; identical vectors sort first."""
    dis = float(np.linalg.norm(a.gates - b.gates))
    if dis == 0.0:
        return float("inf")
    return 1.0 / dis


def topk_score(cases, k: int) -> float:
    """Mean count of pattern-flagged targets within each case's top k.

    ``cases``: (adversarial id, ranked (target id, detected flag) pairs),
    already sorted by descending similarity.
    """
    if k < 1:
        raise ValidationError("k must be >= 1", "k")
    if not cases:
        raise ValidationError("cases must be non-empty", "cases")
    counts = []
    for adv_id, ranked in cases:
        if len(ranked) < k:
            raise ValidationError(f"case {adv_id!r} has fewer than {k} targets", "cases")
        counts.append(sum(1 for _, flag in ranked[:k] if flag))
    return float(np.mean(counts))


def set_relations(tagged_sets) -> SetRelation:
    """Partition up to three datapath feature-map sets into membership regions.

    Input: (datapath id, set of feature-map ids) pairs. Output regions are
    ordered by membership size descending, then by sorted member ids; empty
    regions are omitted.
    """
    tagged = [(dp_id, frozenset(fms)) for dp_id, fms in tagged_sets]
    if not 1 <= len(tagged) <= 3:
        raise ValidationError("set_relations supports 1 to 3 datapaths", "tagged_sets")
    if len({dp_id for dp_id, _ in tagged}) != len(tagged):
        raise ValidationError("datapath ids must be unique", "tagged_sets")
    regions = {}
    union = frozenset().union(*(fms for _, fms in tagged))
    for fm in union:
        sig = frozenset(dp_id for dp_id, fms in tagged if fm in fms)
        regions.setdefault(sig, set()).add(fm)
    ordered = sorted(regions.items(), key=lambda kv: (-len(kv[0]), tuple(sorted(map(str, kv[0])))))
    return SetRelation(regions=tuple((sig, frozenset(fms)) for sig, fms in ordered))


def activation_stats(result: ForwardResult, fm: int) -> float:
    """Maximum neuron activation of one feature map in a forward cache."""
    if fm not in result.activation_cache:
        raise UnknownIdError(f"feature map {fm} not in activation cache")
    return float(result.activation_cache[fm].max())


def activation_diff(stat_a: float, stat_b: float) -> float:
    return stat_a - stat_b
