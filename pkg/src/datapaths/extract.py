"""Datapath extraction: relaxed subset selection over feature-map gates.

A datapath is a gate vector z in [0,1]^n chosen so the gated network keeps
the ungated output distribution while using as few feature maps as possible.
The discrete subset problem is relaxed to projected gradient descent on

    (p(x) - p(x;z))^2 + l1_weight * sum(z)

optionally coupled to previously extracted vectors through a non-squared L2
penalty, which is what chains extractions across related examples.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import network as NW
from .errors import ExtractionError, NumericError, ValidationError
from .model import ModelSpec


@dataclass(frozen=True)
class ExtractionParams:
    l1_weight: float = 0.01
    coupling_weight: float = 0.0
    learning_rate: float = 0.05
    iterations: int = 500
    seed: int = 0
    binarize_tau: float = 0.5
    noise_scale: float = 0.0  # stddev of seeded gradient jitter; 0 = deterministic path

    def __post_init__(self):
        if self.l1_weight < 0:
            raise ValidationError("l1_weight must be >= 0", "l1_weight")
        if self.coupling_weight < 0:
            raise ValidationError("coupling_weight must be >= 0", "coupling_weight")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be > 0", "learning_rate")
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1", "iterations")
        if not 0 < self.binarize_tau < 1:
            raise ValidationError("binarize_tau must lie in (0, 1)", "binarize_tau")
        if self.noise_scale < 0:
            raise ValidationError("noise_scale must be >= 0", "noise_scale")


@dataclass(frozen=True)
class Datapath:
    gates: np.ndarray
    model_ref: str
    example_ref: str
    converged_loss: float
    label_preserved: bool


def extraction_loss(model: ModelSpec, x, gates, l1_weight: float) -> float:
    """Preservation-plus-sparsity objective for an explicit gate vector."""
    reference = NW.forward(model, x).probabilities
    spec = NW.LossSpec("probability_preservation", reference=reference, l1_weight=l1_weight)
    return NW.loss_value(model, x, gates, spec)


def _descend(model: ModelSpec, x, params: ExtractionParams, priors) -> np.ndarray:
    reference = NW.forward(model, x).probabilities
    spec = NW.LossSpec(
        "probability_preservation",
        reference=reference,
        l1_weight=params.l1_weight,
        coupling_weight=params.coupling_weight if priors else 0.0,
        coupling_refs=tuple(np.asarray(p, dtype=np.float64) for p in priors),
    )
    rng = np.random.default_rng(params.seed)
    z = np.ones(model.gate_count)
    for it in range(params.iterations):
        try:
            grad = NW.gate_gradients(model, x, z, spec)
        except NumericError as exc:
            raise ExtractionError(str(exc), iteration=it) from exc
        if params.noise_scale > 0:
            grad = grad + rng.normal(0.0, params.noise_scale, grad.shape)
        z = np.clip(z - params.learning_rate * grad, 0.0, 1.0)
    return z


def extract_datapath(
    model: ModelSpec,
    x,
    params: ExtractionParams,
    priors=(),
    model_ref: str = "",
    example_ref: str = "",
) -> Datapath:
    """Extract one datapath; ``priors`` couples it to earlier gate vectors."""
    z = _descend(model, x, params, priors)
    plain = NW.forward(model, x)
    gated = NW.forward(model, x, z)
    return Datapath(
        gates=z,
        model_ref=model_ref,
        example_ref=example_ref,
        converged_loss=extraction_loss(model, x, z, params.l1_weight),
        label_preserved=gated.predicted_label == plain.predicted_label,
    )


def extract_constrained(
    model: ModelSpec,
    examples,
    params: ExtractionParams,
    model_ref: str = "",
    example_refs=None,
) -> list[Datapath]:
    """Chain extraction: each example is coupled to every earlier result.

    The caller's ordering matters; the first example anchors the chain. Each
    position uses seed + index so a coupling_weight of zero reproduces
    independent runs exactly.
    """
    examples = list(examples)
    if not examples:
        raise ValidationError("examples must be non-empty", "examples")
    if example_refs is None:
        example_refs = [""] * len(examples)
    paths: list[Datapath] = []
    for i, x in enumerate(examples):
        step = replace(params, seed=params.seed + i)
        try:
            paths.append(
                extract_datapath(
                    model,
                    x,
                    step,
                    priors=tuple(p.gates for p in paths),
                    model_ref=model_ref,
                    example_ref=example_refs[i],
                )
            )
        except ExtractionError as exc:
            raise ExtractionError(f"chain position {i}: {exc}", iteration=exc.iteration) from exc
    return paths


def binarize(dp: Datapath, tau: float) -> set[int]:
    """Feature-map ids whose gate exceeds ``tau``."""
    if not 0 < tau < 1:
        raise ValidationError("tau must lie in (0, 1)", "tau")
    return {int(k) for k in np.flatnonzero(dp.gates > tau)}
