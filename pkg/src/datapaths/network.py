"""Deterministic gated CNN inference and exact reverse-mode gradients.

The forward pass records a tape (per-layer outputs plus pre-gate tensors and
pool argmax routes); the backward pass replays it in reverse from an
arbitrary seed point. Gate gradients, input gradients, and weight gradients
all share the same tape machinery, so they agree with each other and with
finite differences by construction.

Gates scale a conv layer's channels at that layer's gate point (see
``model.gate_points``): after the immediately-following relu when there is
one, else right at the conv output. Scaling after the relu keeps the gate
gradient equal to the raw activation even when the gate sits at 0, so a
zeroed gate can still receive pressure to reopen.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DimensionError, NumericError, ValidationError
from .model import ModelSpec, check_gates, full_gates


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def cross_entropy(logits: np.ndarray, label: int) -> float:
    z = logits - logits.max()
    return float(np.log(np.exp(z).sum()) - z[label])


@dataclass(frozen=True)
class ForwardResult:
    logits: np.ndarray
    probabilities: np.ndarray
    activation_cache: dict[int, np.ndarray]  # fm id -> gated post-nonlinearity map

    @property
    def predicted_label(self) -> int:
        return int(np.argmax(self.logits))


@dataclass
class LossSpec:
    """Scalar loss over gates: a network term plus direct gate terms.

    kind:
      probability_preservation  -- squared L2 between ``reference`` probs and p(x;z)
      activation_preservation   -- squared L2 between ``reference`` map and the
                                   (optionally masked) activation of ``target_fm``
      cross_entropy             -- CE of ``target_label``
    Direct terms: ``l1_weight``  * sum(z) and, for each coupling reference,
    ``coupling_weight`` * ||ref - z||_2 (gradient defined as 0 at ref == z).
    """

    kind: str
    reference: np.ndarray | None = None
    target_label: int | None = None
    target_fm: int | None = None
    mask: np.ndarray | None = None
    l1_weight: float = 0.0
    coupling_weight: float = 0.0
    coupling_refs: tuple[np.ndarray, ...] = ()


@dataclass
class _Tape:
    x: np.ndarray
    gates: np.ndarray
    outputs: list[np.ndarray] = field(default_factory=list)
    pre_gate: dict[int, np.ndarray] = field(default_factory=dict)
    pool_idx: dict[int, np.ndarray] = field(default_factory=dict)
    last_layer: int = -1


def _check_input(model: ModelSpec, x) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.shape != model.input_shape:
        raise DimensionError(f"input shape {arr.shape} != model input {model.input_shape}")
    return arr


def _forward_tape(model: ModelSpec, x: np.ndarray, gates: np.ndarray, upto: int | None = None) -> _Tape:
    last = len(model.layers) - 1 if upto is None else upto
    tape = _Tape(x=x, gates=gates, last_layer=last)
    gated_at = {gp: l for l, gp in model.gate_points.items()}  # gate point -> conv layer
    cur = x
    for i in range(last + 1):
        layer = model.layers[i]
        if layer.kind == "conv2d":
            cur = kernels.conv2d_forward(cur, layer.weights, layer.bias, layer.stride, layer.padding)
        elif layer.kind == "relu":
            cur = np.maximum(cur, 0.0)
        elif layer.kind == "maxpool":
            cur, idx = kernels.maxpool_forward(cur, layer.window, layer.effective_pool_stride())
            tape.pool_idx[i] = idx
        elif layer.kind == "avgpool_global":
            cur = cur.mean(axis=(1, 2))
        elif layer.kind == "fullyconnected":
            cur = layer.weights @ cur.ravel() + layer.bias
        elif layer.kind == "add_skip":
            cur = cur + tape.outputs[layer.source]
        if i in gated_at:
            conv_layer = gated_at[i]
            tape.pre_gate[i] = cur
            scale = gates[model.layer_slice(conv_layer)]
            cur = cur * scale[:, None, None]
        tape.outputs.append(cur)
    return tape


def _backward(
    model: ModelSpec,
    tape: _Tape,
    seeds: dict[int, np.ndarray],
    want_input: bool = False,
    want_weights: bool = False,
):
    """Reverse-mode sweep from per-layer output seeds.

    Returns (gate_grads, input_grad, weight_grads) where weight_grads maps a
    layer index to (dw, db).
    """
    gated_at = {gp: l for l, gp in model.gate_points.items()}
    grads: list[np.ndarray | None] = [None] * (tape.last_layer + 1)
    for i, g in seeds.items():
        grads[i] = g.copy()
    gate_grads = np.zeros(model.gate_count)
    input_grad = None
    weight_grads: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    for i in range(tape.last_layer, -1, -1):
        g = grads[i]
        if g is None:
            continue
        layer = model.layers[i]
        if i in gated_at:
            conv_layer = gated_at[i]
            sl = model.layer_slice(conv_layer)
            pre = tape.pre_gate[i]
            gate_grads[sl] += (g * pre).sum(axis=(1, 2))
            g = g * tape.gates[sl][:, None, None]
        layer_in = tape.outputs[i - 1] if i > 0 else tape.x
        if layer.kind == "conv2d":
            if want_weights:
                o, _, kh, kw = layer.weights.shape
                dw, db = kernels.conv2d_backward_weights(g, layer_in, kh, kw, layer.stride, layer.padding)
                weight_grads[i] = (dw, db)
            gin = kernels.conv2d_backward_input(
                g, layer.weights, layer.stride, layer.padding, layer_in.shape[1], layer_in.shape[2]
            )
        elif layer.kind == "relu":
            gin = g * (layer_in > 0)
        elif layer.kind == "maxpool":
            gin = kernels.maxpool_backward(g, tape.pool_idx[i], layer_in.shape[1], layer_in.shape[2])
        elif layer.kind == "avgpool_global":
            _, h, w = layer_in.shape
            gin = np.broadcast_to(g[:, None, None] / (h * w), layer_in.shape).copy()
        elif layer.kind == "fullyconnected":
            if want_weights:
                weight_grads[i] = (np.outer(g, layer_in.ravel()), g.copy())
            gin = (layer.weights.T @ g).reshape(layer_in.shape)
        elif layer.kind == "add_skip":
            src = layer.source
            if grads[src] is None:
                grads[src] = g.copy()
            else:
                grads[src] = grads[src] + g
            gin = g
        else:  # pragma: no cover
            raise ValidationError(f"unknown layer kind {layer.kind!r}")
        if i == 0:
            if want_input:
                input_grad = gin
        elif grads[i - 1] is None:
            grads[i - 1] = gin
        else:
            grads[i - 1] = grads[i - 1] + gin
    return gate_grads, input_grad, weight_grads


def forward(model: ModelSpec, x, gates=None) -> ForwardResult:
    """Gated forward pass: probabilities, logits, and the activation cache."""
    x = _check_input(model, x)
    gates = full_gates(model) if gates is None else check_gates(model, gates)
    tape = _forward_tape(model, x, gates)
    logits = tape.outputs[-1]
    if not np.isfinite(logits).all():
        raise NumericError("non-finite logits in forward pass")
    cache = {}
    for layer, fms in model.layer_fms.items():
        out = tape.outputs[model.gate_points[layer]]
        for ch, fm in enumerate(fms):
            cache[fm] = out[ch]
    return ForwardResult(logits=logits, probabilities=softmax(logits), activation_cache=cache)


def target_activation(model: ModelSpec, x, gates, target_fm: int) -> np.ndarray:
    """Gated activation map of one feature map, via a truncated forward pass."""
    x = _check_input(model, x)
    gates = check_gates(model, gates)
    layer, ch = model.gate_index[target_fm]
    gp = model.gate_points[layer]
    tape = _forward_tape(model, x, gates, upto=gp)
    act = tape.outputs[gp][ch]
    if not np.isfinite(act).all():
        raise NumericError("non-finite activation in forward pass")
    return act


def _softmax_vjp(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    return probs * (dprobs - float(dprobs @ probs))


def _direct_terms_grad(gates: np.ndarray, loss: LossSpec) -> np.ndarray:
    g = np.full(gates.shape, loss.l1_weight)
    for ref in loss.coupling_refs:
        d = gates - ref
        norm = float(np.linalg.norm(d))
        if norm > 0.0:
            g += loss.coupling_weight * d / norm
    return g


def _direct_terms_value(gates: np.ndarray, loss: LossSpec) -> float:
    v = loss.l1_weight * float(gates.sum())
    for ref in loss.coupling_refs:
        v += loss.coupling_weight * float(np.linalg.norm(gates - ref))
    return v


def _network_seed(model: ModelSpec, tape: _Tape, loss: LossSpec):
    """Seed layer+gradient for the network part of the loss, and its value."""
    if loss.kind == "probability_preservation":
        logits = tape.outputs[-1]
        probs = softmax(logits)
        diff = probs - loss.reference
        value = float(diff @ diff)
        seed = _softmax_vjp(probs, 2.0 * diff)
        return len(model.layers) - 1, seed, value
    if loss.kind == "cross_entropy":
        logits = tape.outputs[-1]
        probs = softmax(logits)
        seed = probs.copy()
        seed[loss.target_label] -= 1.0
        return len(model.layers) - 1, seed, cross_entropy(logits, loss.target_label)
    if loss.kind == "activation_preservation":
        layer, ch = model.gate_index[loss.target_fm]
        gp = model.gate_points[layer]
        act = tape.outputs[gp][ch]
        diff = act - loss.reference
        if loss.mask is not None:
            diff = diff * loss.mask
        value = float((diff * diff).sum())
        seed = np.zeros_like(tape.outputs[gp])
        # d(sum((mask*d)^2))/dact needs a second mask factor
        seed[ch] = 2.0 * diff if loss.mask is None else 2.0 * diff * loss.mask
        return gp, seed, value
    raise ValidationError(f"unknown loss kind {loss.kind!r}")


def _loss_upto(model: ModelSpec, loss: LossSpec) -> int | None:
    if loss.kind == "activation_preservation":
        layer, _ = model.gate_index[loss.target_fm]
        return model.gate_points[layer]
    return None


def gate_gradients(model: ModelSpec, x, gates, loss: LossSpec) -> np.ndarray:
    """Exact gradient of the scalar loss with respect to every gate."""
    x = _check_input(model, x)
    gates = check_gates(model, gates)
    tape = _forward_tape(model, x, gates, upto=_loss_upto(model, loss))
    seed_layer, seed, _ = _network_seed(model, tape, loss)
    gate_grads, _, _ = _backward(model, tape, {seed_layer: seed})
    if not np.isfinite(gate_grads).all():
        raise NumericError("non-finite gate gradient")
    return gate_grads + _direct_terms_grad(gates, loss)


def loss_value(model: ModelSpec, x, gates, loss: LossSpec) -> float:
    x = _check_input(model, x)
    gates = check_gates(model, gates)
    tape = _forward_tape(model, x, gates, upto=_loss_upto(model, loss))
    _, _, value = _network_seed(model, tape, loss)
    total = value + _direct_terms_value(gates, loss)
    if not np.isfinite(total):
        raise NumericError("non-finite loss value")
    return total


def input_gradients(model: ModelSpec, x, gates, target_label: int) -> np.ndarray:
    """Gradient of cross-entropy at ``target_label`` with respect to the input."""
    if not 0 <= target_label < model.class_count:
        raise ValidationError(f"label {target_label} out of range", "target_label")
    x = _check_input(model, x)
    gates = full_gates(model) if gates is None else check_gates(model, gates)
    tape = _forward_tape(model, x, gates)
    probs = softmax(tape.outputs[-1])
    seed = probs.copy()
    seed[target_label] -= 1.0
    _, input_grad, _ = _backward(model, tape, {len(model.layers) - 1: seed}, want_input=True)
    if not np.isfinite(input_grad).all():
        raise NumericError("non-finite input gradient")
    return input_grad


def weight_gradients(model: ModelSpec, x, label: int, gates=None):
    """Cross-entropy loss and per-layer (dw, db) for trainable layers."""
    x = _check_input(model, x)
    gates = full_gates(model) if gates is None else check_gates(model, gates)
    tape = _forward_tape(model, x, gates)
    logits = tape.outputs[-1]
    if not np.isfinite(logits).all():
        raise NumericError("non-finite logits in forward pass")
    probs = softmax(logits)
    seed = probs.copy()
    seed[label] -= 1.0
    _, _, wgrads = _backward(model, tape, {len(model.layers) - 1: seed}, want_weights=True)
    return cross_entropy(logits, label), wgrads
