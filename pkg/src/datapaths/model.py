"""Model description: layer specs, gate bookkeeping, and the model document.

A model is a fixed-weight layered CNN. Every conv output channel is a gated
feature map with a global integer id; gates scale the channel's
post-activation output during a gated forward pass. Fully-connected layers
are never gated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError

MODEL_FORMAT_VERSION = 1

LAYER_KINDS = ("conv2d", "relu", "maxpool", "avgpool_global", "fullyconnected", "add_skip")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    weights: np.ndarray | None = None  # conv2d: (O,C,kh,kw); fullyconnected: (out,in)
    bias: np.ndarray | None = None
    stride: int = 1
    padding: int = 0
    window: int = 2  # maxpool
    pool_stride: int = 0  # maxpool; 0 means "same as window"
    source: int = -1  # add_skip

    def effective_pool_stride(self) -> int:
        return self.pool_stride if self.pool_stride > 0 else self.window


def conv2d(weights, bias, stride=1, padding=0) -> LayerSpec:
    w = np.asarray(weights, dtype=np.float64)
    b = np.asarray(bias, dtype=np.float64)
    return LayerSpec("conv2d", weights=w, bias=b, stride=stride, padding=padding)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def maxpool(window=2, stride=0) -> LayerSpec:
    return LayerSpec("maxpool", window=window, pool_stride=stride)


def avgpool_global() -> LayerSpec:
    return LayerSpec("avgpool_global")


def fullyconnected(weights, bias) -> LayerSpec:
    w = np.asarray(weights, dtype=np.float64)
    b = np.asarray(bias, dtype=np.float64)
    return LayerSpec("fullyconnected", weights=w, bias=b)


def add_skip(source: int) -> LayerSpec:
    return LayerSpec("add_skip", source=source)


@dataclass(frozen=True)
class ModelSpec:
    input_shape: tuple[int, int, int]
    class_count: int
    layers: tuple[LayerSpec, ...]
    layer_groups: tuple[tuple[str, int, int], ...]
    # Derived at build time:
    gate_index: dict[int, tuple[int, int]] = field(repr=False)  # fm id -> (layer, channel)
    layer_fms: dict[int, tuple[int, ...]] = field(repr=False)  # conv layer -> fm ids
    layer_shapes: tuple[tuple[int, ...], ...] = field(repr=False)  # output shape per layer
    gate_points: dict[int, int] = field(repr=False)  # conv layer -> layer where gates apply

    @property
    def gate_count(self) -> int:
        return len(self.gate_index)

    @property
    def gated_layers(self) -> tuple[int, ...]:
        """Conv layer indices in network order (the layers that own gates)."""
        return tuple(sorted(self.layer_fms))

    def fm_layer(self, fm: int) -> int:
        return self.gate_index[fm][0]

    def fm_shape(self, fm: int) -> tuple[int, int]:
        layer, _ = self.gate_index[fm]
        shape = self.layer_shapes[layer]
        return shape[1], shape[2]

    def layer_slice(self, layer: int) -> np.ndarray:
        """Gate-vector indices belonging to one conv layer."""
        return np.asarray(self.layer_fms[layer], dtype=np.int64)


def build_model(input_shape, class_count, layers, layer_groups=None) -> ModelSpec:
    """Validate the layer chain and derive gate bookkeeping.

    Raises ValidationError naming the first offending layer if shapes do not
    chain from ``input_shape`` to ``class_count`` logits.
    """
    input_shape = tuple(int(d) for d in input_shape)
    if len(input_shape) != 3:
        raise ValidationError("input_shape must be (channels, height, width)", "input_shape")
    layers = tuple(layers)
    if not layers:
        raise ValidationError("model needs at least one layer", "layers")

    shapes: list[tuple[int, ...]] = []
    current: tuple[int, ...] = input_shape
    gate_index: dict[int, tuple[int, int]] = {}
    layer_fms: dict[int, tuple[int, ...]] = {}
    next_fm = 0

    for i, layer in enumerate(layers):
        path = f"layers[{i}]"
        if layer.kind not in LAYER_KINDS:
            raise ValidationError(f"unknown layer kind {layer.kind!r}", path)
        if layer.kind == "conv2d":
            if len(current) != 3:
                raise ValidationError("conv2d input must be (C,H,W)", path)
            o, ci, kh, kw = layer.weights.shape
            c, h, w = current
            if ci != c:
                raise ValidationError(f"conv2d expects {ci} input channels, got {c}", path)
            if layer.bias.shape != (o,):
                raise ValidationError(f"bias must have shape ({o},)", path)
            if not (np.isfinite(layer.weights).all() and np.isfinite(layer.bias).all()):
                raise ValidationError("weights must be finite", path)
            oh = (h + 2 * layer.padding - kh) // layer.stride + 1
            ow = (w + 2 * layer.padding - kw) // layer.stride + 1
            if oh < 1 or ow < 1:
                raise ValidationError(f"kernel {kh}x{kw} does not fit input {h}x{w}", path)
            ids = tuple(range(next_fm, next_fm + o))
            for ch, fm in enumerate(ids):
                gate_index[fm] = (i, ch)
            layer_fms[i] = ids
            next_fm += o
            current = (o, oh, ow)
        elif layer.kind == "relu":
            pass
        elif layer.kind == "maxpool":
            if len(current) != 3:
                raise ValidationError("maxpool input must be (C,H,W)", path)
            c, h, w = current
            s = layer.effective_pool_stride()
            oh = (h - layer.window) // s + 1
            ow = (w - layer.window) // s + 1
            if oh < 1 or ow < 1:
                raise ValidationError(f"pool window {layer.window} does not fit input {h}x{w}", path)
            current = (c, oh, ow)
        elif layer.kind == "avgpool_global":
            if len(current) != 3:
                raise ValidationError("avgpool_global input must be (C,H,W)", path)
            current = (current[0],)
        elif layer.kind == "fullyconnected":
            out, inn = layer.weights.shape
            flat = int(np.prod(current))
            if inn != flat:
                raise ValidationError(f"fullyconnected expects {inn} inputs, got {flat}", path)
            if layer.bias.shape != (out,):
                raise ValidationError(f"bias must have shape ({out},)", path)
            if not (np.isfinite(layer.weights).all() and np.isfinite(layer.bias).all()):
                raise ValidationError("weights must be finite", path)
            current = (out,)
        elif layer.kind == "add_skip":
            if not (0 <= layer.source < i):
                raise ValidationError(
                    f"add_skip source {layer.source} must precede layer {i}", path
                )
            if shapes[layer.source] != current:
                raise ValidationError(
                    f"add_skip source shape {shapes[layer.source]} != input shape {current}", path
                )
        shapes.append(current)

    if current != (class_count,):
        raise ValidationError(
            f"final layer produces shape {current}, expected ({class_count},) logits",
            f"layers[{len(layers) - 1}]",
        )

    # Gates apply after the relu immediately following the conv, if present;
    # otherwise directly at the conv output.
    gate_points = {}
    for l in layer_fms:
        if l + 1 < len(layers) and layers[l + 1].kind == "relu":
            gate_points[l] = l + 1
        else:
            gate_points[l] = l

    # A skip that sources a conv output whose gate applies one layer later
    # would bypass the gate; such models are rejected.
    for i, layer in enumerate(layers):
        if layer.kind == "add_skip" and gate_points.get(layer.source, layer.source) != layer.source:
            raise ValidationError(
                f"add_skip source {layer.source} is a pre-gate conv output", f"layers[{i}]"
            )

    groups = _check_layer_groups(layer_groups, len(layers))

    return ModelSpec(
        input_shape=input_shape,
        class_count=int(class_count),
        layers=layers,
        layer_groups=groups,
        gate_index=gate_index,
        layer_fms=layer_fms,
        layer_shapes=tuple(shapes),
        gate_points=gate_points,
    )


def _check_layer_groups(layer_groups, n_layers):
    if layer_groups is None:
        return (("all", 0, n_layers - 1),)
    groups = tuple((str(n), int(a), int(b)) for n, a, b in layer_groups)
    covered = 0
    for gi, (name, first, last) in enumerate(groups):
        path = f"layer_groups[{gi}]"
        if first != covered:
            raise ValidationError(f"group {name!r} starts at {first}, expected {covered}", path)
        if last < first:
            raise ValidationError(f"group {name!r} has last_layer < first_layer", path)
        covered = last + 1
    if covered != n_layers:
        raise ValidationError(
            f"layer groups cover {covered} layers, model has {n_layers}", "layer_groups"
        )
    return groups


def check_gates(model: ModelSpec, gates) -> np.ndarray:
    g = np.asarray(gates, dtype=np.float64)
    if g.shape != (model.gate_count,):
        raise ValidationError(
            f"gate vector has shape {g.shape}, expected ({model.gate_count},)", "gates"
        )
    if not np.isfinite(g).all():
        raise ValidationError("gate values must be finite", "gates")
    if (g < 0).any() or (g > 1).any():
        raise ValidationError("gate values must lie in [0,1]", "gates")
    return g


def full_gates(model: ModelSpec) -> np.ndarray:
    return np.ones(model.gate_count)


# --- model document (de)serialization -------------------------------------


def model_to_doc(model: ModelSpec) -> dict:
    layers = []
    for layer in model.layers:
        if layer.kind == "conv2d":
            o, c, kh, kw = layer.weights.shape
            layers.append(
                {
                    "kind": "conv2d",
                    "out_channels": o,
                    "in_channels": c,
                    "kernel": [kh, kw],
                    "stride": layer.stride,
                    "padding": layer.padding,
                    "weights": layer.weights.ravel().tolist(),
                    "bias": layer.bias.tolist(),
                }
            )
        elif layer.kind == "relu":
            layers.append({"kind": "relu"})
        elif layer.kind == "maxpool":
            layers.append(
                {"kind": "maxpool", "window": layer.window, "stride": layer.effective_pool_stride()}
            )
        elif layer.kind == "avgpool_global":
            layers.append({"kind": "avgpool_global"})
        elif layer.kind == "fullyconnected":
            out, inn = layer.weights.shape
            layers.append(
                {
                    "kind": "fullyconnected",
                    "out_features": out,
                    "in_features": inn,
                    "weights": layer.weights.ravel().tolist(),
                    "bias": layer.bias.tolist(),
                }
            )
        elif layer.kind == "add_skip":
            layers.append({"kind": "add_skip", "source": layer.source})
    return {
        "version": MODEL_FORMAT_VERSION,
        "input_shape": list(model.input_shape),
        "class_count": model.class_count,
        "layers": layers,
        "layer_groups": [
            {"name": n, "first_layer": a, "last_layer": b} for n, a, b in model.layer_groups
        ],
    }


def save_model(model: ModelSpec) -> bytes:
    return json.dumps(model_to_doc(model), sort_keys=True).encode("utf-8")


def _want(doc, key, path):
    if not isinstance(doc, dict) or key not in doc:
        raise ParseError(f"missing field {key!r}", path)
    return doc[key]


def _floats(raw, count, path):
    try:
        arr = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"not a numeric array: {exc}", path) from None
    if arr.ndim != 1 or arr.size != count:
        raise ParseError(f"expected {count} values, got {arr.size}", path)
    return arr


def model_from_doc(doc: dict) -> ModelSpec:
    version = _want(doc, "version", "version")
    if version != MODEL_FORMAT_VERSION:
        raise ParseError(f"unsupported version {version!r}", "version")
    input_shape = _want(doc, "input_shape", "input_shape")
    if not (isinstance(input_shape, list) and len(input_shape) == 3):
        raise ParseError("input_shape must be a list of 3 dimensions", "input_shape")
    class_count = _want(doc, "class_count", "class_count")
    raw_layers = _want(doc, "layers", "layers")
    if not isinstance(raw_layers, list):
        raise ParseError("layers must be an array", "layers")

    layers = []
    for i, rec in enumerate(raw_layers):
        path = f"layers[{i}]"
        kind = _want(rec, "kind", f"{path}.kind")
        if kind == "conv2d":
            o = _want(rec, "out_channels", f"{path}.out_channels")
            c = _want(rec, "in_channels", f"{path}.in_channels")
            kh, kw = _want(rec, "kernel", f"{path}.kernel")
            w = _floats(_want(rec, "weights", f"{path}.weights"), o * c * kh * kw, f"{path}.weights")
            b = _floats(_want(rec, "bias", f"{path}.bias"), o, f"{path}.bias")
            layers.append(
                conv2d(
                    w.reshape(o, c, kh, kw),
                    b,
                    stride=int(rec.get("stride", 1)),
                    padding=int(rec.get("padding", 0)),
                )
            )
        elif kind == "relu":
            layers.append(relu())
        elif kind == "maxpool":
            layers.append(
                maxpool(window=int(_want(rec, "window", f"{path}.window")), stride=int(rec.get("stride", 0)))
            )
        elif kind == "avgpool_global":
            layers.append(avgpool_global())
        elif kind == "fullyconnected":
            out = _want(rec, "out_features", f"{path}.out_features")
            inn = _want(rec, "in_features", f"{path}.in_features")
            w = _floats(_want(rec, "weights", f"{path}.weights"), out * inn, f"{path}.weights")
            b = _floats(_want(rec, "bias", f"{path}.bias"), out, f"{path}.bias")
            layers.append(fullyconnected(w.reshape(out, inn), b))
        elif kind == "add_skip":
            layers.append(add_skip(int(_want(rec, "source", f"{path}.source"))))
        else:
            raise ParseError(f"unknown layer kind {kind!r}", f"{path}.kind")

    raw_groups = doc.get("layer_groups")
    groups = None
    if raw_groups is not None:
        if not isinstance(raw_groups, list):
            raise ParseError("layer_groups must be an array", "layer_groups")
        groups = [
            (
                _want(g, "name", f"layer_groups[{gi}].name"),
                _want(g, "first_layer", f"layer_groups[{gi}].first_layer"),
                _want(g, "last_layer", f"layer_groups[{gi}].last_layer"),
            )
            for gi, g in enumerate(raw_groups)
        ]

    return build_model(input_shape, class_count, layers, groups)


def load_model(data: bytes | str) -> ModelSpec:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", f"offset {exc.pos}") from None
    return model_from_doc(doc)
