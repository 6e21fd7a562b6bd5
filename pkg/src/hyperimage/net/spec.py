"""Declarative network descriptions and shape propagation.

A network is an ordered list of layers. Each layer reads from the previous
layer unless it names its sources explicitly through ``inputs`` (only
``concat`` takes more than one). Shapes are ``(H, W, C)`` for feature maps
and ``(D,)`` for flat vectors.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict, replace

KINDS = ("conv-same", "max-pool", "min-pool", "dense", "dropout", "concat")
ACTIVATIONS = ("relu", "tanh", "sigmoid", "linear")
LOSSES = ("mae", "bce", "pairwise-rank")


class ShapeError(ValueError):
    """Raised when a network spec cannot be shape-propagated."""

    def __init__(self, message: str, layer_index: int | None = None):
        self.layer_index = layer_index
        if layer_index is not None:
            message = f"layer {layer_index}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filters: int | None = None
    kernel: int | None = None
    stride: int | None = None
    size: int | None = None
    units: int | None = None
    activation: str | None = None
    rate: float | None = None
    inputs: tuple[str, ...] | None = None
    name: str | None = None
    # pooling windows centred in the map instead of anchored top-left
    center: bool = False

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if v is not None and v is not False}
        if self.inputs is not None:
            d["inputs"] = list(self.inputs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        d = dict(d)
        if "inputs" in d and d["inputs"] is not None:
            d["inputs"] = tuple(d["inputs"])
        return cls(**d)


def conv(filters: int, kernel: int = 3, stride: int = 1, activation: str = "relu", name=None) -> LayerSpec:
    return LayerSpec("conv-same", filters=filters, kernel=kernel, stride=stride, activation=activation, name=name)


def max_pool(size: int = 2, stride: int | None = None, center: bool = False, inputs=None, name=None) -> LayerSpec:
    return LayerSpec("max-pool", size=size, stride=stride or size, center=center,
                     inputs=tuple(inputs) if inputs else None, name=name)


def min_pool(size: int = 2, stride: int | None = None, center: bool = False, inputs=None, name=None) -> LayerSpec:
    return LayerSpec("min-pool", size=size, stride=stride or size, center=center,
                     inputs=tuple(inputs) if inputs else None, name=name)


def dense(units: int, activation: str = "relu", name=None) -> LayerSpec:
    return LayerSpec("dense", units=units, activation=activation, name=name)


def dropout(rate: float) -> LayerSpec:
    return LayerSpec("dropout", rate=rate)


def concat(*inputs: str, name=None) -> LayerSpec:
    return LayerSpec("concat", inputs=tuple(inputs), name=name)


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    loss: str = "mae"
    delta: float = 3.0  # margin of the pairwise-rank loss
    name: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))

    def layer_names(self) -> list[str]:
        return [layer.name or f"L{i}" for i, layer in enumerate(self.layers)]

    def sources(self) -> list[list[int]]:
        """Source layer indices per layer; -1 is the network input."""
        names = self.layer_names()
        index = {n: i for i, n in enumerate(names)}
        out = []
        for i, layer in enumerate(self.layers):
            if layer.inputs:
                srcs = []
                for tag in layer.inputs:
                    if tag == "input":
                        srcs.append(-1)
                    elif tag not in index or index[tag] >= i:
                        raise ShapeError(f"unknown or forward input tag {tag!r}", i)
                    else:
                        srcs.append(index[tag])
                out.append(srcs)
            else:
                out.append([i - 1])
        return out

    def to_dict(self) -> dict:
        d = {
            "input_shape": list(self.input_shape),
            "layers": [layer.to_dict() for layer in self.layers],
            "loss": self.loss,
            "delta": self.delta,
        }
        if self.name:
            d["name"] = self.name
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            input_shape=tuple(d["input_shape"]),
            layers=tuple(LayerSpec.from_dict(x) for x in d["layers"]),
            loss=d.get("loss", "mae"),
            delta=float(d.get("delta", 3.0)),
            name=d.get("name"),
        )

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def with_input(self, shape) -> "NetworkSpec":
        return replace(self, input_shape=tuple(shape))


def conv_out_extent(extent: int, stride: int) -> int:
    return -(-extent // stride)


def same_padding(extent: int, kernel: int, stride: int) -> tuple[int, int]:
    """Zero padding (before, after); the odd pixel goes to the bottom/right."""
    out = conv_out_extent(extent, stride)
    total = max((out - 1) * stride + kernel - extent, 0)
    return total // 2, total - total // 2


def pool_geometry(extent: int, size: int, stride: int, center: bool) -> tuple[int, int]:
    """Return (output extent, window offset) of a valid pooling along one axis."""
    if extent < size:
        raise ValueError(f"pool size {size} exceeds extent {extent}")
    out = (extent - size) // stride + 1
    offset = (extent - ((out - 1) * stride + size)) // 2 if center else 0
    return out, offset


@dataclass
class LayerShapes:
    in_shapes: list[tuple[int, ...]]
    out_shape: tuple[int, ...]
    weight_shape: tuple[int, ...] | None = None
    bias_shape: tuple[int, ...] | None = None
    fan: tuple[int, int] | None = field(default=None)


def propagate(spec: NetworkSpec) -> list[LayerShapes]:
    """Shape-propagate ``spec``; raises ShapeError naming the first bad layer."""
    if spec.loss not in LOSSES:
        raise ShapeError(f"unknown loss {spec.loss!r}")
    if not spec.layers:
        raise ShapeError("network has no layers")
    srcs = spec.sources()
    shapes: list[tuple[int, ...]] = []
    result = []
    for i, layer in enumerate(spec.layers):
        ins = [spec.input_shape if s < 0 else shapes[s] for s in srcs[i]]
        x = ins[0]
        kind = layer.kind
        ws = bs = fan = None
        if kind not in KINDS:
            raise ShapeError(f"unknown layer kind {kind!r}", i)
        if kind != "concat" and len(ins) != 1:
            raise ShapeError(f"{kind} takes exactly one input", i)
        if kind in ("conv-same", "dense") and layer.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {layer.activation!r}", i)
        if kind == "conv-same":
            if len(x) != 3:
                raise ShapeError(f"conv-same needs an (H, W, C) input, got {x}", i)
            n, r, s = layer.filters, layer.kernel, layer.stride
            if not n or not r or not s or n < 1 or r < 1 or s < 1:
                raise ShapeError("conv-same needs positive filters, kernel and stride", i)
            out = (conv_out_extent(x[0], s), conv_out_extent(x[1], s), n)
            ws, bs = (n, r, r, x[2]), (n,)
            fan = (r * r * x[2], r * r * n)
        elif kind in ("max-pool", "min-pool"):
            if len(x) != 3:
                raise ShapeError(f"{kind} needs an (H, W, C) input, got {x}", i)
            size, stride = layer.size, layer.stride or layer.size
            if not size or size < 1 or stride < 1:
                raise ShapeError("pool needs positive size and stride", i)
            try:
                oh, _ = pool_geometry(x[0], size, stride, layer.center)
                ow, _ = pool_geometry(x[1], size, stride, layer.center)
            except ValueError as exc:
                raise ShapeError(str(exc), i) from None
            out = (oh, ow, x[2])
        elif kind == "dense":
            if not layer.units or layer.units < 1:
                raise ShapeError("dense needs positive units", i)
            d = math.prod(x)
            out = (layer.units,)
            ws, bs = (d, layer.units), (layer.units,)
            fan = (d, layer.units)
        elif kind == "dropout":
            if layer.rate is None or not 0.0 < layer.rate < 1.0:
                raise ShapeError("dropout rate must lie in (0, 1)", i)
            out = x
        else:  # concat
            if not layer.inputs or len(ins) < 2:
                raise ShapeError("concat needs at least two tagged inputs", i)
            if any(len(s) != len(x) or s[:-1] != x[:-1] for s in ins):
                raise ShapeError(f"concat inputs disagree on leading extents: {ins}", i)
            out = tuple(x[:-1]) + (sum(s[-1] for s in ins),)
        shapes.append(out)
        result.append(LayerShapes(ins, out, ws, bs, fan))
    return result


def output_shape(spec: NetworkSpec) -> tuple[int, ...]:
    return propagate(spec)[-1].out_shape
