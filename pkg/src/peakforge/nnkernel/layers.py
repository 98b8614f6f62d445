"""Layer and network descriptions, static shape inference, parameter/MAC counts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

KINDS = ("dense", "relu", "conv2d", "maxpool2d", "upsample2d_nearest", "flatten", "sigmoid", "tanh")

Shape = tuple[int, ...]


class ShapeError(ValueError):
    """Raised when a layer cannot accept the shape produced by its predecessor."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_features: int = 0
    out_features: int = 0
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 3
    padding: str = "same"
    scale: float = 1.0  # output multiplier, tanh only
    init: str = "he"  # "he" or "zeros", parametric layers only

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.padding not in ("same", "valid"):
            raise ValueError(f"padding must be 'same' or 'valid', got {self.padding!r}")
        if self.kind == "conv2d" and self.padding == "same" and self.kernel % 2 == 0:
            raise ValueError("'same' padding needs an odd kernel")

    @property
    def has_params(self) -> bool:
        return self.kind in ("dense", "conv2d")


def dense(in_features: int, out_features: int, init: str = "he") -> LayerSpec:
    return LayerSpec("dense", in_features=in_features, out_features=out_features, init=init)


def conv2d(in_channels: int, out_channels: int, kernel: int = 3, padding: str = "same", init: str = "he") -> LayerSpec:
    return LayerSpec("conv2d", in_channels=in_channels, out_channels=out_channels, kernel=kernel, padding=padding, init=init)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def sigmoid() -> LayerSpec:
    return LayerSpec("sigmoid")


def tanh(scale: float = 1.0) -> LayerSpec:
    return LayerSpec("tanh", scale=scale)


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def maxpool2d() -> LayerSpec:
    return LayerSpec("maxpool2d")


def upsample2d() -> LayerSpec:
    return LayerSpec("upsample2d_nearest")


@dataclass(frozen=True)
class NetworkSpec:
    """A trunk of layers, optionally followed by parallel heads.

    With heads, every head consumes the trunk output and the network output
    is the head outputs concatenated along the first per-sample axis.
    """

    layers: tuple[LayerSpec, ...]
    input_shape: Shape
    init_seed: int = 0
    heads: tuple[tuple[LayerSpec, ...], ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "heads", tuple(tuple(h) for h in self.heads))

    def all_layers(self) -> list[LayerSpec]:
        out = list(self.layers)
        for h in self.heads:
            out.extend(h)
        return out


def layer_output_shape(layer: LayerSpec, shape: Shape, where: str = "") -> Shape:
    tag = f"{where}{layer.kind}"
    if layer.kind == "dense":
        if len(shape) != 1 or shape[0] != layer.in_features:
            raise ShapeError(f"{tag}: expects ({layer.in_features},), got {shape}")
        return (layer.out_features,)
    if layer.kind in ("relu", "sigmoid", "tanh"):
        return shape
    if layer.kind == "flatten":
        return (math.prod(shape),)
    if len(shape) != 3:
        raise ShapeError(f"{tag}: expects (C, H, W), got {shape}")
    c, h, w = shape
    if layer.kind == "conv2d":
        if c != layer.in_channels:
            raise ShapeError(f"{tag}: expects {layer.in_channels} channels, got {c}")
        if layer.padding == "valid":
            if h < layer.kernel or w < layer.kernel:
                raise ShapeError(f"{tag}: spatial {h}x{w} smaller than kernel {layer.kernel}")
            return (layer.out_channels, h - layer.kernel + 1, w - layer.kernel + 1)
        return (layer.out_channels, h, w)
    if layer.kind == "maxpool2d":
        if h < 2 or w < 2:
            raise ShapeError(f"{tag}: spatial {h}x{w} smaller than pooling window 2")
        return (c, h // 2, w // 2)
    if layer.kind == "upsample2d_nearest":
        return (c, 2 * h, 2 * w)
    raise AssertionError(layer.kind)


def infer_shapes(layers: Sequence[LayerSpec], input_shape: Shape, where: str = "") -> list[Shape]:
    """Shapes after every layer (excluding the input shape itself)."""
    shapes = []
    shape = tuple(input_shape)
    for i, layer in enumerate(layers):
        shape = layer_output_shape(layer, shape, f"{where}layer {i} ")
        shapes.append(shape)
    return shapes


def output_shape(net: NetworkSpec) -> Shape:
    trunk = infer_shapes(net.layers, net.input_shape)
    shape = trunk[-1] if trunk else net.input_shape
    if not net.heads:
        return shape
    outs = []
    for k, head in enumerate(net.heads):
        hs = infer_shapes(head, shape, f"head {k} ")
        outs.append(hs[-1] if hs else shape)
    rest = outs[0][1:]
    if any(o[1:] != rest for o in outs):
        raise ShapeError(f"head outputs cannot be concatenated: {outs}")
    return (sum(o[0] for o in outs),) + rest


def _layer_params(layer: LayerSpec) -> int:
    if layer.kind == "dense":
        return layer.in_features * layer.out_features + layer.out_features
    if layer.kind == "conv2d":
        return layer.in_channels * layer.out_channels * layer.kernel**2 + layer.out_channels
    return 0


def _layer_macs(layer: LayerSpec, out: Shape) -> int:
    if layer.kind == "dense":
        return layer.in_features * layer.out_features
    if layer.kind == "conv2d":
        return out[1] * out[2] * layer.out_channels * layer.in_channels * layer.kernel**2
    return 0


def param_count(net: NetworkSpec) -> int:
    """Number of trainable parameters (weights + biases)."""
    return sum(_layer_params(layer) for layer in net.all_layers())


def mac_count(net: NetworkSpec, input_shape: Shape | None = None) -> int:
    """Per-sample multiply-accumulate count of one forward pass."""
    in_shape = tuple(input_shape) if input_shape is not None else net.input_shape
    trunk_shapes = infer_shapes(net.layers, in_shape)
    total = sum(_layer_macs(layer, s) for layer, s in zip(net.layers, trunk_shapes))
    last = trunk_shapes[-1] if trunk_shapes else in_shape
    for head in net.heads:
        hs = infer_shapes(head, last)
        total += sum(_layer_macs(layer, s) for layer, s in zip(head, hs))
    return total
