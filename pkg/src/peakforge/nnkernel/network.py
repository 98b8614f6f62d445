"""Network instantiation with hand-derived forward/backward passes."""

from __future__ import annotations

import math

import numpy as np

from . import _conv
from .layers import LayerSpec, NetworkSpec, ShapeError, infer_shapes, output_shape


def _init_params(layer: LayerSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    if layer.kind == "dense":
        shape, fan_in, nb = (layer.in_features, layer.out_features), layer.in_features, layer.out_features
    elif layer.kind == "conv2d":
        k = layer.kernel
        shape, fan_in, nb = (layer.out_channels, layer.in_channels, k, k), layer.in_channels * k * k, layer.out_channels
    else:
        return {}
    if layer.init == "zeros":
        W = np.zeros(shape)
    else:
        bound = math.sqrt(6.0 / fan_in)
        W = rng.uniform(-bound, bound, size=shape)
    return {"W": W, "b": np.zeros(nb)}


def _forward_layer(layer: LayerSpec, p: dict, x: np.ndarray):
    """Return (output, cache)."""
    kind = layer.kind
    if kind == "dense":
        return x @ p["W"] + p["b"], x
    if kind == "relu":
        return np.maximum(x, 0.0), x
    if kind == "sigmoid":
        y = 0.5 * (1.0 + np.tanh(0.5 * x))
        return y, y
    if kind == "tanh":
        t = np.tanh(x)
        return layer.scale * t, t
    if kind == "flatten":
        return x.reshape(len(x), -1), x.shape
    if kind == "conv2d":
        pad = layer.kernel // 2 if layer.padding == "same" else 0
        return _conv.conv_forward(x, p["W"], p["b"], pad), x
    if kind == "maxpool2d":
        n, c, h, w = x.shape
        ho, wo = h // 2, w // 2
        blocks = x[:, :, : 2 * ho, : 2 * wo].reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
        arg = blocks.argmax(axis=-1)
        return np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0], (x.shape, arg)
    if kind == "upsample2d_nearest":
        return x.repeat(2, axis=2).repeat(2, axis=3), None
    raise AssertionError(kind)


def _backward_layer(layer: LayerSpec, p: dict, cache, g: np.ndarray):
    """Return (grad_input, param_grads)."""
    kind = layer.kind
    if kind == "dense":
        x = cache
        return g @ p["W"].T, {"W": x.T @ g, "b": g.sum(axis=0)}
    if kind == "relu":
        return g * (cache > 0), {}
    if kind == "sigmoid":
        y = cache
        return g * y * (1.0 - y), {}
    if kind == "tanh":
        t = cache
        return g * layer.scale * (1.0 - t * t), {}
    if kind == "flatten":
        return g.reshape(cache), {}
    if kind == "conv2d":
        pad = layer.kernel // 2 if layer.padding == "same" else 0
        gx, gw, gb = _conv.conv_backward(cache, p["W"], g, pad)
        return gx, {"W": gw, "b": gb}
    if kind == "maxpool2d":
        shape, arg = cache
        n, c, h, w = shape
        ho, wo = h // 2, w // 2
        blocks = np.zeros((n, c, ho, wo, 4))
        np.put_along_axis(blocks, arg[..., None], g[..., None], axis=-1)
        gx = np.zeros(shape)
        gx[:, :, : 2 * ho, : 2 * wo] = blocks.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
        return gx, {}
    if kind == "upsample2d_nearest":
        n, c, h, w = g.shape
        return g.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5)), {}
    raise AssertionError(kind)


class Network:
    """Trainable instance of a :class:`NetworkSpec` (float64 parameters)."""

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.out_shape = output_shape(spec)  # raises ShapeError when infeasible
        rng = np.random.default_rng(spec.init_seed)
        self.trunk_params = [_init_params(layer, rng) for layer in spec.layers]
        self.head_params = [[_init_params(layer, rng) for layer in head] for head in spec.heads]
        self._cache = None

    # parameter access in a fixed order: trunk layers, then heads in order
    def parameters(self) -> list[dict[str, np.ndarray]]:
        out = list(self.trunk_params)
        for hp in self.head_params:
            out.extend(hp)
        return out

    def layers(self) -> list[LayerSpec]:
        return self.spec.all_layers()

    def get_weights(self) -> list[np.ndarray]:
        return [arr for p in self.parameters() for arr in (p.get("W"), p.get("b")) if arr is not None]

    def set_weights(self, arrays: list[np.ndarray]) -> None:
        it = iter(arrays)
        for p in self.parameters():
            for key in ("W", "b"):
                if key in p:
                    new = np.asarray(next(it), dtype=float)
                    if new.shape != p[key].shape:
                        raise ShapeError(f"weight shape {new.shape} does not match {p[key].shape}")
                    p[key] = new.copy()

    def forward(self, x: np.ndarray, keep_cache: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[1:] != self.spec.input_shape:
            raise ShapeError(f"input has per-sample shape {x.shape[1:]}, network expects {self.spec.input_shape}")
        caches = []
        for layer, p in zip(self.spec.layers, self.trunk_params):
            x, c = _forward_layer(layer, p, x)
            caches.append(c)
        head_caches = []
        if self.spec.heads:
            outs = []
            for head, hparams in zip(self.spec.heads, self.head_params):
                h = x
                hc = []
                for layer, p in zip(head, hparams):
                    h, c = _forward_layer(layer, p, h)
                    hc.append(c)
                outs.append(h)
                head_caches.append((hc, h.shape[1]))
            x = np.concatenate(outs, axis=1)
        if keep_cache:
            self._cache = (caches, head_caches)
        return x

    def backward(self, grad_out: np.ndarray) -> list[dict[str, np.ndarray]]:
        """Gradients for :meth:`parameters` (same order) from the last cached forward."""
        if self._cache is None:
            raise RuntimeError("backward() needs a preceding forward(keep_cache=True)")
        caches, head_caches = self._cache
        grads_heads: list[list[dict]] = []
        g = grad_out
        if self.spec.heads:
            g_trunk = None
            offset = 0
            for head, hparams, (hc, width) in zip(self.spec.heads, self.head_params, head_caches):
                gh = grad_out[:, offset : offset + width]
                offset += width
                hg = [None] * len(head)
                for i in range(len(head) - 1, -1, -1):
                    gh, hg[i] = _backward_layer(head[i], hparams[i], hc[i], gh)
                grads_heads.append(hg)
                g_trunk = gh if g_trunk is None else g_trunk + gh
            g = g_trunk
        grads = [None] * len(self.spec.layers)
        for i in range(len(self.spec.layers) - 1, -1, -1):
            g, grads[i] = _backward_layer(self.spec.layers[i], self.trunk_params[i], caches[i], g)
        self._cache = None
        self.input_grad = g
        out = list(grads)
        for hg in grads_heads:
            out.extend(hg)
        return out


def build(spec: NetworkSpec) -> Network:
    return Network(spec)


def forward(net: Network, batch: np.ndarray) -> np.ndarray:
    return net.forward(batch)


def check_feasible(spec: NetworkSpec) -> None:
    """Raise :class:`ShapeError` if shapes do not infer end to end."""
    output_shape(spec)
    infer_shapes(spec.layers, spec.input_shape)
