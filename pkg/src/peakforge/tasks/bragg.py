"""Synthetic Bragg-peak localization task.

Patches are 11x11 pseudo-Voigt peaks with Gaussian read noise; networks
regress the sub-pixel peak center. Pixel ``[row, col]`` sits at ``(x=col, y=row)``.
"""

from __future__ import annotations

import functools
import math
import time
from dataclasses import dataclass

import numpy as np

from .. import nnkernel as nn
from ..space import Configuration
from .base import TaskResult, infeasible

PATCH = 11
_GRID_Y, _GRID_X = np.mgrid[0:PATCH, 0:PATCH].astype(float)
COORD_SCALE = PATCH - 1  # centers are divided by this for training

OBJECTIVES = ("val_mse", "val_quantile", "model_size", "macs", "val_err_p50", "val_err_p95")


class CentroidError(ValueError):
    pass


@dataclass(frozen=True)
class PseudoVoigtParams:
    amplitude: float
    x0: float
    y0: float
    sigma: float
    gamma: float
    eta: float
    background: float = 0.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.amplitude <= 0 or self.sigma <= 0 or self.gamma <= 0:
            raise ValueError("amplitude, sigma and gamma must be positive")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if self.background < 0 or self.noise_sigma < 0:
            raise ValueError("background and noise_sigma must be non-negative")


def pseudo_voigt(params: PseudoVoigtParams, x, y):
    """``b + A * (eta * L(r) + (1 - eta) * G(r))`` with unit-height profiles."""
    r2 = (np.asarray(x, dtype=float) - params.x0) ** 2 + (np.asarray(y, dtype=float) - params.y0) ** 2
    gauss = np.exp(-r2 / (2.0 * params.sigma**2))
    lorentz = 1.0 / (1.0 + r2 / params.gamma**2)
    return params.background + params.amplitude * (params.eta * lorentz + (1.0 - params.eta) * gauss)


@dataclass(frozen=True)
class PeakPatch:
    pixels: np.ndarray  # (11, 11), indexed [y, x]
    true_center: tuple[float, float]  # (x, y)
    params: PseudoVoigtParams | None = None


def render_patch(params: PseudoVoigtParams, rng: np.random.Generator | None = None) -> np.ndarray:
    img = pseudo_voigt(params, _GRID_X, _GRID_Y)
    if params.noise_sigma > 0:
        if rng is None:
            raise ValueError("noisy rendering needs an rng")
        img = img + rng.normal(0.0, params.noise_sigma * params.amplitude, size=img.shape)
    return np.maximum(img, 0.0)


def draw_params(rng: np.random.Generator, noise_sigma: float) -> PseudoVoigtParams:
    amplitude = rng.uniform(0.5, 2.0)
    sigma = rng.uniform(0.8, 2.0)
    gamma = rng.uniform(0.8, 2.0)
    eta = rng.uniform(0.0, 1.0)
    background = rng.uniform(0.0, 0.05)
    x0, y0 = rng.uniform(3.5, 6.5, size=2)
    return PseudoVoigtParams(amplitude, float(x0), float(y0), sigma, gamma, eta, background, noise_sigma)


def generate_bragg_dataset(n: int, noise_sigma: float = 0.02, seed: int = 0) -> list[PeakPatch]:
    """``n`` random patches; patch ``i`` depends only on ``(seed, i)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    out = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        p = draw_params(rng, noise_sigma)
        out.append(PeakPatch(render_patch(p, rng), (p.x0, p.y0), p))
    return out


@functools.lru_cache(maxsize=8)
def bragg_arrays(n: int, noise_sigma: float = 0.02, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Stacked ``(pixels (n, 11, 11), centers (n, 2))``; cached, treat as read-only."""
    patches = generate_bragg_dataset(n, noise_sigma, seed)
    pixels = np.stack([p.pixels for p in patches])
    centers = np.array([p.true_center for p in patches])
    pixels.flags.writeable = False
    centers.flags.writeable = False
    return pixels, centers


def centroid_fit(patch: PeakPatch | np.ndarray, iterations: int = 20) -> tuple[float, float]:
    """Background-subtracted intensity centroid, refined on a symmetric window.

    Starts from the plain centroid of ``pixels - min(pixels)``, then repeatedly
    recomputes it over the largest window centred on the current estimate that
    fits in the patch (edge pixels weighted by fractional coverage). The
    symmetric window removes the bias from truncated peak tails.
    """
    pixels = patch.pixels if isinstance(patch, PeakPatch) else np.asarray(patch, dtype=float)
    q = pixels - pixels.min()
    total = q.sum()
    if not total > 0:
        raise CentroidError("patch has no intensity above its minimum")
    h, w = q.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    cx, cy = (q * xs).sum() / total, (q * ys).sum() / total
    for _ in range(iterations):
        hx = min(cx + 0.5, w - 0.5 - cx)
        hy = min(cy + 0.5, h - 0.5 - cy)
        wx = np.clip(np.minimum(xs + 0.5, cx + hx) - np.maximum(xs - 0.5, cx - hx), 0.0, 1.0)
        wy = np.clip(np.minimum(ys + 0.5, cy + hy) - np.maximum(ys - 0.5, cy - hy), 0.0, 1.0)
        wq = q * wx * wy
        s = wq.sum()
        if not s > 0:
            break
        nx, ny = (wq * xs).sum() / s, (wq * ys).sum() / s
        if abs(nx - cx) < 1e-12 and abs(ny - cy) < 1e-12:
            cx, cy = nx, ny
            break
        cx, cy = nx, ny
    return float(cx), float(cy)


# -- evaluator ----------------------------------------------------------


@dataclass(frozen=True)
class BraggOptions:
    n_train: int = 2000
    n_val: int = 500
    noise_sigma: float = 0.02
    epoch_cap: int = 100
    data_seed: int = 0
    quantile: float = 0.75
    time_limit: float | None = None  # seconds of training per evaluation


def build_network(config: Configuration | dict, init_seed: int = 0) -> nn.NetworkSpec:
    """Network for an mlpBragg or cnnBragg configuration (may raise ShapeError)."""
    values = config.values if isinstance(config, Configuration) else config
    in_shape = (1, PATCH, PATCH)
    if "nunits" in values:
        units, depth = int(values["nunits"]), int(values["nhidden"])
        layers = [nn.flatten()]
        width = PATCH * PATCH
        for _ in range(depth):
            layers += [nn.dense(width, units), nn.relu()]
            width = units
        layers.append(nn.dense(width, 2))
        return nn.NetworkSpec(tuple(layers), in_shape, init_seed)
    filters, n_conv = int(values["nfilters"]), int(values["nconv"])
    layers = []
    shape = in_shape
    for i in range(n_conv):
        conv = nn.conv2d(shape[0], filters, 3, "valid")
        shape = nn.layers.layer_output_shape(conv, shape, f"conv block {i} ")
        layers += [conv, nn.relu()]
        if i % 2 == 1 and shape[1] >= 4:
            layers.append(nn.maxpool2d())
            shape = (shape[0], shape[1] // 2, shape[2] // 2)
    flat = math.prod(shape)
    layers += [nn.flatten(), nn.dense(flat, 64), nn.relu(), nn.dense(64, 2)]
    return nn.NetworkSpec(tuple(layers), in_shape, init_seed)


def prepare_inputs(pixels: np.ndarray) -> np.ndarray:
    """Per-patch max normalization, shape (n, 1, 11, 11)."""
    peak = pixels.reshape(len(pixels), -1).max(axis=1)
    peak = np.where(peak > 0, peak, 1.0)
    return (pixels / peak[:, None, None])[:, None, :, :]


def _split(options: BraggOptions):
    pixels, centers = bragg_arrays(options.n_train + options.n_val, options.noise_sigma, options.data_seed)
    x = prepare_inputs(pixels)
    y = centers / COORD_SCALE
    k = options.n_train
    return nn.Dataset(x[:k], y[:k], x[k:], y[k:])


def _seeds(seed: int) -> tuple[int, int]:
    a, b = np.random.SeedSequence(seed).generate_state(2)
    return int(a), int(b)


def train_model(config: Configuration | dict, options: BraggOptions, seed: int):
    """Build and train; returns (network, epochs_used). Raises ShapeError / DivergenceError."""
    values = config.values if isinstance(config, Configuration) else config
    init_seed, shuffle_seed = _seeds(seed)
    spec = build_network(values, init_seed)
    net = nn.Network(spec)
    data = _split(options)
    epochs = min(int(values["nepochs"]), options.epoch_cap)
    cfg = nn.TrainConfig(
        epochs=epochs,
        batch_size=min(int(values["batch"]), len(data.x_train)),
        learning_rate=float(values["lr"]),
        optimizer="adam",
        loss="mse",
        shuffle_seed=shuffle_seed,
        deadline=None if options.time_limit is None else time.monotonic() + options.time_limit,
    )
    nn.train(net, data, cfg)
    return net, epochs


def center_metrics(pred_px: np.ndarray, true_px: np.ndarray, q: float = 0.75) -> dict[str, float]:
    err = np.hypot(*(pred_px - true_px).T)
    return {
        "val_mse": nn.loss("mse", pred_px, true_px),
        "val_quantile": nn.loss("quantile", pred_px, true_px, q),
        "val_err_p50": float(np.percentile(err, 50)),
        "val_err_p95": float(np.percentile(err, 95)),
    }


@dataclass(frozen=True)
class BraggTask:
    options: BraggOptions = BraggOptions()

    name = "bragg"
    spaces = ("mlpBragg", "cnnBragg")
    objective_names = OBJECTIVES

    def __call__(self, config: Configuration | dict, seed: int) -> TaskResult:
        return eval_bragg(config, self.options, seed)


def eval_bragg(config: Configuration | dict, options: BraggOptions = BraggOptions(), seed: int = 0) -> TaskResult:
    values = config.values if isinstance(config, Configuration) else config
    try:
        spec = build_network(values)
        nn.output_shape(spec)
    except nn.ShapeError as exc:
        return infeasible(f"infeasible architecture: {exc}")
    try:
        net, epochs = train_model(values, options, seed)
    except nn.DivergenceError as exc:
        return infeasible(f"training diverged: {exc}")
    data = _split(options)
    with np.errstate(over="ignore", invalid="ignore"):
        pred = nn.predict(net, data.x_val) * COORD_SCALE
    if not np.all(np.isfinite(pred)):
        return infeasible("non-finite validation predictions")
    metrics = center_metrics(pred, data.y_val * COORD_SCALE, options.quantile)
    metrics["model_size"] = float(nn.param_count(spec))
    metrics["macs"] = float(nn.mac_count(spec))
    return TaskResult(metrics, True, "", {"epochs": epochs, "epoch_cap": options.epoch_cap})


def holdout_errors(
    config: Configuration | dict, options: BraggOptions, seed: int, n_test: int = 1000, test_seed: int = 10_007
) -> np.ndarray:
    """Retrain a configuration exactly as in the search and return per-peak
    center errors (pixels) on a fresh, independently generated test set."""
    net, _ = train_model(config, options, seed)
    pixels, centers = bragg_arrays(n_test, options.noise_sigma, test_seed)
    pred = nn.predict(net, prepare_inputs(pixels)) * COORD_SCALE
    return np.hypot(*(pred - centers).T)
