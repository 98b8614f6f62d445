"""Synthetic far-field reconstruction task: diffraction magnitude -> (amplitude, phase)."""

from __future__ import annotations

import functools
import time
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .. import nnkernel as nn
from ..space import Configuration
from .base import TaskResult, infeasible

SIZE = 16
OBJECTIVES = ("val_mae", "val_mae_amplitude", "val_mae_phase", "model_size", "macs")


@dataclass(frozen=True)
class PtychoSample:
    input: np.ndarray  # (16, 16) compressed diffraction magnitude in [0, 1]
    amplitude: np.ndarray  # (16, 16) in [0, 1]
    phase: np.ndarray  # (16, 16) in [-pi, pi]


def _rescale(field: np.ndarray, lo: float, hi: float) -> np.ndarray:
    span = field.max() - field.min()
    if span == 0:
        return np.full_like(field, lo)
    return lo + (hi - lo) * (field - field.min()) / span


def diffraction_magnitude(amplitude: np.ndarray, phase: np.ndarray) -> np.ndarray:
    """``|fftshift(fft2(amplitude * exp(i * phase)))|`` before any compression."""
    return np.abs(np.fft.fftshift(np.fft.fft2(amplitude * np.exp(1j * phase))))


def compress(magnitude: np.ndarray) -> np.ndarray:
    out = np.log1p(magnitude)
    peak = out.max()
    return out / peak if peak > 0 else out


# Fixed off-center, anisotropic support. Without it |DFT| is blind to
# translations and to the conjugate twin, and nothing is learnable.
_YY, _XX = np.mgrid[0:SIZE, 0:SIZE].astype(float)
ENVELOPE = np.exp(-((_XX - 7.0) ** 2 / (2 * 3.0**2) + (_YY - 8.5) ** 2 / (2 * 4.5**2)))


def make_sample(rng: np.random.Generator) -> PtychoSample:
    texture = _rescale(gaussian_filter(rng.standard_normal((SIZE, SIZE)), 2.0, mode="reflect"), 0.2, 1.0)
    amp = ENVELOPE * texture
    phase = _rescale(gaussian_filter(rng.standard_normal((SIZE, SIZE)), 4.0, mode="reflect"), -np.pi, np.pi)
    return PtychoSample(compress(diffraction_magnitude(amp, phase)), amp, phase)


def generate_ptycho_dataset(n: int, seed: int = 0) -> list[PtychoSample]:
    if n < 1:
        raise ValueError("n must be >= 1")
    return [make_sample(np.random.default_rng([seed, i])) for i in range(n)]


@functools.lru_cache(maxsize=4)
def ptycho_arrays(n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    samples = generate_ptycho_dataset(n, seed)
    arrays = tuple(np.stack([getattr(s, k) for s in samples]) for k in ("input", "amplitude", "phase"))
    for a in arrays:
        a.flags.writeable = False
    return arrays


@dataclass(frozen=True)
class PtychoOptions:
    n_train: int = 1000
    n_val: int = 200
    epoch_cap: int = 100
    data_seed: int = 0
    time_limit: float | None = None  # seconds of training per evaluation


def build_network(config: Configuration | dict, init_seed: int = 0, zero_heads: bool = False) -> nn.NetworkSpec:
    """Encoder + two decoder heads; the output is (2, 16, 16) for cnn, (512,) for mlp."""
    values = config.values if isinstance(config, Configuration) else config
    head_init = "zeros" if zero_heads else "he"
    in_shape = (1, SIZE, SIZE)
    if "nunits" in values:
        units, depth = int(values["nunits"]), int(values["nhidden"])
        layers = [nn.flatten()]
        width = SIZE * SIZE
        for _ in range(depth):
            layers += [nn.dense(width, units), nn.relu()]
            width = units
        heads = ((nn.dense(width, SIZE * SIZE, head_init),), (nn.dense(width, SIZE * SIZE, head_init),))
        return nn.NetworkSpec(tuple(layers), in_shape, init_seed, heads)
    f = int(values["nfilters"])
    layers = []
    channels, spatial = 1, SIZE
    for i in range(int(values["enconv"])):
        layers += [nn.conv2d(channels, f, 3, "same"), nn.relu()]
        channels = f
        if i % 2 == 1 and spatial >= 4:
            layers.append(nn.maxpool2d())
            spatial //= 2
    heads = []
    for key, act in (("deconv1", nn.sigmoid()), ("deconv2", nn.tanh(np.pi))):
        head = []
        out_spatial = spatial
        for _ in range(int(values[key])):
            head += [nn.upsample2d(), nn.conv2d(f, f, 3, "same"), nn.relu()]
            out_spatial *= 2
        if out_spatial != SIZE:
            raise nn.ShapeError(f"{key}: decoder restores {out_spatial}x{out_spatial}, need {SIZE}x{SIZE}")
        head += [nn.conv2d(f, 1, 3, "same", head_init), act]
        heads.append(tuple(head))
    return nn.NetworkSpec(tuple(layers), in_shape, init_seed, tuple(heads))


def _targets(amp: np.ndarray, phase: np.ndarray, flat: bool) -> np.ndarray:
    y = np.stack([amp, phase], axis=1)  # (n, 2, 16, 16)
    return y.reshape(len(y), -1) if flat else y


def split_outputs(pred: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = pred.reshape(len(pred), 2, SIZE, SIZE)
    return p[:, 0], p[:, 1]


def _dataset(options: PtychoOptions, flat: bool) -> nn.Dataset:
    x, amp, phase = ptycho_arrays(options.n_train + options.n_val, options.data_seed)
    y = _targets(amp, phase, flat)
    x = x[:, None]
    k = options.n_train
    return nn.Dataset(x[:k], y[:k], x[k:], y[k:])


def reconstruction_metrics(pred: np.ndarray, target: np.ndarray) -> dict[str, float]:
    pa, pp = split_outputs(pred)
    ta, tp = split_outputs(target)
    amp_mae = float(np.mean(np.abs(pa - ta)))
    phase_mae = float(np.mean(np.abs(pp - tp)))
    return {"val_mae": 0.5 * (amp_mae + phase_mae), "val_mae_amplitude": amp_mae, "val_mae_phase": phase_mae}


@dataclass(frozen=True)
class PtychoTask:
    options: PtychoOptions = PtychoOptions()

    name = "ptycho"
    spaces = ("mlpPtycho", "cnnPtycho")
    objective_names = OBJECTIVES

    def __call__(self, config: Configuration | dict, seed: int) -> TaskResult:
        return eval_ptycho(config, self.options, seed)


def eval_ptycho(config: Configuration | dict, options: PtychoOptions = PtychoOptions(), seed: int = 0) -> TaskResult:
    values = config.values if isinstance(config, Configuration) else config
    init_seed, shuffle_seed = (int(s) for s in np.random.SeedSequence(seed).generate_state(2))
    try:
        spec = build_network(values, init_seed)
        nn.output_shape(spec)
    except nn.ShapeError as exc:
        return infeasible(f"infeasible architecture: {exc}")
    flat = "nunits" in values
    data = _dataset(options, flat)
    net = nn.Network(spec)
    epochs = min(int(values["nepochs"]), options.epoch_cap)
    cfg = nn.TrainConfig(
        epochs=epochs,
        batch_size=min(int(values["batch"]), len(data.x_train)),
        learning_rate=float(values["lr"]),
        optimizer="adam",
        loss="mae",
        shuffle_seed=shuffle_seed,
        deadline=None if options.time_limit is None else time.monotonic() + options.time_limit,
    )
    try:
        nn.train(net, data, cfg)
    except nn.DivergenceError as exc:
        return infeasible(f"training diverged: {exc}")
    with np.errstate(over="ignore", invalid="ignore"):
        pred = nn.predict(net, data.x_val)
    if not np.all(np.isfinite(pred)):
        return infeasible("non-finite validation predictions")
    metrics = reconstruction_metrics(pred, data.y_val)
    metrics["model_size"] = float(nn.param_count(spec))
    metrics["macs"] = float(nn.mac_count(spec))
    return TaskResult(metrics, True, "", {"epochs": epochs, "epoch_cap": options.epoch_cap})
