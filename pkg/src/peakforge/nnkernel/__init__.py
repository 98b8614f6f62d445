"""Small float64 dense/conv network engine with hand-written backward passes."""

from .checkpoint import load_tensors, load_weights, save_tensors, save_weights
from .layers import (
    LayerSpec,
    NetworkSpec,
    ShapeError,
    conv2d,
    dense,
    flatten,
    infer_shapes,
    mac_count,
    maxpool2d,
    output_shape,
    param_count,
    relu,
    sigmoid,
    tanh,
    upsample2d,
)
from .network import Network, build, forward
from .train import Dataset, DivergenceError, History, TrainConfig, TrainingTimeout, evaluate, loss, loss_grad, predict, train

__all__ = [
    "Dataset",
    "DivergenceError",
    "History",
    "LayerSpec",
    "Network",
    "NetworkSpec",
    "ShapeError",
    "TrainConfig",
    "TrainingTimeout",
    "build",
    "conv2d",
    "dense",
    "evaluate",
    "flatten",
    "forward",
    "infer_shapes",
    "load_tensors",
    "load_weights",
    "loss",
    "loss_grad",
    "mac_count",
    "maxpool2d",
    "output_shape",
    "param_count",
    "predict",
    "relu",
    "save_tensors",
    "save_weights",
    "sigmoid",
    "tanh",
    "train",
    "upsample2d",
]
