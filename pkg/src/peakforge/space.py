"""Hyperparameter search spaces: dimensions, configurations, sampling, encoding.

A space is flat: every dimension is always active. Configurations are
encoded into the unit hypercube (one coordinate per dimension) for the
surrogate model.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

CONTINUOUS = "continuous"
DISCRETE = "discrete-int"
CATEGORICAL = "categorical"
KINDS = (CONTINUOUS, DISCRETE, CATEGORICAL)
SCALES = ("linear", "log10")

_DIM_KEYS = {"name", "kind", "lower", "upper", "scale", "choices"}
_SPACE_KEYS = {"name", "dimensions", "architecture_dims"}


class SpaceError(ValueError):
    """Base class for invalid spaces and configurations."""


class UnknownPresetError(SpaceError, KeyError):
    pass


class SchemaError(SpaceError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{message} at {path}")


class DuplicateNameError(SchemaError):
    pass


class InvertedBoundsError(SchemaError):
    pass


class InvalidConfigurationError(SpaceError):
    pass


@dataclass(frozen=True)
class Dimension:
    name: str
    kind: str
    lower: float | None = None
    upper: float | None = None
    scale: str = "linear"
    choices: tuple[str, ...] = ()

    def __post_init__(self):
        _check_dimension(self, "dimension")

    @property
    def is_log(self) -> bool:
        return self.kind == CONTINUOUS and self.scale == "log10"

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.kind == CATEGORICAL:
            out["choices"] = list(self.choices)
        else:
            if self.kind == DISCRETE:
                out["lower"], out["upper"] = int(self.lower), int(self.upper)
            else:
                out["lower"], out["upper"] = self.lower, self.upper
                out["scale"] = self.scale
        return out


def _check_dimension(dim: Dimension, path: str) -> None:
    if not isinstance(dim.name, str) or not dim.name:
        raise SchemaError(f"{path}.name", "dimension name must be a non-empty string")
    if dim.kind not in KINDS:
        raise SchemaError(f"{path}.kind", f"unknown kind {dim.kind!r}, expected one of {KINDS}")
    if dim.kind == CATEGORICAL:
        if dim.lower is not None or dim.upper is not None:
            raise SchemaError(path, "categorical dimension takes no bounds")
        if len(dim.choices) < 2:
            raise SchemaError(f"{path}.choices", "categorical needs at least 2 choices")
        if len(set(dim.choices)) != len(dim.choices):
            raise SchemaError(f"{path}.choices", "categorical choices must be distinct")
        if not all(isinstance(c, str) for c in dim.choices):
            raise SchemaError(f"{path}.choices", "categorical choices must be strings")
        return
    if dim.choices:
        raise SchemaError(f"{path}.choices", f"{dim.kind} dimension takes no choices")
    for key in ("lower", "upper"):
        value = getattr(dim, key)
        if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
            raise SchemaError(f"{path}.{key}", f"{key} must be a finite number")
    if dim.lower >= dim.upper:
        raise InvertedBoundsError(path, "inverted bounds")
    if dim.kind == DISCRETE:
        if dim.lower != int(dim.lower) or dim.upper != int(dim.upper):
            raise SchemaError(path, "discrete-int bounds must be integers")
        if dim.scale != "linear":
            raise SchemaError(f"{path}.scale", "discrete-int dimensions are linear")
    if dim.scale not in SCALES:
        raise SchemaError(f"{path}.scale", f"unknown scale {dim.scale!r}")
    if dim.scale == "log10" and dim.lower <= 0:
        raise SchemaError(f"{path}.scale", "log10 scale requires lower > 0")


@dataclass(frozen=True)
class Configuration:
    """One concrete assignment of values to every dimension of a space."""

    values: Mapping[str, Any]
    space_name: str

    def __getitem__(self, name: str) -> Any:
        return self.values[name]

    def to_dict(self) -> dict[str, Any]:
        return dict(self.values)


@dataclass(frozen=True)
class SearchSpace:
    name: str
    dimensions: tuple[Dimension, ...]
    architecture_dims: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "dimensions", tuple(self.dimensions))
        object.__setattr__(self, "architecture_dims", frozenset(self.architecture_dims))
        seen = set()
        for i, dim in enumerate(self.dimensions):
            if dim.name in seen:
                raise DuplicateNameError(f"dimensions[{i}].name", f"duplicate dimension name {dim.name!r}")
            seen.add(dim.name)
        unknown = self.architecture_dims - seen
        if unknown:
            raise SchemaError("architecture_dims", f"unknown dimension(s) {sorted(unknown)}")

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dimensions]

    @property
    def training_dims(self) -> frozenset[str]:
        return frozenset(self.names) - self.architecture_dims

    def __len__(self) -> int:
        return len(self.dimensions)

    def dimension(self, name: str) -> Dimension:
        for d in self.dimensions:
            if d.name == name:
                return d
        raise KeyError(name)

    # -- validation ------------------------------------------------------
    def validate(self, config: Configuration | Mapping[str, Any]) -> None:
        values = config.values if isinstance(config, Configuration) else config
        missing = set(self.names) - set(values)
        extra = set(values) - set(self.names)
        if missing or extra:
            raise InvalidConfigurationError(
                f"configuration keys mismatch for space {self.name!r}: missing={sorted(missing)} extra={sorted(extra)}"
            )
        for dim in self.dimensions:
            v = values[dim.name]
            if dim.kind == CATEGORICAL:
                if v not in dim.choices:
                    raise InvalidConfigurationError(f"{dim.name}={v!r} not among {dim.choices}")
            elif dim.kind == DISCRETE:
                if not isinstance(v, (int, np.integer)) or isinstance(v, bool):
                    raise InvalidConfigurationError(f"{dim.name}={v!r} is not an integer")
                if not dim.lower <= v <= dim.upper:
                    raise InvalidConfigurationError(f"{dim.name}={v} outside [{dim.lower}, {dim.upper}]")
            else:
                if not isinstance(v, (int, float, np.floating)) or not math.isfinite(v):
                    raise InvalidConfigurationError(f"{dim.name}={v!r} is not a finite real")
                if not dim.lower <= v <= dim.upper:
                    raise InvalidConfigurationError(f"{dim.name}={v} outside [{dim.lower}, {dim.upper}]")

    def make(self, **values: Any) -> Configuration:
        config = Configuration(dict(values), self.name)
        self.validate(config)
        return config

    # -- sampling --------------------------------------------------------
    def sample(self, rng: np.random.Generator) -> Configuration:
        values: dict[str, Any] = {}
        for dim in self.dimensions:
            if dim.kind == CATEGORICAL:
                values[dim.name] = dim.choices[int(rng.integers(len(dim.choices)))]
            elif dim.kind == DISCRETE:
                values[dim.name] = int(rng.integers(int(dim.lower), int(dim.upper) + 1))
            elif dim.is_log:
                values[dim.name] = float(10.0 ** rng.uniform(math.log10(dim.lower), math.log10(dim.upper)))
            else:
                values[dim.name] = float(rng.uniform(dim.lower, dim.upper))
        return Configuration(values, self.name)

    def sample_encoded(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` random configurations directly in encoded form, shape (n, d).

        Same per-dimension distributions as :meth:`sample`; used to build
        large acquisition candidate pools without materializing dicts.
        """
        out = np.empty((n, len(self.dimensions)))
        for j, dim in enumerate(self.dimensions):
            if dim.kind == CATEGORICAL:
                k = len(dim.choices)
                out[:, j] = rng.integers(k, size=n) / (k - 1)
            elif dim.kind == DISCRETE:
                lo, hi = int(dim.lower), int(dim.upper)
                out[:, j] = (rng.integers(lo, hi + 1, size=n) - lo) / (hi - lo)
            else:
                out[:, j] = rng.uniform(0.0, 1.0, size=n)
        return out

    # -- encoding --------------------------------------------------------
    def encode(self, config: Configuration | Mapping[str, Any]) -> np.ndarray:
        self.validate(config)
        values = config.values if isinstance(config, Configuration) else config
        x = np.empty(len(self.dimensions))
        for j, dim in enumerate(self.dimensions):
            v = values[dim.name]
            if dim.kind == CATEGORICAL:
                x[j] = dim.choices.index(v) / (len(dim.choices) - 1)
            elif dim.is_log:
                lo, hi = math.log10(dim.lower), math.log10(dim.upper)
                x[j] = (math.log10(v) - lo) / (hi - lo)
            else:
                x[j] = (v - dim.lower) / (dim.upper - dim.lower)
        return x

    def decode(self, x: Sequence[float]) -> Configuration:
        """Map a point of the unit hypercube back to a configuration.

        Coordinates are clipped to [0, 1]. Integer and categorical values are
        rounded to the nearest admissible value, ties toward the lower one.
        """
        x = np.asarray(x, dtype=float)
        if x.shape != (len(self.dimensions),):
            raise SpaceError(f"encoded vector has shape {x.shape}, expected ({len(self.dimensions)},)")
        values: dict[str, Any] = {}
        for j, dim in enumerate(self.dimensions):
            u = min(max(float(x[j]), 0.0), 1.0)
            if dim.kind == CATEGORICAL:
                k = len(dim.choices)
                values[dim.name] = dim.choices[_round_half_down(u * (k - 1))]
            elif dim.kind == DISCRETE:
                lo, hi = int(dim.lower), int(dim.upper)
                values[dim.name] = min(hi, max(lo, lo + _round_half_down(u * (hi - lo))))
            elif dim.is_log:
                lo, hi = math.log10(dim.lower), math.log10(dim.upper)
                v = 10.0 ** (lo + u * (hi - lo))
                values[dim.name] = min(max(v, dim.lower), dim.upper)
            else:
                v = dim.lower + u * (dim.upper - dim.lower)
                values[dim.name] = min(max(v, dim.lower), dim.upper)
        return Configuration(values, self.name)

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "dimensions": [d.to_dict() for d in self.dimensions],
            "architecture_dims": [n for n in self.names if n in self.architecture_dims],
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def _round_half_down(v: float) -> int:
    return int(math.ceil(v - 0.5))


def sample(space: SearchSpace, rng: np.random.Generator) -> Configuration:
    return space.sample(rng)


def encode(space: SearchSpace, config: Configuration | Mapping[str, Any]) -> np.ndarray:
    return space.encode(config)


def decode(space: SearchSpace, x: Sequence[float]) -> Configuration:
    return space.decode(x)


# -- space files --------------------------------------------------------


def space_from_dict(doc: Any) -> SearchSpace:
    if not isinstance(doc, dict):
        raise SchemaError("$", "space document must be a JSON object")
    unknown = set(doc) - _SPACE_KEYS
    if unknown:
        raise SchemaError(f"$.{sorted(unknown)[0]}", "unknown key")
    if not isinstance(doc.get("name"), str) or not doc["name"]:
        raise SchemaError("name", "space name must be a non-empty string")
    dims_doc = doc.get("dimensions")
    if not isinstance(dims_doc, list) or not dims_doc:
        raise SchemaError("dimensions", "dimensions must be a non-empty list")
    dims = []
    seen: set[str] = set()
    for i, d in enumerate(dims_doc):
        path = f"dimensions[{i}]"
        if not isinstance(d, dict):
            raise SchemaError(path, "dimension must be an object")
        unknown = set(d) - _DIM_KEYS
        if unknown:
            raise SchemaError(f"{path}.{sorted(unknown)[0]}", "unknown key")
        for key in ("name", "kind"):
            if key not in d:
                raise SchemaError(f"{path}.{key}", "missing required key")
        choices = d.get("choices", ())
        if not isinstance(choices, (list, tuple)):
            raise SchemaError(f"{path}.choices", "choices must be a list")
        if d["kind"] != CATEGORICAL:
            for key in ("lower", "upper"):
                if key not in d:
                    raise SchemaError(f"{path}.{key}", "missing required key")
        lower, upper = d.get("lower"), d.get("upper")
        if d["kind"] == DISCRETE:
            # integral floats (e.g. 1.0) are accepted for integer bounds
            lower = int(lower) if isinstance(lower, float) and lower.is_integer() else lower
            upper = int(upper) if isinstance(upper, float) and upper.is_integer() else upper
        dim = _build_dimension(
            path,
            name=d["name"],
            kind=d["kind"],
            lower=lower,
            upper=upper,
            scale=d.get("scale", "linear"),
            choices=tuple(choices),
        )
        if dim.name in seen:
            raise DuplicateNameError(f"{path}.name", f"duplicate dimension name {dim.name!r}")
        seen.add(dim.name)
        dims.append(dim)
    arch = doc.get("architecture_dims", [])
    if not isinstance(arch, list) or not all(isinstance(a, str) for a in arch):
        raise SchemaError("architecture_dims", "architecture_dims must be a list of names")
    for i, a in enumerate(arch):
        if a not in seen:
            raise SchemaError(f"architecture_dims[{i}]", f"unknown dimension {a!r}")
    return SearchSpace(doc["name"], tuple(dims), frozenset(arch))


def _build_dimension(path: str, **kwargs) -> Dimension:
    dim = object.__new__(Dimension)
    for k, v in kwargs.items():
        object.__setattr__(dim, k, v)
    _check_dimension(dim, path)
    return dim


def load_space(document: str | bytes | Mapping[str, Any]) -> SearchSpace:
    """Parse a JSON space document (text or already-decoded object)."""
    if isinstance(document, (str, bytes)):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError("$", f"invalid JSON: {exc}") from exc
    else:
        doc = document
    return space_from_dict(doc)


def dump_space(space: SearchSpace) -> str:
    return space.to_json()


# -- presets ------------------------------------------------------------

_NEPOCHS = Dimension("nepochs", DISCRETE, 1, 1000)
_BATCH = Dimension("batch", CATEGORICAL, choices=("8", "16", "32", "64"))
_LR = Dimension("lr", CONTINUOUS, 0.001, 1.0, scale="log10")


def _mlp(name: str) -> SearchSpace:
    return SearchSpace(
        name,
        (
            _NEPOCHS,
            Dimension("nunits", DISCRETE, 1, 1000),
            Dimension("nhidden", DISCRETE, 1, 10),
            _BATCH,
            _LR,
        ),
        frozenset({"nunits", "nhidden"}),
    )


def _cnn_bragg() -> SearchSpace:
    return SearchSpace(
        "cnnBragg",
        (
            _NEPOCHS,
            _BATCH,
            _LR,
            Dimension("nfilters", DISCRETE, 1, 256),
            Dimension("nconv", DISCRETE, 1, 128),
        ),
        frozenset({"nfilters", "nconv"}),
    )


def _cnn_ptycho() -> SearchSpace:
    return SearchSpace(
        "cnnPtycho",
        (
            _NEPOCHS,
            _BATCH,
            _LR,
            Dimension("nfilters", DISCRETE, 1, 256),
            Dimension("enconv", DISCRETE, 1, 128),
            Dimension("deconv1", DISCRETE, 1, 128),
            Dimension("deconv2", DISCRETE, 1, 128),
        ),
        frozenset({"nfilters", "enconv", "deconv1", "deconv2"}),
    )


def _analytic(name: str, n: int, lower: float, upper: float) -> SearchSpace:
    return SearchSpace(name, tuple(Dimension(f"x{i + 1}", CONTINUOUS, lower, upper) for i in range(n)))


_PRESETS = {
    "mlpBragg": lambda: _mlp("mlpBragg"),
    "cnnBragg": _cnn_bragg,
    "mlpPtycho": lambda: _mlp("mlpPtycho"),
    "cnnPtycho": _cnn_ptycho,
}

_ANALYTIC = {
    "sphere3": lambda: _analytic("sphere3", 3, -1.0, 1.0),
    "zdt1": lambda: _analytic("zdt1", 5, 0.0, 1.0),
}

PRESET_NAMES = tuple(_PRESETS)


def builtin_space(name: str) -> SearchSpace:
    """Return one of the four architecture/training presets (or an analytic test space)."""
    if name in _PRESETS:
        return _PRESETS[name]()
    if name in _ANALYTIC:
        return _ANALYTIC[name]()
    raise UnknownPresetError(f"unknown preset {name!r}; available: {', '.join(list(_PRESETS) + list(_ANALYTIC))}")


def builtin_names() -> list[str]:
    return list(_PRESETS) + list(_ANALYTIC)
