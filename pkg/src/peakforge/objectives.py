"""Objective vectors, running normalization and Chebyshev scalarization.

Internally every objective is handled in *minimization form*: maximized
objectives are negated once, at the boundary, by :meth:`ObjectiveSpec.to_min`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

MINIMIZE = "minimize"
MAXIMIZE = "maximize"
_DIRECTION_ALIASES = {"min": MINIMIZE, "minimize": MINIMIZE, "max": MAXIMIZE, "maximize": MAXIMIZE}

DEFAULT_RHO = 0.05


class ObjectiveError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectiveSpec:
    names: tuple[str, ...]
    directions: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "directions", tuple(_DIRECTION_ALIASES.get(d, d) for d in self.directions))
        if not self.names:
            raise ObjectiveError("objective list must be non-empty")
        if not all(isinstance(n, str) and n.strip() for n in self.names):
            raise ObjectiveError(f"objective names must be non-empty strings: {self.names}")
        if len(set(self.names)) != len(self.names):
            raise ObjectiveError(f"objective names must be unique: {self.names}")
        if len(self.directions) != len(self.names):
            raise ObjectiveError("one direction per objective required")
        bad = [d for d in self.directions if d not in (MINIMIZE, MAXIMIZE)]
        if bad:
            raise ObjectiveError(f"unknown direction(s) {bad}")

    @classmethod
    def parse(cls, tokens: Sequence[str] | str) -> "ObjectiveSpec":
        """Build a spec from ``name:min|max`` tokens (direction defaults to min)."""
        if isinstance(tokens, str):
            tokens = tokens.replace(",", " ").split()
        names, dirs = [], []
        for tok in tokens:
            name, _, d = tok.partition(":")
            d = d or "min"
            if d not in _DIRECTION_ALIASES:
                raise ObjectiveError(f"bad direction in {tok!r}; use name:min or name:max")
            names.append(name)
            dirs.append(_DIRECTION_ALIASES[d])
        return cls(tuple(names), tuple(dirs))

    @classmethod
    def minimize(cls, *names: str) -> "ObjectiveSpec":
        return cls(tuple(names), (MINIMIZE,) * len(names))

    def __len__(self) -> int:
        return len(self.names)

    @property
    def signs(self) -> np.ndarray:
        return np.array([1.0 if d == MINIMIZE else -1.0 for d in self.directions])

    def check(self, values: Mapping[str, float]) -> None:
        if set(values) != set(self.names):
            raise ObjectiveError(f"objective keys {sorted(values)} do not match {list(self.names)}")
        for k in self.names:
            if not math.isfinite(values[k]):
                raise ObjectiveError(f"objective {k} is not finite: {values[k]!r}")

    def to_min(self, values: Mapping[str, float]) -> np.ndarray:
        """Objective mapping -> array in minimization form."""
        self.check(values)
        return np.array([float(values[k]) for k in self.names]) * self.signs

    def to_tokens(self) -> list[str]:
        return [f"{n}:{'min' if d == MINIMIZE else 'max'}" for n, d in zip(self.names, self.directions)]

    def to_dict(self) -> dict:
        return {"names": list(self.names), "directions": list(self.directions)}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ObjectiveSpec":
        return cls(tuple(doc["names"]), tuple(doc["directions"]))


class NormalizationState:
    """Running per-objective min/max (in minimization form) over completed trials."""

    def __init__(self, d: int):
        self.lo = np.full(d, np.inf)
        self.hi = np.full(d, -np.inf)
        self.count = 0

    def update(self, y: np.ndarray) -> None:
        y = np.asarray(y, dtype=float)
        np.minimum(self.lo, y, out=self.lo)
        np.maximum(self.hi, y, out=self.hi)
        self.count += 1

    def copy(self) -> "NormalizationState":
        other = NormalizationState(len(self.lo))
        other.lo, other.hi, other.count = self.lo.copy(), self.hi.copy(), self.count
        return other

    def __eq__(self, other):
        if not isinstance(other, NormalizationState):
            return NotImplemented
        return self.count == other.count and np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    def normalize(self, y: np.ndarray) -> np.ndarray:
        """Min-max normalize a minimization-form vector into [0, 1]^d."""
        if self.count == 0:
            raise ObjectiveError("normalization needs at least one observed trial")
        y = np.asarray(y, dtype=float)
        span = self.hi - self.lo
        out = np.zeros_like(y)
        ok = span > 0
        out[ok] = (y[ok] - self.lo[ok]) / span[ok]
        return np.clip(out, 0.0, 1.0)


def normalize(values: Mapping[str, float], norm: NormalizationState, spec: ObjectiveSpec) -> np.ndarray:
    return norm.normalize(spec.to_min(values))


def chebyshev(normalized: np.ndarray, weights: np.ndarray, rho: float = DEFAULT_RHO) -> float:
    """Augmented Chebyshev scalarization with the ideal point at the origin.

    ``max_i(w_i * y_i) + rho * sum_i(w_i * y_i)``
    """
    wy = np.asarray(weights, dtype=float) * np.asarray(normalized, dtype=float)
    if wy.ndim != 1:
        raise ObjectiveError("chebyshev expects 1-D vectors of equal length")
    return float(wy.max() + rho * wy.sum())


def chebyshev_batch(normalized: np.ndarray, weights: np.ndarray, rho: float = DEFAULT_RHO) -> np.ndarray:
    wy = np.asarray(normalized, dtype=float) * np.asarray(weights, dtype=float)
    return wy.max(axis=-1) + rho * wy.sum(axis=-1)


def sample_weights(d: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from the (d-1)-simplex via normalized exponentials."""
    if d < 1:
        raise ObjectiveError("need at least one objective")
    if d == 1:
        return np.ones(1)
    e = rng.standard_exponential(d)
    return e / e.sum()


def scalarize(
    values: Mapping[str, float],
    norm: NormalizationState,
    spec: ObjectiveSpec,
    weights: np.ndarray,
    rho: float = DEFAULT_RHO,
) -> float:
    """Collapse an objective mapping to a scalar (raw passthrough for one objective)."""
    if len(spec) == 1:
        return float(spec.to_min(values)[0])
    return chebyshev(norm.normalize(spec.to_min(values)), weights, rho)
