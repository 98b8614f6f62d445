"""Cheap analytic objectives for validating the optimizer itself."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..space import Configuration
from .base import TaskResult


def _vector(config: Configuration | dict, n: int) -> np.ndarray:
    values = config.values if isinstance(config, Configuration) else config
    return np.array([float(values[f"x{i + 1}"]) for i in range(n)])


def sphere3(x: np.ndarray) -> dict[str, float]:
    return {"f": float(np.sum(np.asarray(x) ** 2))}


def zdt1(x: np.ndarray) -> dict[str, float]:
    x = np.asarray(x, dtype=float)
    f1 = float(x[0])
    g = 1.0 + 9.0 * float(np.mean(x[1:]))
    return {"f1": f1, "f2": float(g * (1.0 - np.sqrt(f1 / g)))}


_FUNCS = {"sphere3": (sphere3, 3, ("f",)), "zdt1": (zdt1, 5, ("f1", "f2"))}


@dataclass(frozen=True)
class AnalyticTask:
    name: str

    def __post_init__(self):
        if self.name not in _FUNCS:
            raise ValueError(f"unknown analytic task {self.name!r}")

    @property
    def spaces(self) -> tuple[str, ...]:
        return (self.name,)

    @property
    def objective_names(self) -> tuple[str, ...]:
        return _FUNCS[self.name][2]

    def __call__(self, config: Configuration | dict, seed: int = 0) -> TaskResult:
        return analytic_task(self.name, config)


def analytic_task(name: str, config: Configuration | dict) -> TaskResult:
    fn, n, _ = _FUNCS[name]
    return TaskResult(fn(_vector(config, n)), True)
