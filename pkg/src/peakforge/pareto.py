"""Pareto archive and exact hypervolume (d <= 3).

All arrays here are in minimization form (see ``ObjectiveSpec.to_min``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import _accel
from .objectives import ObjectiveSpec


class HypervolumeError(ValueError):
    pass


class ReferencePointError(HypervolumeError):
    pass


def dominates(a: np.ndarray, b: np.ndarray) -> bool:
    """True iff ``a`` is no worse than ``b`` everywhere and strictly better somewhere."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return bool(np.all(a <= b) and np.any(a < b))


def dominates_values(a: Mapping[str, float], b: Mapping[str, float], spec: ObjectiveSpec) -> bool:
    return dominates(spec.to_min(a), spec.to_min(b))


# -- non-dominated filtering kernels ------------------------------------


@_accel.njit
def _nondominated_numba(points):
    n, d = points.shape
    keep = np.ones(n, dtype=np.bool_)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            le = True
            lt = False
            for k in range(d):
                if points[j, k] > points[i, k]:
                    le = False
                    break
                if points[j, k] < points[i, k]:
                    lt = True
            # j dominates i, or j duplicates i and came first
            if le and (lt or j < i):
                keep[i] = False
                break
    return keep


def _nondominated_numpy(points):
    p = np.asarray(points, dtype=float)
    n = len(p)
    le = np.all(p[:, None, :] <= p[None, :, :], axis=2)  # le[j, i]: p_j <= p_i
    lt = np.any(p[:, None, :] < p[None, :, :], axis=2)
    earlier = np.tri(n, k=-1, dtype=bool).T  # earlier[j, i]: j < i
    beaten = le & (lt | earlier)
    np.fill_diagonal(beaten, False)
    return ~beaten.any(axis=0)


def nondominated_mask(points: np.ndarray) -> np.ndarray:
    """Boolean mask of non-dominated rows; among exact duplicates only the first is kept."""
    points = np.ascontiguousarray(points, dtype=float)
    if points.ndim != 2:
        raise ValueError("points must be a 2-D array")
    if len(points) == 0:
        return np.zeros(0, dtype=bool)
    return _accel.pick(_nondominated_numba, _nondominated_numpy)(points)


# -- hypervolume --------------------------------------------------------


def _hv2d(points: np.ndarray, ref: np.ndarray) -> float:
    if len(points) == 0:
        return 0.0
    order = np.lexsort((points[:, 1], points[:, 0]))
    p = points[order]
    total = 0.0
    best_y = ref[1]
    # sweep left to right; each point adds a strip from its x to the next improving x
    xs, ys = [], []
    for x, y in p:
        if y < best_y:
            xs.append(x)
            ys.append(y)
            best_y = y
    xs.append(ref[0])
    for i in range(len(ys)):
        total += (xs[i + 1] - xs[i]) * (ref[1] - ys[i])
    return float(total)


def _hv3d(points: np.ndarray, ref: np.ndarray) -> float:
    if len(points) == 0:
        return 0.0
    order = np.argsort(points[:, 2], kind="mergesort")
    p = points[order]
    total = 0.0
    for i in range(len(p)):
        z_next = p[i + 1, 2] if i + 1 < len(p) else ref[2]
        depth = z_next - p[i, 2]
        if depth > 0:
            total += depth * _hv2d(p[: i + 1, :2], ref[:2])
    return float(total)


def hypervolume(points: np.ndarray | Sequence[Sequence[float]], reference: Sequence[float]) -> float:
    """Lebesgue measure of the union of boxes ``[p, reference]``; d in {1, 2, 3}."""
    ref = np.asarray(reference, dtype=float)
    pts = np.asarray(points, dtype=float).reshape(-1, len(ref))
    if len(pts) == 0:
        return 0.0
    if np.any(pts > ref):
        bad = int(np.argwhere(np.any(pts > ref, axis=1))[0, 0])
        raise ReferencePointError(f"point {pts[bad].tolist()} exceeds reference {ref.tolist()}")
    d = len(ref)
    if d == 1:
        return float(ref[0] - pts[:, 0].min())
    pts = pts[nondominated_mask(pts)]
    if d == 2:
        return _hv2d(pts, ref)
    if d == 3:
        return _hv3d(pts, ref)
    raise HypervolumeError(f"exact hypervolume supports d <= 3, got d = {d}")


def contributions(points: np.ndarray, reference: Sequence[float]) -> np.ndarray:
    """Exclusive hypervolume contribution of every point."""
    pts = np.asarray(points, dtype=float)
    total = hypervolume(pts, reference)
    out = np.empty(len(pts))
    for i in range(len(pts)):
        out[i] = total - hypervolume(np.delete(pts, i, axis=0), reference)
    return out


def reference_point(points: np.ndarray) -> np.ndarray:
    """Per-objective max scaled outward by 10% (of |max|, or of the range when max is 0)."""
    pts = np.asarray(points, dtype=float)
    hi = pts.max(axis=0)
    lo = pts.min(axis=0)
    pad = 0.1 * np.maximum(np.abs(hi), hi - lo)
    pad[pad == 0] = 0.1
    return hi + pad


# -- archive ------------------------------------------------------------


@dataclass
class InsertResult:
    accepted: bool
    evicted: list[int] = field(default_factory=list)


class ParetoArchive:
    """Mutually non-dominated set of (trial_id, objectives) entries."""

    def __init__(self, spec: ObjectiveSpec):
        self.spec = spec
        self._ids: list[int] = []
        self._values: list[dict[str, float]] = []
        self._points = np.empty((0, len(spec)))

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def trial_ids(self) -> list[int]:
        return list(self._ids)

    @property
    def points(self) -> np.ndarray:
        """Entries in minimization form, shape (n, d)."""
        return self._points.copy()

    def entries(self) -> list[tuple[int, dict[str, float]]]:
        return [(i, dict(v)) for i, v in zip(self._ids, self._values)]

    def insert(self, trial_id: int, values: Mapping[str, float]) -> InsertResult:
        y = self.spec.to_min(values)
        p = self._points
        if len(p):
            # an exact duplicate also blocks (earliest representative is kept)
            if np.any(np.all(p <= y, axis=1)):
                return InsertResult(False)
            gone = np.all(y <= p, axis=1) & np.any(y < p, axis=1)
        else:
            gone = np.zeros(0, dtype=bool)
        evicted = [tid for tid, g in zip(self._ids, gone) if g]
        keep = ~gone
        self._ids = [tid for tid, k in zip(self._ids, keep) if k] + [trial_id]
        self._values = [v for v, k in zip(self._values, keep) if k] + [dict(values)]
        self._points = np.vstack([p[keep], y[None, :]])
        return InsertResult(True, evicted)

    def hypervolume(self, reference: Sequence[float]) -> float:
        return hypervolume(self._points, reference)

    def copy(self) -> "ParetoArchive":
        other = ParetoArchive(self.spec)
        other._ids = list(self._ids)
        other._values = [dict(v) for v in self._values]
        other._points = self._points.copy()
        return other

    def sorted_entries(self) -> list[tuple[int, dict[str, float]]]:
        """Entries ordered by the first objective ascending (ties by trial id)."""
        first = self.spec.names[0]
        return sorted(self.entries(), key=lambda e: (e[1][first], e[0]))
