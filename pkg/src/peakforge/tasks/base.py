from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any


@dataclass
class TaskResult:
    """Outcome of one evaluation. ``objectives`` is None when infeasible."""

    objectives: dict[str, float] | None
    feasible: bool
    detail: str = ""
    info: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.feasible and self.objectives is not None:
            raise ValueError("an infeasible result carries no objectives")
        if self.feasible and self.objectives is None:
            raise ValueError("a feasible result needs objectives")


def infeasible(detail: str, **info: Any) -> TaskResult:
    return TaskResult(None, False, detail, dict(info))
