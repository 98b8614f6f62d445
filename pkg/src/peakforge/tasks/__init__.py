"""Built-in evaluator tasks.

An evaluator is any callable ``(config, seed) -> TaskResult``; built-ins also
expose ``name``, ``spaces`` and ``objective_names``.
"""

from __future__ import annotations

from .analytic import AnalyticTask, analytic_task
from .base import TaskResult, infeasible
from .bragg import (
    BraggOptions,
    BraggTask,
    PeakPatch,
    PseudoVoigtParams,
    centroid_fit,
    eval_bragg,
    generate_bragg_dataset,
    pseudo_voigt,
)
from .ptycho import PtychoOptions, PtychoSample, PtychoTask, eval_ptycho, generate_ptycho_dataset

BUILTIN_TASKS = ("bragg", "ptycho", "sphere3", "zdt1")


def get_task(name: str, *, n_train=None, n_val=None, noise_sigma=None, epoch_cap=None, data_seed=None, time_limit=None):
    """Instantiate a built-in task; unset options keep the task defaults."""
    overrides = {
        k: v
        for k, v in dict(
            n_train=n_train, n_val=n_val, noise_sigma=noise_sigma, epoch_cap=epoch_cap, data_seed=data_seed, time_limit=time_limit
        ).items()
        if v is not None
    }
    if name == "bragg":
        return BraggTask(BraggOptions(**overrides))
    if name == "ptycho":
        overrides.pop("noise_sigma", None)
        return PtychoTask(PtychoOptions(**overrides))
    if name in ("sphere3", "zdt1"):
        return AnalyticTask(name)
    raise KeyError(f"unknown task {name!r}; built-ins: {', '.join(BUILTIN_TASKS)}")


__all__ = [
    "AnalyticTask",
    "BUILTIN_TASKS",
    "BraggOptions",
    "BraggTask",
    "PeakPatch",
    "PseudoVoigtParams",
    "PtychoOptions",
    "PtychoSample",
    "PtychoTask",
    "TaskResult",
    "analytic_task",
    "centroid_fit",
    "eval_bragg",
    "eval_ptycho",
    "generate_bragg_dataset",
    "generate_ptycho_dataset",
    "get_task",
    "infeasible",
    "pseudo_voigt",
]
