"""Asynchronous model-based search (AMBS) and the random-search baseline.

Every random stream is keyed by ``(master_seed, trial_id)``: the proposal
for trial ``t`` depends only on the seed, ``t`` and the set of trials
completed (or in flight) when it is made. With one worker this makes a run,
and a resumed run, fully reproducible.
"""

from __future__ import annotations

import concurrent.futures as cf
import logging
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from . import surrogate
from .objectives import DEFAULT_RHO, NormalizationState, ObjectiveSpec, chebyshev, sample_weights
from .pareto import ParetoArchive, reference_point
from .space import Configuration, SearchSpace
from .tasks.base import TaskResult

log = logging.getLogger(__name__)

PENDING, RUNNING, OK, FAILED = "pending", "running", "ok", "failed"
FAILED_PENALTY = 2.0
PENALTY_WINDOW = 10
MODES = ("ambs", "random")

Evaluator = Callable[[Configuration, int], TaskResult]


@dataclass(frozen=True)
class SearchBudget:
    max_evaluations: int
    initial_random: int | None = None
    workers: int = 1
    wall_clock_limit: float | None = None

    def __post_init__(self):
        if self.max_evaluations < 1:
            raise ValueError("max_evaluations must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.initial_random is not None and not 1 <= self.initial_random <= self.max_evaluations:
            raise ValueError("initial_random must lie in [1, max_evaluations]")

    def warmup(self, space: SearchSpace) -> int:
        if self.initial_random is not None:
            return self.initial_random
        return min(self.max_evaluations, max(10, 2 * len(space)))


@dataclass(frozen=True)
class AcquisitionParams:
    kind: str = "lcb"
    kappa: float = 1.96
    candidate_pool: int = 512

    def __post_init__(self):
        if self.kind != "lcb":
            raise ValueError(f"unsupported acquisition {self.kind!r}")
        if self.kappa < 0 or self.candidate_pool < 1:
            raise ValueError("kappa must be >= 0 and candidate_pool >= 1")


@dataclass
class Trial:
    trial_id: int
    config: dict[str, Any]
    seed: int
    proposer: str
    status: str = PENDING
    objectives: dict[str, float] | None = None
    scalarized: float | None = None
    duration_s: float = 0.0
    detail: str = ""
    info: dict[str, Any] = field(default_factory=dict)
    started_at: str = ""
    finished_at: str = ""
    worker: int = 0
    weights: list[float] = field(default_factory=list)

    def to_record(self) -> dict[str, Any]:
        return {
            "trial_id": self.trial_id,
            "status": self.status,
            "proposer": self.proposer,
            "seed": self.seed,
            "config": self.config,
            "objectives": self.objectives,
            "scalarized": self.scalarized,
            "weights": self.weights,
            "duration_s": self.duration_s,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "worker": self.worker,
            "detail": self.detail,
            "info": self.info,
        }

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "Trial":
        return cls(
            trial_id=int(rec["trial_id"]),
            config=dict(rec["config"]),
            seed=int(rec["seed"]),
            proposer=rec["proposer"],
            status=rec["status"],
            objectives=None if rec.get("objectives") is None else {k: float(v) for k, v in rec["objectives"].items()},
            scalarized=rec.get("scalarized"),
            duration_s=float(rec.get("duration_s", 0.0)),
            detail=rec.get("detail", ""),
            info=dict(rec.get("info") or {}),
            started_at=rec.get("started_at", ""),
            finished_at=rec.get("finished_at", ""),
            worker=int(rec.get("worker", 0)),
            weights=list(rec.get("weights") or []),
        )


def trial_seed(master_seed: int, trial_id: int) -> int:
    """Training seed of one trial; independent of scheduling order."""
    return int(np.random.SeedSequence([master_seed, trial_id]).generate_state(1)[0])


def _stream(master_seed: int, trial_id: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng([master_seed, trial_id, purpose])


_PROPOSAL, _WEIGHTS = 1, 2


def rfc3339(ts: float) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).isoformat(timespec="microseconds").replace("+00:00", "Z")


# -- state --------------------------------------------------------------


class SearchState:
    """Everything the orchestrator learns from completed trials."""

    def __init__(self, space: SearchSpace, spec: ObjectiveSpec):
        self.space = space
        self.spec = spec
        self.norm = NormalizationState(len(spec))
        self.archive = ParetoArchive(spec)
        self.trials: list[Trial] = []
        self.ok_x: list[np.ndarray] = []
        self.ok_y: list[np.ndarray] = []  # minimization form
        self.failed: list[tuple[int, np.ndarray]] = []

    def record(self, trial: Trial) -> None:
        self.trials.append(trial)
        x = self.space.encode(trial.config)
        if trial.status == OK:
            y = self.spec.to_min(trial.objectives)
            self.norm.update(y)
            self.archive.insert(trial.trial_id, trial.objectives)
            self.ok_x.append(x)
            self.ok_y.append(y)
        else:
            self.failed.append((trial.trial_id, x))

    def scalarize(self, y: np.ndarray, weights: np.ndarray, rho: float) -> float:
        if len(self.spec) == 1:
            return float(y[0])
        return chebyshev(self.norm.normalize(y), weights, rho)

    def training_set(self, weights, rho, trial_id, in_flight: Sequence[np.ndarray]):
        """Forest inputs/targets: ok trials, recent failures, and liars for in-flight points."""
        X = list(self.ok_x)
        Y = [self.scalarize(y, weights, rho) for y in self.ok_y]
        if not Y:
            return np.empty((0, len(self.space))), np.empty(0)
        liar = float(np.mean(Y))
        if len(self.spec) == 1:
            lo, hi = min(Y), max(Y)
            penalty = hi + (hi - lo if hi > lo else 1.0)
        else:
            penalty = FAILED_PENALTY
        for fid, fx in self.failed:
            if 0 < trial_id - fid <= PENALTY_WINDOW:
                X.append(fx)
                Y.append(penalty)
        for fx in in_flight:
            X.append(fx)
            Y.append(liar)
        return np.array(X), np.array(Y)


def scalarize_trial(values, norm: NormalizationState, spec: ObjectiveSpec, weights, rho: float = DEFAULT_RHO) -> float:
    if len(spec) == 1:
        return float(spec.to_min(values)[0])
    return chebyshev(norm.normalize(spec.to_min(values)), np.asarray(weights), rho)


def propose(
    forest: surrogate.RegressionForest,
    space: SearchSpace,
    acq: AcquisitionParams,
    rng: np.random.Generator,
) -> Configuration:
    """Lower-confidence-bound argmin over a random candidate pool (first index wins ties)."""
    cand = space.sample_encoded(rng, acq.candidate_pool)
    mean, std = forest.predict_many(cand)
    score = mean - acq.kappa * std
    return space.decode(cand[int(np.argmin(score))])


# -- evaluation ---------------------------------------------------------


def _evaluate_once(evaluator, config: dict, seed: int):
    try:
        return evaluator(config, seed), None
    except Exception as exc:  # evaluator failures become failed trials
        return None, exc


def _evaluate_with_retry(evaluator, config: dict, seed: int, clock=time.time):
    start = clock()
    result, exc = _evaluate_once(evaluator, config, seed)
    # a timeout would most likely recur, so only other errors are retried
    if exc is not None and not isinstance(exc, TimeoutError):
        log.warning("evaluation failed (%s), retrying once", exc)
        result, exc = _evaluate_once(evaluator, config, seed)
    err = None if exc is None else f"{type(exc).__name__}: {exc}"
    return result, err, start, clock()


@dataclass
class SearchResult:
    trials: list[Trial]
    archive: ParetoArchive
    hypervolume_series: list[tuple[int, float]]
    state: SearchState
    stopped_early: bool = False

    def ok_trials(self) -> list[Trial]:
        return [t for t in self.trials if t.status == OK]

    def best(self, objective: str | None = None) -> Trial | None:
        spec = self.state.spec
        name = objective or spec.names[0]
        k = spec.names.index(name)
        ok = self.ok_trials()
        if not ok:
            return None
        return min(ok, key=lambda t: (spec.to_min(t.objectives)[k], t.trial_id))


def hypervolume_series(trials: Iterable[Trial], spec: ObjectiveSpec, reference=None) -> list[tuple[int, float]]:
    """Hypervolume of the archive after every terminal evaluation (d in {2, 3}).

    The reference point defaults to the 10%-padded max over all ok trials.
    """
    trials = list(trials)
    ok = [spec.to_min(t.objectives) for t in trials if t.status == OK]
    if not ok or len(spec) not in (2, 3):
        return []
    ref = reference_point(np.array(ok)) if reference is None else np.asarray(reference, dtype=float)
    archive = ParetoArchive(spec)
    series = []
    hv = 0.0
    for i, t in enumerate(trials, start=1):
        if t.status == OK and archive.insert(t.trial_id, t.objectives).accepted:
            hv = archive.hypervolume(ref)
        series.append((i, hv))
    return series


def run_search(
    space: SearchSpace,
    evaluator: Evaluator,
    spec: ObjectiveSpec,
    budget: SearchBudget,
    acq: AcquisitionParams = AcquisitionParams(),
    mode: str = "ambs",
    master_seed: int = 0,
    *,
    rho: float = DEFAULT_RHO,
    forest_params: surrogate.ForestParams = surrogate.ForestParams(),
    store=None,
    resume_trials: Sequence[Trial] = (),
    on_trial: Callable[[Trial, SearchState], None] | None = None,
    executor: cf.Executor | None = None,
    stop_event: threading.Event | None = None,
    clock: Callable[[], float] = time.time,
) -> SearchResult:
    """Run (or continue) a search until ``budget.max_evaluations`` trials are terminal.

    ``evaluator(config_dict, seed)`` returns a :class:`TaskResult`. With
    ``budget.workers > 1`` evaluations run on ``executor`` (a thread pool by
    default); proposals never wait for in-flight evaluations.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    state = SearchState(space, spec)
    for t in resume_trials:
        state.record(t)
    next_id = max((t.trial_id for t in resume_trials), default=0) + 1
    warmup = budget.warmup(space)
    t0 = time.monotonic()
    stopped = False

    def want_more() -> bool:
        nonlocal stopped
        if stop_event is not None and stop_event.is_set():
            stopped = True
            return False
        if budget.wall_clock_limit is not None and time.monotonic() - t0 > budget.wall_clock_limit:
            stopped = True
            return False
        return True

    in_flight: dict[int, Trial] = {}

    def make_trial(tid: int) -> Trial:
        weights = sample_weights(len(spec), _stream(master_seed, tid, _WEIGHTS))
        rng = _stream(master_seed, tid, _PROPOSAL)
        use_model = mode == "ambs" and tid > warmup and len(state.ok_y) >= 2
        if use_model:
            pending_x = [space.encode(tr.config) for tr in in_flight.values()]
            X, Y = state.training_set(weights, rho, tid, pending_x)
            forest = surrogate.fit(X, Y, forest_params, rng)
            config = propose(forest, space, acq, rng)
            proposer = "surrogate"
        else:
            config = space.sample(rng)
            proposer = "random"
        return Trial(tid, config.to_dict(), trial_seed(master_seed, tid), proposer, RUNNING, weights=weights.tolist())

    def finish(trial: Trial, result, err, start, end, worker) -> None:
        trial.started_at, trial.finished_at = rfc3339(start), rfc3339(end)
        trial.duration_s = max(0.0, end - start)
        trial.worker = worker
        if err is not None:
            trial.status, trial.detail = FAILED, err
        elif not result.feasible:
            trial.status, trial.detail = FAILED, result.detail
            trial.info = dict(result.info)
        else:
            missing = [n for n in spec.names if n not in result.objectives]
            vals = {n: float(result.objectives[n]) for n in spec.names if n in result.objectives}
            if missing:
                trial.status, trial.detail = FAILED, f"evaluator did not report objective(s) {missing}"
            elif not all(np.isfinite(v) for v in vals.values()):
                trial.status, trial.detail = FAILED, f"non-finite objectives {vals}"
            else:
                trial.status, trial.objectives = OK, vals
                trial.detail = result.detail
            trial.info = dict(result.info)
        state.record(trial)
        if trial.status == OK:
            trial.scalarized = state.scalarize(spec.to_min(trial.objectives), np.array(trial.weights), rho)
        if store is not None:
            store.append_trial(trial)
        if on_trial is not None:
            on_trial(trial, state)

    remaining = budget.max_evaluations - len(state.trials)
    if budget.workers == 1 and executor is None:
        while remaining > 0 and want_more():
            trial = make_trial(next_id)
            next_id += 1
            result, err, start, end = _evaluate_with_retry(evaluator, trial.config, trial.seed, clock)
            finish(trial, result, err, start, end, 0)
            remaining -= 1
    else:
        own = executor is None
        pool = executor or cf.ThreadPoolExecutor(max_workers=budget.workers)
        futures: dict[cf.Future, tuple[Trial, int]] = {}
        free_workers = list(range(budget.workers))
        proposed = 0
        try:
            while True:
                while len(futures) < budget.workers and proposed < remaining and want_more():
                    trial = make_trial(next_id)
                    next_id += 1
                    proposed += 1
                    in_flight[trial.trial_id] = trial
                    w = free_workers.pop(0)
                    fut = pool.submit(_evaluate_with_retry, evaluator, trial.config, trial.seed, clock)
                    futures[fut] = (trial, w)
                if not futures:
                    break
                done, _ = cf.wait(list(futures), return_when=cf.FIRST_COMPLETED)
                for fut in sorted(done, key=lambda f: futures[f][0].trial_id):
                    trial, w = futures.pop(fut)
                    in_flight.pop(trial.trial_id, None)
                    free_workers.append(w)
                    free_workers.sort()
                    try:
                        result, err, start, end = fut.result()
                    except Exception as exc:  # worker process died
                        now = clock()
                        result, err, start, end = None, f"{type(exc).__name__}: {exc}", now, now
                    finish(trial, result, err, start, end, w)
        finally:
            if own:
                pool.shutdown(wait=True)

    series = hypervolume_series(state.trials, spec)
    return SearchResult(list(state.trials), state.archive, series, state, stopped)
