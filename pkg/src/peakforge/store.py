"""Run directories: manifest, crash-tolerant JSONL trial log, resume, exports.

Layout::

    <run>/manifest.json
    <run>/trials.jsonl
    <run>/exports/{pareto.csv, convergence.csv, best.json}
"""

from __future__ import annotations

import contextlib
import csv
import dataclasses
import io
import json
import logging
import os
import time
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .objectives import DEFAULT_RHO, NormalizationState, ObjectiveSpec, chebyshev
from .pareto import ParetoArchive, contributions, reference_point
from .search import (
    OK,
    AcquisitionParams,
    SearchBudget,
    SearchResult,
    SearchState,
    Trial,
    hypervolume_series,
    rfc3339,
    run_search,
)
from .space import SearchSpace, space_from_dict

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
TRIALS = "trials.jsonl"
EXPORTS = "exports"
LOCK = "run.lock"
MANIFEST_VERSION = 1

# fields that must match byte-for-byte for a resume to be accepted
RESUME_KEYS = ("space", "objectives", "mode", "master_seed")


class StoreError(Exception):
    pass


class ManifestMismatchError(StoreError):
    def __init__(self, diffs: dict[str, tuple[Any, Any]]):
        self.diffs = diffs
        lines = [f"  {k}: stored={a!r} requested={b!r}" for k, (a, b) in diffs.items()]
        super().__init__("run settings differ from the stored manifest:\n" + "\n".join(lines))


class EmptyLogError(StoreError):
    pass


class RunLockedError(StoreError):
    pass


@dataclass
class LoadReport:
    trials: list[Trial]
    dropped_line: str | None = None  # raw text of a torn final line, if any


def make_manifest(
    space: SearchSpace,
    spec: ObjectiveSpec,
    mode: str,
    master_seed: int,
    budget: SearchBudget,
    acq: AcquisitionParams = AcquisitionParams(),
    rho: float = DEFAULT_RHO,
    extra: dict[str, Any] | None = None,
    clock: Callable[[], float] = time.time,
) -> dict[str, Any]:
    """Manifest for a new run; ``extra`` carries caller data such as task options."""
    return {
        "manifest_version": MANIFEST_VERSION,
        "run_id": uuid.uuid4().hex[:16],
        "space": space.to_dict(),
        "objectives": spec.to_dict(),
        "mode": mode,
        "master_seed": master_seed,
        "budget": dataclasses.asdict(budget),
        "acquisition": dataclasses.asdict(acq),
        "rho": rho,
        "tool_version": __version__,
        "created_at": rfc3339(clock()),
        **(extra or {}),
    }


def _canonical(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


class RunStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST

    @property
    def log_path(self) -> Path:
        return self.root / TRIALS

    @property
    def export_dir(self) -> Path:
        return self.root / EXPORTS

    def exists(self) -> bool:
        return self.manifest_path.exists()

    # -- liveness --------------------------------------------------------
    @property
    def lock_path(self) -> Path:
        return self.root / LOCK

    def live_pid(self) -> int | None:
        """PID of a process currently driving this run, if any."""
        try:
            pid = int(self.lock_path.read_text().strip())
        except (FileNotFoundError, ValueError):
            return None
        if pid == os.getpid():
            return pid
        try:
            os.kill(pid, 0)
        except ProcessLookupError:
            return None
        except PermissionError:
            return pid
        return pid

    @contextlib.contextmanager
    def locked(self):
        pid = self.live_pid()
        if pid is not None and pid != os.getpid():
            raise RunLockedError(f"{self.root} is in use by process {pid}")
        self.root.mkdir(parents=True, exist_ok=True)
        self.lock_path.write_text(f"{os.getpid()}\n")
        try:
            yield self
        finally:
            self.lock_path.unlink(missing_ok=True)

    # -- manifest --------------------------------------------------------
    def create(self, manifest: dict[str, Any]) -> None:
        if self.exists():
            raise StoreError(f"{self.root} already holds a run (use resume)")
        self.root.mkdir(parents=True, exist_ok=True)
        tmp = self.root / (MANIFEST + ".tmp")
        tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        os.replace(tmp, self.manifest_path)
        self.log_path.touch()

    def manifest(self) -> dict[str, Any]:
        try:
            return json.loads(self.manifest_path.read_text())
        except FileNotFoundError as exc:
            raise StoreError(f"no manifest in {self.root}") from exc

    def check_resume(self, requested: dict[str, Any]) -> None:
        stored = self.manifest()
        diffs = {
            k: (stored.get(k), requested.get(k))
            for k in RESUME_KEYS
            if k in requested and _canonical(stored.get(k)) != _canonical(requested.get(k))
        }
        if diffs:
            raise ManifestMismatchError(diffs)

    def space(self) -> SearchSpace:
        return space_from_dict(self.manifest()["space"])

    def spec(self) -> ObjectiveSpec:
        return ObjectiveSpec.from_dict(self.manifest()["objectives"])

    # -- trial log -------------------------------------------------------
    def append_trial(self, trial: Trial | dict[str, Any]) -> None:
        rec = trial.to_record() if isinstance(trial, Trial) else trial
        line = json.dumps(rec, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"
        with open(self.log_path, "a", encoding="utf-8") as f:
            f.write(line)
            f.flush()
            os.fsync(f.fileno())

    def load(self) -> LoadReport:
        if not self.log_path.exists():
            return LoadReport([])
        raw = self.log_path.read_bytes()
        lines = raw.split(b"\n")
        tail = lines.pop()  # text after the final newline; empty when the log is clean
        trials = []
        for no, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                trials.append(Trial.from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise StoreError(f"{self.log_path}:{no}: corrupt record ({exc})") from exc
        dropped = None
        if tail.strip():
            dropped = tail.decode("utf-8", errors="replace")
            try:
                trials.append(Trial.from_record(json.loads(tail)))
                dropped = None  # complete record that merely lacks its newline
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                log.warning("dropping torn final log line (%d bytes): %r", len(tail), dropped[:80])
        return LoadReport(trials, dropped)

    def load_trials(self) -> list[Trial]:
        return self.load().trials

    def repair_tail(self) -> str | None:
        """Cut a torn final line off the log so appends start on a fresh line."""
        report = self.load()
        raw = self.log_path.read_bytes()
        if report.dropped_line is not None:
            cut = raw.rfind(b"\n") + 1
            with open(self.log_path, "r+b") as f:
                f.truncate(cut)
        elif raw and not raw.endswith(b"\n"):
            with open(self.log_path, "ab") as f:
                f.write(b"\n")
        return report.dropped_line

    # -- exports ---------------------------------------------------------
    def export(self, kind: str, reference=None) -> Path:
        trials = self.load_trials()
        text = render_export(kind, trials, self.spec(), reference)
        self.export_dir.mkdir(exist_ok=True)
        name = {"pareto_csv": "pareto.csv", "convergence_csv": "convergence.csv", "best_json": "best.json"}[kind]
        path = self.export_dir / name
        path.write_text(text)
        return path


def start_run(
    store: RunStore,
    space: SearchSpace,
    evaluator,
    spec: ObjectiveSpec,
    budget: SearchBudget,
    acq: AcquisitionParams = AcquisitionParams(),
    mode: str = "ambs",
    master_seed: int = 0,
    *,
    rho: float = DEFAULT_RHO,
    extra: dict[str, Any] | None = None,
    clock: Callable[[], float] = time.time,
    **search_kwargs,
) -> SearchResult:
    """Create a run directory and search, logging every trial."""
    with store.locked():
        store.create(make_manifest(space, spec, mode, master_seed, budget, acq, rho, extra, clock))
        return run_search(space, evaluator, spec, budget, acq, mode, master_seed, rho=rho, store=store, clock=clock, **search_kwargs)


def resume(
    store: RunStore,
    evaluator,
    *,
    requested: dict[str, Any] | None = None,
    max_evaluations: int | None = None,
    clock: Callable[[], float] = time.time,
    **search_kwargs,
) -> SearchResult | None:
    """Continue a run from its log; returns None when nothing is left to do.

    ``requested`` holds any settings the caller insists on (space, objectives,
    mode, master_seed); a mismatch with the manifest raises
    :class:`ManifestMismatchError`. ``max_evaluations`` may raise the budget.
    """
    with store.locked():
        if requested:
            store.check_resume(requested)
        m = store.manifest()
        dropped = store.repair_tail()
        if dropped is not None:
            log.warning("removed a torn final record from %s", store.log_path)
        trials = store.load_trials()
        budget = SearchBudget(**m["budget"])
        if max_evaluations is not None:
            budget = dataclasses.replace(budget, max_evaluations=max_evaluations)
        if len(trials) >= budget.max_evaluations:
            log.info("run already has %d of %d trials; nothing to resume", len(trials), budget.max_evaluations)
            return None
        return run_search(
            space_from_dict(m["space"]),
            evaluator,
            ObjectiveSpec.from_dict(m["objectives"]),
            budget,
            AcquisitionParams(**m["acquisition"]),
            m["mode"],
            m["master_seed"],
            rho=m["rho"],
            store=store,
            resume_trials=trials,
            clock=clock,
            **search_kwargs,
        )


def replay(space: SearchSpace, spec: ObjectiveSpec, trials: list[Trial]) -> SearchState:
    """Rebuild orchestrator state from a trial log."""
    state = SearchState(space, spec)
    for t in trials:
        state.record(t)
    return state


# -- export rendering ---------------------------------------------------

EXPORT_KINDS = ("pareto_csv", "convergence_csv", "best_json")


def _fmt(v: float) -> str:
    return repr(float(v))


def _archive(trials: list[Trial], spec: ObjectiveSpec) -> ParetoArchive:
    archive = ParetoArchive(spec)
    for t in trials:
        if t.status == OK:
            archive.insert(t.trial_id, t.objectives)
    return archive


def _reference(reference, spec: ObjectiveSpec) -> np.ndarray | None:
    """User-facing reference point (objective units) in minimization form."""
    if reference is None:
        return None
    ref = np.asarray(reference, dtype=float)
    if ref.shape != (len(spec),):
        raise StoreError(f"reference point needs {len(spec)} values, got {ref.size}")
    return ref * spec.signs


def render_export(kind: str, trials: list[Trial], spec: ObjectiveSpec, reference=None) -> str:
    """Render one export; ``reference`` (objective units) overrides the padded-max default."""
    if kind not in EXPORT_KINDS:
        raise StoreError(f"unknown export kind {kind!r}; choose from {EXPORT_KINDS}")
    if not trials:
        raise EmptyLogError("the trial log is empty")
    if kind == "pareto_csv":
        return pareto_csv(trials, spec)
    if kind == "convergence_csv":
        return convergence_csv(trials, spec, reference)
    return json.dumps(best_json(trials, spec, reference), indent=2, sort_keys=True) + "\n"


def pareto_csv(trials: list[Trial], spec: ObjectiveSpec) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trial_id", *spec.names])
    for tid, values in _archive(trials, spec).sorted_entries():
        w.writerow([tid, *(_fmt(values[n]) for n in spec.names)])
    return buf.getvalue()


def convergence_csv(trials: list[Trial], spec: ObjectiveSpec, reference=None) -> str:
    """Rows ``evaluation_index, best_scalar_so_far[, hypervolume]``.

    For one objective the best scalar is the best raw value. For several it
    is the lowest equal-weight Chebyshev value under the final normalization.
    With four or more objectives the hypervolume column is replaced by
    per-objective best-so-far columns.
    """
    d = len(spec)
    ok_y = [spec.to_min(t.objectives) for t in trials if t.status == OK]
    norm = None
    if ok_y and d > 1:
        norm = NormalizationState(d)
        for y in ok_y:
            norm.update(y)
    equal = np.full(d, 1.0 / d)
    series = dict(hypervolume_series(trials, spec, _reference(reference, spec))) if d in (2, 3) else {}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["evaluation_index", "best_scalar_so_far"]
    if d in (2, 3):
        header.append("hypervolume")
    elif d >= 4:
        header += [f"best_{n}" for n in spec.names]
    w.writerow(header)
    best = np.inf
    best_each = np.full(d, np.inf)
    for i, t in enumerate(trials, start=1):
        if t.status == OK:
            y = spec.to_min(t.objectives)
            s = float(y[0]) if d == 1 else chebyshev(norm.normalize(y), equal, DEFAULT_RHO)
            best = min(best, s)
            best_each = np.minimum(best_each, y)
        row = [i, _fmt(best * (spec.signs[0] if d == 1 else 1.0)) if np.isfinite(best) else "nan"]
        if d in (2, 3):
            row.append(_fmt(series.get(i, 0.0)))
        elif d >= 4:
            row += [_fmt(b * s) if np.isfinite(b) else "nan" for b, s in zip(best_each, spec.signs)]
        w.writerow(row)
    return buf.getvalue()


def best_json(trials: list[Trial], spec: ObjectiveSpec, reference=None) -> dict[str, Any]:
    ok = [t for t in trials if t.status == OK]
    out: dict[str, Any] = {"objectives": spec.to_dict(), "n_trials": len(trials), "n_ok": len(ok), "best": {}, "knee": None}
    if not ok:
        return out
    for k, name in enumerate(spec.names):
        b = min(ok, key=lambda t: (spec.to_min(t.objectives)[k], t.trial_id))
        out["best"][name] = b.to_record()
    archive = _archive(trials, spec)
    if len(spec) in (2, 3):
        ref = _reference(reference, spec)
        if ref is None:
            ref = reference_point(np.array([spec.to_min(t.objectives) for t in ok]))
        contrib = contributions(archive.points, ref)
        ids = archive.trial_ids
        j = max(range(len(ids)), key=lambda i: (contrib[i], -ids[i]))
        knee_id = ids[j]
        out["knee"] = next(t for t in ok if t.trial_id == knee_id).to_record()
        out["knee"]["hypervolume_contribution"] = float(contrib[j])
        out["reference_point"] = (ref * spec.signs).tolist()
    elif len(spec) == 1:
        out["knee"] = out["best"][spec.names[0]]
    return out
