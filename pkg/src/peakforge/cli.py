"""Command-line front end.

Exit codes: 0 success, 2 usage, 3 evaluator failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import os
import shlex
import signal
import sys
import threading
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import store as st
from .evalproto import DEFAULT_TIMEOUT, EvalProtoError, ExternalTask
from .nnkernel import save_tensors
from .objectives import ObjectiveError, ObjectiveSpec
from .search import MODES, OK, AcquisitionParams, SearchBudget
from .space import SpaceError, builtin_names, builtin_space, load_space
from .tasks import BUILTIN_TASKS, get_task
from .tasks.bragg import generate_bragg_dataset
from .tasks.ptycho import generate_ptycho_dataset

EXIT_OK, EXIT_USAGE, EXIT_EVALUATOR, EXIT_IO = 0, 2, 3, 4
RUNS_ENV = "PEAKFORGE_RUNS_DIR"

log = logging.getLogger("peakforge")


class UsageError(Exception):
    pass


# -- option parsing ------------------------------------------------------


def _objective_tokens(values: list[str]) -> list[str]:
    return [tok for v in values for tok in v.replace(",", " ").split()]


def _load_space_arg(arg: str):
    if arg in builtin_names():
        return builtin_space(arg)
    path = Path(arg)
    if not path.exists():
        raise UsageError(f"--space {arg!r} is neither a preset ({', '.join(builtin_names())}) nor a file")
    try:
        return load_space(path.read_text())
    except SpaceError as exc:
        raise UsageError(f"invalid space file {arg}: {exc}") from exc


def _task_options(args) -> dict:
    return {
        "n_train": args.n_train,
        "n_val": args.n_val,
        "noise_sigma": args.noise_sigma,
        "epoch_cap": args.epoch_cap,
        "data_seed": args.data_seed,
        "time_limit": args.eval_time_limit,
    }


def _build_evaluator(task: dict, spec: ObjectiveSpec, workers: int):
    """Instantiate the evaluator described by a manifest ``task`` entry."""
    if task["kind"] == "builtin":
        return get_task(task["name"], **task["options"])
    return ExternalTask(
        task["command"],
        spec.names,
        timeout_s=task["timeout"],
        workers=workers,
        per_worker=task.get("per_worker", False),
    )


def _default_out(space_name: str, mode: str, seed: int) -> Path:
    root = Path(os.environ.get(RUNS_ENV, "runs"))
    stamp = time.strftime("%Y%m%dT%H%M%S", time.gmtime())
    return root / f"{space_name}-{mode}-seed{seed}-{stamp}"


# -- status stream ---------------------------------------------------------


class StatusPrinter:
    def __init__(self, spec: ObjectiveSpec, out=None):
        self.spec = spec
        self.out = out
        self.best: float | None = None

    def __call__(self, trial, state) -> None:
        if trial.status == OK:
            objs = " ".join(f"{k}={v:.6g}" for k, v in trial.objectives.items())
            if len(self.spec) == 1:
                v = trial.objectives[self.spec.names[0]]
                if self.best is None or self.spec.signs[0] * v < self.spec.signs[0] * self.best:
                    self.best = v
                best = f"best={self.best:.6g}"
            else:
                best = f"front={len(state.archive)}"
        else:
            objs, best = trial.detail.splitlines()[0] if trial.detail else "", ""
            if len(self.spec) == 1 and self.best is not None:
                best = f"best={self.best:.6g}"
        print(f"trial {trial.trial_id:>4} {trial.status:<6} {objs} {best} ({trial.duration_s:.1f}s)".rstrip(), file=self.out or sys.stdout, flush=True)


@contextlib.contextmanager
def _graceful_stop():
    """First Ctrl-C asks the search to stop after in-flight trials; a second aborts."""
    stop = threading.Event()
    if threading.current_thread() is not threading.main_thread():
        yield stop
        return

    def handler(signum, frame):
        if stop.is_set():
            raise KeyboardInterrupt
        print("stopping after in-flight trials (Ctrl-C again to abort)", file=sys.stderr, flush=True)
        stop.set()

    previous = signal.signal(signal.SIGINT, handler)
    try:
        yield stop
    finally:
        signal.signal(signal.SIGINT, previous)


def _finish(store: st.RunStore, result) -> int:
    if result is not None and result.trials and any(t.status == OK for t in result.trials):
        for kind in st.EXPORT_KINDS:
            store.export(kind)
    if result is not None and result.stopped_early:
        print(f"stopped early after {len(result.trials)} trials; continue with: peakforge resume --run {store.root}", flush=True)
    return EXIT_OK


# -- subcommands -----------------------------------------------------------


def cmd_run(args) -> int:
    space = _load_space_arg(args.space)
    tokens = _objective_tokens(args.objectives)
    try:
        spec = ObjectiveSpec.parse(tokens)
    except ObjectiveError as exc:
        raise UsageError(str(exc)) from exc
    if args.task in BUILTIN_TASKS:
        builtin = get_task(args.task)
        unknown = [n for n in spec.names if n not in builtin.objective_names]
        if unknown:
            raise UsageError(
                f"task {args.task!r} does not produce objective(s) {', '.join(unknown)}; "
                f"valid names: {', '.join(builtin.objective_names)}"
            )
        task = {"kind": "builtin", "name": args.task, "options": {k: v for k, v in _task_options(args).items() if v is not None}}
    else:
        command = shlex.split(args.task)
        if not command:
            raise UsageError("--task is empty")
        task = {"kind": "external", "command": command, "timeout": args.timeout, "per_worker": args.per_worker_evaluator}
    try:
        budget = SearchBudget(args.budget, args.initial_random, args.workers, args.wall_clock)
        acq = AcquisitionParams("lcb", args.kappa, args.pool)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out) if args.out else _default_out(space.name, args.mode, args.seed)
    store = st.RunStore(out)
    pid = store.live_pid()
    if pid is not None:
        raise UsageError(f"{out} holds a live run (process {pid})")
    if store.exists():
        raise UsageError(f"{out} already holds a run; use 'peakforge resume --run {out}'")

    evaluator = _build_evaluator(task, spec, args.workers)
    print(f"run directory: {out}", flush=True)
    try:
        with _graceful_stop() as stop:
            result = st.start_run(
                store,
                space,
                evaluator,
                spec,
                budget,
                acq,
                args.mode,
                args.seed,
                rho=args.rho,
                extra={"task": task},
                on_trial=StatusPrinter(spec),
                stop_event=stop,
            )
    finally:
        if hasattr(evaluator, "close"):
            evaluator.close()
    return _finish(store, result)


def cmd_resume(args) -> int:
    store = st.RunStore(args.run)
    if not store.exists():
        raise FileNotFoundError(f"no run found in {args.run}")
    m = store.manifest()
    requested = {}
    if args.seed is not None:
        requested["master_seed"] = args.seed
    if args.mode is not None:
        requested["mode"] = args.mode
    if args.space is not None:
        requested["space"] = _load_space_arg(args.space).to_dict()
    if args.objectives:
        try:
            requested["objectives"] = ObjectiveSpec.parse(_objective_tokens(args.objectives)).to_dict()
        except ObjectiveError as exc:
            raise UsageError(str(exc)) from exc
    try:
        store.check_resume(requested)
    except st.ManifestMismatchError as exc:
        raise UsageError(f"refusing to resume: {exc}") from exc
    spec = store.spec()
    evaluator = _build_evaluator(m["task"], spec, m["budget"]["workers"])
    try:
        with _graceful_stop() as stop:
            result = st.resume(
                store,
                evaluator,
                max_evaluations=args.budget,
                on_trial=StatusPrinter(spec),
                stop_event=stop,
            )
    finally:
        if hasattr(evaluator, "close"):
            evaluator.close()
    if result is None:
        print(f"{args.run}: run is already complete; nothing to do", flush=True)
    return _finish(store, result)


def _export(args, kind: str) -> int:
    store = st.RunStore(args.run)
    if not store.exists():
        raise FileNotFoundError(f"no run found in {args.run}")
    report = store.load()
    if report.dropped_line is not None:
        print("note: ignored a truncated final log line", file=sys.stderr)
    reference = None
    if getattr(args, "reference", None):
        try:
            reference = [float(v) for v in args.reference.split(",")]
        except ValueError:
            raise UsageError(f"--reference must be comma-separated numbers, got {args.reference!r}") from None
        if len(reference) != len(store.spec()):
            raise UsageError(f"--reference needs {len(store.spec())} values, one per objective")
    text = st.render_export(kind, report.trials, store.spec(), reference)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_pareto(args) -> int:
    return _export(args, "pareto_csv")


def cmd_convergence(args) -> int:
    return _export(args, "convergence_csv")


def cmd_best(args) -> int:
    return _export(args, "best_json")


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    if args.task == "bragg":
        patches = generate_bragg_dataset(args.n, args.noise_sigma, args.seed)
        with open(out, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow([f"p{i}" for i in range(121)] + ["center_x", "center_y"])
            for p in patches:
                w.writerow([repr(float(v)) for v in p.pixels.ravel()] + [repr(float(c)) for c in p.true_center])
    else:
        samples = generate_ptycho_dataset(args.n, args.seed)
        save_tensors(out, [[np.stack([getattr(s, k) for s in samples])] for k in ("input", "amplitude", "phase")])
    print(f"wrote {args.n} {args.task} samples to {out}")
    return EXIT_OK


def cmd_spaces(args) -> int:
    if args.action == "list":
        for name in builtin_names():
            print(name)
        return EXIT_OK
    if args.name is None:
        raise UsageError("spaces show needs a preset name")
    try:
        space = builtin_space(args.name)
    except KeyError as exc:
        raise UsageError(str(exc)) from exc
    print(space.to_json())
    return EXIT_OK


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="peakforge", description="Multi-objective architecture and hyperparameter search.")
    ap.add_argument("--version", action="version", version=f"peakforge {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log to stderr at INFO level")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="start a new search")
    p.add_argument("--space", required=True, help="preset name or path to a space JSON file")
    p.add_argument("--task", required=True, help=f"built-in task ({', '.join(BUILTIN_TASKS)}) or an evaluator command line")
    p.add_argument("--objectives", required=True, nargs="+", help="name:min|max tokens, space or comma separated")
    p.add_argument("--mode", choices=MODES, default="ambs")
    p.add_argument("--budget", type=int, default=100, help="number of evaluations")
    p.add_argument("--initial-random", type=int, default=None, help="random warm-up trials (default max(10, 2*dims))")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rho", type=float, default=0.05, help="augmentation weight of the Chebyshev scalarization")
    p.add_argument("--kappa", type=float, default=1.96, help="LCB exploration weight")
    p.add_argument("--pool", type=int, default=512, help="acquisition candidate pool size")
    p.add_argument("--epoch-cap", type=int, default=None, help="cap on training epochs (built-in tasks)")
    p.add_argument("--n-train", type=int, default=None, help="training set size (built-in tasks)")
    p.add_argument("--n-val", type=int, default=None, help="validation set size (built-in tasks)")
    p.add_argument("--noise-sigma", type=float, default=None, help="Bragg patch noise level")
    p.add_argument("--data-seed", type=int, default=None, help="dataset seed (built-in tasks)")
    p.add_argument("--eval-time-limit", type=float, default=None, help="seconds of training per built-in evaluation")
    p.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT, help="per-evaluation timeout for external evaluators")
    p.add_argument("--per-worker-evaluator", action="store_true", help="one external evaluator process per worker")
    p.add_argument("--wall-clock", type=float, default=None, help="stop proposing after this many seconds")
    p.add_argument("--out", default=None, help=f"run directory (default under ${RUNS_ENV} or ./runs)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("resume", help="continue an interrupted run")
    p.add_argument("--run", required=True)
    p.add_argument("--budget", type=int, default=None, help="new total number of evaluations")
    p.add_argument("--seed", type=int, default=None, help="must match the stored seed")
    p.add_argument("--mode", choices=MODES, default=None, help="must match the stored mode")
    p.add_argument("--space", default=None, help="must match the stored space")
    p.add_argument("--objectives", nargs="+", default=None, help="must match the stored objectives")
    p.set_defaults(func=cmd_resume)

    for name, fn, what in (
        ("pareto", cmd_pareto, "Pareto front as CSV"),
        ("convergence", cmd_convergence, "convergence curve as CSV"),
        ("best", cmd_best, "best trials and knee point as JSON"),
    ):
        p = sub.add_parser(name, help=f"export the {what}")
        p.add_argument("--run", required=True)
        p.add_argument("--out", default=None, help="output file (default stdout)")
        if name != "pareto":
            p.add_argument("--reference", default=None, help="hypervolume reference point, e.g. 3,3 (default: padded max)")
        p.set_defaults(func=fn)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    p.add_argument("task", choices=("bragg", "ptycho"))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-sigma", type=float, default=0.02)
    p.add_argument("--out", required=True, help="CSV file (bragg) or PFNN tensor file (ptycho)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("spaces", help="list or show preset search spaces")
    p.add_argument("action", choices=("list", "show"))
    p.add_argument("name", nargs="?")
    p.set_defaults(func=cmd_spaces)
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"peakforge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EvalProtoError as exc:
        print(f"peakforge: evaluator error: {exc}", file=sys.stderr)
        return EXIT_EVALUATOR
    except st.RunLockedError as exc:
        print(f"peakforge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, st.StoreError) as exc:
        print(f"peakforge: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"peakforge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
