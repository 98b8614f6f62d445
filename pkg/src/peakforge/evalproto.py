"""Newline-delimited JSON protocol for external evaluator processes.

The child prints a handshake line ``{"proto":"peakforge-eval","version":1}``
on stdout, then answers each request line on stdin with exactly one response
line. Requests may be pipelined and answered in any order; responses are
matched by ``id``. Anything the child wants to log belongs on stderr.

Request::

    {"id": 7, "config": {...}, "objective_names": ["loss"], "seed": 123}

Response::

    {"id": 7, "status": "ok", "objectives": {"loss": 0.5}}
    {"id": 7, "status": "fail", "detail": "out of memory"}
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import queue
import subprocess
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Sequence

from .space import Configuration
from .tasks.base import TaskResult, infeasible

log = logging.getLogger(__name__)

PROTO = "peakforge-eval"
VERSION = 1
HANDSHAKE_TIMEOUT = 10.0
DEFAULT_TIMEOUT = 600.0


class EvalProtoError(Exception):
    """Base class for evaluator protocol errors."""


class SpawnError(EvalProtoError):
    pass


class HandshakeTimeoutError(EvalProtoError):
    pass


class HandshakeError(EvalProtoError):
    """The first line was not a valid handshake."""

    def __init__(self, line: str, reason: str = "not a peakforge-eval handshake"):
        self.line = line
        super().__init__(f"{reason}: {line!r}")


class VersionMismatchError(HandshakeError):
    def __init__(self, line: str, version: Any):
        self.version = version
        super().__init__(line, f"unsupported protocol version {version!r} (expected {VERSION})")


class ProtocolError(EvalProtoError):
    """The child wrote a line that is not a valid response."""

    def __init__(self, message: str, line: str | None = None):
        self.line = line
        super().__init__(message if line is None else f"{message}: {line!r}")


class EvaluationTimeout(EvalProtoError, TimeoutError):
    pass


class EvaluatorCrashed(EvalProtoError):
    pass


@dataclass(frozen=True)
class EvalRequest:
    id: int
    config: dict[str, Any]
    objective_names: tuple[str, ...]
    seed: int

    def __post_init__(self):
        if not isinstance(self.id, int) or self.id < 1:
            raise ValueError("request id must be a positive integer")

    def to_line(self) -> str:
        body = {"id": self.id, "config": self.config, "objective_names": list(self.objective_names), "seed": self.seed}
        return json.dumps(body, separators=(",", ":"), allow_nan=False) + "\n"


@dataclass(frozen=True)
class EvalResponse:
    id: int
    status: str
    objectives: dict[str, float] | None = None
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def parse_response(line: str, expected_names: Sequence[str] | None = None) -> EvalResponse:
    """Validate one response line; raises :class:`ProtocolError` with the raw text."""
    try:
        doc = json.loads(line)
    except json.JSONDecodeError:
        raise ProtocolError("response is not JSON", line) from None
    if not isinstance(doc, dict):
        raise ProtocolError("response is not a JSON object", line)
    rid = doc.get("id")
    if not isinstance(rid, int) or isinstance(rid, bool) or rid < 1:
        raise ProtocolError("response lacks a positive integer id", line)
    status = doc.get("status")
    detail = doc.get("detail", "")
    if not isinstance(detail, str):
        raise ProtocolError("detail must be a string", line)
    if status == "fail":
        return EvalResponse(rid, "fail", None, detail)
    if status != "ok":
        raise ProtocolError(f"status must be 'ok' or 'fail', got {status!r}", line)
    objs = doc.get("objectives")
    if not isinstance(objs, dict):
        raise ProtocolError("ok response needs an objectives object", line)
    values = {}
    for k, v in objs.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ProtocolError(f"objective {k!r} is not a finite number", line)
        values[k] = float(v)
    if expected_names is not None and set(values) != set(expected_names):
        raise ProtocolError(f"objective keys {sorted(values)} != requested {sorted(expected_names)}", line)
    return EvalResponse(rid, "ok", values, detail)


@dataclass
class _Pending:
    request: EvalRequest
    generation: int
    done: threading.Event = field(default_factory=threading.Event)
    response: EvalResponse | None = None
    error: EvalProtoError | None = None


class EvaluatorHandle:
    """One child process serving pipelined requests.

    Writes are serialized by a lock; a reader thread dispatches responses to
    waiting callers by id. A timeout or a crash kills the child; every
    request it still owed fails exactly once, and the next request respawns
    it.
    """

    def __init__(self, command: Sequence[str], handshake_timeout: float = HANDSHAKE_TIMEOUT):
        if not command:
            raise SpawnError("empty evaluator command")
        self.command = list(command)
        self.handshake_timeout = handshake_timeout
        self._lock = threading.RLock()
        self._write_lock = threading.Lock()
        self._pending: dict[int, _Pending] = {}
        self._proc: subprocess.Popen | None = None
        self._generation = 0
        self.spawn_count = 0
        self._closed = False
        self._start()

    # -- process lifecycle ----------------------------------------------
    def _start(self) -> None:
        try:
            proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=None,  # diagnostics pass straight through
                text=True,
                encoding="utf-8",
                bufsize=1,
                start_new_session=True,  # Ctrl-C in the CLI must not kill the child mid-trial
            )
        except OSError as exc:
            raise SpawnError(f"cannot start evaluator {self.command[0]!r}: {exc}") from exc
        first: queue.Queue = queue.Queue()
        threading.Thread(target=lambda: first.put(proc.stdout.readline()), daemon=True).start()
        try:
            line = first.get(timeout=self.handshake_timeout)
        except queue.Empty:
            proc.kill()
            proc.wait()
            raise HandshakeTimeoutError(f"no handshake from {self.command[0]!r} within {self.handshake_timeout:g} s") from None
        try:
            self._check_handshake(line)
        except EvalProtoError:
            proc.kill()
            proc.wait()
            raise
        with self._lock:
            self._generation += 1
            self._proc = proc
            self.spawn_count += 1
            gen = self._generation
        threading.Thread(target=self._reader, args=(proc, gen), name=f"evalproto-reader-{gen}", daemon=True).start()

    @staticmethod
    def _check_handshake(line: str) -> None:
        if not line:
            raise HandshakeError(line, "evaluator exited before the handshake")
        try:
            doc = json.loads(line)
        except json.JSONDecodeError:
            raise HandshakeError(line.rstrip("\n")) from None
        if not isinstance(doc, dict) or doc.get("proto") != PROTO:
            raise HandshakeError(line.rstrip("\n"))
        if doc.get("version") != VERSION:
            raise VersionMismatchError(line.rstrip("\n"), doc.get("version"))

    def _reader(self, proc: subprocess.Popen, gen: int) -> None:
        for line in proc.stdout:
            if not line.strip():
                continue
            try:
                resp = parse_response(line.rstrip("\n"))
            except ProtocolError as exc:
                log.error("evaluator protocol violation: %s", exc)
                self._abort(gen, exc)
                return
            with self._lock:
                p = self._pending.get(resp.id)
                if p is None or p.generation != gen:
                    log.warning("dropping response for unknown id %s", resp.id)
                    continue
                names = p.request.objective_names
                if resp.ok and set(resp.objectives) != set(names):
                    p.error = ProtocolError(f"objective keys {sorted(resp.objectives)} != requested {sorted(names)}", line.rstrip("\n"))
                else:
                    p.response = resp
                del self._pending[resp.id]
                p.done.set()
        code = proc.wait()
        self._abort(gen, EvaluatorCrashed(f"evaluator exited with status {code}"))

    def _abort(self, gen: int, error: EvalProtoError, culprit: int | None = None) -> None:
        """Fail every request owed by generation ``gen`` and retire that child.

        The ``culprit`` request receives ``error``; other in-flight requests
        of the same child fail as crashed.
        """
        with self._lock:
            if gen != self._generation or self._proc is None:
                return
            proc, self._proc = self._proc, None
            for rid in [r for r, p in self._pending.items() if p.generation == gen]:
                p = self._pending.pop(rid)
                if culprit is None or rid == culprit:
                    p.error = error
                else:
                    p.error = EvaluatorCrashed(f"evaluator was killed while serving id {rid}: {error}")
                p.done.set()
        if proc.poll() is None:
            proc.kill()
        proc.wait()

    def _ensure_live(self) -> int:
        with self._lock:
            if self._closed:
                raise EvalProtoError("evaluator handle is closed")
            if self._proc is None or self._proc.poll() is not None:
                if self._proc is not None:
                    self._abort(self._generation, EvaluatorCrashed("evaluator died"))
                log.info("respawning evaluator %s", self.command[0])
                self._start()
            return self._generation

    @property
    def pid(self) -> int | None:
        return None if self._proc is None else self._proc.pid

    # -- requests --------------------------------------------------------
    def evaluate(self, request: EvalRequest, timeout_s: float = DEFAULT_TIMEOUT) -> EvalResponse:
        """Send one request and wait for its outcome.

        Raises :class:`EvaluationTimeout` (child killed; respawned on next
        use), :class:`EvaluatorCrashed` or :class:`ProtocolError`.
        """
        with self._lock:
            gen = self._ensure_live()
            if request.id in self._pending:
                raise ValueError(f"request id {request.id} already in flight")
            p = _Pending(request, gen)
            self._pending[request.id] = p
            proc = self._proc
        try:
            with self._write_lock:
                proc.stdin.write(request.to_line())
                proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError):
            pass  # the reader notices the exit and fails the request
        if not p.done.wait(timeout_s):
            self._abort(gen, EvaluationTimeout(f"no response within {timeout_s:g} s (id {request.id})"), request.id)
            p.done.wait()
        if p.response is not None:
            return p.response
        raise p.error

    def close(self) -> None:
        with self._lock:
            self._closed = True
            proc = self._proc
        if proc is None:
            return
        try:
            proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=2)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()
        self._abort(self._generation, EvaluatorCrashed("evaluator closed"))

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def spawn_evaluator(command: Sequence[str], handshake_timeout: float = HANDSHAKE_TIMEOUT) -> EvaluatorHandle:
    return EvaluatorHandle(command, handshake_timeout)


class ExternalTask:
    """Adapter presenting an external evaluator as a built-in style task.

    With ``per_worker`` each concurrent caller borrows its own child;
    otherwise one child serves every worker with pipelined requests.
    """

    name = "external"
    spaces: tuple[str, ...] = ()

    def __init__(
        self,
        command: Sequence[str],
        objective_names: Sequence[str],
        timeout_s: float = DEFAULT_TIMEOUT,
        workers: int = 1,
        per_worker: bool = False,
        handshake_timeout: float = HANDSHAKE_TIMEOUT,
    ):
        self.command = list(command)
        self.objective_names = tuple(objective_names)
        self.timeout_s = timeout_s
        self._ids = itertools.count(1)
        self._id_lock = threading.Lock()
        n = workers if per_worker else 1
        self._handles = [EvaluatorHandle(self.command, handshake_timeout) for _ in range(n)]
        self._free: queue.Queue = queue.Queue()
        for h in self._handles:
            self._free.put(h)
        self._shared = not per_worker

    def _next_id(self) -> int:
        with self._id_lock:
            return next(self._ids)

    def __call__(self, config: Configuration | dict, seed: int) -> TaskResult:
        values = config.values if isinstance(config, Configuration) else config
        req = EvalRequest(self._next_id(), dict(values), self.objective_names, int(seed))
        start = time.monotonic()
        if self._shared:
            resp = self._handles[0].evaluate(req, self.timeout_s)
        else:
            handle = self._free.get()
            try:
                resp = handle.evaluate(req, self.timeout_s)
            finally:
                self._free.put(handle)
        info = {"request_id": req.id, "wall_s": time.monotonic() - start}
        if not resp.ok:
            return infeasible(resp.detail or "evaluator reported failure", **info)
        return TaskResult(resp.objectives, True, resp.detail, info)

    def close(self) -> None:
        for h in self._handles:
            h.close()
