"""Evaluator protocol conformance scenarios.

Each check takes the argument vector of an evaluator that answers with the
``echo`` function and honours the ``_sleep`` / ``_crash`` config directives
(the bundled stub does), and raises AssertionError on a violation.
"""

import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor

from peakforge.evalproto import EvalRequest, EvaluationTimeout, EvaluatorCrashed, EvaluatorHandle, ExternalTask

STUB = [sys.executable, "-m", "peakforge.stub_evaluator"]


def _req(rid, **config):
    return EvalRequest(rid, config, ("loss",), seed=rid)


def check_round_trip(command=STUB):
    with EvaluatorHandle(command) as h:
        resp = h.evaluate(_req(1, loss=0.5), timeout_s=10)
        assert resp.ok and resp.id == 1 and resp.objectives == {"loss": 0.5}


def check_out_of_order(command=STUB + ["--reverse-pairs"]):
    """Pipelined requests answered newest-first are matched by id."""
    with EvaluatorHandle(command) as h, ThreadPoolExecutor(2) as pool:
        f1 = pool.submit(h.evaluate, _req(1, loss=0.1), 10)
        time.sleep(0.2)  # make sure id 1 is written first
        f2 = pool.submit(h.evaluate, _req(2, loss=0.2), 10)
        assert f1.result().objectives == {"loss": 0.1}
        assert f2.result().objectives == {"loss": 0.2}


def check_timeout_and_respawn(command=STUB):
    with EvaluatorHandle(command) as h:
        first_pid = h.pid
        t0 = time.monotonic()
        try:
            h.evaluate(_req(1, _sleep=30), timeout_s=0.5)
        except EvaluationTimeout:
            pass
        else:
            raise AssertionError("sleeping request did not time out")
        assert time.monotonic() - t0 < 5
        resp = h.evaluate(_req(2, loss=0.25), timeout_s=10)
        assert resp.objectives == {"loss": 0.25}
        assert h.spawn_count == 2 and h.pid != first_pid


def check_crash_containment(command=STUB):
    """A child dying mid-request fails only what it owed; service resumes."""
    with EvaluatorHandle(command) as h:
        assert h.evaluate(_req(1, loss=0.3), 10).ok
        try:
            h.evaluate(_req(2, _crash=True), 10)
        except EvaluatorCrashed:
            pass
        else:
            raise AssertionError("crash was not reported")
        assert h.evaluate(_req(3, loss=0.4), 10).objectives == {"loss": 0.4}
        assert h.spawn_count == 2


def check_exactly_once(command=STUB, n=40, workers=4):
    """Every request gets exactly one terminal outcome under concurrency,
    with sleeps, a timeout and a crash mixed in."""
    task = ExternalTask(command, ("loss",), timeout_s=1.0, workers=workers)
    outcomes = {}
    lock = threading.Lock()

    def one(i):
        config = {"loss": i / n, "_sleep": 0.01 * (i % 3)}
        if i == 7:
            config["_sleep"] = 5  # times out
        if i == 23:
            config["_crash"] = True
        try:
            res = task(config, seed=i)
            key = res.info["request_id"]
            outcome = ("ok", res.objectives["loss"]) if res.feasible else ("fail", None)
        except (EvaluationTimeout, EvaluatorCrashed) as exc:
            key, outcome = None, (type(exc).__name__, None)
        with lock:
            assert i not in outcomes, f"call {i} finished twice"
            outcomes[i] = (key, outcome)

    try:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(one, range(n)))
    finally:
        task.close()
    assert sorted(outcomes) == list(range(n))
    assert outcomes[7][1][0] == "EvaluationTimeout"
    assert outcomes[23][1][0] == "EvaluatorCrashed"
    ids = [k for k, _ in outcomes.values() if k is not None]
    assert len(ids) == len(set(ids))
    for i, (_, (status, loss)) in outcomes.items():
        if status == "ok":
            assert loss == i / n  # each answer reached the caller that asked
    # requests in flight beside the timeout or the crash may fail with them;
    # everything else must succeed
    assert sum(1 for _, (s, _) in outcomes.values() if s == "ok") >= n - 2 * workers


CHECKS = (check_round_trip, check_out_of_order, check_timeout_and_respawn, check_crash_containment, check_exactly_once)
