import json
import sys

import pytest

from conformance import CHECKS, STUB

from peakforge import search as S
from peakforge.evalproto import (
    EvalRequest,
    EvaluatorHandle,
    ExternalTask,
    HandshakeError,
    HandshakeTimeoutError,
    ProtocolError,
    SpawnError,
    VersionMismatchError,
    parse_response,
    spawn_evaluator,
)
from peakforge.objectives import ObjectiveSpec
from peakforge.space import builtin_space


@pytest.mark.parametrize("check", CHECKS, ids=[c.__name__ for c in CHECKS])
def test_stub_conformance(check):
    check()


def test_garbage_handshake_names_the_line():
    with pytest.raises(HandshakeError, match="Loading CUDA libraries"):
        spawn_evaluator(STUB + ["--handshake", "garbage"])


def test_version_mismatch():
    with pytest.raises(VersionMismatchError) as info:
        spawn_evaluator(STUB + ["--handshake", "v2"])
    assert info.value.version == 2


def test_handshake_timeout():
    with pytest.raises(HandshakeTimeoutError):
        EvaluatorHandle(STUB + ["--handshake", "silent"], handshake_timeout=1.0)


def test_spawn_failure():
    with pytest.raises(SpawnError):
        spawn_evaluator(["/nonexistent/evaluator"])
    with pytest.raises(SpawnError):
        spawn_evaluator([])


def test_child_exiting_before_handshake():
    with pytest.raises(HandshakeError, match="exited"):
        spawn_evaluator([sys.executable, "-c", "pass"])


def test_malformed_response_is_a_protocol_error():
    with EvaluatorHandle(STUB) as h:
        with pytest.raises(ProtocolError) as info:
            h.evaluate(EvalRequest(1, {"_malformed": True}, ("loss",), 0), 10)
        assert info.value.line == "this is not json"
        assert h.evaluate(EvalRequest(2, {"loss": 1.0}, ("loss",), 0), 10).ok


def test_wrong_objective_keys_are_rejected():
    with EvaluatorHandle(STUB + ["--function", "echo"]) as h:
        # echo answers with exactly the requested names, so ask the parser directly
        with pytest.raises(ProtocolError):
            parse_response('{"id":1,"status":"ok","objectives":{"acc":1}}', ["loss"])
        assert h.evaluate(EvalRequest(1, {}, ("a", "b"), 0), 10).objectives == {"a": 0.5, "b": 0.5}


@pytest.mark.parametrize(
    "line",
    [
        "[]",
        '{"status":"ok","objectives":{}}',
        '{"id":0,"status":"ok","objectives":{}}',
        '{"id":true,"status":"ok","objectives":{}}',
        '{"id":1,"status":"maybe"}',
        '{"id":1,"status":"ok"}',
        '{"id":1,"status":"ok","objectives":{"loss":"0.5"}}',
        '{"id":1,"status":"ok","objectives":{"loss":NaN}}',
        '{"id":1,"status":"fail","detail":5}',
    ],
)
def test_parse_response_rejects(line):
    with pytest.raises(ProtocolError) as info:
        parse_response(line)
    assert info.value.line == line


def test_parse_response_accepts():
    r = parse_response('{"id":3,"status":"ok","objectives":{"loss":1}}', ["loss"])
    assert r.ok and r.objectives == {"loss": 1.0}
    r = parse_response('{"id":3,"status":"fail","detail":"oom"}')
    assert not r.ok and r.detail == "oom"


def test_request_wire_format():
    line = EvalRequest(7, {"lr": 0.1, "batch": "8"}, ("loss",), 123).to_line()
    assert line.endswith("\n") and line.count("\n") == 1
    assert json.loads(line) == {"id": 7, "config": {"lr": 0.1, "batch": "8"}, "objective_names": ["loss"], "seed": 123}
    with pytest.raises(ValueError):
        EvalRequest(0, {}, ("loss",), 0)
    with pytest.raises(ValueError):
        EvalRequest(1, {"lr": float("nan")}, ("loss",), 0).to_line()


def test_fail_response_is_an_infeasible_trial():
    task = ExternalTask(STUB, ("loss",), timeout_s=10)
    try:
        res = task({"_fail": True}, seed=0)
        assert not res.feasible and res.detail == "requested failure"
    finally:
        task.close()


@pytest.mark.parametrize("per_worker", [False, True])
def test_search_over_external_evaluator(per_worker):
    spec = ObjectiveSpec.parse(["f"])
    task = ExternalTask(STUB + ["--function", "sphere"], spec.names, timeout_s=10, workers=3, per_worker=per_worker)
    try:
        res = S.run_search(builtin_space("sphere3"), task, spec, S.SearchBudget(20, workers=3), master_seed=1)
    finally:
        task.close()
    assert len(res.trials) == 20 and all(t.status == S.OK for t in res.trials)
    for t in res.trials:
        assert t.objectives["f"] == pytest.approx(sum(v * v for v in t.config.values()))
    ids = [t.info["request_id"] for t in res.trials]
    assert len(set(ids)) == 20


def test_crash_in_search_fails_only_that_trial():
    spec = ObjectiveSpec.parse(["f"])
    task = ExternalTask(STUB + ["--function", "sphere"], spec.names, timeout_s=10)

    def evaluate(config, seed):
        # trials with x1 > 0.5 make the child exit mid-request
        return task({**config, "_crash": config["x1"] > 0.5}, seed)

    try:
        res = S.run_search(builtin_space("sphere3"), evaluate, spec, S.SearchBudget(12), mode="random", master_seed=2)
    finally:
        task.close()
    crashed = [t for t in res.trials if t.config["x1"] > 0.5]
    assert crashed and all(t.status == S.FAILED and "EvaluatorCrashed" in t.detail for t in crashed)
    assert all(t.status == S.OK for t in res.trials if t.config["x1"] <= 0.5)
