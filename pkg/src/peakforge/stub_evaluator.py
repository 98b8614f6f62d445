"""Reference evaluator speaking the peakforge-eval protocol.

Used by the conformance tests and as a template for real trainers::

    python3 -m peakforge.stub_evaluator [--handshake ok|garbage|v2|silent]
                                        [--reverse-pairs] [--function sphere|echo]

Objectives: ``echo`` reports ``config[name]`` (default 0.5) for each
requested name; ``sphere`` reports the sum of squares of numeric config
values under every requested name.

Per-request behaviour can be steered through reserved config keys:
``_sleep`` (seconds before answering), ``_crash`` (exit without answering),
``_fail`` (answer with status fail) and ``_malformed`` (answer garbage).
"""

from __future__ import annotations

import argparse
import json
import sys
import time


def objectives_for(request: dict, function: str) -> dict[str, float]:
    config = request["config"]
    names = request["objective_names"]
    if function == "sphere":
        value = sum(float(v) ** 2 for k, v in config.items() if not k.startswith("_") and isinstance(v, (int, float)))
        return {n: value for n in names}
    return {n: float(config.get(n, 0.5)) for n in names}


def respond(request: dict, function: str) -> str | None:
    config = request["config"]
    if config.get("_sleep"):
        time.sleep(float(config["_sleep"]))
    if config.get("_crash"):
        print(f"stub: crashing on id {request['id']}", file=sys.stderr)
        sys.exit(1)
    if config.get("_malformed"):
        return "this is not json"
    if config.get("_fail"):
        return json.dumps({"id": request["id"], "status": "fail", "detail": "requested failure"})
    return json.dumps({"id": request["id"], "status": "ok", "objectives": objectives_for(request, function)})


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--handshake", choices=("ok", "garbage", "v2", "silent"), default="ok")
    ap.add_argument("--reverse-pairs", action="store_true", help="answer requests two at a time, newest first")
    ap.add_argument("--function", choices=("echo", "sphere"), default="echo")
    args = ap.parse_args(argv)

    if args.handshake == "silent":
        time.sleep(3600)
        return 0
    hello = {
        "ok": '{"proto":"peakforge-eval","version":1}',
        "garbage": "Loading CUDA libraries...",
        "v2": '{"proto":"peakforge-eval","version":2}',
    }[args.handshake]
    print(hello, flush=True)

    held: list[dict] = []
    for line in sys.stdin:
        if not line.strip():
            continue
        request = json.loads(line)
        batch = [request]
        if args.reverse_pairs:
            held.append(request)
            if len(held) < 2:
                continue
            batch, held = held[::-1], []
        for req in batch:
            out = respond(req, args.function)
            print(out, flush=True)
    for req in held:
        print(respond(req, args.function), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
