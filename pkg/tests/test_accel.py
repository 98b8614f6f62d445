import json
import os
import subprocess
import sys

import numpy as np
import pytest

from peakforge import _accel, pareto

PROBE = """
import json
from peakforge import _accel, pareto, search
from peakforge.objectives import ObjectiveSpec
from peakforge.space import builtin_space
from peakforge.tasks import AnalyticTask
res = search.run_search(builtin_space("zdt1"), AnalyticTask("zdt1"), ObjectiveSpec.parse(["f1", "f2"]),
                        search.SearchBudget(25), master_seed=4)
print(json.dumps({
    "use_numba": _accel.USE_NUMBA,
    "kernel": _accel.pick("numba", "numpy"),
    "log": [t.to_record() for t in res.trials],
}))
"""


def _probe(flag):
    env = {k: v for k, v in os.environ.items() if k != "PEAKFORGE_NO_NUMBA"}
    if flag is not None:
        env["PEAKFORGE_NO_NUMBA"] = flag
    proc = subprocess.run([sys.executable, "-c", PROBE], env=env, capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stderr
    return json.loads(proc.stdout)


def _strip_durations(log):
    return [{k: v for k, v in rec.items() if k not in ("duration_s", "started_at", "finished_at")} for rec in log]


@pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")
def test_flag_selects_numpy_path_and_results_match():
    fast = _probe(None)
    slow = _probe("1")
    assert fast["use_numba"] and fast["kernel"] == "numba"
    assert not slow["use_numba"] and slow["kernel"] == "numpy"
    assert _strip_durations(fast["log"]) == _strip_durations(slow["log"])


def test_pick_follows_module_flag(monkeypatch):
    monkeypatch.setattr(_accel, "USE_NUMBA", False)
    assert _accel.pick(1, 2) == 2
    pts = np.random.default_rng(0).random((50, 3))
    ref = pareto._nondominated_numpy(pts)
    np.testing.assert_array_equal(pareto.nondominated_mask(pts), ref)
