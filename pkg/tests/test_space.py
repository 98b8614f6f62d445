import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peakforge.space import (
    CATEGORICAL,
    CONTINUOUS,
    DISCRETE,
    Dimension,
    DuplicateNameError,
    InvalidConfigurationError,
    InvertedBoundsError,
    SchemaError,
    SearchSpace,
    UnknownPresetError,
    builtin_names,
    builtin_space,
    dump_space,
    load_space,
)

TABLE1 = {
    "mlpBragg": {"nepochs": (1, 1000), "nunits": (1, 1000), "nhidden": (1, 10)},
    "mlpPtycho": {"nepochs": (1, 1000), "nunits": (1, 1000), "nhidden": (1, 10)},
    "cnnBragg": {"nepochs": (1, 1000), "nfilters": (1, 256), "nconv": (1, 128)},
    "cnnPtycho": {"nepochs": (1, 1000), "nfilters": (1, 256), "enconv": (1, 128), "deconv1": (1, 128), "deconv2": (1, 128)},
}
ARCH = {
    "mlpBragg": {"nunits", "nhidden"},
    "mlpPtycho": {"nunits", "nhidden"},
    "cnnBragg": {"nfilters", "nconv"},
    "cnnPtycho": {"nfilters", "enconv", "deconv1", "deconv2"},
}
PRESETS = tuple(TABLE1)


@pytest.mark.parametrize("name", PRESETS)
def test_presets_match_table1(name):
    space = builtin_space(name)
    assert set(space.names) == set(TABLE1[name]) | {"batch", "lr"}
    for dim_name, (lo, hi) in TABLE1[name].items():
        dim = space.dimension(dim_name)
        assert dim.kind == DISCRETE
        assert (dim.lower, dim.upper) == (lo, hi)
    lr = space.dimension("lr")
    assert (lr.kind, lr.lower, lr.upper, lr.scale) == (CONTINUOUS, 0.001, 1.0, "log10")
    batch = space.dimension("batch")
    assert batch.kind == CATEGORICAL and batch.choices == ("8", "16", "32", "64")
    assert space.architecture_dims == ARCH[name]
    assert space.training_dims == {"nepochs", "batch", "lr"}


def test_preset_sizes():
    assert len(builtin_space("mlpBragg")) == 5
    assert len(builtin_space("cnnPtycho")) == 7
    assert builtin_space("cnnPtycho").dimension("deconv2").upper == 128


def test_unknown_preset():
    with pytest.raises(UnknownPresetError):
        builtin_space("resnetBragg")
    assert set(PRESETS) <= set(builtin_names())


def test_load_single_dimension():
    space = load_space({"name": "s", "dimensions": [{"name": "x", "kind": "continuous", "lower": 0, "upper": 1, "scale": "linear"}]})
    assert len(space) == 1 and space.names == ["x"]


def test_inverted_bounds_names_path():
    doc = {"name": "s", "dimensions": [{"name": "x", "kind": "continuous", "lower": 5, "upper": 2}]}
    with pytest.raises(InvertedBoundsError, match=r"inverted bounds at dimensions\[0\]"):
        load_space(doc)


def test_duplicate_names_rejected():
    dim = {"name": "x", "kind": "discrete-int", "lower": 0, "upper": 3}
    with pytest.raises(DuplicateNameError, match=r"dimensions\[1\]"):
        load_space({"name": "s", "dimensions": [dim, dim]})


@pytest.mark.parametrize(
    "doc, path",
    [
        ({"name": "s", "dimensions": [{"name": "x", "kind": "weird", "lower": 0, "upper": 1}]}, "dimensions[0].kind"),
        ({"name": "s", "dimensions": [{"name": "x", "kind": "continuous", "lower": 0, "upper": 1, "colour": 1}]}, "dimensions[0]"),
        ({"name": "s", "dimensions": [], "extra": 1}, "extra"),
        ({"name": "s", "dimensions": [{"name": "x", "kind": "continuous", "lower": 0, "upper": 1, "scale": "log10"}]}, "dimensions[0]"),
        ({"name": "s", "dimensions": [{"name": "c", "kind": "categorical", "choices": ["a"]}]}, "dimensions[0]"),
    ],
)
def test_schema_violations(doc, path):
    with pytest.raises(SchemaError) as info:
        load_space(doc)
    assert path in str(info.value)


def test_load_rejects_non_json():
    with pytest.raises(SchemaError):
        load_space("{not json")


@pytest.mark.parametrize("name", PRESETS)
def test_round_trip_through_json(name):
    space = builtin_space(name)
    assert load_space(dump_space(space)) == space
    assert load_space(json.loads(space.to_json())) == space


def test_categorical_sample_is_a_choice():
    space = SearchSpace("c", (Dimension("batch", CATEGORICAL, choices=("8", "16", "32", "64")),))
    for seed in range(20):
        assert space.sample(np.random.default_rng(seed))["batch"] in ("8", "16", "32", "64")


def test_log_uniform_sampling_midpoint():
    space = builtin_space("mlpBragg")
    rng = np.random.default_rng(0)
    lrs = np.array([space.sample(rng)["lr"] for _ in range(10_000)])
    # log-uniform on [1e-3, 1]: CDF at 10^-1.5 is exactly one half
    assert abs(np.mean(lrs <= 10**-1.5) - 0.5) < 0.02


def test_sampling_is_deterministic():
    space = builtin_space("cnnPtycho")
    a = space.sample(np.random.default_rng(7))
    b = space.sample(np.random.default_rng(7))
    assert a == b


def test_encode_examples():
    space = builtin_space("mlpBragg")
    base = dict(nepochs=1, nunits=1, nhidden=1, batch="8", lr=0.001)
    x = space.encode(base)
    assert x[space.names.index("lr")] == 0.0
    x = space.encode({**base, "lr": 0.0316227766})
    assert x[space.names.index("lr")] == pytest.approx(0.5, abs=1e-9)
    x = space.encode({**base, "batch": "32"})
    assert x[space.names.index("batch")] == pytest.approx(2 / 3)


def test_encode_rejects_out_of_bounds():
    space = builtin_space("mlpBragg")
    with pytest.raises(InvalidConfigurationError):
        space.encode(dict(nepochs=0, nunits=1, nhidden=1, batch="8", lr=0.01))
    with pytest.raises(InvalidConfigurationError):
        space.encode(dict(nepochs=1, nunits=1, nhidden=1, batch="12", lr=0.01))


def test_decode_rounds_ties_down():
    space = SearchSpace("d", (Dimension("n", DISCRETE, 0, 2),))
    assert space.decode([0.25])["n"] == 0  # 0.5 -> 0
    assert space.decode([0.75])["n"] == 1  # 1.5 -> 1
    assert space.decode([0.76])["n"] == 2
    assert space.decode([-3.0])["n"] == 0 and space.decode([9.0])["n"] == 2


@pytest.mark.parametrize("name", PRESETS + ("sphere3", "zdt1"))
def test_samples_satisfy_invariants(name):
    space = builtin_space(name)
    rng = np.random.default_rng(1)
    for _ in range(10_000):
        space.validate(space.sample(rng))


@pytest.mark.parametrize("name", PRESETS)
@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_encode_decode_round_trip(name, seed):
    space = builtin_space(name)
    config = space.sample(np.random.default_rng(seed))
    back = space.decode(space.encode(config))
    for dim in space.dimensions:
        a, b = config[dim.name], back[dim.name]
        if dim.kind == CONTINUOUS:
            assert math.isclose(a, b, rel_tol=1e-12)
        else:
            assert a == b


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-0.5, 1.5, allow_nan=False), min_size=7, max_size=7))
def test_decode_always_valid(x):
    space = builtin_space("cnnPtycho")
    space.validate(space.decode(x))


def test_sample_encoded_matches_sample_distribution():
    space = builtin_space("mlpBragg")
    enc = space.sample_encoded(np.random.default_rng(3), 20_000)
    assert enc.shape == (20_000, 5)
    assert enc.min() >= 0.0 and enc.max() <= 1.0
    for row in enc[:200]:
        space.validate(space.decode(row))
    batch = enc[:, space.names.index("batch")]
    assert set(np.unique(batch)) == {0.0, 1 / 3, 2 / 3, 1.0}
