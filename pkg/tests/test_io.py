import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ockg import __version__
from ockg.io import (SCHEMA, DataError, config_digest, read_json, read_stream_csv, read_truth,
                     version_string, write_json, write_stream_csv, write_truth)


@given(T=st.integers(1, 6), N=st.integers(1, 5), d=st.integers(1, 3), t0=st.integers(0, 50),
       seed=st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_stream_roundtrip(T, N, d, t0, seed, tmp_path_factory):
    x = np.random.default_rng(seed).standard_normal((T, N, d)) * 1e3
    p = tmp_path_factory.mktemp("s") / "s.csv"
    write_stream_csv(x, p, t0=t0)
    y, t = read_stream_csv(p)
    assert t == t0 and np.array_equal(x, y)


def test_stream_header(tmp_path):
    p = tmp_path / "s.csv"
    write_stream_csv(np.zeros((2, 3)), p)
    lines = p.read_text().splitlines()
    assert lines[0] == "t,node,x0" and lines[1].startswith("0,0,") and lines[-1].startswith("1,2,")


@pytest.mark.parametrize("text", [
    "",
    "t,node,y0\n0,0,1\n",
    "t,node\n0,0\n",
    "t,node,x0\n",
    "t,node,x0\n0,0,1\n0,1,nan\n",
    "t,node,x0\n0,0,1\n0,1,2\n1,0,3\n",           # missing node at t=1
    "t,node,x0\n0,1,1\n0,0,2\n",                  # unsorted
    "t,node,x0\n0,0,1\n2,0,2\n",                  # gap in time
    "t,node,x0\n0,0,abc\n",
])
def test_malformed_streams(tmp_path, text):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(DataError):
        read_stream_csv(p)


def test_missing_stream(tmp_path):
    with pytest.raises(DataError):
        read_stream_csv(tmp_path / "nope.csv")


def test_json_stamps(tmp_path):
    p = tmp_path / "r.json"
    write_json(p, {"a": 1}, config={"b": 2})
    obj = json.loads(p.read_text())
    assert obj["schema"] == SCHEMA == 1
    assert obj["config_digest"] == config_digest({"b": 2})
    assert obj["version"] == version_string() == f"ockg-{__version__}"
    assert read_json(p)["a"] == 1


def test_json_errors(tmp_path):
    p = tmp_path / "r.json"
    p.write_text("{not json")
    with pytest.raises(DataError):
        read_json(p)
    p.write_text("[1]")
    with pytest.raises(DataError):
        read_json(p)
    p.write_text('{"schema": 2}')
    with pytest.raises(DataError):
        read_json(p)


def test_digest_canonical():
    a = config_digest({"x": 1, "y": [1.5, 2], "z": {"b": 1, "a": 2}})
    b = config_digest({"z": {"a": 2, "b": 1}, "y": [1.5, 2], "x": 1})
    assert a == b and len(a) == 16
    assert config_digest({"x": np.int64(1), "s": {3, 1}}) == config_digest({"x": 1, "s": [1, 3]})
    assert config_digest({"x": 1}) != config_digest({"x": 2})
    with pytest.raises(TypeError):
        config_digest({"x": object()})


def test_truth_roundtrip(tmp_path):
    p = tmp_path / "t.json"
    write_truth(p, 500, {3, 1, 2})
    assert read_truth(p) == (500, {1, 2, 3})
    p.write_text('{"schema": 1, "tau": 5}')
    with pytest.raises(DataError):
        read_truth(p)
