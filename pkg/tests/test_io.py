from __future__ import annotations

import json
import math

import numpy as np

from riskeig import io


def test_floats_round_trip():
    vals = [0.1, 1 / 3, 1e-300, 2.0, -0.0, 123456789.125, np.float64(0.7)]
    back = json.loads(io.dumps(vals))
    assert back == [float(v) for v in vals]
    assert all(isinstance(v, float) for v in back)


def test_special_values():
    text = io.dumps({"a": math.inf, "b": -math.inf, "c": math.nan})
    back = json.loads(text)
    assert back["a"] == math.inf and back["b"] == -math.inf and math.isnan(back["c"])


def test_seventeen_digits():
    assert io.dumps(0.1).strip() == "0.10000000000000001"


def test_numpy_containers():
    obj = {"x": np.arange(3), "y": [np.int64(2), np.bool_(True), None]}
    assert json.loads(io.dumps(obj)) == {"x": [0, 1, 2], "y": [2, True, None]}


def test_csv(tmp_path):
    path = io.write_csv(tmp_path / "t.csv", ["a", "b"], [(1, 0.5), (2, None)])
    assert path.read_text() == "a,b\n1,0.5\n2,\n"
