import json
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gromov_gap.errors import DomainError, InputNotFound
from gromov_gap.io import atomic_write_text, fmt, points_to_csv, read_points, table_to_csv, to_json


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_fmt_round_trips(x):
    assert float(fmt(x)) == x


def test_points_round_trip(tmp_path):
    pts = np.random.default_rng(0).normal(size=(7, 3))
    path = tmp_path / "p.csv"
    atomic_write_text(path, points_to_csv(pts))
    assert np.array_equal(read_points(path), pts)


def test_read_errors(tmp_path):
    with pytest.raises(InputNotFound):
        read_points(tmp_path / "missing.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n3,x\n")
    with pytest.raises(DomainError, match=":2:"):
        read_points(bad)
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("1,2\n3\n")
    with pytest.raises(DomainError):
        read_points(ragged)
    empty = tmp_path / "empty.csv"
    empty.write_text("\n\n")
    with pytest.raises(DomainError):
        read_points(empty)


def test_atomic_write_leaves_nothing_on_failure(tmp_path):
    path = tmp_path / "out.txt"
    with pytest.raises(TypeError):
        atomic_write_text(path, 123)  # not text: the write fails midway
    assert os.listdir(tmp_path) == []


def test_atomic_write_replaces(tmp_path):
    path = tmp_path / "out.txt"
    atomic_write_text(path, "old")
    atomic_write_text(path, "new")
    assert path.read_text() == "new" and os.listdir(tmp_path) == ["out.txt"]


def test_json_is_stable():
    payload = {"b": np.float64(0.1), "a": [np.int64(3), True, np.array([1.5, 2.0])], "c": None}
    text = to_json(payload)
    assert text == to_json(dict(reversed(list(payload.items()))))
    back = json.loads(text)
    assert back["b"] == "0.10000000000000001" and back["a"] == [3, True, ["1.5", "2"]]


def test_table_csv():
    text = table_to_csv(["step", "loss"], [[0, 0.5], [1, np.float64(1 / 3)]])
    assert text == "step,loss\n0,0.5\n1,0.33333333333333331\n"
