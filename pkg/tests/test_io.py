import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nodectl.core import ControlSchedule, Dataset
from nodectl.errors import ParseError
from nodectl.io import (
    dataset_from_obj,
    dataset_json,
    dumps,
    format_float,
    loads,
    parse_dataset,
    parse_schedule,
    read_points_csv,
    schedule_json,
    write_points_csv,
    write_trajectories_csv,
)


def test_parse_minimal_dataset(tmp_path):
    f = tmp_path / "d.json"
    f.write_text('{"dim":2,"pairs":[{"x":[0,0],"y":[1,1]}]}')
    data = parse_dataset(f)
    assert data.size == 1 and data.dim == 2


def test_duplicate_inputs_are_rejected_with_index(tmp_path):
    f = tmp_path / "d.json"
    f.write_text('{"dim":1,"pairs":[{"x":[0],"y":[1]},{"x":[0],"y":[2]}]}')
    with pytest.raises(ParseError, match="pairs 0 and 1"):
        parse_dataset(f)


@pytest.mark.parametrize(
    "doc,fragment",
    [
        ({"dim": 2, "pairs": [{"x": [0], "y": [1, 1]}]}, "pair 0 x"),
        ({"dim": 2, "pairs": [{"x": [0, 0], "y": [1, 1]}, {"x": [1, "a"], "y": [2, 2]}]}, "pair 1 x"),
        ({"dim": 2, "pairs": [{"x": [0, 0]}]}, "pair 0"),
        ({"dim": 0, "pairs": []}, "dim"),
        ({"pairs": []}, "dim"),
    ],
)
def test_malformed_datasets(doc, fragment):
    with pytest.raises(ParseError, match=fragment):
        dataset_from_obj(doc)


def test_malformed_json_reports_position():
    with pytest.raises(ParseError, match="line 1"):
        loads('{"dim": 2,,}')


def test_missing_file(tmp_path):
    with pytest.raises(ParseError, match="no such file"):
        parse_dataset(tmp_path / "absent.json")


def test_canonical_dataset_round_trip_is_byte_identical(tmp_path):
    data = Dataset([[0.1, -2.0], [1e-300, 3.5]], [[1.0 / 3.0, 2.0], [7.0, -0.0]])
    text = dataset_json(data)
    f = tmp_path / "d.json"
    f.write_text(text)
    assert dataset_json(parse_dataset(f)) == text


def test_schedule_round_trip(tmp_path, rng):
    blocks = [(rng.normal(size=(2, 3)), rng.normal(size=(2, 3)), rng.normal(size=2)) for _ in range(4)]
    sched = ControlSchedule.from_blocks(0.7, blocks)
    f = tmp_path / "s.json"
    f.write_text(schedule_json(sched))
    back = parse_schedule(f)
    assert back == sched
    assert schedule_json(back) == f.read_text()


def test_corrupted_schedule_names_the_invariant(tmp_path):
    sched = ControlSchedule.from_blocks(1.0, [(np.ones((1, 1)), np.ones((1, 1)), np.zeros(1))] * 2)
    doc = json.loads(schedule_json(sched))
    doc["pieces"][1]["t_start"] = 0.4
    f = tmp_path / "s.json"
    f.write_text(json.dumps(doc))
    with pytest.raises(ParseError, match="do not abut"):
        parse_schedule(f)


def test_non_finite_values_round_trip():
    text = dumps({"a": [math.inf, -math.inf, 1.0]})
    back = loads(text)
    assert back["a"][:2] == [math.inf, -math.inf]
    assert math.isnan(loads(dumps([math.nan]))[0])


def test_integral_floats_stay_floats():
    assert format_float(2.0) == "2.0"
    assert format_float(1e20) == "1e+20"
    assert json.loads(dumps({"x": 3.0}))["x"] == 3.0


@settings(max_examples=300, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_text_is_lossless(x):
    assert float(format_float(x)) == x


def test_points_csv_round_trip(tmp_path, rng):
    P = rng.normal(size=(6, 3))
    f = tmp_path / "p.csv"
    write_points_csv(f, P)
    np.testing.assert_array_equal(read_points_csv(f), P)


def test_points_csv_without_header(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("0,1\n2,3\n")
    np.testing.assert_array_equal(read_points_csv(f), [[0, 1], [2, 3]])


def test_points_csv_rejects_ragged_rows(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("0,1\n2\n")
    with pytest.raises(ParseError, match="row 1"):
        read_points_csv(f)


def test_trajectory_csv_layout(tmp_path):
    times = np.array([0.0, 0.5, 1.0])
    states = np.arange(12, dtype=float).reshape(2, 3, 2)
    f = tmp_path / "t.csv"
    write_trajectories_csv(f, times, states)
    lines = f.read_text().splitlines()
    assert lines[0] == "point_id,t,x_1,x_2"
    assert lines[1] == "0,0,0,1" and lines[4] == "1,0,6,7"
    assert len(lines) == 7
