import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cbdi.io import (canonical, config_hash, csv_table, dumps, header_lines, path_rows,
                     read_csv_provenance, read_frames, write_frames)

finite = st.floats(allow_nan=False, allow_infinity=False)


@given(x=finite)
def test_dumps_float_round_trip(x):
    assert json.loads(dumps(x)) == x


@pytest.mark.parametrize("v, text", [(1.0, "1.0"), (3, "3"), (True, "true"), (None, "null"),
                                     (math.inf, '"inf"'), (-math.inf, '"-inf"'),
                                     (math.nan, '"nan"'), (np.float64(0.5), "0.5"),
                                     (np.int64(7), "7")])
def test_dumps_scalars(v, text):
    assert dumps(v) == text


def test_dumps_nested_and_indent():
    obj = {"a": [1.0, np.array([2.0, 3.0])], "b": {"c": "x"}, "e": [], "f": {}}
    assert json.loads(dumps(obj)) == {"a": [1.0, [2.0, 3.0]], "b": {"c": "x"}, "e": [], "f": {}}
    assert json.loads(dumps(obj, indent=1)) == json.loads(dumps(obj))
    assert "\n" in dumps(obj, indent=1)


def test_dumps_rejects_objects():
    with pytest.raises(TypeError):
        dumps(object())


def test_config_hash_ignores_key_order():
    a = {"sim": {"dt": 0.1, "seed": 2}, "drift": {"family": "zero"}}
    b = {"drift": {"family": "zero"}, "sim": {"seed": 2, "dt": 0.1}}
    assert canonical(a) == canonical(b)
    assert config_hash(a) == config_hash(b)
    assert len(config_hash(a)) == 64
    assert config_hash(a) != config_hash({**a, "sim": {"dt": 0.2, "seed": 2}})


def test_path_rows_status_switches_at_event():
    rows = path_rows(3, [0.0, 0.5, 1.0], [2.0, 1.0, 0.0], "Extinct", 0.75)
    assert rows == ["3,0,2,Alive", "3,0.5,1,Alive", "3,1,0,Extinct"]
    rows = path_rows(0, [0.0, 1.0], [1.0, math.inf], "Exploded", 0.5)
    assert rows[-1] == "0,1,inf,Exploded"


def test_csv_nine_digits():
    lines = csv_table(["x", "k"], [(1.0 / 3.0, 2)])
    assert lines == ["x,k", "0.333333333,2"]


def test_csv_provenance_round_trip():
    prov = {"tool": "cbdi", "seed": 4, "config": {"drift": {"family": "zero"}}}
    text = "\n".join(header_lines(prov) + ["a,b", "1,2"])
    assert read_csv_provenance(text) == prov
    assert read_csv_provenance("a,b\n1,2") is None


@given(arrays=st.lists(st.lists(finite, max_size=20), max_size=4),
       note=st.text(max_size=40))
def test_frames_round_trip(arrays, note):
    frames = [("provenance", note)] + [(f"a{k}", np.array(a)) for k, a in enumerate(arrays)]
    buf = io.BytesIO()
    write_frames(buf, frames)
    raw = buf.getvalue()
    assert raw[:4] == b"CBDI"
    back = read_frames(io.BytesIO(raw))
    assert back[0] == ("provenance", note)
    for (n1, a1), (n2, a2) in zip(frames[1:], back[1:]):
        assert n1 == n2
        np.testing.assert_array_equal(a1.astype(float), a2)


def test_frames_reject_bad_magic_and_version():
    with pytest.raises(ValueError):
        read_frames(io.BytesIO(b"NOPE"))
    with pytest.raises(ValueError):
        read_frames(io.BytesIO(b"CBDI\x09\x00\x00\x00\x00\x00"))
