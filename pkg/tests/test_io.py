import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mixcert import ComponentSet, Dataset, InvalidArgument, make_rng
from mixcert.io import (
    read_component_set,
    read_dataset_csv,
    read_ppm,
    write_component_set,
    write_dataset_csv,
    write_ppm,
)

from conftest import random_spd

finite = st.floats(-1e12, 1e12, allow_nan=False, allow_infinity=False)


@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 4)), elements=finite), st.booleans())
def test_dataset_csv_round_trip_exact(tmp_path_factory, pts, labelled):
    p = tmp_path_factory.mktemp("csv") / "d.csv"
    labels = np.arange(pts.shape[0]) % 3 if labelled else None
    ds = Dataset(pts, labels)
    write_dataset_csv(ds, p)
    back = read_dataset_csv(p)
    assert np.array_equal(back.points, ds.points)
    assert back.content_hash == ds.content_hash
    if labelled:
        assert np.array_equal(back.labels, labels)
    else:
        assert back.labels is None


def test_dataset_csv_header(tmp_path):
    p = tmp_path / "d.csv"
    write_dataset_csv(Dataset([[1.0, 2.0, 3.0]], [4]), p)
    assert p.read_text().splitlines()[0] == "x1,x2,x3,label"


@pytest.mark.parametrize(
    "text",
    [
        "",
        "a,b\n1,2\n",
        "x1,x3\n1,2\n",
        "x1,x2\n",
        "x1,x2\n1,zz\n",
        "x1,x2\n1,2,3\n",
        "x1,label\n1,0.5\n",
    ],
)
def test_dataset_csv_rejects_malformed(tmp_path, text):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(InvalidArgument):
        read_dataset_csv(p)


@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.integers(1, 3))
def test_component_set_json_round_trip_exact(tmp_path_factory, seed, m, d):
    rng = make_rng(seed)
    cs = ComponentSet(rng.standard_normal((m, d)) * 1e3, [random_spd(rng, d, 1e-3, 1e3) for _ in range(m)], {"kind": "explicit", "note": "x"})
    p = tmp_path_factory.mktemp("cs") / "c.json"
    write_component_set(cs, p)
    back = read_component_set(p)
    assert np.array_equal(back.means, cs.means)
    assert np.array_equal(back.covs, cs.covs)
    assert back.provenance == cs.provenance
    assert back.content_hash == cs.content_hash


def test_component_set_json_keys(tmp_path):
    p = tmp_path / "c.json"
    write_component_set(ComponentSet([[0.0, 1.0]], [np.eye(2)]), p)
    doc = json.loads(p.read_text())
    assert set(doc) == {"dimension", "components", "provenance"}
    assert doc["dimension"] == 2
    assert doc["components"] == [{"mean": [0.0, 1.0], "cov": [[1.0, 0.0], [0.0, 1.0]]}]


@pytest.mark.parametrize(
    "doc",
    [
        {"components": []},
        {"dimension": 2, "components": []},
        {"dimension": 3, "components": [{"mean": [0, 0], "cov": [[1, 0], [0, 1]]}]},
        {"dimension": 2, "components": [{"mean": [0, 0]}]},
    ],
)
def test_component_set_json_rejects_malformed(tmp_path, doc):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(InvalidArgument):
        read_component_set(p)


@given(arrays(np.uint8, st.tuples(st.integers(1, 9), st.integers(1, 9), st.just(3))))
def test_ppm_round_trip_exact(tmp_path_factory, img):
    p = tmp_path_factory.mktemp("ppm") / "i.ppm"
    write_ppm(img, p)
    assert np.array_equal(read_ppm(p), img)


def test_ppm_header_with_comments(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6\n# made by hand\n2 1\n255\n" + bytes([1, 2, 3, 4, 5, 6]))
    assert read_ppm(p).tolist() == [[[1, 2, 3], [4, 5, 6]]]


@pytest.mark.parametrize("raw", [b"P3\n1 1\n255\n0 0 0\n", b"P6\n1 1\n65535\n" + bytes(6), b"P6\n2 2\n255\n" + bytes(5)])
def test_ppm_rejects_unsupported(tmp_path, raw):
    p = tmp_path / "bad.ppm"
    p.write_bytes(raw)
    with pytest.raises(InvalidArgument):
        read_ppm(p)


def test_ppm_write_needs_uint8_rgb(tmp_path):
    with pytest.raises(InvalidArgument):
        write_ppm(np.zeros((2, 2, 3)), tmp_path / "x.ppm")
    with pytest.raises(InvalidArgument):
        write_ppm(np.zeros((2, 2), dtype=np.uint8), tmp_path / "x.ppm")
