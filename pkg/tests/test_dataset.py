import io
import warnings

import numpy as np
import pytest

from robsens.dataset import (Transform, TransformSpec, build_designs, from_arrays, load_csv, write_csv)
from robsens.errors import (AllTreatedOrAllControl, ConfigError, MissingColumn, NonBinaryTreatment,
                            NonNumericValue, RankDeficientDesign)


def _csv(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_canonical_order_unchanged(tmp_path):
    ds = load_csv(_csv(tmp_path, "y,z,x\n1,1,10\n2,1,20\n3,0,30\n4,0,40\n"))
    assert (ds.n1, ds.n0) == (2, 2)
    assert ds.y.tolist() == [1, 2, 3, 4]
    assert ds.original_index.tolist() == [0, 1, 2, 3]


def test_treated_first_stable(tmp_path):
    ds = load_csv(_csv(tmp_path, "y,z,x\n1,0,10\n2,1,20\n3,0,30\n4,1,40\n"))
    assert ds.y[:2].tolist() == [2, 4]
    assert ds.original_index.tolist() == [1, 3, 0, 2]
    assert ds.z.tolist() == [1, 1, 0, 0]


def test_non_binary_treatment(tmp_path):
    with pytest.raises(NonBinaryTreatment):
        load_csv(_csv(tmp_path, "y,z\n1,2\n2,1\n3,0\n"))


@pytest.mark.parametrize("text,err", [
    ("y,z\n1,1\nfoo,0\n", NonNumericValue),
    ("y,z\n1,1\nnan,0\n", NonNumericValue),
    ("y,w\n1,1\n2,0\n", MissingColumn),
    ("y,z\n1,1\n2,1\n", AllTreatedOrAllControl),
    ("y,z\n1,1\n2\n", NonNumericValue),
    ("", MissingColumn),
])
def test_bad_files(tmp_path, text, err):
    with pytest.raises(err):
        load_csv(_csv(tmp_path, text))


def test_round_trip(tmp_path):
    ds = from_arrays([1.5, 2.0, -3.0], [0, 1, 1], [[1.0], [2.0], [3.0]], columns=["a"])
    p = tmp_path / "out.csv"
    write_csv(ds, p)
    back = load_csv(p)
    assert np.array_equal(back.y, ds.y) and np.array_equal(back.x, ds.x)
    buf = io.StringIO()
    write_csv(ds, buf)
    assert buf.getvalue().splitlines()[1] == "1.5,0,1.0"


def test_identity_design():
    ds = from_arrays([0, 1, 2, 3], [1, 0, 1, 0], [[1, 5], [2, 3], [3, 8], [4, 1]], columns=["x1", "x2"])
    d = build_designs(ds, TransformSpec.identity(["x1", "x2"]))
    assert np.array_equal(d.s_design, np.column_stack([np.ones(4), ds.x]))
    assert d.s_labels == ("(intercept)", "x1", "x2")


@pytest.mark.filterwarnings("ignore:balance covariates")
def test_product_column():
    ds = from_arrays([0, 1], [1, 0], [[1, 2], [3, 4]], columns=["x1", "x2"])
    d = build_designs(ds, TransformSpec.from_lists([], ["x1*x2"]))
    assert d.g_design[:, 0].tolist() == [2, 12]


def test_standardize():
    ds = from_arrays([0, 1, 2], [1, 0, 1], [[1.0], [2.0], [3.0]], columns=["x"])
    d = build_designs(ds, TransformSpec.from_lists(["std:x"], ["std:x"]))
    assert np.allclose(d.s_design[:, 1], [-1.0, 1.0, 0.0])  # treated rows first
    const = from_arrays([0, 1, 2], [1, 0, 1], [[1.0], [1.0], [1.0]], columns=["x"])
    with pytest.raises(RankDeficientDesign):
        build_designs(const, TransformSpec.from_lists(["std:x"], []))


def test_transform_parsing():
    assert Transform.parse({"product": ["a", "b"]}) == Transform("product", ("a", "b"))
    assert Transform.parse("std:a").label == "std:a"
    with pytest.raises(ConfigError):
        Transform.parse({"cube": "a"})
    with pytest.raises(ConfigError):
        Transform("product", ("a",))


def test_unknown_column_and_span_warning():
    ds = from_arrays([0, 1, 2, 3], [1, 0, 1, 0], [[1, 5], [2, 3], [3, 8], [4, 1]], columns=["x1", "x2"])
    with pytest.raises(MissingColumn):
        build_designs(ds, TransformSpec.from_lists(["x9"], []))
    with pytest.warns(UserWarning):
        build_designs(ds, TransformSpec.from_lists(["x1"], ["x2"]))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        build_designs(ds, TransformSpec.from_lists(["x1", "x2"], ["x2"]))
