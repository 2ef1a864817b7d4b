import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bmapdiff.core import (
    DimensionError,
    ParameterError,
    RngStream,
    gaussian_field,
    grid_fill,
    hadamard,
    to_signed,
    to_unit,
)


@pytest.mark.parametrize(
    "h, w, value, expected",
    [
        (2, 2, 1.0, [[1.0, 1.0], [1.0, 1.0]]),
        (1, 3, 0.0, [[0.0, 0.0, 0.0]]),
        (3, 1, -0.5, [[-0.5], [-0.5], [-0.5]]),
    ],
)
def test_grid_fill(h, w, value, expected):
    g = grid_fill(h, w, value)
    assert g.dtype == np.float64
    np.testing.assert_array_equal(g, expected)


@pytest.mark.parametrize("h, w", [(0, 2), (2, 0), (-1, 3)])
def test_grid_fill_rejects_bad_dims(h, w):
    with pytest.raises(DimensionError):
        grid_fill(h, w, 1.0)


def test_hadamard_examples():
    a = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(hadamard(a, np.ones((2, 3))), a)
    np.testing.assert_array_equal(hadamard(np.zeros((2, 3)), a), np.zeros((2, 3)))
    np.testing.assert_array_equal(hadamard([[2.0, 3.0]], [[4.0, 5.0]]), [[8.0, 15.0]])


def test_hadamard_shape_mismatch():
    with pytest.raises(DimensionError):
        hadamard(np.ones((2, 2)), np.ones((2, 3)))


# products of three values must stay in the normal range; subnormal results
# carry fewer significant bits and cannot meet a 1-ulp bound
normal_floats = st.floats(-1e6, 1e6).filter(lambda v: v == 0.0 or abs(v) >= 1e-90)
grids = arrays(np.float64, (3, 4), elements=normal_floats)


@given(grids, grids, grids)
def test_hadamard_commutative_and_associative(a, b, c):
    np.testing.assert_array_equal(hadamard(a, b), hadamard(b, a))
    left = hadamard(hadamard(a, b), c)
    right = hadamard(a, hadamard(b, c))
    # each side rounds twice (half an ulp each), so the sides may differ by 2 ulp
    np.testing.assert_array_max_ulp(left, right, maxulp=2)


def test_stream_determinism_and_independence():
    a = gaussian_field(RngStream(7, [0]), 4, 5)
    b = gaussian_field(RngStream(7, [0]), 4, 5)
    c = gaussian_field(RngStream(7, [1]), 4, 5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_child_does_not_advance_parent():
    parent = RngStream(3, [1])
    first = RngStream(3, [1]).normal(4)
    parent.child(5).normal(100)
    np.testing.assert_array_equal(parent.normal(4), first)
    np.testing.assert_array_equal(parent.child(2).normal(3), RngStream(3, [1, 2]).normal(3))


def test_stream_rejects_bad_seed():
    with pytest.raises(ParameterError):
        RngStream(-1)
    with pytest.raises(ParameterError):
        RngStream(1, [-2])


def test_gaussian_field_moments():
    n = 10**6
    x = gaussian_field(RngStream(11, [0]), 1000, 1000).ravel()
    assert abs(x.mean()) < 4 / np.sqrt(n)
    assert abs(x.var() - 1.0) < 0.01
    z = (x - x.mean()) / x.std()
    assert abs(np.mean(z**3)) < 0.02
    assert abs(np.mean(z**4) - 3.0) < 0.05


def test_gaussian_field_batch_shape():
    assert gaussian_field(RngStream(0), 3, 4, count=5).shape == (5, 3, 4)


def test_remaps_are_inverse():
    x = np.linspace(-1, 1, 9)
    np.testing.assert_allclose(to_signed(to_unit(x)), x)
    assert to_unit(-1.0) == 0.0 and to_unit(1.0) == 1.0
