import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tgv2.fields import (
    ContractError,
    GridGeometry,
    field_kind,
    inner_product,
    norm_21_sym,
    norm_21_vec,
)

finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)


def test_geometry_validation():
    g = GridGeometry(3, 2, 0.5)
    assert g.shape == (2, 3)
    assert g.cell_area == 0.25
    with pytest.raises(ContractError):
        GridGeometry(0, 2)
    with pytest.raises(ContractError):
        GridGeometry(2, 2, 0.0)


def test_field_kind():
    assert field_kind(np.zeros((3, 4))) == "scalar"
    assert field_kind(np.zeros((2, 3, 4))) == "vector"
    assert field_kind(np.zeros((3, 3, 4))) == "sym"
    assert field_kind(np.zeros((4, 3, 2, 2))) == "sym"
    with pytest.raises(ContractError):
        field_kind(np.zeros((5, 3, 4)))


def test_inner_product_examples():
    assert inner_product(np.ones((2, 2)), np.ones((2, 2))) == 4.0
    assert inner_product(np.zeros((2, 2)), np.arange(4.0).reshape(2, 2)) == 0.0
    q = np.zeros((3, 1, 1))
    q[2] = 1.0
    assert inner_product(q, q) == 2.0
    assert inner_product(np.ones((2, 2)), np.ones((2, 2)), h=0.5) == 1.0


def test_inner_product_geometry_mismatch():
    with pytest.raises(ContractError):
        inner_product(np.ones((2, 2)), np.ones((2, 3)))


def test_norm_21_vec_examples():
    p = np.zeros((2, 1, 1))
    p[:, 0, 0] = (3, 4)
    assert norm_21_vec(p) == 5.0
    assert norm_21_vec(np.zeros((2, 3, 3))) == 0.0
    p = np.zeros((2, 2, 3))
    p[0] = 1.0
    assert norm_21_vec(p, h=0.5) == pytest.approx(1.5, abs=1e-15)


def test_norm_21_sym_examples():
    q = np.ones((3, 1, 1))
    assert norm_21_sym(q) == pytest.approx(2.0, abs=1e-15)
    assert norm_21_sym(np.zeros((3, 2, 2))) == 0.0
    q = np.zeros((3, 1, 1))
    q[2] = 1.0
    assert norm_21_sym(q) == pytest.approx(np.sqrt(2.0), abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(arrays(float, (3, 4, 5), elements=finite), arrays(float, (3, 4, 5), elements=finite))
def test_inner_product_symmetric(a, b):
    assert inner_product(a, b) == inner_product(b, a)


@settings(max_examples=50, deadline=None)
@given(arrays(float, (2, 4, 3), elements=finite), arrays(float, (2, 4, 3), elements=finite),
       st.floats(-10, 10))
def test_vec_norm_homogeneous_and_triangle(p, q, c):
    n = norm_21_vec(p)
    assert norm_21_vec(c * p) == pytest.approx(abs(c) * n, rel=1e-12, abs=1e-12)
    assert norm_21_vec(p + q) <= norm_21_vec(p) + norm_21_vec(q) + 1e-12 * (1 + n)


@settings(max_examples=50, deadline=None)
@given(arrays(float, (3, 3, 3), elements=finite), arrays(float, (3, 3, 3), elements=finite),
       st.floats(-10, 10))
def test_sym_norm_homogeneous_and_triangle(p, q, c):
    n = norm_21_sym(p)
    assert norm_21_sym(c * p) == pytest.approx(abs(c) * n, rel=1e-12, abs=1e-12)
    assert norm_21_sym(p + q) <= norm_21_sym(p) + norm_21_sym(q) + 1e-12 * (1 + n)
