from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedapa.numerics import (
    LayoutError,
    ParamMatrix,
    ParamVector,
    axpy,
    concat,
    delta,
    dot,
    mat_transpose_vec,
    norm2,
    split,
    weighted_sum,
)


def vec(*xs):
    return ParamVector(np.array(xs, dtype=float), ((len(xs),),))


def mat(*cols):
    return ParamMatrix.from_columns([vec(*c) for c in cols])


finite = st.floats(-1e3, 1e3, allow_nan=False)


@pytest.mark.parametrize(
    "weights, expected",
    [((1, 0), (1, 2)), ((0.5, 0.5), (2, 3)), ((0.25, 0.75), (2.5, 3.5))],
)
def test_weighted_sum_examples(weights, expected):
    out = weighted_sum(mat((1, 2), (3, 4)), weights)
    assert out.values.tolist() == list(expected)
    assert out.layout == ((2,),)


def test_weighted_sum_rejects_length_mismatch():
    with pytest.raises(ValueError, match="weights"):
        weighted_sum(mat((1, 2), (3, 4)), (1.0,))


def test_delta_examples():
    assert delta(vec(1, 1), vec(1, 1)).values.tolist() == [0, 0]
    assert delta(vec(2, 3), vec(1, 1)).values.tolist() == [1, 2]
    x = vec(0.1, -7.25)
    assert delta(x, ParamVector.zeros(x.layout)).values.tolist() == x.values.tolist()


def test_delta_layout_mismatch():
    a = ParamVector(np.zeros(4), ((2, 2),))
    b = ParamVector(np.zeros(4), ((4,),))
    with pytest.raises(LayoutError):
        delta(a, b)


def test_mat_transpose_vec_examples():
    assert mat_transpose_vec(mat((1, 0), (0, 2)), vec(0, 0.4)).tolist() == [0, 0.8]
    assert mat_transpose_vec(mat((1, 5), (-3, 2)), vec(0, 0)).tolist() == [0, 0]
    assert mat_transpose_vec(mat((1, 1), (1, -1)), vec(2, 3)).tolist() == [5, -1]


def test_mat_transpose_vec_layout_mismatch():
    with pytest.raises(LayoutError):
        mat_transpose_vec(mat((1, 0), (0, 2)), vec(1, 2, 3))


def test_norm_dot_axpy_examples():
    assert norm2(vec(3, 4)) == 5.0
    assert dot(vec(1, 2), vec(3, 4)) == 11.0
    v = vec(1.5, -2)
    assert axpy(v, 0.0, vec(9, 9)) is v
    assert axpy(v, 2.0, vec(1, 1)).values.tolist() == [3.5, 0.0]


def test_param_vector_rejects_non_finite_and_bad_size():
    with pytest.raises(ValueError):
        vec(1.0, float("nan"))
    with pytest.raises(ValueError):
        vec(float("inf"))
    with pytest.raises(LayoutError):
        ParamVector(np.zeros(5), ((2, 2),))


def test_param_vector_is_immutable():
    v = vec(1, 2)
    with pytest.raises(ValueError):
        v.values[0] = 3.0


def test_tensors_and_split_round_trip():
    v = ParamVector(np.arange(10.0), ((2, 3), (3,), (1,)))
    shapes = [t.shape for t in v.tensors()]
    assert shapes == [(2, 3), (3,), (1,)]
    a, b = split(v, 1)
    assert a.layout == ((2, 3), (3,)) and b.layout == ((1,),)
    back = concat(a, b)
    assert back.values.tolist() == v.values.tolist() and back.layout == v.layout


def _random_matrix(rng, m, n):
    return ParamMatrix(rng.normal(size=(m, n)), ((n,),))


def test_weighted_sum_basis_is_bit_exact():
    rng = np.random.default_rng(0)
    P = _random_matrix(rng, 6, 11)
    for j in range(6):
        e = np.zeros(6)
        e[j] = 1.0
        assert np.array_equal(weighted_sum(P, e).values, P.data[j])


@settings(max_examples=50, deadline=None)
@given(
    seed=st.integers(0, 2**31 - 1),
    s=st.floats(-100, 100, allow_nan=False).filter(lambda x: abs(x) > 1e-6),
)
def test_weighted_sum_linear(seed, s):
    rng = np.random.default_rng(seed)
    P = _random_matrix(rng, 4, 9)
    w = rng.normal(size=4)
    lhs = weighted_sum(P, s * w).values
    rhs = s * weighted_sum(P, w).values
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * np.abs(rhs).max())


def _naive_transpose_vec(data, v):
    out = []
    for j in range(len(data)):
        acc = 0.0
        for k in range(len(v)):
            acc += data[j][k] * v[k]
        out.append(acc)
    return out


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_mat_transpose_vec_matches_naive_loop_bit_exactly(seed):
    rng = np.random.default_rng(seed)
    P = _random_matrix(rng, 5, 7)
    v = ParamVector(rng.normal(size=7), ((7,),))
    expected = _naive_transpose_vec(P.data.tolist(), v.values.tolist())
    assert mat_transpose_vec(P, v).tolist() == expected


@given(st.lists(finite, min_size=1, max_size=20))
def test_dot_matches_sequential_sum(xs):
    v = vec(*xs)
    acc = 0.0
    for x in xs:
        acc += x * x
    assert dot(v, v) == acc


def test_replace_column_and_norms():
    P = mat((3, 0), (0, 4))
    Q = P.replace_column(0, vec(0, 0))
    assert P.column(0).values.tolist() == [3, 0]
    assert Q.column(0).values.tolist() == [0, 0]
    assert P.frobenius_norm() == 5.0
    assert P.spectral_norm() == pytest.approx(4.0)
