"""
Tests du substrat d'algèbre linéaire.
"""
import numpy as np
import pytest

from tensor import (
    Elementwise,
    ShapeError,
    as_matrix,
    elementwise,
    identity,
    is_finite,
    logit,
    make_rng,
    matmul,
    relu,
    sigmoid,
)


def test_matmul_matches_numpy():
    rng = make_rng(0)
    a = rng.standard_normal((7, 5))
    b = rng.standard_normal((5, 3))
    assert np.allclose(matmul(a, b), a @ b, rtol=0, atol=1e-12)


def test_matmul_rows_do_not_depend_on_batch():
    rng = make_rng(1)
    a = rng.standard_normal((50, 9))
    b = rng.standard_normal((9, 4))
    full = matmul(a, b)
    for row in (0, 17, 49):
        assert np.array_equal(matmul(a[row:row + 1], b)[0], full[row])


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        matmul(np.zeros((2, 3)), np.zeros((4, 1)))


def test_elementwise_and_shapes():
    a = as_matrix([[1.0, 2.0]])
    b = as_matrix([[3.0, 4.0]])
    assert np.array_equal(elementwise(a, b, Elementwise.ADD), [[4.0, 6.0]])
    assert np.array_equal(elementwise(a, b, "mul"), [[3.0, 8.0]])
    with pytest.raises(ShapeError):
        elementwise(a, as_matrix([[1.0], [2.0]]), Elementwise.ADD)
    with pytest.raises(ShapeError):
        as_matrix([[1.0, 2.0]], cols=3)


def test_sigmoid_is_stable_and_symmetric():
    values = sigmoid(np.array([-1000.0, -2.0, 0.0, 2.0, 1000.0]))
    assert is_finite(values)
    assert values[2] == 0.5
    assert values[0] == 0.0 and values[-1] == 1.0
    assert abs(values[1] + values[3] - 1.0) < 1e-15


def test_logit_inverts_sigmoid():
    for p in (0.0005, 0.1, 0.5, 0.276):
        assert abs(float(sigmoid(np.array(logit(p)))) - p) < 1e-15
    with pytest.raises(ValueError):
        logit(1.0)


def test_relu():
    assert np.array_equal(relu(np.array([-1.0, 0.0, 2.5])), [0.0, 0.0, 2.5])


def test_rng_is_deterministic():
    assert np.array_equal(make_rng(42).random(5), make_rng(42).random(5))
    assert not np.array_equal(make_rng([42, 1]).random(5), make_rng([42, 2]).random(5))


def test_matmul_by_identity():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(a, identity(2)), a)


def test_matmul_is_associative_on_random_chains():
    rng = make_rng(7)
    for _ in range(20):
        n, k, m, p = rng.integers(1, 9, size=4)
        a, b, c = rng.normal(size=(n, k)), rng.normal(size=(k, m)), rng.normal(size=(m, p))
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        np.testing.assert_allclose(left, right, rtol=0.0, atol=1e-9)


def test_sigmoid_complements_over_working_range():
    x = np.linspace(-30.0, 30.0, 6001)
    total = sigmoid(x) + sigmoid(-x)
    assert np.max(np.abs(total - 1.0)) < 1e-14
