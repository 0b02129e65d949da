import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tfn import autodiff as ad
from tfn.autodiff import BackwardError, NonFiniteError, Parameter, Tape, Tensor
from tfn.gradcheck import finite_difference_gradient, relative_error


def grad_of(build, *params):
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        out = build()
    tape.backward(out)
    return [p.grad.copy() for p in params]


def test_add_mul_values_and_grads():
    a = Parameter(np.array([1.0, 2.0, 3.0]))
    b = Parameter(np.array([4.0, 5.0, 6.0]))
    ga, gb = grad_of(lambda: (a * b + a).sum(), a, b)
    np.testing.assert_array_equal(ga, [5.0, 6.0, 7.0])
    np.testing.assert_array_equal(gb, [1.0, 2.0, 3.0])


def test_broadcast_grad_is_summed():
    x = Parameter(np.ones((4, 3)))
    b = Parameter(np.zeros(3))
    (gb,) = grad_of(lambda: (x + b).sum(), b)
    np.testing.assert_array_equal(gb, [4.0, 4.0, 4.0])


def test_sigmoid_known_values():
    x = Tensor(np.array([0.0, 1000.0, -1000.0]))
    np.testing.assert_allclose(ad.sigmoid(x).data, [0.5, 1.0, 0.0])
    p = Parameter(np.array([0.0]))
    (g,) = grad_of(lambda: ad.sigmoid(p).sum(), p)
    assert g[0] == pytest.approx(0.25)


def test_relu_grad_zero_below_zero():
    p = Parameter(np.array([-1.0, 2.0]))
    (g,) = grad_of(lambda: ad.relu(p).sum(), p)
    np.testing.assert_array_equal(g, [0.0, 1.0])


def test_softmax_rows_sum_to_one_and_shift_invariant(rng):
    x = rng.normal(size=(5, 7))
    s = ad.softmax(Tensor(x)).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-15)
    np.testing.assert_allclose(ad.softmax(Tensor(x + 100.0)).data, s, atol=1e-14)


def test_log_clamps_at_eps():
    p = Parameter(np.array([0.0, 1.0]))
    out = ad.log(p, 1e-12)
    assert out.data[0] == pytest.approx(np.log(1e-12))
    (g,) = grad_of(lambda: ad.log(p, 1e-12).sum(), p)
    np.testing.assert_array_equal(g, [0.0, 1.0])


def test_affine_matches_numpy(rng):
    x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(2, 4)), rng.normal(size=2)
    out = ad.affine(Tensor(x), Tensor(w), Tensor(b))
    np.testing.assert_allclose(out.data, x @ w.T + b, rtol=1e-14)


def test_outer3_values(rng):
    u, v, w = rng.normal(size=2), rng.normal(size=3), rng.normal(size=4)
    out = ad.outer3(Tensor(u), Tensor(v), Tensor(w)).data
    np.testing.assert_array_equal(out, np.einsum("i,j,k->ijk", u, v, w))


def test_backward_twice_without_zero_grad_is_error():
    p = Parameter(np.array([1.0]))
    with Tape() as tape:
        out = (p * p).sum()
    tape.backward(out)
    with Tape() as tape2:
        out2 = (p * p).sum()
    with pytest.raises(BackwardError):
        tape2.backward(out2)


def test_same_tape_cannot_be_replayed():
    p = Parameter(np.array([1.0]))
    with Tape() as tape:
        out = (p * 2.0).sum()
    tape.backward(out)
    p.zero_grad()
    with pytest.raises(BackwardError):
        tape.backward(out)


def test_backward_requires_scalar():
    p = Parameter(np.ones(3))
    with Tape() as tape:
        out = p * 2.0
    with pytest.raises(BackwardError):
        tape.backward(out)


def test_non_finite_forward_raises():
    p = Parameter(np.array([np.inf]))
    with pytest.raises(NonFiniteError):
        with Tape():
            p * 2.0


def test_zero_grad_resets():
    p = Parameter(np.array([3.0]))
    grad_of(lambda: (p * p).sum(), p)
    p.zero_grad()
    np.testing.assert_array_equal(p.grad, [0.0])


def test_gradient_accumulates_over_reuse():
    p = Parameter(np.array([2.0]))
    (g,) = grad_of(lambda: (p * p * p).sum(), p)
    assert g[0] == pytest.approx(12.0)


def test_fancy_getitem_scatters_repeated_indices():
    p = Parameter(np.arange(4.0))
    (g,) = grad_of(lambda: p[np.array([0, 0, 3])].sum(), p)
    np.testing.assert_array_equal(g, [2.0, 0.0, 0.0, 1.0])


def test_finite_difference_oracle_on_quadratic():
    g = finite_difference_gradient(lambda x: float(np.sum(x ** 2)), np.array([1.0, -2.0, 0.5]))
    np.testing.assert_allclose(g, [2.0, -4.0, 1.0], atol=1e-9)


def test_finite_difference_rejects_non_finite():
    with pytest.raises(NonFiniteError):
        finite_difference_gradient(lambda x: 1.0 / x[0] if x[0] > 0 else np.inf, np.array([0.0]))


def test_relative_error_floor():
    assert relative_error([0.0], [1e-9]) == pytest.approx(1e-3)
    assert relative_error([2.0], [1.0]) == pytest.approx(0.5)


small_arrays = arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 4)),
                      elements=st.floats(-3, 3, allow_nan=False))


@settings(max_examples=40, deadline=None)
@given(small_arrays)
def test_tanh_sigmoid_grads_match_finite_differences(x):
    for fn in (ad.tanh, ad.sigmoid):
        p = Parameter(x.copy())
        (g,) = grad_of(lambda: fn(p).sum(), p)
        num = finite_difference_gradient(lambda y: float(fn(Tensor(y)).data.sum()), x)
        assert relative_error(g, num) < 1e-6


@settings(max_examples=40, deadline=None)
@given(small_arrays)
def test_softmax_grad_matches_finite_differences(x):
    w = np.linspace(-1, 1, x.shape[-1])
    p = Parameter(x.copy())
    (g,) = grad_of(lambda: (ad.softmax(p) * w).sum(), p)
    num = finite_difference_gradient(lambda y: float((ad.softmax(Tensor(y)).data * w).sum()), x)
    assert relative_error(g, num) < 1e-5


@settings(max_examples=30, deadline=None)
@given(small_arrays, small_arrays)
def test_mul_is_commutative_in_value_and_grad(a, b):
    if a.shape != b.shape:
        b = np.resize(b, a.shape)
    pa, pb = Parameter(a.copy()), Parameter(b.copy())
    g1 = grad_of(lambda: (pa * pb).sum(), pa, pb)
    g2 = grad_of(lambda: (pb * pa).sum(), pa, pb)
    for x, y in zip(g1, g2):
        np.testing.assert_array_equal(x, y)
