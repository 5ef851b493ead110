import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from carealgebra import diffcore as dc
from carealgebra.errors import ConfigurationError, NonFiniteError, OracleViolationError, ShapeError

KINDS = ("sigmoid", "tanh", "rectifier", "square_shift", "identity", "softplus")


def test_matvec_examples():
    np.testing.assert_array_equal(dc.matvec(np.eye(2), np.array([5.0, 7.0])).value, [5, 7])
    np.testing.assert_array_equal(dc.matvec(np.array([[1.0, 2], [3, 4]]), np.ones(2)).value, [3, 7])
    np.testing.assert_array_equal(dc.matvec(np.zeros((3, 2)), np.array([1.0, -4])).value, np.zeros(3))


def test_matvec_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2,\)|\(2,\).*\(2, 3\)"):
        dc.matvec(np.ones((2, 3)), np.ones(2))


def test_matvec_backward():
    W = dc.Parameter(np.array([[1.0, 2], [3, 4]]), "W")
    x = dc.Parameter(np.array([0.5, -1.0]), "x")
    g = np.array([2.0, -1.0])
    with dc.GradProgram() as prog:
        y = dc.matvec(W, x)
    prog.backward(y, seed=g)
    np.testing.assert_allclose(W.grad, np.outer(g, x.value))
    np.testing.assert_allclose(x.grad, W.value.T @ g)


def test_elementwise_examples():
    assert dc.elementwise("sigmoid", np.array([0.0])).value[0] == 0.5
    assert dc.elementwise("rectifier", np.array([-2.0])).value[0] == 0.0
    assert dc.elementwise("square_shift", np.array([0.5])).value[0] == 2.25


def test_unknown_kind():
    with pytest.raises(ConfigurationError):
        dc.elementwise("relu6", np.zeros(2))


def test_nonfinite_input_raises():
    with pytest.raises(NonFiniteError):
        dc.elementwise("tanh", np.array([np.nan]))
    with pytest.raises(NonFiniteError):
        dc.div(np.array([1.0]), np.array([0.0]))


@pytest.mark.parametrize("kind", KINDS)
def test_elementwise_gradcheck_16dim(kind):
    rng = np.random.default_rng(7)
    x = dc.Parameter(rng.normal(size=16), "x")
    if kind == "rectifier":  # keep away from the kink
        x.value[np.abs(x.value) < 1e-3] = 0.5
    w = rng.normal(size=16)
    rep = dc.grad_check(lambda: dc.total(dc.mul(dc.elementwise(kind, x), w)), [x], step=1e-5, tolerance=1e-6)
    assert rep.passed, rep.summary()


def test_gradcheck_examples():
    x = dc.Parameter(np.array(3.0), "x")
    rep = dc.grad_check(lambda: dc.mul(x, x), [x])
    assert rep.max_error["x"] < 1e-9
    assert x.grad == 6.0  # grad_check leaves the analytic gradient in place
    lin = dc.Parameter(np.array([-2.0, 0.0, 9.0]), "lin")
    for h in (1e-7, 1e-3, 0.5):
        assert dc.grad_check(lambda: dc.total(dc.scale(lin, 5.0)), [lin], step=h).passed


def _doubled_square(a):
    # deliberately wrong backward: 4x instead of 2x
    return dc.record_op(a.value ** 2, (a,), lambda g: (g * 4.0 * a.value,))


def test_gradcheck_detects_doubled_backward():
    x = dc.Parameter(np.array([1.5, -2.0, 3.0]), "x")
    rep = dc.grad_check(lambda: dc.total(_doubled_square(x)), [x])
    assert not rep.passed
    assert rep.flagged == ["x"]
    assert rep.max_error["x"] == pytest.approx(0.5, rel=1e-6)


def test_gradcheck_rejects_nondeterministic_loss():
    x = dc.Parameter(np.array([1.0]), "x")
    calls = iter(range(100))
    with pytest.raises(OracleViolationError):
        dc.grad_check(lambda: dc.total(dc.scale(x, float(next(calls)))), [x])


def test_gradcheck_rejects_bad_step():
    x = dc.Parameter(np.array([1.0]), "x")
    with pytest.raises(ConfigurationError):
        dc.grad_check(lambda: dc.total(x), [x], step=0.0)


def _loss(W, x):
    return dc.total(dc.elementwise("tanh", dc.matvec(W, x)))


def test_accumulation_is_additive():
    rng = np.random.default_rng(0)
    W = dc.Parameter(rng.normal(size=(3, 4)), "W")
    x = rng.normal(size=4)
    for _ in range(2):
        with dc.GradProgram() as prog:
            out = _loss(W, x)
        prog.backward(out)
    twice = W.grad.copy()
    W.zero_grad()
    assert not W.grad.any()
    with dc.GradProgram() as prog:
        out = _loss(W, x)
    prog.backward(out)
    np.testing.assert_array_equal(twice, 2.0 * W.grad)


def test_replay_determinism():
    rng = np.random.default_rng(3)
    Wv, x = rng.normal(size=(5, 6)), rng.normal(size=6)
    results = []
    for _ in range(2):
        W = dc.Parameter(Wv.copy(), "W")
        with dc.GradProgram() as prog:
            out = _loss(W, x)
        prog.backward(out)
        results.append((out.value.copy(), W.grad.copy()))
    assert results[0][0].tobytes() == results[1][0].tobytes()
    assert results[0][1].tobytes() == results[1][1].tobytes()


def test_program_records_one_entry_per_op_and_replays_in_reverse():
    a = dc.Parameter(np.array([1.0, 2.0]), "a")
    order = []

    def tagged(x, tag):
        return dc.record_op(x.value, (x,), lambda g: (order.append(tag) or g,))

    with dc.GradProgram() as prog:
        y = tagged(tagged(tagged(a, 1), 2), 3)
        out = dc.total(y)
    assert len(prog) == 4
    prog.backward(out)
    assert order == [3, 2, 1]


def test_no_recording_outside_program():
    a = dc.Parameter(np.ones(2), "a")
    dc.add(a, a)
    assert dc.active_program() is None


def test_norm_subgradient_at_zero():
    a = dc.Parameter(np.zeros(3), "a")
    with dc.GradProgram() as prog:
        out = dc.norm(a)
    prog.backward(out)
    assert not a.grad.any()


def test_masked_max_and_take_gradients():
    rng = np.random.default_rng(11)
    E = dc.Parameter(rng.normal(size=(5, 3)), "E")
    idx = np.array([[0, 2, 2, 4], [1, 1, 3, 0]])
    mask = np.array([[1, 1, 1, 0], [1, 1, 1, 1]], dtype=bool)[..., None]
    rep = dc.grad_check(lambda: dc.total(dc.masked_max(dc.take(E, idx), mask, axis=1)), [E], tolerance=1e-6)
    assert rep.passed, rep.summary()


finite = st.floats(-5, 5, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 6, elements=finite), arrays(np.float64, 6, elements=finite))
def test_binary_ops_match_numpy(a, b):
    np.testing.assert_array_equal(dc.add(a, b).value, a + b)
    np.testing.assert_array_equal(dc.sub(a, b).value, a - b)
    np.testing.assert_array_equal(dc.mul(a, b).value, a * b)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, 4, elements=finite))
def test_matmul_gradient_property(A, w0):
    w = dc.Parameter(w0.copy(), "w")
    rep = dc.grad_check(lambda: dc.total(dc.elementwise("tanh", dc.matmul(A, w))), [w], tolerance=1e-6)
    assert rep.passed
