import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rigged.expr import SymbolTable
from rigged.fields import (
    Box,
    SeriesRemainderError,
    SurrogateField,
    VectorField,
    ad_power,
    coordinate_field,
    eval_field,
    lie_bracket,
    linear_combination,
    numeric_pushforward,
    pushforward_series,
    zero_field,
)
from rigged.system import build_rigged, make_spec

T11 = SymbolTable(1, 1)
T22 = SymbolTable(2, 2)


def field(table, *comps):
    return VectorField.from_strings(table, list(comps))


def test_component_count_enforced():
    with pytest.raises(ValueError):
        field(T11, "1", "0")


def test_bracket_self_is_zero(quad):
    assert lie_bracket(quad.T, quad.T).is_zero()


def test_bracket_quadratic_control(quad):
    assert lie_bracket(quad.T, quad.DI[0]) == field(T11, "0", "-2*w1", "0")


def test_bracket_double_integrator(dint, rng):
    b = lie_bracket(dint.T, dint.DI[0])
    assert b == field(dint.table, "0", "0", "-1", "0")
    # finite-difference bracket [X,Y] = DY.X - DX.Y
    X, Y = dint.T, dint.DI[0]
    for p in rng.uniform(-1, 1, (10, 4)):
        fd = _fd_jac(Y, p) @ X(p) - _fd_jac(X, p) @ Y(p)
        assert np.allclose(b(p), fd, atol=1e-6)


def _fd_jac(X, p, h=1e-6):
    cols = []
    for k in range(len(p)):
        e = np.zeros(len(p))
        e[k] = h
        cols.append((X(p + e) - X(p - e)) / (2 * h))
    return np.column_stack(cols)


def test_ad_power_examples(dint):
    X = dint.DI[0]
    assert ad_power(dint.T, X, 0) == X
    assert ad_power(dint.T, X, 2) == field(dint.table, "0", "1", "0", "0")
    assert ad_power(dint.T, X, 3).is_zero()


def test_ad_power_linear_system():
    A = [[0, 1], [-2, 3]]
    B = [[1], [2]]
    spec = make_spec(2, 1, ["q2 + w1", "-2*q1 + 3*q2 + 2*w1"], linear=(A, B))
    r = build_rigged(spec)
    AB = np.array(A) @ np.array(B)
    got = ad_power(r.T, r.DI[0], 2)(np.zeros(4))
    assert np.allclose(got[1:3], AB[:, 0])


def test_eval_field_examples(quad):
    assert np.all(eval_field(zero_field(T11), [1, 2, 3]) == 0)
    assert np.allclose(eval_field(field(T11, "0", "-2*w1", "0"), [0, 0, 3]), [0, -6, 0])
    assert np.allclose(eval_field(quad.T, [0, 0, 2]), [1, 4, 0])


def test_series_double_integrator(dint):
    s = pushforward_series(dint.T, dint.DI[0], 0.5, order=4)
    assert s.exact
    assert s.field == field(dint.table, "0", "1/8", "1/2", "1")
    p = np.array([0.1, 0.2, -0.3, 0.4])
    assert np.allclose(s(p), numeric_pushforward(dint.T, dint.DI[0], 0.5, p), atol=1e-8)


def test_series_tau_zero_is_identity(quad):
    s = pushforward_series(quad.T, quad.DI[0], 0.0, order=3)
    assert s.field == quad.DI[0]


def test_series_quadratic_control_matches_numeric(quad):
    p = np.array([0.0, 0.0, 1.0])
    s = pushforward_series(quad.T, quad.DI[0], 0.1)
    assert np.allclose(s(p), numeric_pushforward(quad.T, quad.DI[0], 0.1, p), atol=1e-7)
    s2 = pushforward_series(quad.T, quad.DI[0], 0.2)
    assert np.allclose(s2(p), numeric_pushforward(quad.T, quad.DI[0], 0.2, p), atol=1e-7)


def test_numeric_pushforward_of_drift_is_drift(quad):
    p = np.array([0.2, 0.1, 0.7])
    assert np.allclose(numeric_pushforward(quad.T, quad.T, 0.3, p), quad.T(p), atol=1e-9)
    assert np.allclose(numeric_pushforward(quad.T, quad.DI[0], 0.0, p), quad.DI[0](p))


def test_remainder_error_when_ladder_does_not_terminate():
    r = build_rigged(make_spec(2, 1, ["q2", "sin(q1) + w1"]))
    box = r.box
    with pytest.raises(SeriesRemainderError):
        pushforward_series(r.T, r.DI[0], 0.9, order=2, box=box, tol=1e-14)
    s = pushforward_series(r.T, r.DI[0], 0.2, box=box, tol=1e-9)
    assert s.remainder_bound <= 1e-9
    assert not s.exact


def test_cross_evaluator_on_pendulum(rng):
    r = build_rigged(make_spec(2, 1, ["q2", "sin(q1) + w1"]))
    for _ in range(5):
        tau = float(rng.uniform(0.01, 0.3))
        p = rng.uniform(-0.5, 0.5, 4)
        s = pushforward_series(r.T, r.DI[0], tau, box=r.box, tol=1e-9)
        gap = np.max(np.abs(s(p) - numeric_pushforward(r.T, r.DI[0], tau, p, 1e-11)))
        assert gap <= max(1e-9, s.remainder_bound)


def test_surrogate_field_contract(quad):
    with pytest.raises(ValueError):
        SurrogateField(quad.DI[0], 0.0, quad.T)
    with pytest.raises(ValueError):
        SurrogateField(quad.T, 0.1, quad.T)
    S = SurrogateField(quad.DI[0], 0.1, quad.T)
    p = np.array([0.0, 0.0, 1.0])
    # d/dw - 0.1 * (-2 w d/dq) at w = 1
    assert np.allclose(S(p), [0, 0.2, 1])


def test_box_probe_points_deterministic():
    b = Box((0.0, -1.0), (1.0, 1.0))
    assert np.array_equal(b.probe_points(), b.probe_points())
    assert all(b.contains(p) for p in b.probe_points())


# random polynomial fields on T22
_mono = st.tuples(st.integers(-3, 3), st.sampled_from(["1", "q1", "q2", "w1", "w2", "q1*w2", "q2^2", "t*w1"]))
_poly = st.lists(_mono, min_size=1, max_size=3).map(lambda ms: " + ".join(f"({c})*{m}" for c, m in ms))
polyfields = st.lists(_poly, min_size=5, max_size=5).map(lambda cs: VectorField.from_strings(T22, cs))


@given(polyfields, polyfields, polyfields)
def test_jacobi_identity(X, Y, Z):
    J = lie_bracket(X, lie_bracket(Y, Z)) + lie_bracket(Y, lie_bracket(Z, X)) + lie_bracket(Z, lie_bracket(X, Y))
    assert J.is_zero()


@given(polyfields, polyfields, polyfields, st.integers(-3, 3))
def test_bracket_bilinear_antisymmetric(X, Y, Z, c):
    assert (lie_bracket(X, Y) + lie_bracket(Y, X)).is_zero()
    lhs = lie_bracket(linear_combination([c, 1], [X, Y]), Z)
    rhs = linear_combination([c, 1], [lie_bracket(X, Z), lie_bracket(Y, Z)])
    assert (lhs - rhs).is_zero()


@given(st.lists(st.sampled_from(["w1^2", "q1*w1", "sin(q1) + w1", "q1^2 - w1", "exp(w1)"]), min_size=1, max_size=2))
def test_time_component_of_ladder_vanishes(fs):
    n = len(fs)
    r = build_rigged(make_spec(n, 1, fs))
    for k in range(4):
        assert ad_power(r.T, r.DI[0], k).components[0].is_zero()


def test_coordinate_field_names():
    assert coordinate_field(T22, "w2")([0, 0, 0, 0, 0]).tolist() == [0, 0, 0, 0, 1]
    assert math.isclose(field(T22, "0", "q1", "0", "0", "0")([0, 2, 0, 0, 0])[1], 2.0)
