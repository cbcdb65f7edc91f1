import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rigged.fields import VectorField
from rigged.system import (
    HeightUndetermined,
    SpecError,
    build_rigged,
    detect_height,
    filtration_ranks,
    kalman_data,
    make_spec,
    secondary_generators,
)


def test_build_rigged_quadratic_control(quad):
    assert quad.T == VectorField.from_strings(quad.table, ["1", "w1^2", "0"])
    assert quad.DI == (VectorField.from_strings(quad.table, ["0", "0", "1"]),)
    assert quad.D[-1] == quad.T


def test_build_rigged_double_integrator(dint):
    assert dint.T == VectorField.from_strings(dint.table, ["1", "q2", "w1", "0"])


def test_build_rigged_zero_dynamics(zero):
    assert zero.T == VectorField.from_strings(zero.table, ["1", "0", "0"])


def test_build_is_deterministic():
    a = build_rigged(make_spec(1, 1, ["w1^2"]))
    b = build_rigged(make_spec(1, 1, ["w1^2"]))
    assert a == b


def test_secondary_generators_examples(quad, dint):
    g = secondary_generators(quad, 1)
    assert g == [quad.DI[0], VectorField.from_strings(quad.table, ["0", "-2*w1", "0"])]
    g = secondary_generators(dint, 2)
    expect = [["0", "0", "0", "1"], ["0", "0", "-1", "0"], ["0", "1", "0", "0"]]
    assert g == [VectorField.from_strings(dint.table, c) for c in expect]
    assert secondary_generators(dint, 0) == list(dint.DI)
    with pytest.raises(ValueError):
        secondary_generators(dint, -1)


def test_detect_height_examples(quad, dint, zero, rng):
    pts = [np.array([0.0, 0.0, w]) for w in rng.uniform(0.1, 1.0, 10)]
    rep = detect_height(quad, pts)
    assert (rep.nu, rep.rank) == (1, 2)
    rep = detect_height(dint, dint.box.uniform(rng, 10))
    assert (rep.nu, rep.rank) == (2, 3)
    rep = detect_height(zero, zero.box.uniform(rng, 10))
    assert (rep.nu, rep.rank) == (0, 1)


def test_detect_height_cap(dint, rng):
    with pytest.raises(HeightUndetermined):
        detect_height(dint, dint.box.uniform(rng, 3), hard_cap=1)
    with pytest.raises(ValueError):
        detect_height(dint, [], hard_cap=3)


def test_filtration_ranks_quadratic_control(quad):
    assert filtration_ranks(quad, [0, 0, 1.0], 1) == [1, 2]
    assert filtration_ranks(quad, [0, 0, 0.0], 1) == [1, 1]


def test_kalman_examples():
    k = kalman_data(make_spec(2, 1, ["q2", "w1"], linear=True))
    assert np.array_equal(k.matrix, [[0, 1], [1, 0]])
    assert k.rank == 2 and k.controllable
    assert k.n_seq[-1] == 3
    k = kalman_data(make_spec(2, 1, ["0", "0"], linear=True))
    assert k.rank == 0 and not k.controllable
    assert set(k.n_seq) == {1}
    k = kalman_data(make_spec(2, 1, ["q1 + w1", "q2"], linear=True))
    assert k.rank == 1 and not k.controllable


def test_linear_part_verified():
    with pytest.raises(SpecError):
        make_spec(2, 1, ["q2", "w1"], linear=([[0, 1], [0, 0]], [[1], [0]]))
    with pytest.raises(SpecError):
        make_spec(1, 1, ["w1^2"], linear=True)
    with pytest.raises(SpecError):
        kalman_data(make_spec(1, 1, ["w1^2"]))


def test_spec_validation():
    with pytest.raises(SpecError):
        make_spec(2, 1, ["q2"])
    with pytest.raises(SpecError):
        make_spec(1, 1, ["w1"], state_domain=[(1.0, 0.0)])


matrices = st.integers(1, 3).flatmap(
    lambda n: st.tuples(
        st.just(n),
        st.integers(1, 2),
        st.lists(st.integers(-3, 3), min_size=n * n, max_size=n * n),
        st.lists(st.integers(-3, 3), min_size=2 * n, max_size=2 * n),
    )
)


def linear_spec(n, m, a, b):
    A = np.array(a, dtype=float).reshape(n, n)
    B = np.array(b[: n * m], dtype=float).reshape(n, m)
    f = []
    for i in range(n):
        terms = [f"({int(A[i, j])})*q{j + 1}" for j in range(n)] + [f"({int(B[i, k])})*w{k + 1}" for k in range(m)]
        f.append(" + ".join(terms))
    return make_spec(n, m, f, linear=(A, B))


@given(matrices)
def test_secondary_rank_is_m_plus_kalman_rank(args):
    spec = linear_spec(*args)
    r = build_rigged(spec)
    k = kalman_data(spec)
    n = r.table.n
    M = np.column_stack([X(np.zeros(r.table.N)) for X in secondary_generators(r, n)])
    assert np.linalg.matrix_rank(M) == r.table.m + k.rank
    # q-projection of the secondary span has the Kalman rank
    q = M[r.table.q_slice, :]
    assert (np.linalg.matrix_rank(q) if np.any(q) else 0) == k.rank
