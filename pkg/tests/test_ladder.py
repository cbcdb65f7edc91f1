import numpy as np
import pytest

from rigged.fields import VectorField, ad_power
from rigged.ladder import (
    RankDeficiencyError,
    adapted_span_defects,
    choose_base_point,
    lower_row_defects,
    perturbed_points,
    t_adapted_generators,
)
from rigged.system import build_rigged, make_spec


def _cols(ladder):
    return [tuple(str(c) for c in X.components) for X in ladder.fields()]


def test_quadratic_control_ladder(quad):
    lad = t_adapted_generators(quad, [0.0, 0.0, 1.0])
    assert lad.nu == 1 and lad.R == (0, 1)
    W0, W1 = lad.field((0, 1, 1)), lad.field((1, 1, 1))
    assert W0 == quad.DI[0] or W0 == quad.DI[0].scale(-1)
    assert W1 == ad_power(quad.T, W0, 1)


def test_double_integrator_ladder(dint, rng):
    lad = t_adapted_generators(dint, dint.box.uniform(rng, 1)[0])
    assert lad.nu == 2 and lad.R == (0, 0, 1)
    sign = lad.row(2, 1).coefficients[0]
    expect = [["0", "0", "0", "1"], ["0", "0", "-1", "0"], ["0", "1", "0", "0"]]
    assert lad.fields() == [VectorField.from_strings(dint.table, c).scale(sign) for c in expect]


def test_zero_dynamics_ladder(zero):
    lad = t_adapted_generators(zero, [0.0, 0.3, -0.2])
    assert lad.nu == 0
    assert lad.R == (1,)
    assert lad.fields() == list(zero.DI)


def test_brockett_ladder_is_lengthened(brockett, rng):
    z = choose_base_point(brockett, 2, rng)
    lad = t_adapted_generators(brockett, z)
    assert lad.R == (0, 0, 2)
    assert sum(lad.R) == brockett.table.m


def test_rank_deficient_base_point(quad):
    with pytest.raises(RankDeficiencyError):
        t_adapted_generators(quad, [0.0, 0.0, 0.0], nu=1)


@pytest.mark.parametrize(
    "n,m,f",
    [
        (1, 1, ["w1^2"]),
        (2, 1, ["q2", "w1"]),
        (3, 2, ["w1", "w2", "q1*w2 - q2*w1"]),
        (2, 1, ["q2", "sin(q1) + w1"]),
        (3, 2, ["w1", "w2", "q1^2*w2"]),
        (2, 2, ["q2 + w1", "q1*w2"]),
    ],
)
def test_ladder_invariants(n, m, f):
    rigged = build_rigged(make_spec(n, m, f))
    rng = np.random.default_rng(7)
    from rigged.system import detect_height

    nu = detect_height(rigged, rigged.box.uniform(rng, 20)).nu
    z = choose_base_point(rigged, nu, rng)
    lad = t_adapted_generators(rigged, z, rng=rng)
    # rows span D^I at the base point
    C = np.array([r.coefficients for r in lad.rows])
    assert np.linalg.matrix_rank(C) == m
    # each ladder entry is an exact iterated bracket of its row generator
    for r in lad.rows:
        for ell, X in enumerate(r.fields):
            assert X == ad_power(rigged.T, r.fields[0], ell)
    # same span as the raw ladder at 20 random points
    for ra, rb, d1, d2 in adapted_span_defects(lad, rigged, lad.nu, rigged.box.uniform(rng, 20)):
        assert ra == rb
        assert d1 < lad.rank_tol and d2 < lad.rank_tol
    # next bracket of a row stays in the span of rows of no larger height
    near = perturbed_points(z, rigged.box, 20, 1e-3, rng)
    assert max(lower_row_defects(lad, rigged, [z, *near])) < lad.rank_tol


def test_triples_lexicographic(brockett, rng):
    lad = t_adapted_generators(brockett, choose_base_point(brockett, 2, rng))
    tr = lad.triples()
    assert tr == sorted(tr)
    assert len(tr) == lad.size == 6
