"""Acceptance criteria, one test per criterion. Each prints a single PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline.
"""

import time

import numpy as np
import pytest

from rigged.expr import SymbolTable
from rigged.fields import VectorField, lie_bracket, numeric_pushforward, pushforward_series
from rigged.flows import select_surrogate_depths, surrogate_family, surrogate_map_rank, vandermonde_check, verify_flow_identities
from rigged.report import brockett_identity_fields, endpoint_trials, run_analyze
from rigged.specfile import FIXTURES, load_fixture
from rigged.strata import GoodnessConfig, accessibility_verdict, goodness, prepare, rank_at, witness_fields
from rigged.system import build_rigged, kalman_data, make_spec, secondary_generators

RANK_TOL = 1e-8
ODE_TOL = 1e-10


def _line(capsys, number: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\ncriterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def _fixture(name):
    return build_rigged(load_fixture(name).spec)


def test_criterion_01_quadratic_control_ranks(capsys):
    start = time.perf_counter()
    rigged = build_rigged(make_spec(1, 1, ["w1^2"]))
    analysis = prepare(rigged, GoodnessConfig(rank_tol=RANK_TOL))
    rng = np.random.default_rng(1)
    pts = []
    while len(pts) < 20:
        p = rigged.box.uniform(rng, 1)[0]
        if abs(p[2]) >= 0.1:
            pts.append(p)
    ranks = [rank_at(analysis.d2, p, RANK_TOL) for p in pts]
    at_zero = rank_at(analysis.d2, np.array([0.3, -0.4, 0.0]), RANK_TOL)
    elapsed = time.perf_counter() - start
    ok = all(r == 2 for r in ranks) and at_zero == 1 and elapsed < 1.0
    _line(capsys, 1, ok, f"ranks {sorted(set(ranks))} for |w|>=0.1, {at_zero} at w=0, {elapsed:.2f}s")
    assert ok


def _random_linear(rng):
    n = int(rng.integers(1, 5))
    m = int(rng.integers(1, 3))
    A = rng.integers(-3, 4, size=(n, n))
    B = rng.integers(-3, 4, size=(n, m))
    f = []
    for i in range(n):
        terms = [f"({A[i, k]})*q{k + 1}" for k in range(n)] + [f"({B[i, k]})*w{k + 1}" for k in range(m)]
        f.append(" + ".join(terms))
    return make_spec(n, m, f, linear=True)


def test_criterion_02_kalman_equivalence(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    mismatches = []
    controllable = 0
    for trial in range(50):
        spec = _random_linear(rng)
        rigged = build_rigged(spec)
        n, m = spec.table.n, spec.table.m
        k = kalman_data(spec, RANK_TOL)
        p = rigged.box.uniform(rng, 1)[0]
        sec = rank_at(secondary_generators(rigged, n), p, RANK_TOL)
        analysis = prepare(rigged, GoodnessConfig(rank_tol=RANK_TOL))
        v = accessibility_verdict(analysis, p, good=goodness(analysis, p))
        accessible = v.kind == "hyper_accessible_at"
        controllable += k.controllable
        if sec != m + k.rank or accessible != k.controllable:
            mismatches.append(trial)
    elapsed = time.perf_counter() - start
    ok = not mismatches and elapsed < 30.0
    _line(capsys, 2, ok, f"{len(mismatches)} mismatches in 50 systems ({controllable} controllable), {elapsed:.1f}s")
    assert ok


def _random_poly(rng, names, degree=3, terms=4):
    out = []
    for _ in range(terms):
        c = int(rng.integers(-3, 4))
        mono = "*".join(str(names[int(rng.integers(len(names)))]) for _ in range(int(rng.integers(0, degree + 1))))
        out.append(f"({c})" + (f"*{mono}" if mono else ""))
    return " + ".join(out)


def _fd_bracket(X, Y, p, h=1e-5):
    """[X, Y](p) = DY X - DX Y with central-difference Jacobians of the numeric fields."""
    N = p.size

    def jac(F):
        cols = []
        for k in range(N):
            e = np.zeros(N)
            e[k] = h
            cols.append((F(p + e) - F(p - e)) / (2 * h))
        return np.column_stack(cols)

    return jac(Y) @ X(p) - jac(X) @ Y(p)


def test_criterion_03_bracket_correctness(capsys):
    rng = np.random.default_rng(3)
    table = SymbolTable(2, 1)
    worst = 0.0
    for _ in range(30):
        X = VectorField.from_strings(table, [_random_poly(rng, table.names) for _ in range(table.N)])
        Y = VectorField.from_strings(table, [_random_poly(rng, table.names) for _ in range(table.N)])
        B = lie_bracket(X, Y)
        for p in rng.uniform(-1, 1, size=(10, table.N)):
            sym, num = B(p), _fd_bracket(X, Y, p)
            worst = max(worst, float(np.max(np.abs(sym - num)) / max(1.0, np.max(np.abs(sym)))))
    ok = worst <= 1e-5
    _line(capsys, 3, ok, f"max relative residual {worst:.2e}")
    assert ok


def test_criterion_04_pushforward_cross_check(capsys):
    rng = np.random.default_rng(4)
    worst_ratio = 0.0
    ok = True
    for name in ("double_integrator", "quadratic_control", "brockett"):
        rigged = _fixture(name)
        for _ in range(10):
            tau = float(rng.uniform(0.01, 0.3))
            p = rigged.box.uniform(rng, 1)[0] * 0.5
            for X in rigged.DI:
                ser = pushforward_series(rigged.T, X, tau, box=rigged.box, tol=1e-9, build_field=False)
                gap = float(np.max(np.abs(ser(p) - numeric_pushforward(rigged.T, X, tau, p, ODE_TOL))))
                allowed = max(1e-7, ser.remainder_bound)
                ok &= gap <= allowed
                worst_ratio = max(worst_ratio, gap / allowed)
    _line(capsys, 4, ok, f"worst gap / allowance {worst_ratio:.2e}")
    assert ok


def test_criterion_05_endpoint_equivalence(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    gaps = {name: endpoint_trials(_fixture(name), 25, rng, ODE_TOL) for name in ("double_integrator", "quadratic_control", "brockett")}
    elapsed = time.perf_counter() - start
    ok = max(gaps.values()) <= 100 * ODE_TOL and elapsed < 60.0
    _line(capsys, 5, ok, f"max gap {max(gaps.values()):.2e} (limit {100 * ODE_TOL:.0e}), {elapsed:.1f}s")
    assert ok


def test_criterion_06_vandermonde(capsys):
    cases = [("double_integrator", (2, 1), None), ("quadratic_control", (1, 1), np.array([0.0, 0.0, 1.0]))]
    details = []
    ok = True
    for name, row, z in cases:
        rigged = _fixture(name)
        analysis = prepare(rigged, GoodnessConfig(rank_tol=RANK_TOL))
        z = np.array(analysis.ladder.base_point) if z is None else z
        rep = vandermonde_check(rigged, analysis.ladder, row, z, (1e-1, 3e-2, 1e-2), 0.5, ODE_TOL)
        last = rep.steps[-1]
        case_ok = last.rel_error <= 0.05 and (rep.exact or rep.min_order >= 1)
        ok &= case_ok
        order = "exact" if rep.exact else f"order {rep.min_order:.2f}"
        details.append(f"{name} row {row}: err {last.rel_error:.1e} {order}")
    _line(capsys, 6, ok, "; ".join(details))
    assert ok


def test_criterion_07_flow_identities(capsys):
    Xs, Y, Z, y = brockett_identity_fields(_fixture("brockett"))
    rep = verify_flow_identities(Xs, Y, Z, y, hs=(8e-3, 4e-3, 2e-3, 1e-3))
    ok = all(all(abs(o - 2.0) <= 0.3 for o in r.orders) and r.final < 1e-5 for r in rep.results)
    detail = "; ".join(f"({r.name}) order {r.mean_order:.2f} final {r.final:.1e}" for r in rep.results)
    _line(capsys, 7, ok, detail)
    assert ok


def test_criterion_08_surrogate_map_rank(capsys):
    details = []
    ok = True
    for name in FIXTURES:
        rigged = _fixture(name)
        analysis = prepare(rigged, GoodnessConfig(rank_tol=RANK_TOL))
        center = np.array(analysis.ladder.base_point)
        assert select_surrogate_depths(2, 1e-2, 0.5) == pytest.approx((1e-2, 7.5e-3, 5e-3))
        fam = surrogate_family(rigged, analysis.ladder, 1e-2, 0.5)
        mr = surrogate_map_rank(center, fam, rank_tol=RANK_TOL, box=rigged.box, tol=ODE_TOL)
        want = rank_at(analysis.d2, center, RANK_TOL)
        ok &= mr.rank == want
        details.append(f"{name} {mr.rank}/{want}")
    _line(capsys, 8, ok, "map rank / D^II rank: " + ", ".join(details))
    assert ok


def test_criterion_09_time_component_zero(capsys):
    checked = 0
    ok = True
    for name in FIXTURES:
        rigged = _fixture(name)
        analysis = prepare(rigged, GoodnessConfig(rank_tol=RANK_TOL))
        fields = secondary_generators(rigged, analysis.nu + 1) + analysis.ladder.fields()
        for X in fields:
            ok &= X.components[0].is_zero()
            checked += 1
    _line(capsys, 9, ok, f"{checked} fields with identically zero t-component")
    assert ok


def _goodness_summary():
    out = {}
    rigged = _fixture("double_integrator")
    analysis = prepare(rigged, GoodnessConfig(rank_tol=RANK_TOL))
    pts = rigged.box.uniform(np.random.default_rng(10), 8)
    out["dint"] = [goodness(analysis, p).kind for p in pts]
    rigged = _fixture("brockett")
    analysis = prepare(rigged, GoodnessConfig(rank_tol=RANK_TOL))
    v = goodness(analysis, np.zeros(rigged.table.N))
    out["brockett"] = (v.kind, v.evidence.get("direct"), v.evidence.get("pairs"))
    out["witness_rank"] = rank_at(witness_fields(analysis, v.evidence), np.zeros(rigged.table.N), RANK_TOL) if v.kind == "good_second_kind" else None
    rigged = _fixture("quadratic_control")
    analysis = prepare(rigged, GoodnessConfig(rank_tol=RANK_TOL))
    out["quad_w0"] = goodness(analysis, np.array([0.0, 0.0, 0.0])).kind
    return out


def test_criterion_10_goodness_pipeline(capsys):
    first = _goodness_summary()
    second = _goodness_summary()
    reports = [run_analyze(load_fixture("brockett")) for _ in range(2)]
    ok = (
        all(k == "good_first_kind" for k in first["dint"])
        and first["brockett"][0] == "good_second_kind"
        and first["witness_rank"] == 5
        and first["quad_w0"] == "inconclusive"
        and first == second
        and reports[0] == reports[1]
    )
    _line(
        capsys,
        10,
        ok,
        f"dint {set(first['dint'])}, brockett {first['brockett'][0]} witness rank {first['witness_rank']}, "
        f"w=0 {first['quad_w0']}, deterministic {first == second and reports[0] == reports[1]}",
    )
    assert ok
