"""Control systems, their rigged distribution, the secondary ladder and the Kalman test."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import sympy as sp

from .expr import Expr, SymbolTable, _normalize, analyticity_warnings, parse_expr, to_rational
from .fields import Box, VectorField, ad_ladder, coordinate_field, eval_fields, lie_bracket
from .linalg import DEFAULT_RANK_TOL, numeric_rank


class SpecError(ValueError):
    pass


class HeightUndetermined(RuntimeError):
    pass


@dataclass(frozen=True)
class LinearPart:
    A: tuple[tuple[float, ...], ...]
    B: tuple[tuple[float, ...], ...]

    @property
    def A_array(self) -> np.ndarray:
        return np.array(self.A, dtype=float)

    @property
    def B_array(self) -> np.ndarray:
        return np.array(self.B, dtype=float)


@dataclass(frozen=True)
class SystemSpec:
    """q' = f(t, q, w) with sampling boxes for q, w and an interval for t."""

    table: SymbolTable
    f: tuple[Expr, ...]
    state_domain: tuple[tuple[float, float], ...]
    control_domain: tuple[tuple[float, float], ...]
    time_domain: tuple[float, float] = (0.0, 1.0)
    linear_part: Optional[LinearPart] = None
    name: str = ""
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        n, m = self.table.n, self.table.m
        if len(self.f) != n:
            raise SpecError(f"expected {n} right-hand sides, got {len(self.f)}")
        if len(self.state_domain) != n or len(self.control_domain) != m:
            raise SpecError("domain boxes do not match the dimensions n, m")
        for lo, hi in (*self.state_domain, *self.control_domain, self.time_domain):
            if not lo <= hi:
                raise SpecError(f"empty interval [{lo}, {hi}]")
        if self.linear_part is not None:
            _verify_linear(self.table, self.f, self.linear_part)

    @property
    def box(self) -> Box:
        """Analysis box on M in the coordinate order (t, q, w)."""
        ivs = (self.time_domain, *self.state_domain, *self.control_domain)
        return Box(tuple(float(a) for a, _ in ivs), tuple(float(b) for _, b in ivs))


def _verify_linear(table: SymbolTable, f: Sequence[Expr], lin: LinearPart) -> None:
    A, B = lin.A_array, lin.B_array
    n, m = table.n, table.m
    if A.shape != (n, n) or B.shape != (n, m):
        raise SpecError(f"linear part has shapes A{A.shape}, B{B.shape}; expected ({n},{n}), ({n},{m})")
    q = table.symbols[table.q_slice]
    w = table.symbols[table.w_slice]
    for i in range(n):
        rhs = sum((to_rational(A[i, j]) * q[j] for j in range(n)), sp.Integer(0))
        rhs += sum((to_rational(B[i, a]) * w[a] for a in range(m)), sp.Integer(0))
        if _normalize(f[i].sym - rhs) != 0:
            raise SpecError(f"f{i + 1} is not equal to row {i + 1} of A q + B w")


def extract_linear_part(table: SymbolTable, f: Sequence[Expr]) -> LinearPart:
    """Read A, B off f as constant Jacobians; fails unless f = A q + B w exactly."""
    q = table.symbols[table.q_slice]
    w = table.symbols[table.w_slice]
    A, B = [], []
    for i, fi in enumerate(f):
        rowA, rowB = [], []
        for sym, row in [(s, rowA) for s in q] + [(s, rowB) for s in w]:
            d = _normalize(sp.diff(fi.sym, sym))
            if d.free_symbols:
                raise SpecError(f"f{i + 1} is not linear in {sym}")
            row.append(float(d))
        A.append(tuple(rowA))
        B.append(tuple(rowB))
    lin = LinearPart(tuple(A), tuple(B))
    _verify_linear(table, f, lin)
    return lin


def make_spec(
    n: int,
    m: int,
    f: Sequence[str],
    state_domain: Optional[Sequence[tuple[float, float]]] = None,
    control_domain: Optional[Sequence[tuple[float, float]]] = None,
    time_domain: tuple[float, float] = (0.0, 1.0),
    linear: bool | tuple = False,
    name: str = "",
) -> SystemSpec:
    """Convenience constructor from expression strings.

    ``linear`` may be ``True`` (extract A, B from f), an ``(A, B)`` pair to be
    verified, or ``False``.
    """
    table = SymbolTable(n, m)
    exprs = tuple(parse_expr(text, table) for text in f)
    lin = None
    if linear is True:
        lin = extract_linear_part(table, exprs)
    elif linear:
        A, B = linear
        lin = LinearPart(tuple(map(tuple, np.asarray(A, float))), tuple(map(tuple, np.asarray(B, float))))
    notes = tuple(note for e in exprs for note in analyticity_warnings(e))
    return SystemSpec(
        table,
        exprs,
        tuple(state_domain or [(-1.0, 1.0)] * n),
        tuple(control_domain or [(-1.0, 1.0)] * m),
        time_domain,
        lin,
        name,
        notes,
    )


@dataclass(frozen=True)
class RiggedSystem:
    """Drift T = d/dt + f^i d/dq^i, the control directions d/dw^a, and D = D^I + <T>."""

    T: VectorField
    DI: tuple[VectorField, ...]
    spec: SystemSpec

    @property
    def D(self) -> tuple[VectorField, ...]:
        return self.DI + (self.T,)

    @property
    def table(self) -> SymbolTable:
        return self.spec.table

    @property
    def box(self) -> Box:
        return self.spec.box


def build_rigged(spec: SystemSpec) -> RiggedSystem:
    table = spec.table
    comps = [Expr(sp.Integer(1), table), *spec.f] + [Expr(sp.Integer(0), table)] * table.m
    T = VectorField(table, tuple(comps), "T")
    DI = tuple(coordinate_field(table, f"w{a}") for a in range(1, table.m + 1))
    for i, X in enumerate(DI):
        for Y in DI[i + 1 :]:
            if not lie_bracket(X, Y).is_zero():
                raise AssertionError("control directions must commute")
    return RiggedSystem(T, DI, spec)


def secondary_generators(rigged: RiggedSystem, max_height: int) -> list[VectorField]:
    """All ad_T^k(d/dw^a) for k <= max_height, ordered by (k, a)."""
    if max_height < 0:
        raise ValueError("max_height must be nonnegative")
    ladders = [ad_ladder(rigged.T, X, max_height) for X in rigged.DI]
    return [ladders[a][k] for k in range(max_height + 1) for a in range(len(ladders))]


def filtration_ranks(
    rigged: RiggedSystem, p, max_height: int, rank_tol: float = DEFAULT_RANK_TOL
) -> list[int]:
    """dim D^{I(l)} at p for l = 0..max_height."""
    gens = secondary_generators(rigged, max_height)
    M = eval_fields(gens, p)
    m = rigged.table.m
    return [numeric_rank(M[:, : m * (k + 1)], rank_tol) for k in range(max_height + 1)]


@dataclass(frozen=True)
class HeightReport:
    nu: int
    ranks: tuple[tuple[int, ...], ...]  # per sample point, ranks for heights 0..nu+1

    @property
    def rank(self) -> int:
        """Largest rank of D^II over the sample points."""
        return max(r[self.nu] for r in self.ranks)


def detect_height(
    rigged: RiggedSystem,
    sample_points: Sequence,
    rank_tol: float = DEFAULT_RANK_TOL,
    hard_cap: Optional[int] = None,
) -> HeightReport:
    """Smallest k with rank(ladder <= k) == rank(ladder <= k+1) at every sample point."""
    cap = 2 * rigged.table.N if hard_cap is None else hard_cap
    if cap < 1:
        raise ValueError("hard_cap must be at least 1")
    pts = [np.asarray(p, dtype=float) for p in sample_points]
    if not pts:
        raise ValueError("need at least one sample point")
    m = rigged.table.m
    for k in range(cap + 1):
        gens = secondary_generators(rigged, k + 1)
        ranks = []
        stable = True
        for p in pts:
            M = eval_fields(gens, p)
            row = tuple(numeric_rank(M[:, : m * (j + 1)], rank_tol) for j in range(k + 2))
            ranks.append(row)
            if row[k] != row[k + 1]:
                stable = False
        if stable:
            return HeightReport(k, tuple(ranks))
    raise HeightUndetermined(
        f"ladder rank did not stabilize by height {cap}; the distribution may need symbolic treatment"
    )


@dataclass(frozen=True)
class KalmanData:
    matrix: np.ndarray
    n_seq: tuple[int, ...]
    rank: int
    controllable: bool


def kalman_data(spec: SystemSpec, rank_tol: float = DEFAULT_RANK_TOL) -> KalmanData:
    """Kalman matrix [B | AB | ... | A^{n-1}B] and n_l = m + rank[B, ..., A^{l-1}B]."""
    if spec.linear_part is None:
        raise SpecError("system has no verified linear part")
    A, B = spec.linear_part.A_array, spec.linear_part.B_array
    n, m = B.shape
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    K = np.hstack(blocks)
    seq = [m] + [m + _rank_or_zero(K[:, : m * ell], rank_tol) for ell in range(1, n + 1)]
    r = _rank_or_zero(K, rank_tol)
    return KalmanData(K, tuple(seq), r, r == n)


def _rank_or_zero(M: np.ndarray, rank_tol: float) -> int:
    return 0 if not np.any(M) else numeric_rank(M, rank_tol)
