"""Vector fields on M = R x Q x K, Lie brackets, ad-ladders and pushforwards."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable, Optional, Sequence, Union

import numpy as np
import sympy as sp
from scipy.stats import qmc

from .expr import (
    DEFAULT_SIZE_CAP,
    Expr,
    TreeSizeError,
    SymbolTable,
    _check_size,
    _normalize,
    compile_exprs,
    make_expr,
    parse_expr,
    to_rational,
    to_text,
)
from .ode import DEFAULT_ODE_TOL, integrate

DEFAULT_SERIES_ORDER = 12
MAX_SERIES_ORDER = 30


class SeriesRemainderError(Exception):
    def __init__(self, bound: float, tol: float, order: int, tau: float):
        self.bound = bound
        self.tol = tol
        self.order = order
        self.tau = tau
        super().__init__(
            f"series remainder bound {bound:.3g} exceeds tolerance {tol:.3g} at order {order} "
            f"and tau = {tau:.3g}; raise the order or split tau into smaller steps"
        )


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in the coordinates of M."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.lo) != len(self.hi):
            raise ValueError("box bounds have different lengths")
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise ValueError(f"empty box: lo={self.lo}, hi={self.hi}")

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def lo_array(self) -> np.ndarray:
        return np.asarray(self.lo, dtype=float)

    @property
    def hi_array(self) -> np.ndarray:
        return np.asarray(self.hi, dtype=float)

    @property
    def scale(self) -> np.ndarray:
        """Per-coordinate width, with degenerate sides counted as width 1."""
        width = self.hi_array - self.lo_array
        return np.where(width > 0, width, 1.0)

    def contains(self, p, slack: float = 0.0) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.lo_array - slack) and np.all(p <= self.hi_array + slack))

    def uniform(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return self.lo_array + rng.random((count, self.dim)) * (self.hi_array - self.lo_array)

    def probe_points(self, count: int = 256) -> np.ndarray:
        """Deterministic probe set: all corners (when few) plus a scrambled Halton sequence."""
        pts = [self.lo_array + qmc.Halton(d=self.dim, seed=0).random(count) * (self.hi_array - self.lo_array)]
        if self.dim <= 8:
            grid = np.array(np.meshgrid(*[[a, b] for a, b in zip(self.lo, self.hi)], indexing="ij"))
            pts.append(grid.reshape(self.dim, -1).T)
        pts.append(((self.lo_array + self.hi_array) / 2)[None, :])
        return np.vstack(pts)


@dataclass(frozen=True)
class VectorField:
    """One normalized expression per coordinate of M, in the order t, q, w."""

    table: SymbolTable
    components: tuple[Expr, ...]
    name: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        if len(self.components) != self.table.N:
            raise ValueError(
                f"vector field needs {self.table.N} components, got {len(self.components)}"
            )
        for c in self.components:
            if c.table != self.table:
                raise ValueError("component belongs to another symbol table")

    @classmethod
    def from_syms(cls, table: SymbolTable, syms: Sequence, name: str = "") -> "VectorField":
        return cls(table, tuple(make_expr(s, table) for s in syms), name)

    @classmethod
    def from_strings(cls, table: SymbolTable, texts: Sequence[str], name: str = "") -> "VectorField":
        return cls(table, tuple(parse_expr(t, table) for t in texts), name)

    @property
    def syms(self) -> tuple[sp.Basic, ...]:
        return tuple(c.sym for c in self.components)

    @cached_property
    def _evaluator(self) -> Callable:
        return compile_exprs(self.components, self.table)

    @cached_property
    def _jacobian_evaluator(self) -> Callable:
        parts = [sp.diff(c, s) for c in self.syms for s in self.table.symbols]
        return compile_exprs(parts, self.table)

    def __call__(self, p) -> np.ndarray:
        return np.asarray(self._evaluator(np.asarray(p, dtype=float)), dtype=float)

    def jacobian(self, p) -> np.ndarray:
        """Matrix of partials dX^i/dx^j at ``p``."""
        N = self.table.N
        raw = self._jacobian_evaluator(np.asarray(p, dtype=float))
        return np.asarray(raw, dtype=float).reshape(N, N)

    def is_zero(self) -> bool:
        return all(c.sym == 0 for c in self.components)

    def __add__(self, other: "VectorField") -> "VectorField":
        _same_table(self, other)
        return VectorField(
            self.table, tuple(Expr(_normalize(a + b), self.table) for a, b in zip(self.syms, other.syms))
        )

    def __sub__(self, other: "VectorField") -> "VectorField":
        return self + other.scale(-1)

    def __neg__(self) -> "VectorField":
        return self.scale(-1)

    def scale(self, c) -> "VectorField":
        c = to_rational(c) if not isinstance(c, sp.Basic) else c
        return VectorField(self.table, tuple(Expr(_normalize(c * a), self.table) for a in self.syms))

    def multiply(self, g: Expr) -> "VectorField":
        """Pointwise product with a scalar function."""
        return VectorField(self.table, tuple(Expr(_normalize(g.sym * a), self.table) for a in self.syms))

    def apply(self, g: Expr) -> Expr:
        """Directional derivative X(g) of a scalar function."""
        total = sum(
            (a * sp.diff(g.sym, s) for a, s in zip(self.syms, self.table.symbols) if a != 0),
            sp.Integer(0),
        )
        return Expr(_normalize(total), self.table)

    def text(self) -> str:
        terms = []
        for name, c in zip(self.table.names, self.components):
            if c.sym != 0:
                terms.append(f"({to_text(c)})*d/d{name}")
        return " + ".join(terms) if terms else "0"

    def __repr__(self) -> str:
        label = f"{self.name}: " if self.name else ""
        return f"VectorField({label}{self.text()})"


def _same_table(X: VectorField, Y: VectorField) -> None:
    if X.table != Y.table:
        raise ValueError("vector fields live on different symbol tables")


def zero_field(table: SymbolTable) -> VectorField:
    return VectorField(table, tuple(Expr(sp.Integer(0), table) for _ in range(table.N)))


def coordinate_field(table: SymbolTable, coord: Union[str, int]) -> VectorField:
    """The coordinate field d/dx for a coordinate name or index."""
    idx = table.index(coord) if isinstance(coord, str) else coord
    syms = [sp.Integer(1) if i == idx else sp.Integer(0) for i in range(table.N)]
    return VectorField(table, tuple(Expr(s, table) for s in syms), f"d/d{table.names[idx]}")


def linear_combination(coeffs: Sequence, fields: Sequence[VectorField]) -> VectorField:
    """Constant-coefficient combination sum c_i X_i with exact rational coefficients."""
    if not fields:
        raise ValueError("need at least one field")
    table = fields[0].table
    comps = [sp.Integer(0)] * table.N
    for c, X in zip(coeffs, fields):
        _same_table(fields[0], X)
        c = to_rational(c)
        if c == 0:
            continue
        comps = [acc + c * x for acc, x in zip(comps, X.syms)]
    return VectorField(table, tuple(Expr(_normalize(s), table) for s in comps))


def lie_bracket(X: VectorField, Y: VectorField, size_cap: int = DEFAULT_SIZE_CAP) -> VectorField:
    """[X, Y]^j = X(Y^j) - Y(X^j)."""
    if size_cap == DEFAULT_SIZE_CAP:
        return _bracket_memo(X, Y)
    return _bracket(X, Y, size_cap)


@lru_cache(maxsize=65536)
def _bracket_memo(X: VectorField, Y: VectorField) -> VectorField:
    return _bracket(X, Y, DEFAULT_SIZE_CAP)


def _bracket(X: VectorField, Y: VectorField, size_cap: int) -> VectorField:
    _same_table(X, Y)
    xs, ys, coords = X.syms, Y.syms, X.table.symbols
    comps = []
    for xj, yj in zip(xs, ys):
        total = sp.Integer(0)
        for xi, yi, s in zip(xs, ys, coords):
            if xi != 0 and yj != 0:
                total += xi * sp.diff(yj, s)
            if yi != 0 and xj != 0:
                total -= yi * sp.diff(xj, s)
        out = _normalize(total)
        _check_size(out, size_cap)
        comps.append(Expr(out, X.table))
    return VectorField(X.table, tuple(comps))


def directional(X: VectorField, Y: VectorField) -> VectorField:
    """The field X(Y) with components X(Y^j) in the fixed coordinates."""
    _same_table(X, Y)
    return VectorField(X.table, tuple(X.apply(c) for c in Y.components))


_AD_MEMO: dict[tuple[VectorField, VectorField], list[VectorField]] = {}
_AD_LOCK = threading.Lock()


def ad_power(T: VectorField, X: VectorField, k: int) -> VectorField:
    """k-fold bracket [T, [T, ..., [T, X]...]], memoized per (T, X)."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    key = (T, X)
    ladder = _AD_MEMO.get(key)
    if ladder is not None and len(ladder) > k:
        return ladder[k]
    with _AD_LOCK:
        ladder = _AD_MEMO.setdefault(key, [X])
        while len(ladder) <= k:
            prev = ladder[-1]
            ladder.append(prev if prev.is_zero() else lie_bracket(T, prev))
        return ladder[k]


def ad_ladder(T: VectorField, X: VectorField, k: int) -> list[VectorField]:
    """[ad^0 X, ..., ad^k X]."""
    ad_power(T, X, k)
    return list(_AD_MEMO[(T, X)][: k + 1])


def clear_memo() -> None:
    with _AD_LOCK:
        _AD_MEMO.clear()


def eval_field(X: VectorField, p) -> np.ndarray:
    return X(p)


@lru_cache(maxsize=4096)
def _stack_evaluator(fields: tuple[VectorField, ...]) -> Callable:
    exprs = [c for X in fields for c in X.components]
    return compile_exprs(exprs, fields[0].table)


def eval_fields(fields: Sequence[VectorField], p) -> np.ndarray:
    """N x k matrix whose columns are the fields evaluated at ``p``."""
    fields = tuple(fields)
    if not fields:
        raise ValueError("need at least one field")
    N = fields[0].table.N
    raw = _stack_evaluator(fields)(np.asarray(p, dtype=float))
    return np.asarray(raw, dtype=float).reshape(len(fields), N).T


def sup_norm_on_box(X: VectorField, box: Box) -> float:
    """Largest absolute component of X over the deterministic probe set of ``box``."""
    if X.is_zero():
        return 0.0
    pts = box.probe_points()
    return float(max(np.max(np.abs(X(p))) for p in pts))


@dataclass(frozen=True)
class SeriesPushforward:
    """Truncated series sum_k (-tau)^k/k! ad_T^k X with its remainder estimate."""

    field: VectorField
    tau: float
    order: int
    remainder_bound: float
    exact: bool
    terms: tuple[VectorField, ...]

    @cached_property
    def _coefficients(self) -> np.ndarray:
        return np.array([(-self.tau) ** k / math.factorial(k) for k in range(len(self.terms))])

    def __call__(self, p) -> np.ndarray:
        """Numeric value at ``p``, computed from the cached ladder without re-expansion."""
        return eval_fields(self.terms, p) @ self._coefficients


def pushforward_series(
    T: VectorField,
    X: VectorField,
    tau: float,
    order: Optional[int] = None,
    box: Optional[Box] = None,
    tol: Optional[float] = None,
    max_order: int = MAX_SERIES_ORDER,
    build_field: bool = True,
) -> SeriesPushforward:
    """Series for (Phi^T_tau)_* X.

    With ``order=None`` the order starts at 12 and grows up to ``max_order``
    until the remainder bound over ``box`` is below ``tol``.  An explicit
    ``order`` is used as given.  The remainder bound is
    ``max|ad^{order+1} X| * tau^{order+1}/(order+1)!``, the maximum taken over
    the probe points of ``box`` (infinite when no box is given and the ladder
    does not terminate).
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    adaptive = order is None
    order = DEFAULT_SERIES_ORDER if order is None else order
    if order < 1:
        raise ValueError("order must be at least 1")
    while True:
        ladder = ad_ladder(T, X, order + 1)
        exact = any(Z.is_zero() for Z in ladder)
        if exact or tau == 0.0:
            bound = 0.0
        elif box is None:
            bound = math.inf
        else:
            bound = sup_norm_on_box(ladder[order + 1], box) * tau ** (order + 1) / math.factorial(order + 1)
        if tol is None or bound <= tol:
            break
        if not adaptive or order >= max_order:
            raise SeriesRemainderError(bound, tol, order, tau)
        order = min(order + 2, max_order)
    terms = [Z for Z in ladder[: order + 1]]
    if exact:
        nonzero = [Z for Z in terms if not Z.is_zero()]
        terms = nonzero if nonzero else terms[:1]
    if tau == 0.0:
        terms = [X]
    fld = X
    if build_field and tau != 0.0:
        r = to_rational(tau)
        fld = linear_combination(
            [(-r) ** k / sp.factorial(k) for k in range(len(terms))], terms
        )
    return SeriesPushforward(fld, float(tau), order, float(bound), bool(exact), tuple(terms))


def flow_with_jacobian(
    X: VectorField, x0, s: float, tol: float = DEFAULT_ODE_TOL, domain=None, coords=slice(None)
) -> tuple[np.ndarray, np.ndarray]:
    """Flow of X for time s together with its Jacobian from the variational equation."""
    N = X.table.N
    x0 = np.asarray(x0, dtype=float)
    if s == 0.0:
        return x0.copy(), np.eye(N)

    def rhs(y):
        x = y[:N]
        J = y[N:].reshape(N, N)
        return np.concatenate([X(x), (X.jacobian(x) @ J).ravel()])

    y0 = np.concatenate([x0, np.eye(N).ravel()])
    y = integrate(rhs, y0, s, tol, domain, coords)
    return y[:N], y[N:].reshape(N, N)


def numeric_pushforward(
    T: VectorField,
    X: VectorField,
    tau: float,
    p,
    tol: float = DEFAULT_ODE_TOL,
    domain=None,
    coords=slice(None),
) -> np.ndarray:
    """(Phi^T_tau)_* X at p = D Phi^T_tau(x0) X(x0) with x0 = Phi^T_{-tau}(p)."""
    p = np.asarray(p, dtype=float)
    if tau == 0.0:
        return X(p)
    x0 = integrate(T, p, -tau, tol, domain, coords)
    _, J = flow_with_jacobian(T, x0, tau, tol, domain, coords)
    return J @ X(x0)


@dataclass(frozen=True)
class SurrogateField:
    """Pushforward of a constant control combination along the drift for time ``depth``."""

    base: VectorField
    depth: float
    drift: VectorField

    def __post_init__(self) -> None:
        if not self.depth > 0:
            raise ValueError(f"surrogate depth must be positive, got {self.depth}")
        table = self.base.table
        head = self.base.syms[: 1 + table.n]
        if any(c != 0 for c in head):
            raise ValueError("surrogate base must have zero t- and q-components")

    def series(self, order: Optional[int] = None, box: Optional[Box] = None, tol: Optional[float] = None):
        return pushforward_series(self.drift, self.base, self.depth, order, box, tol)

    def evaluator(
        self,
        box: Optional[Box] = None,
        series_tol: float = 1e-9,
        ode_tol: float = DEFAULT_ODE_TOL,
        domain=None,
        coords=slice(None),
    ) -> Callable[[np.ndarray], np.ndarray]:
        """Series form when its remainder bound is below ``series_tol``, numeric otherwise."""
        try:
            sp_ = pushforward_series(
                self.drift, self.base, self.depth, None, box, series_tol, build_field=False
            )
            return sp_
        except (SeriesRemainderError, TreeSizeError):
            return lambda p: numeric_pushforward(
                self.drift, self.base, self.depth, p, ode_tol, domain, coords
            )

    def __call__(self, p, box: Optional[Box] = None) -> np.ndarray:
        return self.evaluator(box)(p)
