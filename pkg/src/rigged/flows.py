"""Flows and their compositions: stepped drift/control paths, surrogate paths,
leaflet maps, surrogate depths with the Vandermonde check, and numeric checks of
the first and second derivatives of composed flows.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .fields import (
    Box,
    SurrogateField,
    VectorField,
    directional,
    eval_fields,
    lie_bracket,
    linear_combination,
)
from .ladder import AdaptedLadder
from .linalg import DEFAULT_RANK_TOL, numeric_rank
from .ode import DEFAULT_ODE_TOL, integrate
from .system import RiggedSystem

FieldLike = Union[VectorField, SurrogateField, Callable[[np.ndarray], np.ndarray]]
KINDS = ("drift", "control", "surrogate", "field")


class DurationMismatch(ValueError):
    pass


class DepthOrderError(ValueError):
    pass


@dataclass(frozen=True)
class FlowSegment:
    field: FieldLike
    duration: float
    kind: str = "field"

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown segment kind {self.kind!r}")
        if self.kind == "surrogate" and not isinstance(self.field, SurrogateField):
            raise TypeError("surrogate segments need a SurrogateField")
        if self.kind == "control":
            X = self.field
            t = X.table
            if any(c != 0 for c in X.syms[: 1 + t.n]) or any(not e.is_constant() for e in X.components):
                raise ValueError("control segments need a constant combination of the d/dw directions")


def _rhs(X: FieldLike, box: Optional[Box], tol: float) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(X, SurrogateField):
        return X.evaluator(box, ode_tol=tol)
    return X


def flow(X: FieldLike, x0, s: float, tol: float = DEFAULT_ODE_TOL, domain=None, box: Optional[Box] = None) -> np.ndarray:
    """Phi^X_s(x0) by adaptive Runge-Kutta 5(4)."""
    return integrate(_rhs(X, box, tol), np.asarray(x0, dtype=float), float(s), tol, domain)


@dataclass(frozen=True)
class FlowResult:
    point: np.ndarray
    polyline: tuple[np.ndarray, ...]  # x0 and each segment endpoint


def compose_flows(
    segments: Sequence[FlowSegment], x0, tol: float = DEFAULT_ODE_TOL, domain=None, box: Optional[Box] = None
) -> FlowResult:
    """Apply the segments left to right, the first one acting on ``x0``."""
    x = np.asarray(x0, dtype=float)
    line = [x.copy()]
    for seg in segments:
        x = flow(seg.field, x, seg.duration, tol, domain, box)
        line.append(x.copy())
    return FlowResult(x, tuple(line))


def control_field(rigged: RiggedSystem, lam: Sequence[float]) -> VectorField:
    lam = list(lam)
    if len(lam) != rigged.table.m:
        raise ValueError(f"expected {rigged.table.m} control coefficients, got {len(lam)}")
    return linear_combination(lam, list(rigged.DI))


@dataclass(frozen=True)
class SteppedResult:
    point: np.ndarray
    total_time: float
    polyline: tuple[np.ndarray, ...]


def stepped_endpoint(
    rigged: RiggedSystem,
    x0,
    odd_durations: Sequence[float],
    even_controls: Sequence[tuple[Sequence[float], float]],
    total_time: Optional[float] = None,
    tol: float = DEFAULT_ODE_TOL,
) -> SteppedResult:
    """Drift for sigma_1, control lambda_2 for sigma_2, drift for sigma_3, and so on.

    ``odd_durations`` has one more entry than ``even_controls``; the drift
    durations must add up to ``total_time`` (when given) within 1e-12.
    """
    odd = [float(s) for s in odd_durations]
    if len(odd) != len(even_controls) + 1:
        raise ValueError("need exactly one more drift arc than control arcs")
    if any(s <= 0 for s in odd) or any(float(s) <= 0 for _, s in even_controls):
        raise ValueError("all durations must be positive")
    T = math.fsum(odd)
    if total_time is not None and abs(T - total_time) > 1e-12:
        raise DurationMismatch(f"drift durations add up to {T!r}, expected {total_time!r}")
    segs = [FlowSegment(rigged.T, odd[0], "drift")]
    for (lam, s), s_next in zip(even_controls, odd[1:]):
        segs.append(FlowSegment(control_field(rigged, lam), float(s), "control"))
        segs.append(FlowSegment(rigged.T, s_next, "drift"))
    res = compose_flows(segs, x0, tol)
    return SteppedResult(res.point, T, res.polyline)


def surrogate_depths_for(odd_durations: Sequence[float]) -> list[float]:
    """tau_l = sigma_{2l+1} + sigma_{2l+3} + ... for l = 1..k."""
    odd = [float(s) for s in odd_durations]
    return [math.fsum(odd[ell:]) for ell in range(1, len(odd))]


def _check_decreasing(depths: Sequence[float], total_time: Optional[float] = None) -> None:
    for a, b in zip(depths, depths[1:]):
        if not a > b:
            raise DepthOrderError(f"depths must strictly decrease, got {a!r} then {b!r}")
    if depths and not depths[-1] > 0:
        raise DepthOrderError("depths must be positive")
    if depths and total_time is not None and not total_time > depths[0]:
        raise DepthOrderError(f"first depth {depths[0]!r} must be below the total time {total_time!r}")


def surrogate_endpoint(
    rigged: RiggedSystem,
    y0,
    segments: Sequence[tuple[Sequence[float], float, float]],
    total_time: Optional[float] = None,
    tol: float = DEFAULT_ODE_TOL,
) -> FlowResult:
    """Flow along the surrogate fields (lambda_l . d/dw)^{tau_l} for times s_l, in order."""
    depths = [float(tau) for _, tau, _ in segments]
    _check_decreasing(depths, total_time)
    segs = [
        FlowSegment(SurrogateField(control_field(rigged, lam), float(tau), rigged.T), float(s), "surrogate")
        for lam, tau, s in segments
    ]
    return compose_flows(segs, y0, tol, box=rigged.box)


def stepped_via_surrogates(
    rigged: RiggedSystem,
    x0,
    odd_durations: Sequence[float],
    even_controls: Sequence[tuple[Sequence[float], float]],
    tol: float = DEFAULT_ODE_TOL,
) -> np.ndarray:
    """Drift for the total time, then the surrogate arcs of the same stepped path."""
    T = math.fsum(float(s) for s in odd_durations)
    y0 = flow(rigged.T, x0, T, tol)
    taus = surrogate_depths_for(odd_durations)
    segs = [(lam, tau, float(s)) for (lam, s), tau in zip(even_controls, taus)]
    return surrogate_endpoint(rigged, y0, segs, T, tol).point


# -- surrogate depths, leaflet maps ------------------------------------------


def select_surrogate_depths(a_count: int, omega: float, rho: float, total_time: Optional[float] = None) -> tuple[float, ...]:
    """tau_l = omega * (1 - l (1 - rho) / a_count) for l = 0..a_count."""
    if a_count < 1:
        raise ValueError("a_count must be at least 1")
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    if not omega > 0 or (total_time is not None and not omega < total_time):
        raise ValueError("omega must lie in (0, T)")
    return tuple(omega * (1 - ell * (1 - rho) / a_count) for ell in range(a_count + 1))


def surrogate_family(
    rigged: RiggedSystem, ladder: AdaptedLadder, omega: float, rho: float
) -> list[SurrogateField]:
    """Surrogates of every row generator W_0(a)j at a+1 depths, by decreasing depth.

    Row r uses omega * (1 - r * kappa) so depths from different rows never coincide.
    """
    rows = ladder.rows
    top = max(1, max(r.height for r in rows))
    kappa = 0.1 * (1 - rho) / (len(rows) * top)
    out = []
    for r, row in enumerate(rows):
        om = omega * (1 - r * kappa)
        depths = (om,) if row.height == 0 else select_surrogate_depths(row.height, om, rho)
        out.extend(SurrogateField(row.fields[0], tau, rigged.T) for tau in depths)
    out.sort(key=lambda S: -S.depth)
    _check_decreasing([S.depth for S in out])
    return out


def leaflet_map(
    fields: Sequence[SurrogateField], y0, box: Optional[Box] = None, tol: float = DEFAULT_ODE_TOL
) -> Callable[[np.ndarray], np.ndarray]:
    """s -> Phi^{W_M}_{s_M} o ... o Phi^{W_1}_{s_1}(y0)."""
    _check_decreasing([S.depth for S in fields])
    rhs = [S.evaluator(box, ode_tol=tol) for S in fields]
    y0 = np.asarray(y0, dtype=float)

    def F(s) -> np.ndarray:
        x = y0
        for f, si in zip(rhs, s):
            x = integrate(f, x, float(si), tol)
        return x

    return F


@dataclass(frozen=True)
class MapRank:
    rank: int
    q_rank: int
    jacobian: np.ndarray
    step: float


def surrogate_map_rank(
    y0,
    fields: Sequence[SurrogateField],
    h: float = 1e-5,
    rank_tol: float = DEFAULT_RANK_TOL,
    box: Optional[Box] = None,
    tol: float = DEFAULT_ODE_TOL,
) -> MapRank:
    """Rank of the leaflet map at s = 0 from central differences with one Richardson level."""
    F = leaflet_map(fields, y0, box, tol)
    step = h * (float(np.mean(box.scale)) if box is not None else 1.0)
    M = len(fields)

    def central(k: int, hh: float) -> np.ndarray:
        e = np.zeros(M)
        e[k] = hh
        return (F(e) - F(-e)) / (2 * hh)

    cols = [(4 * central(k, step / 2) - central(k, step)) / 3 for k in range(M)]
    J = np.column_stack(cols)
    table = fields[0].base.table
    Jq = J[table.q_slice, :]
    qr = 0 if not np.any(Jq) else numeric_rank(Jq, rank_tol)
    return MapRank(numeric_rank(J, rank_tol), qr, J, step)


@dataclass(frozen=True)
class LeafletSample:
    s: tuple[float, ...]
    point: tuple[float, ...]
    jacobian: Optional[np.ndarray] = field(default=None, compare=False)


def leaflet_samples(
    fields: Sequence[SurrogateField],
    y0,
    count: int,
    radius: float,
    rng: np.random.Generator,
    box: Optional[Box] = None,
    tol: float = DEFAULT_ODE_TOL,
) -> list[LeafletSample]:
    """The s = 0 record (with the map Jacobian) followed by ``count`` random parameters."""
    F = leaflet_map(fields, y0, box, tol)
    M = len(fields)
    J = surrogate_map_rank(y0, fields, box=box, tol=tol).jacobian
    out = [LeafletSample(tuple([0.0] * M), tuple(map(float, F(np.zeros(M)))), J)]
    for s in rng.uniform(-radius, radius, size=(count, M)):
        out.append(LeafletSample(tuple(map(float, s)), tuple(map(float, F(s)))))
    return out


def leaflet_csv(samples: Sequence[LeafletSample], names: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    M = len(samples[0].s) if samples else 0
    w.writerow([f"s{k}" for k in range(1, M + 1)] + list(names))
    for smp in samples:
        w.writerow([repr(x) for x in (*smp.s, *smp.point)])
    return buf.getvalue()


# -- Vandermonde check -------------------------------------------------------


@dataclass(frozen=True)
class VandermondeStep:
    omega: float
    matrix: np.ndarray
    ratio: float
    rel_error: float


@dataclass(frozen=True)
class VandermondeReport:
    row: tuple[int, int]
    rho: float
    target: float
    steps: tuple[VandermondeStep, ...]
    orders: tuple[Optional[float], ...]  # between consecutive omegas; None where both errors are at the floor
    exact: bool  # every error is at the floor

    @property
    def min_order(self) -> float:
        vals = [o for o in self.orders if o is not None]
        return math.inf if not vals else min(vals)


def vandermonde_target(a: int, rho: float) -> float:
    sig = [1 - ell * (1 - rho) / a for ell in range(a + 1)] if a else [1.0]
    return float(np.prod([sig[i] - sig[j] for j in range(len(sig)) for i in range(j)]))


class CoefficientExtractionError(RuntimeError):
    pass


def expansion_basis(ladder: AdaptedLadder, row: tuple[int, int], z) -> list[tuple[int, int, int]]:
    """The row's own triples, then further triples in lex order while the rank at z grows.

    The adapted family may be dependent at z; expanding in an independent
    subfamily keeps the row coefficients unique.
    """
    a, j = row
    own = [(k, a, j) for k in range(a + 1)]
    tol = ladder.rank_tol
    if numeric_rank(eval_fields([ladder.field(tr) for tr in own], z), tol) < a + 1:
        raise CoefficientExtractionError(f"row {row} is rank deficient at the expansion point")
    chosen = list(own)
    for tr in ladder.triples():
        if tr in own:
            continue
        trial = chosen + [tr]
        if numeric_rank(eval_fields([ladder.field(t) for t in trial], z), tol) == len(trial):
            chosen = trial
    return chosen


def vandermonde_check(
    rigged: RiggedSystem,
    ladder: AdaptedLadder,
    row: tuple[int, int],
    z,
    omegas: Sequence[float] = (1e-1, 3e-2, 1e-2),
    rho: float = 0.5,
    tol: float = DEFAULT_ODE_TOL,
    floor: float = 1e-10,
) -> VandermondeReport:
    """Coefficient matrix of the row surrogates in the adapted generators, against the limit.

    Entry (l, k) is k! times the coefficient of W_k(a)j in
    (W_0(a)j)^{tau_l}(z), so that it tends to (-tau_l)^k.
    """
    a, j = row
    z = np.asarray(z, dtype=float)
    basis = expansion_basis(ladder, row, z)
    G = eval_fields([ladder.field(tr) for tr in basis], z)
    cols = list(range(a + 1))
    base = ladder.row(a, j).fields[0]
    target = vandermonde_target(a, rho)
    steps = []
    for om in omegas:
        depths = (om,) if a == 0 else select_surrogate_depths(a, om, rho)
        A = np.zeros((a + 1, a + 1))
        for ell, tau in enumerate(depths):
            v = SurrogateField(base, tau, rigged.T).evaluator(rigged.box, ode_tol=tol)(z)
            c, *_ = np.linalg.lstsq(G, v, rcond=None)
            A[ell] = [c[cols[k]] * math.factorial(k) for k in range(a + 1)]
        ratio = float(np.linalg.det(A)) / om ** (a * (a + 1) // 2)
        steps.append(VandermondeStep(float(om), A, ratio, abs(ratio - target) / abs(target)))
    orders = []
    for s1, s2 in zip(steps, steps[1:]):
        if s1.rel_error <= floor and s2.rel_error <= floor:
            orders.append(None)
        else:
            e1, e2 = max(s1.rel_error, floor), max(s2.rel_error, floor)
            orders.append(math.log(e1 / e2) / math.log(s1.omega / s2.omega))
    exact = all(s.rel_error <= floor for s in steps)
    return VandermondeReport((a, j), rho, target, tuple(steps), tuple(orders), exact)


# -- derivatives of composed flows --------------------------------------------

Bracket = Callable[[VectorField, VectorField], VectorField]


@dataclass(frozen=True)
class IdentityResult:
    name: str
    hs: tuple[float, ...]
    residuals: tuple[float, ...]
    orders: tuple[float, ...]

    @property
    def final(self) -> float:
        return self.residuals[-1]

    @property
    def mean_order(self) -> float:
        return float(np.mean(self.orders)) if self.orders else math.nan


@dataclass(frozen=True)
class IdentityReport:
    results: tuple[IdentityResult, ...]

    def by_name(self, name: str) -> IdentityResult:
        return next(r for r in self.results if r.name == name)


def _composition(fields: Sequence[VectorField], signs: Sequence[int], y, s: float, tol: float) -> np.ndarray:
    """Phi^{c_1 X_1}_s o ... o Phi^{c_k X_k}_s (y): the last field acts first."""
    x = np.asarray(y, dtype=float)
    for X, c in reversed(list(zip(fields, signs))):
        x = integrate(X, x, c * s, tol)
    return x


def _sum(fields: Sequence[VectorField]) -> VectorField:
    return linear_combination([1] * len(fields), list(fields))


def identity_targets(
    Xs: Sequence[VectorField], Y: VectorField, Z: VectorField, bracket: Bracket = lie_bracket
) -> dict[str, tuple[VectorField, VectorField]]:
    """Closed forms for the first and second s-derivatives at s = 0 of the three compositions."""
    Xs = list(Xs)
    m = len(Xs)
    d2_i = _sum([directional(X, X) for X in Xs] + [directional(Xs[jj], Xs[ii]).scale(2) for jj in range(m) for ii in range(jj)])
    YZ = bracket(Y, Z)
    zero = Y.scale(0)
    A = _sum(Xs) - Z - Y
    d2_iii = YZ + bracket(A, Y + Z) + directional(A, A)
    for ell in range(m):
        for jj in range(ell + 1, m):
            d2_iii = d2_iii - directional(Xs[ell], Xs[jj])
        for jj in range(ell):
            d2_iii = d2_iii + directional(Xs[ell], Xs[jj])
    return {"i": (_sum(Xs), d2_i), "ii": (zero, YZ), "iii": (A, d2_iii)}


def verify_flow_identities(
    Xs: Sequence[VectorField],
    Y: VectorField,
    Z: VectorField,
    y,
    hs: Sequence[float] = (8e-3, 4e-3, 2e-3, 1e-3),
    tol: float = 1e-13,
    bracket: Bracket = lie_bracket,
    richardson: bool = False,
) -> IdentityReport:
    """Central-difference derivatives of the three compositions against their closed forms.

    The residual at step h is the larger of the first- and second-derivative
    defects in the max norm; ``orders`` are log2 residual ratios under h-halving.
    """
    Xs = list(Xs)
    y = np.asarray(y, dtype=float)
    targets = identity_targets(Xs, Y, Z, bracket)
    comps = {
        "i": (Xs, [1] * len(Xs)),
        "ii": ([Z + Y, Z, Y], [1, -1, -1]),
        "iii": (Xs + [Z, Y], [1] * len(Xs) + [-1, -1]),
    }
    results = []
    for name, (fields, signs) in comps.items():
        e1, e2 = (f(y) for f in targets[name])

        def derivs(h: float) -> tuple[np.ndarray, np.ndarray]:
            fp = _composition(fields, signs, y, h, tol)
            fm = _composition(fields, signs, y, -h, tol)
            return (fp - fm) / (2 * h), (fp - 2 * y + fm) / h**2

        res = []
        for h in hs:
            d1, d2 = derivs(h)
            if richardson:
                d1h, d2h = derivs(h / 2)
                d1, d2 = (4 * d1h - d1) / 3, (4 * d2h - d2) / 3
            res.append(float(max(np.max(np.abs(d1 - e1)), np.max(np.abs(d2 - e2)))))
        orders = tuple(
            math.log(r1 / r2) / math.log(h1 / h2) if r1 > 0 and r2 > 0 else math.nan
            for (h1, r1), (h2, r2) in zip(zip(hs, res), zip(hs[1:], res[1:]))
        )
        results.append(IdentityResult(name, tuple(map(float, hs)), tuple(res), orders))
    return IdentityReport(tuple(results))
