"""T-adapted generators of the secondary distribution.

At a base point z_o where every filtration rank dim D^{I(l)} is locally
maximal, ad_T induces a graded endomorphism of V = sum_l D^{I(l)}/D^{I(l-1)}.
On V^0 = D^I its powers give a kernel filtration K_1 c K_2 c ... c K_{nu+1} = V^0,
and a complement of K_a inside K_{a+1} supplies the rows W_{0(a)j} whose
ladders W_{l(a)j} = ad_T^l W_{0(a)j}, l <= a, are the adapted generators.
Rows whose higher brackets still escape the lower-row span near z_o (or
elsewhere in the box) are lengthened, and the family is re-indexed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .fields import VectorField, ad_ladder, eval_fields, linear_combination
from .linalg import (
    DEFAULT_RANK_TOL,
    canonical_basis,
    complement_in,
    null_space,
    numeric_rank,
    span_basis,
    span_residual,
)
from .system import RiggedSystem, detect_height, filtration_ranks, secondary_generators

Triple = tuple[int, int, int]  # (l, a, j), j counted from 1


class RankDeficiencyError(RuntimeError):
    """The base point is not a point of locally maximal filtration ranks."""


class LinearAlgebraFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class AdaptedRow:
    height: int
    coefficients: tuple[float, ...]  # W_{0(a)j} = sum_b c^b d/dw^b
    fields: tuple[VectorField, ...]  # ad^0 .. ad^height of the row generator
    source_height: int  # height chosen at z_o before any lengthening


@dataclass(frozen=True)
class AdaptedLadder:
    nu: int
    R: tuple[int, ...]
    rows: tuple[AdaptedRow, ...]  # sorted by (height, order of selection)
    base_point: tuple[float, ...]
    rank_tol: float
    filtration: tuple[int, ...]  # dim D^{I(l)} at z_o
    lengthened: bool

    def row(self, a: int, j: int) -> AdaptedRow:
        rows = [r for r in self.rows if r.height == a]
        return rows[j - 1]

    def triples(self) -> list[Triple]:
        """All l(a)j in lexicographic order: l first, then a, then j."""
        out = []
        counts: dict[int, int] = {}
        for r in self.rows:
            counts[r.height] = counts.get(r.height, 0) + 1
            j = counts[r.height]
            out.extend((ell, r.height, j) for ell in range(r.height + 1))
        return sorted(out)

    def field(self, triple: Triple) -> VectorField:
        ell, a, j = triple
        return self.row(a, j).fields[ell]

    def fields(self) -> list[VectorField]:
        return [self.field(tr) for tr in self.triples()]

    def row_index(self, a: int, j: int) -> int:
        return self.rows.index(self.row(a, j))

    @property
    def size(self) -> int:
        return sum(r.height + 1 for r in self.rows)


def perturbed_points(center, box, count: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian cloud around ``center`` with per-coordinate spread ``radius * box width``."""
    center = np.asarray(center, dtype=float)
    return center + rng.standard_normal((count, center.size)) * (radius * box.scale)


def choose_base_point(
    rigged: RiggedSystem,
    nu: int,
    rng: np.random.Generator,
    count: int = 200,
    rank_tol: float = DEFAULT_RANK_TOL,
) -> np.ndarray:
    """A sampled point whose rank vector (dim D^{I(0)}, ..., dim D^{I(nu)}) is maximal."""
    pts = rigged.box.uniform(rng, count)
    vectors = [tuple(filtration_ranks(rigged, p, nu, rank_tol)) for p in pts]
    best = tuple(max(v[k] for v in vectors) for k in range(nu + 1))
    for p, v in zip(pts, vectors):
        if v == best:
            return p
    raise RankDeficiencyError("no sampled point attains all maximal filtration ranks at once")


def t_adapted_generators(
    rigged: RiggedSystem,
    z_o,
    rank_tol: float = DEFAULT_RANK_TOL,
    nu: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    check_points: Optional[Sequence] = None,
    perturb_count: int = 20,
    perturb_radius: float = 1e-3,
) -> AdaptedLadder:
    """Construct the T-adapted generators at ``z_o``.

    ``check_points`` (default: 20 uniform box samples) are extra points where
    raw ladder fields must lie in the span of the adapted family; rows are
    lengthened until they do.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    z_o = np.asarray(z_o, dtype=float)
    box = rigged.box
    m = rigged.table.m
    near = perturbed_points(z_o, box, perturb_count, perturb_radius, rng)
    if check_points is None:
        check_points = box.uniform(rng, 20)
    far = [np.asarray(p, dtype=float) for p in check_points]
    if nu is None:
        nu = detect_height(rigged, [z_o, *near, *far], rank_tol).nu

    raw = secondary_generators(rigged, nu + 1)
    M = eval_fields(raw, z_o)
    blocks = [M[:, m * k : m * (k + 1)] for k in range(nu + 2)]
    dims = [numeric_rank(np.hstack(blocks[: k + 1]), rank_tol) for k in range(nu + 1)]
    if dims[0] != m:
        raise RankDeficiencyError("control directions are not independent at the base point")
    for p in near:
        other = filtration_ranks(rigged, p, nu, rank_tol)
        if any(o > d for o, d in zip(other, dims)):
            raise RankDeficiencyError(
                f"filtration ranks {other} near the base point exceed {dims} at the base point"
            )

    # kernel filtration of ad_T^s on V^0, s = 1..nu+1
    kernels = [np.zeros((m, 0))]
    for s in range(1, nu + 2):
        lower = np.hstack(blocks[:s])
        Q = span_basis(lower, rank_tol, rank=dims[s - 1])
        Ms = blocks[s] - Q @ (Q.T @ blocks[s])
        gain = (dims[s] if s <= nu else dims[nu]) - dims[s - 1]
        kernels.append(null_space(Ms, m - gain))
    for a in range(len(kernels) - 1):
        if kernels[a].shape[1] > kernels[a + 1].shape[1]:
            raise LinearAlgebraFailure("kernel filtration is not increasing; rank_tol may be too tight")
        if kernels[a].shape[1] and span_residual_matrix(kernels[a], kernels[a + 1]) > 1e-6:
            raise LinearAlgebraFailure("kernel filtration is not nested; rank_tol may be too tight")

    full = np.eye(m)
    chosen: list[tuple[int, np.ndarray]] = []
    for a in range(nu + 1):
        whole = kernels[a + 1] if a < nu else full
        piece = complement_in(kernels[a], whole)
        for c in canonical_basis(piece).T:
            chosen.append((a, c))
    if len(chosen) != m:
        raise LinearAlgebraFailure(f"selected {len(chosen)} row generators, expected {m}")

    ladders = [ad_ladder(rigged.T, X, nu) for X in rigged.DI]

    def row_fields(c: np.ndarray, height: int) -> tuple[VectorField, ...]:
        return tuple(
            linear_combination(list(c), [ladders[b][ell] for b in range(m)]) for ell in range(height + 1)
        )

    heights = [a for a, _ in chosen]
    coeffs = [c for _, c in chosen]
    top = [row_fields(c, nu) for c in coeffs]  # every row up to nu, truncated by height below

    def family(hs: Sequence[int], upto: Optional[int] = None) -> list[VectorField]:
        return [top[i][ell] for i, h in enumerate(hs) if upto is None or h <= upto for ell in range(h + 1)]

    def escapes(v: VectorField, gens: list[VectorField], pts) -> bool:
        if v.is_zero():
            return False
        for p in pts:
            G = eval_fields(gens, p) if gens else np.zeros((rigged.table.N, 0))
            if span_residual(v(p), G, rank_tol) > rank_tol:
                return True
        return False

    lengthened = False
    local = [z_o, *near]
    while True:
        new = list(heights)
        current = family(heights)
        for i, h in enumerate(heights):
            for b in range(h + 1, nu + 1):
                if escapes(top[i][b], current, [*local, *far]):
                    new[i] = max(new[i], b)
            if h < nu and escapes(top[i][h + 1], family(heights, upto=h), local):
                new[i] = max(new[i], h + 1)
        if new == heights:
            break
        heights = new
        lengthened = True

    nu_out = max(heights)
    order = sorted(range(m), key=lambda i: (heights[i], i))
    rows = tuple(
        AdaptedRow(heights[i], tuple(float(x) for x in coeffs[i]), top[i][: heights[i] + 1], chosen[i][0])
        for i in order
    )
    R = tuple(sum(1 for h in heights if h == a) for a in range(nu_out + 1))
    return AdaptedLadder(nu_out, R, rows, tuple(float(x) for x in z_o), rank_tol, tuple(dims), lengthened)


def span_residual_matrix(A: np.ndarray, B: np.ndarray) -> float:
    """Largest column defect of A against span(B), for orthonormal column sets."""
    if A.shape[1] == 0:
        return 0.0
    D = A - B @ (B.T @ A)
    return float(np.max(np.linalg.norm(D, axis=0)))


def adapted_span_defects(
    ladder: AdaptedLadder, rigged: RiggedSystem, nu: int, points: Sequence
) -> list[tuple[int, int, float, float]]:
    """Per point: (rank adapted, rank raw, adapted-in-raw defect, raw-in-adapted defect)."""
    raw = secondary_generators(rigged, nu)
    W = ladder.fields()
    out = []
    for p in points:
        A = eval_fields(W, p)
        B = eval_fields(raw, p)
        ra, rb = numeric_rank(A, ladder.rank_tol), numeric_rank(B, ladder.rank_tol)
        d1 = max(span_residual(A[:, i], B, ladder.rank_tol) for i in range(A.shape[1]))
        d2 = max(span_residual(B[:, i], A, ladder.rank_tol) for i in range(B.shape[1]))
        out.append((ra, rb, d1, d2))
    return out


def lower_row_defects(ladder: AdaptedLadder, rigged: RiggedSystem, points: Sequence) -> list[float]:
    """Largest defect of ad^{a+1} W_{0(a)j} against {W_{l(b)j'} : b <= a}, per point."""
    out = []
    for p in points:
        worst = 0.0
        for r in ladder.rows:
            nxt = ad_ladder(rigged.T, r.fields[0], r.height + 1)[r.height + 1]
            if nxt.is_zero():
                continue
            lower = [f for q in ladder.rows if q.height <= r.height for f in q.fields]
            worst = max(worst, span_residual(nxt(p), eval_fields(lower, p), ladder.rank_tol))
        out.append(worst)
    return out
