"""Bracket closure, strata of sample sets, goodness criteria and accessibility verdicts.

Both goodness criteria are sufficient conditions only: a failed check is
reported as ``inconclusive`` and never as "not good".
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence, Union

import numpy as np

from .fields import VectorField, ad_ladder, eval_fields, lie_bracket, linear_combination
from .ladder import AdaptedLadder, perturbed_points, t_adapted_generators
from .linalg import DEFAULT_RANK_TOL, numeric_rank, span_residual
from .ode import DEFAULT_ODE_TOL, FlowError, integrate
from .system import RiggedSystem, detect_height, secondary_generators

Provenance = Union[int, tuple]  # generator index, or (left, right) of a bracket


class StratificationError(RuntimeError):
    pass


class PreconditionError(ValueError):
    pass


def rank_at(gens: Sequence[VectorField], p, rank_tol: float = DEFAULT_RANK_TOL) -> int:
    if not gens:
        return 0
    return numeric_rank(eval_fields(gens, p), rank_tol)


# -- closure -------------------------------------------------------------------


@dataclass(frozen=True)
class ClosureEntry:
    field: VectorField
    depth: int
    provenance: Provenance


@dataclass(frozen=True)
class ClosureLadder:
    entries: tuple[ClosureEntry, ...]
    partial: bool
    rank_tol: float

    def fields(self, max_depth: Optional[int] = None) -> list[VectorField]:
        return [e.field for e in self.entries if max_depth is None or e.depth <= max_depth]

    @property
    def depth(self) -> int:
        return max(e.depth for e in self.entries)

    def rank_profile(self, p) -> list[int]:
        """Rank at p using entries of depth <= r, for r = 1..depth."""
        M = eval_fields(self.fields(), p)
        depths = np.array([e.depth for e in self.entries])
        return [numeric_rank(M[:, depths <= r], self.rank_tol) for r in range(1, self.depth + 1)]

    def rank_and_mu(self, p) -> tuple[int, int]:
        """Closure rank at p and the least depth attaining it (an upper bound on the true depth)."""
        prof = self.rank_profile(p)
        r = prof[-1]
        return r, 1 + prof.index(r)

    def q_rank(self, p) -> int:
        table = self.entries[0].field.table
        M = eval_fields(self.fields(), p)[table.q_slice, :]
        return 0 if not np.any(M) else numeric_rank(M, self.rank_tol)


def provenance_text(prov: Provenance) -> str:
    if isinstance(prov, int):
        return f"G{prov + 1}"
    return f"[{provenance_text(prov[0])}, {provenance_text(prov[1])}]"


def lie_closure(
    gens: Sequence[VectorField],
    max_depth: int = 6,
    samples: Sequence = (),
    rank_tol: float = DEFAULT_RANK_TOL,
    frontier_cap: int = 64,
) -> ClosureLadder:
    """Breadth-first bracket closure with greedy admission.

    Depth-r brackets are formed from a depth-1 generator and a depth-(r-1)
    bracket; one is admitted as an entry when it raises the numeric rank at one
    or more sample points.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be at least 1")
    gens = list(gens)
    if not gens:
        raise ValueError("need at least one generator")
    pts = [np.asarray(p, dtype=float) for p in samples]
    if not pts:
        raise ValueError("need at least one sample point")
    N = gens[0].table.N
    entries = [ClosureEntry(g, 1, i) for i, g in enumerate(gens)]
    mats = [eval_fields(gens, p) for p in pts]
    ranks = [numeric_rank(M, rank_tol) for M in mats]

    def raises(v: VectorField, admit: bool) -> bool:
        hit = False
        for k, p in enumerate(pts):
            if ranks[k] == N:
                continue
            col = v(p).reshape(N, 1)
            M = np.hstack([mats[k], col])
            r = numeric_rank(M, rank_tol)
            if r > ranks[k]:
                if not admit:
                    return True
                hit = True
                mats[k], ranks[k] = M, r
        if hit:
            # keep all sample matrices aligned with the entry list
            for k, p in enumerate(pts):
                if mats[k].shape[1] < len(entries) + 1:
                    mats[k] = np.hstack([mats[k], v(p).reshape(N, 1)])
        return hit

    # The frontier is a basis of the real span of the depth-r brackets, tracked through
    # their stacked values on the samples and on generic probes near them; brackets that
    # raise no pointwise rank stay in it so that deeper brackets remain reachable.
    probe_rng = np.random.default_rng(0)
    probes = [pts[k % len(pts)] for k in range(24)]
    probes = [p + 0.1 * (1 + np.abs(p)) * probe_rng.standard_normal(p.size) for p in probes]
    probes = pts + probes
    basis = np.zeros((N * len(probes), 0))

    def independent(v: VectorField) -> bool:
        nonlocal basis
        col = np.concatenate([v(p) for p in probes])
        norm = np.linalg.norm(col)
        if norm == 0.0:
            return False
        r = col - basis @ (basis.T @ col)
        if np.linalg.norm(r) <= rank_tol * norm:
            return False
        basis = np.hstack([basis, (r / np.linalg.norm(r)).reshape(-1, 1)])
        return True

    for g in gens:
        independent(g)
    frontier = [(g, i) for i, g in enumerate(gens)]
    partial = False
    for depth in range(2, max_depth + 2):
        if all(r == N for r in ranks) or not frontier:
            break
        admit = depth <= max_depth
        fresh = []
        for i in range(len(gens)):
            for j, (F, prov) in enumerate(frontier):
                if depth == 2 and j <= i:
                    continue
                v = lie_bracket(gens[i], F)
                if v.is_zero():
                    continue
                if not admit:
                    if raises(v, False):
                        partial = True
                        break
                    continue
                if raises(v, True):
                    entries.append(ClosureEntry(v, depth, (i, prov)))
                if len(fresh) < frontier_cap and independent(v):
                    fresh.append((v, (i, prov)))
            if partial:
                break
        frontier = fresh
    return ClosureLadder(tuple(entries), partial, rank_tol)


# -- strata --------------------------------------------------------------------


@dataclass(frozen=True)
class PointStratum:
    point: tuple[float, ...]
    rank: int  # closure rank
    mu: int  # least admitted depth reaching that rank
    q_rank: int
    d2_rank: int  # rank of the generators alone


@dataclass(frozen=True)
class Stratum:
    rank: int
    members: tuple[int, ...]
    mu: int


@dataclass(frozen=True)
class StratumReport:
    points: tuple[PointStratum, ...]
    strata: tuple[Stratum, ...]  # by closure rank, decreasing
    generator_strata: tuple[Stratum, ...]  # same partition using the generators only

    def stratum_of(self, index: int) -> int:
        for k, s in enumerate(self.strata):
            if index in s.members:
                return k
        raise IndexError(index)


def _partition(values: Sequence[int], mus: Sequence[int]) -> tuple[Stratum, ...]:
    out = []
    for r in sorted(set(values), reverse=True):
        members = tuple(i for i, v in enumerate(values) if v == r)
        out.append(Stratum(r, members, max(mus[i] for i in members)))
    return tuple(out)


def stratify(closure: ClosureLadder, samples: Sequence, rank_tol: Optional[float] = None) -> StratumReport:
    if closure.partial:
        raise StratificationError("closure did not stabilize by its depth cap; strata are undefined")
    tol = closure.rank_tol if rank_tol is None else rank_tol
    gens = closure.fields(1)
    rows = []
    for p in samples:
        r, mu = closure.rank_and_mu(p)
        rows.append(PointStratum(tuple(float(x) for x in p), r, mu, closure.q_rank(p), rank_at(gens, p, tol)))
    closure_view = _partition([s.rank for s in rows], [s.mu for s in rows])
    gen_view = _partition([s.d2_rank for s in rows], [1] * len(rows))
    return StratumReport(tuple(rows), closure_view, gen_view)


def involutivity_check(
    gens: Sequence[VectorField], samples: Sequence, rank_tol: float = DEFAULT_RANK_TOL
) -> tuple[bool, float]:
    """Every pairwise bracket lies in the span of ``gens`` at every sample point."""
    gens = list(gens)
    brackets = [lie_bracket(X, Y) for i, X in enumerate(gens) for Y in gens[i + 1 :]]
    brackets = [b for b in brackets if not b.is_zero()]
    worst = 0.0
    for p in samples:
        G = eval_fields(gens, p)
        for b in brackets:
            worst = max(worst, span_residual(b(p), G, rank_tol))
    return worst <= rank_tol, worst


# -- goodness ------------------------------------------------------------------


@dataclass(frozen=True)
class GoodnessConfig:
    rank_tol: float = DEFAULT_RANK_TOL
    ode_tol: float = DEFAULT_ODE_TOL
    cloud_size: int = 64
    cloud_radius: float = 1e-2
    leaf_points: int = 12
    seed: int = 0
    max_depth: int = 6
    search_budget: int = 10_000


@dataclass(frozen=True)
class Verdict:
    kind: str  # hyper_accessible_at | good_first_kind | good_second_kind | inconclusive | negative
    point: tuple[float, ...]
    evidence: dict[str, Any] = field(default_factory=dict, compare=False)


KINDS = ("hyper_accessible_at", "good_first_kind", "good_second_kind", "inconclusive", "negative")


@dataclass
class Analysis:
    """A rigged system prepared for point-wise verdicts: height, ladder and D^II generators."""

    rigged: RiggedSystem
    nu: int
    ladder: AdaptedLadder
    config: GoodnessConfig = field(default_factory=GoodnessConfig)
    # jobs of the form (generators, point) -> verdict are cached per instance
    _first_kind: dict = field(default_factory=dict, repr=False)

    @property
    def d2(self) -> list[VectorField]:
        return secondary_generators(self.rigged, self.nu)

    def cloud(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return perturbed_points(p, self.rigged.box, self.config.cloud_size, self.config.cloud_radius, point_rng(self.config.seed, p))


def point_rng(seed: int, p, salt: int = 0) -> np.random.Generator:
    """Generator seeded by the config seed and the bytes of ``p``."""
    words = np.frombuffer(np.ascontiguousarray(p, dtype=float).tobytes(), dtype=np.uint32)
    return np.random.default_rng(np.random.SeedSequence([seed, salt, *map(int, words)]))


def prepare(rigged: RiggedSystem, config: Optional[GoodnessConfig] = None, base_point=None) -> Analysis:
    config = config or GoodnessConfig()
    rng = np.random.default_rng(config.seed)
    samples = rigged.box.uniform(rng, 20)
    pts = list(samples) if base_point is None else [np.asarray(base_point, float), *samples]
    nu = detect_height(rigged, pts, config.rank_tol).nu
    if base_point is None:
        from .ladder import choose_base_point

        base_point = choose_base_point(rigged, nu, rng, rank_tol=config.rank_tol)
    ladder = t_adapted_generators(rigged, base_point, config.rank_tol, nu=nu, rng=rng)
    return Analysis(rigged, nu, ladder, config)


def _leaf_points(closure: ClosureLadder, p: np.ndarray, analysis: Analysis, count: int) -> list[np.ndarray]:
    """Endpoints of short flows from p along random combinations of closure fields."""
    cfg = analysis.config
    rng = point_rng(cfg.seed, p, salt=1)
    fields = closure.fields()
    size = cfg.cloud_radius * float(np.mean(analysis.rigged.box.scale))
    out = []
    for _ in range(count):
        coeffs = rng.standard_normal(len(fields)) * size
        X = linear_combination(list(coeffs), fields)
        if X.is_zero():
            continue
        try:
            out.append(integrate(X, p, 1.0, cfg.ode_tol))
        except (FlowError, ArithmeticError, ValueError):
            continue
    return out


def _first_kind(analysis: Analysis, gens: Sequence[VectorField], p: np.ndarray, label: str) -> Verdict:
    key = (tuple(gens), tuple(p))
    if key in analysis._first_kind:
        return analysis._first_kind[key]
    cfg = analysis.config
    cloud = list(analysis.cloud(p))
    closure = lie_closure(gens, cfg.max_depth, [p, *cloud], cfg.rank_tol)
    if closure.partial:
        raise StratificationError(f"closure of {label} did not stabilize by depth {cfg.max_depth}")
    r_p, mu_p = closure.rank_and_mu(p)
    in_stratum = [x for x in cloud if closure.rank_and_mu(x)[0] == r_p]
    leaves = _leaf_points(closure, p, analysis, cfg.leaf_points)
    leaves = [x for x in leaves if closure.rank_and_mu(x)[0] == r_p]
    pts = [p, *in_stratum, *leaves]
    ranks = sorted({rank_at(gens, x, cfg.rank_tol) for x in pts})
    invol, residual = involutivity_check(gens, pts, cfg.rank_tol)
    regular = len(ranks) == 1
    evidence = {
        "distribution": label,
        "closure_rank": r_p,
        "mu": mu_p,
        "generator_ranks": ranks,
        "cloud_points": len(cloud),
        "stratum_points": len(in_stratum),
        "leaf_points": len(leaves),
        "involutive": invol,
        "involutivity_residual": residual,
        "regular": regular,
    }
    if regular and invol:
        v = Verdict("good_first_kind", tuple(map(float, p)), evidence)
    else:
        reason = "rank not constant on the stratum" if not regular else "not involutive on the stratum"
        v = Verdict("inconclusive", tuple(map(float, p)), {**evidence, "reason": reason})
    analysis._first_kind[key] = v
    return v


def first_kind_good(analysis: Analysis, p) -> Verdict:
    """good_first_kind when D^II is regular and involutive on p's stratum near p."""
    return _first_kind(analysis, analysis.d2, np.asarray(p, dtype=float), "D^II")


def sub_distribution(analysis: Analysis, W: VectorField, samples: Sequence) -> list[VectorField]:
    """ad_T^k W for k up to the height where the rank stabilizes at ``samples``."""
    T = analysis.rigged.T
    cap = 2 * analysis.rigged.table.N
    tol = analysis.config.rank_tol
    for k in range(cap + 1):
        lad = ad_ladder(T, W, k + 1)
        if all(rank_at(lad[: k + 1], x, tol) == rank_at(lad, x, tol) for x in samples):
            return lad[: k + 1]
    return ad_ladder(T, W, cap)


def second_kind_good(analysis: Analysis, p, search_budget: Optional[int] = None) -> Verdict:
    """Bounded lex-order search for a depth-2 witness tuple of full closure rank."""
    cfg = analysis.config
    budget = cfg.search_budget if search_budget is None else search_budget
    p = np.asarray(p, dtype=float)
    gens = analysis.d2
    cloud = list(analysis.cloud(p))
    closure = lie_closure(gens, cfg.max_depth, [p, *cloud], cfg.rank_tol)
    if closure.partial:
        raise StratificationError(f"closure of D^II did not stabilize by depth {cfg.max_depth}")
    r_p, mu_p = closure.rank_and_mu(p)
    in_stratum = [x for x in cloud if closure.rank_and_mu(x)[0] == r_p]
    mu = max([mu_p, *(closure.rank_and_mu(x)[1] for x in in_stratum)])
    if mu != 2:
        raise PreconditionError(f"stratum depth is {mu}; the second-kind criterion needs depth 2")

    ladder = analysis.ladder
    triples = ladder.triples()
    W = [ladder.field(tr) for tr in triples]
    n_direct = rank_at(gens, p, cfg.rank_tol)
    n_pairs = r_p - n_direct
    check_pts = [p, *in_stratum]
    pairs = [(i, j) for i in range(len(W)) for j in range(i + 1, len(W))]
    bracket = {}
    examined = 0
    sub_cache: dict[tuple[int, int], Verdict] = {}
    rejected: dict[str, int] = {"rank_at_p": 0, "rank_on_cloud": 0, "sub_distribution": 0}

    def sub_verdict(idx: int) -> Verdict:
        _, a, j = triples[idx]
        if (a, j) not in sub_cache:
            base = ladder.row(a, j).fields[0]
            sub = sub_distribution(analysis, base, check_pts)
            sub_cache[(a, j)] = _first_kind(analysis, sub, p, f"W_0({a}){j}")
        return sub_cache[(a, j)]

    for direct in itertools.combinations(range(len(W)), n_direct):
        if rank_at([W[i] for i in direct], p, cfg.rank_tol) != n_direct:
            examined += 1
            rejected["rank_at_p"] += 1
            if examined >= budget:
                break
            continue
        for chosen in itertools.combinations(pairs, n_pairs):
            examined += 1
            for pr in chosen:
                if pr not in bracket:
                    bracket[pr] = lie_bracket(W[pr[0]], W[pr[1]])
            tup = [W[i] for i in direct] + [bracket[pr] for pr in chosen]
            if rank_at(tup, p, cfg.rank_tol) != r_p:
                rejected["rank_at_p"] += 1
            elif any(rank_at(tup, x, cfg.rank_tol) != r_p for x in in_stratum):
                rejected["rank_on_cloud"] += 1
            else:
                orient = []
                for b, b2 in chosen:
                    if sub_verdict(b).kind == "good_first_kind":
                        orient.append((b, b2))
                    elif sub_verdict(b2).kind == "good_first_kind":
                        orient.append((b2, b))
                    else:
                        break
                if len(orient) == len(chosen):
                    evidence = {
                        "closure_rank": r_p,
                        "mu": mu,
                        "direct": [list(triples[i]) for i in direct],
                        "pairs": [[list(triples[b]), list(triples[b2])] for b, b2 in orient],
                        "witness_rank": rank_at(tup, p, cfg.rank_tol),
                        "cloud_points": len(in_stratum),
                        "sub_distributions": {
                            f"{a},{j}": v.kind for (a, j), v in sorted(sub_cache.items())
                        },
                        "examined": examined,
                    }
                    return Verdict("good_second_kind", tuple(map(float, p)), evidence)
                rejected["sub_distribution"] += 1
            if examined >= budget:
                break
        if examined >= budget:
            break
    return Verdict(
        "inconclusive",
        tuple(map(float, p)),
        {
            "closure_rank": r_p,
            "mu": mu,
            "examined": examined,
            "budget": budget,
            "rejected": rejected,
            "reason": "no witness tuple found",
        },
    )


def witness_fields(analysis: Analysis, evidence: dict) -> list[VectorField]:
    """Rebuild the witness tuple recorded by :func:`second_kind_good`."""
    lad = analysis.ladder
    direct = [lad.field(tuple(tr)) for tr in evidence["direct"]]
    brackets = [lie_bracket(lad.field(tuple(a)), lad.field(tuple(b))) for a, b in evidence["pairs"]]
    return direct + brackets


def goodness(analysis: Analysis, p) -> Verdict:
    """First-kind criterion, then the second-kind criterion where it applies."""
    v1 = first_kind_good(analysis, p)
    if v1.kind == "good_first_kind":
        return v1
    try:
        v2 = second_kind_good(analysis, p)
    except PreconditionError as exc:
        return Verdict("inconclusive", v1.point, {**v1.evidence, "second_kind": str(exc)})
    if v2.kind == "good_second_kind":
        return v2
    return Verdict("inconclusive", v1.point, {**v1.evidence, "second_kind": v2.evidence})


def accessibility_verdict(
    analysis: Analysis,
    p,
    good: Optional[Verdict] = None,
    assume_good: bool = False,
    stable: bool = False,
) -> Verdict:
    """hyper_accessible_at iff the closure's q-projection has rank n at a good point."""
    cfg = analysis.config
    p = np.asarray(p, dtype=float)
    is_good = assume_good or (good is not None and good.kind in ("good_first_kind", "good_second_kind"))
    closure = lie_closure(analysis.d2, cfg.max_depth, [p, *analysis.cloud(p)], cfg.rank_tol)
    n = analysis.rigged.table.n
    qr = closure.q_rank(p)
    evidence = {
        "q_rank": qr,
        "n": n,
        "closure_rank": closure.rank_and_mu(p)[0],
        "goodness": "assumed" if assume_good else (good.kind if good else "unknown"),
        "stable": stable,
    }
    if qr < n:
        return Verdict("negative", tuple(map(float, p)), {**evidence, "stlc": False})
    if not is_good:
        return Verdict("inconclusive", tuple(map(float, p)), {**evidence, "reason": "point not certified good", "stlc": False})
    return Verdict("hyper_accessible_at", tuple(map(float, p)), {**evidence, "stlc": bool(stable)})
