"""Analysis and verification pipelines and their serialized reports."""

from __future__ import annotations

import json
import math
from typing import Any, Optional

import numpy as np

from . import __version__
from .expr import ExprError, to_text
from .fields import VectorField, lie_bracket, numeric_pushforward, pushforward_series
from .flows import (
    DepthOrderError,
    stepped_endpoint,
    stepped_via_surrogates,
    surrogate_endpoint,
    surrogate_family,
    surrogate_map_rank,
    vandermonde_check,
    verify_flow_identities,
)
from .ladder import LinearAlgebraFailure, RankDeficiencyError, adapted_span_defects
from .ode import FlowError
from .specfile import AnalysisConfig, SpecFile, load_fixture
from .strata import (
    GoodnessConfig,
    PreconditionError,
    StratificationError,
    accessibility_verdict,
    goodness,
    lie_closure,
    prepare,
    rank_at,
    stratify,
)
from .system import HeightUndetermined, build_rigged, kalman_data

SCHEMA = "rigged.report/1"
STAGE_ERRORS = (
    StratificationError,
    PreconditionError,
    FlowError,
    ExprError,
    RankDeficiencyError,
    LinearAlgebraFailure,
    HeightUndetermined,
    ArithmeticError,
)


def plain(value: Any) -> Any:
    """JSON-ready copy: numpy scalars and arrays, tuples and non-finite floats converted."""
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return plain(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        x = float(value)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return value


def empty_report(kind: str = "analyze") -> dict:
    return {"schema": SCHEMA, "tool": {"name": "rigged", "version": __version__}, "kind": kind}


def goodness_config(cfg: AnalysisConfig) -> GoodnessConfig:
    return GoodnessConfig(
        rank_tol=cfg.rank_tol,
        ode_tol=cfg.ode_tol,
        cloud_size=cfg.cloud_size,
        cloud_radius=cfg.cloud_radius,
        seed=cfg.seed,
        max_depth=cfg.max_depth,
        search_budget=cfg.search_budget,
    )


def _system_echo(sf: SpecFile) -> dict:
    spec = sf.spec
    return {
        "name": spec.name,
        "n": spec.table.n,
        "m": spec.table.m,
        "f": [to_text(e) for e in spec.f],
        "linear": spec.linear_part is not None,
        "warnings": list(spec.warnings),
        "source_hash": sf.source_hash,
    }


def kalman_block(sf: SpecFile) -> Optional[dict]:
    if sf.spec.linear_part is None:
        return None
    k = kalman_data(sf.spec, sf.config.rank_tol)
    return {"matrix": k.matrix, "n_seq": list(k.n_seq), "rank": k.rank, "controllable": k.controllable}


def run_analyze(sf: SpecFile, config: Optional[AnalysisConfig] = None) -> dict:
    """Rigged system, height, adapted ladder, closure strata, goodness and accessibility per point."""
    cfg = config or sf.config
    rep = empty_report("analyze")
    rep["config_hash"] = cfg.digest()
    rep["system"] = _system_echo(sf)
    rep["errors"] = []
    rigged = build_rigged(sf.spec)
    box = rigged.box
    rng = np.random.default_rng(cfg.seed)
    samples = box.uniform(rng, cfg.samples)
    try:
        analysis = prepare(rigged, goodness_config(cfg))
    except STAGE_ERRORS as exc:
        rep["errors"].append({"stage": "ladder", "message": str(exc)})
        return plain(rep)
    rep["nu"] = analysis.nu
    lad = analysis.ladder
    rep["ladder"] = {
        "R": list(lad.R),
        "lengthened": lad.lengthened,
        "base_point": list(lad.base_point),
        "filtration": list(lad.filtration),
        "rows": [{"height": r.height, "coefficients": list(r.coefficients)} for r in lad.rows],
        "fields": [
            {"triple": list(tr), "components": [to_text(c) for c in lad.field(tr).components]}
            for tr in lad.triples()
        ],
    }
    d2 = analysis.d2
    rep["checks"] = {
        "time_component_zero": all(X.components[0].is_zero() for X in d2 + lad.fields()),
        "adapted_span_max_defect": max(
            max(d1, d2_) for _, _, d1, d2_ in adapted_span_defects(lad, rigged, analysis.nu, samples)
        ),
    }

    points = [(p.name, np.array(p.coords), p.stable) for p in sf.points]
    points += [(f"sample{k + 1}", x, False) for k, x in enumerate(samples[: cfg.verdict_samples])]
    strata_pts = [x for _, x, _ in points] + list(samples[cfg.verdict_samples :])
    try:
        closure = lie_closure(d2, cfg.max_depth, strata_pts, cfg.rank_tol)
        st = stratify(closure, strata_pts, cfg.rank_tol)
        rep["strata"] = {
            "mu_is_upper_bound": True,
            "sample_count": len(strata_pts),
            "closure": [{"rank": s.rank, "mu": s.mu, "count": len(s.members)} for s in st.strata],
            "generators": [{"rank": s.rank, "count": len(s.members)} for s in st.generator_strata],
            "closure_depth": closure.depth,
        }
    except STAGE_ERRORS as exc:
        rep["strata"] = None
        rep["errors"].append({"stage": "strata", "message": str(exc)})

    verdicts = []
    for name, x, stable in points:
        entry: dict[str, Any] = {"name": name, "point": list(x), "stable": stable}
        try:
            entry["d2_rank"] = rank_at(d2, x, cfg.rank_tol)
            g = goodness(analysis, x)
            acc = accessibility_verdict(analysis, x, good=g, stable=stable)
            entry["goodness"] = {"kind": g.kind, "evidence": g.evidence}
            entry["accessibility"] = {"kind": acc.kind, "evidence": acc.evidence}
        except STAGE_ERRORS as exc:
            entry["error"] = f"{type(exc).__name__}: {exc}"
            rep["errors"].append({"stage": "verdict", "point": name, "message": str(exc)})
        verdicts.append(entry)
    rep["verdicts"] = verdicts
    kb = kalman_block(sf)
    if kb is not None:
        rep["kalman"] = kb
    return plain(rep)


# -- verification suites -------------------------------------------------------

SUITES = ("flows", "identities", "vandermonde", "pushforward")
VERIFY_FIXTURES = ("double_integrator", "quadratic_control", "brockett")


def _fixture_system(name: str, cfg: AnalysisConfig):
    sf = load_fixture(name, cfg)
    return sf, build_rigged(sf.spec)


def endpoint_trials(rigged, trials: int, rng: np.random.Generator, tol: float) -> float:
    """Largest max-norm gap between stepped and drift-then-surrogate endpoints."""
    m = rigged.table.m
    worst = 0.0
    for _ in range(trials):
        k = int(rng.integers(0, 4))
        odd = rng.uniform(0.05, 0.3, k + 1)
        ctr = [(rng.uniform(-1.0, 1.0, m), float(rng.uniform(0.05, 0.3))) for _ in range(k)]
        x0 = rigged.box.uniform(rng, 1)[0] * 0.3
        a = stepped_endpoint(rigged, x0, odd, ctr, tol=tol).point
        b = stepped_via_surrogates(rigged, x0, odd, ctr, tol=tol)
        worst = max(worst, float(np.max(np.abs(a - b))))
    return worst


def suite_flows(cfg: AnalysisConfig) -> list[dict]:
    out = []
    rng = np.random.default_rng(cfg.seed)
    for name in VERIFY_FIXTURES:
        sf, rigged = _fixture_system(name, cfg)
        gap = endpoint_trials(rigged, 25, rng, cfg.ode_tol)
        limit = 100 * cfg.ode_tol
        out.append({"property": "endpoint_equivalence", "system": name, "residual": gap, "limit": limit, "passed": gap <= limit})
        analysis = prepare(rigged, goodness_config(cfg))
        center = np.array(analysis.ladder.base_point)
        fam = surrogate_family(rigged, analysis.ladder, 1e-2, 0.5)
        mr = surrogate_map_rank(center, fam, rank_tol=cfg.rank_tol, box=rigged.box, tol=cfg.ode_tol)
        want = rank_at(analysis.d2, center, cfg.rank_tol)
        out.append({"property": "surrogate_map_rank", "system": name, "rank": mr.rank, "q_rank": mr.q_rank, "expected": want, "passed": mr.rank == want})
    sf, rigged = _fixture_system("double_integrator", cfg)
    try:
        surrogate_endpoint(rigged, np.zeros(4), [([1.0], 0.1, 0.1), ([1.0], 0.2, 0.1)])
        rejected = False
    except DepthOrderError:
        rejected = True
    out.append({"property": "depth_order_rejected", "system": "double_integrator", "passed": rejected})
    return out


def brockett_identity_fields(rigged):
    """Fields on the Brockett extended space whose compositions have nonzero higher derivatives."""
    F = lambda *c: VectorField.from_strings(rigged.table, list(c))  # noqa: E731
    Yh = F("0", "1", "0", "-q2", "0", "0")
    Zh = F("0", "0", "1", "q1", "0", "0")
    W = F("0", "0", "0", "0", "w2", "q1")
    Xs = [rigged.T, W, Yh]
    return Xs, rigged.T + Yh, Zh + rigged.DI[1], np.array([0.0, 0.2, -0.1, 0.3, 0.4, -0.2])


def broken_bracket(X, Y):
    """Negative control: the bracket with its sign flipped."""
    return lie_bracket(Y, X)


def suite_identities(cfg: AnalysisConfig) -> list[dict]:
    sf, rigged = _fixture_system("brockett", cfg)
    Xs, Y, Z, y = brockett_identity_fields(rigged)
    bracket = broken_bracket if cfg.mutate_bracket else lie_bracket
    rep = verify_flow_identities(Xs, Y, Z, y, bracket=bracket)
    out = []
    for r in rep.results:
        ok = r.final < 1e-5 and all(abs(o - 2.0) <= 0.3 for o in r.orders)
        out.append({"property": f"identity_{r.name}", "system": "brockett", "residuals": list(r.residuals), "orders": list(r.orders), "passed": ok})
    return out


def suite_vandermonde(cfg: AnalysisConfig) -> list[dict]:
    out = []
    cases = [("double_integrator", (2, 1), None), ("quadratic_control", (1, 1), [0.0, 0.0, 1.0])]
    for name, row, z in cases:
        sf, rigged = _fixture_system(name, cfg)
        analysis = prepare(rigged, goodness_config(cfg))
        z = np.array(analysis.ladder.base_point) if z is None else np.array(z)
        rep = vandermonde_check(rigged, analysis.ladder, row, z, cfg.omegas, cfg.rho, cfg.ode_tol)
        last = rep.steps[-1]
        ok = last.rel_error <= 0.05 and rep.min_order >= 1
        out.append(
            {
                "property": "vandermonde",
                "system": name,
                "row": list(row),
                "target": rep.target,
                "ratios": [s.ratio for s in rep.steps],
                "orders": list(rep.orders),
                "exact": rep.exact,
                "passed": ok,
            }
        )
    return out


def pushforward_gaps(rigged, pairs: int, rng: np.random.Generator, tol: float) -> list[tuple[float, float]]:
    """(gap, allowed) for series vs variational pushforward of each d/dw direction."""
    box = rigged.box
    out = []
    for _ in range(pairs):
        tau = float(rng.uniform(0.01, 0.3))
        p = box.uniform(rng, 1)[0] * 0.5
        for X in rigged.DI:
            ser = pushforward_series(rigged.T, X, tau, box=box, tol=1e-9, build_field=False)
            num = numeric_pushforward(rigged.T, X, tau, p, tol)
            gap = float(np.max(np.abs(ser(p) - num)))
            out.append((gap, max(1e-7, ser.remainder_bound)))
    return out


def suite_pushforward(cfg: AnalysisConfig) -> list[dict]:
    out = []
    rng = np.random.default_rng(cfg.seed)
    for name in VERIFY_FIXTURES:
        sf, rigged = _fixture_system(name, cfg)
        gaps = pushforward_gaps(rigged, 10, rng, cfg.ode_tol)
        worst = max(g for g, _ in gaps)
        out.append({"property": "pushforward_cross_check", "system": name, "residual": worst, "passed": all(g <= a for g, a in gaps)})
    return out


def run_verify(config: Optional[AnalysisConfig] = None, suite: str = "all") -> dict:
    cfg = config or AnalysisConfig()
    rep = empty_report("verify")
    rep["config_hash"] = cfg.digest()
    chosen = SUITES if suite == "all" else (suite,)
    if any(s not in SUITES for s in chosen):
        raise ValueError(f"unknown suite {suite!r}")
    runners = {
        "flows": suite_flows,
        "identities": suite_identities,
        "vandermonde": suite_vandermonde,
        "pushforward": suite_pushforward,
    }
    results = []
    for name in chosen:
        for row in runners[name](cfg):
            results.append({"suite": name, **row})
    rep["results"] = results
    rep["passed"] = all(r["passed"] for r in results)
    return plain(rep)


# -- rendering -----------------------------------------------------------------


def render_report(report: dict, fmt: str = "json") -> bytes:
    if fmt == "json":
        return (json.dumps(plain(report), sort_keys=True, indent=2) + "\n").encode()
    if fmt != "text":
        raise ValueError(f"unknown format {fmt!r}")
    lines = [f"{report.get('tool', {}).get('name', 'rigged')} {report.get('kind', '')} report ({report.get('schema', SCHEMA)})"]
    system = report.get("system")
    if system:
        lines.append(f"system: {system['name']} (n={system['n']}, m={system['m']})")
        lines.append("f: " + ", ".join(system["f"]))
    if "nu" in report:
        lines.append(f"nu: {report['nu']}  R: {tuple(report['ladder']['R'])}")
    strata = report.get("strata")
    if strata:
        lines.append(
            "strata (closure): "
            + "; ".join(f"rank {s['rank']} mu<={s['mu']} x{s['count']}" for s in strata["closure"])
        )
        lines.append("strata (D^II): " + "; ".join(f"rank {s['rank']} x{s['count']}" for s in strata["generators"]))
    if "kalman" in report:
        k = report["kalman"]
        lines.append(f"kalman: rank {k['rank']}, controllable {k['controllable']}, n_l {tuple(k['n_seq'])}")
    for v in report.get("verdicts", []):
        if "error" in v:
            lines.append(f"point {v['name']}: error: {v['error']}")
            continue
        acc = v["accessibility"]
        stlc = " stlc" if acc["evidence"].get("stlc") else ""
        lines.append(f"point {v['name']}: {v['goodness']['kind']} -> {acc['kind']}{stlc} (D^II rank {v['d2_rank']})")
    for r in report.get("results", []):
        lines.append(f"{'PASS' if r['passed'] else 'FAIL'} {r['suite']}/{r['property']} [{r['system']}]")
    for e in report.get("errors", []):
        lines.append(f"error ({e['stage']}): {e['message']}")
    return ("\n".join(lines) + "\n").encode()
