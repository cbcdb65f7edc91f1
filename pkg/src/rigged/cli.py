"""Command line entry point: ``rigged analyze|kalman|leaflet|verify``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .expr import ExprError
from .flows import leaflet_csv, leaflet_samples, surrogate_family
from .report import STAGE_ERRORS, SUITES, goodness_config, kalman_block, plain, render_report, run_analyze, run_verify
from .specfile import AnalysisConfig, SpecFileError, load_config, load_spec
from .strata import prepare
from .system import SpecError, build_rigged

EXIT_OK, EXIT_INPUT, EXIT_STAGE = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rigged", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def fmt(p: argparse.ArgumentParser) -> None:
        g = p.add_mutually_exclusive_group()
        g.add_argument("--json", dest="fmt", action="store_const", const="json")
        g.add_argument("--text", dest="fmt", action="store_const", const="text")
        p.set_defaults(fmt="json")
        p.add_argument("--out", type=Path, help="write the report here instead of stdout")

    a = sub.add_parser("analyze", help="full pipeline with per-point verdicts")
    a.add_argument("spec", type=Path)
    a.add_argument("--config", type=Path)
    fmt(a)

    k = sub.add_parser("kalman", help="Kalman block of a linear system")
    k.add_argument("spec", type=Path)
    fmt(k)

    lf = sub.add_parser("leaflet", help="sample a surrogate leaflet to CSV")
    lf.add_argument("spec", type=Path)
    lf.add_argument("--point", required=True, help="comma-separated t,q...,w...")
    lf.add_argument("--omega", type=float, required=True)
    lf.add_argument("--rho", type=float, required=True)
    lf.add_argument("--out", type=Path, required=True)
    lf.add_argument("--count", type=int, default=32)
    lf.add_argument("--radius", type=float, default=1e-3)
    lf.add_argument("--config", type=Path)

    v = sub.add_parser("verify", help="property suites on the bundled fixtures")
    v.add_argument("--suite", choices=("all", *SUITES), default="all")
    v.add_argument("--config", type=Path)
    v.add_argument("--ode-tol", type=float)
    fmt(v)
    return ap


def _emit(data: bytes, out: Optional[Path]) -> None:
    if out is None:
        sys.stdout.write(data.decode())
    else:
        out.write_bytes(data)


def _load(spec: Path, config: Optional[Path]):
    sf = load_spec(spec)
    cfg = sf.config if config is None else load_config(config, sf.config)
    return sf, cfg


def _parse_point(text: str, N: int) -> np.ndarray:
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise SpecError(f"--point must be {N} comma-separated numbers") from None
    if len(vals) != N:
        raise SpecError(f"--point needs {N} coordinates (t, q, w), got {len(vals)}")
    return np.array(vals)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "analyze":
            sf, cfg = _load(args.spec, args.config)
            rep = run_analyze(sf, cfg)
            _emit(render_report(rep, args.fmt), args.out)
            return EXIT_STAGE if rep.get("errors") else EXIT_OK
        if args.command == "kalman":
            sf = load_spec(args.spec)
            kb = kalman_block(sf)
            if kb is None:
                raise SpecError("system has no linear part; set linear = true in [system]")
            rep = {"schema": "rigged.report/1", "kind": "kalman", "kalman": kb}
            _emit(render_report(plain(rep), args.fmt), args.out)
            return EXIT_OK
        if args.command == "leaflet":
            sf, cfg = _load(args.spec, args.config)
            rigged = build_rigged(sf.spec)
            y0 = _parse_point(args.point, rigged.table.N)
            analysis = prepare(rigged, goodness_config(cfg))
            fam = surrogate_family(rigged, analysis.ladder, args.omega, args.rho)
            rng = np.random.default_rng(cfg.seed)
            smp = leaflet_samples(fam, y0, args.count, args.radius, rng, rigged.box, cfg.ode_tol)
            args.out.write_text(leaflet_csv(smp, rigged.table.names))
            return EXIT_OK
        if args.command == "verify":
            cfg = AnalysisConfig() if args.config is None else load_config(args.config)
            if args.ode_tol is not None:
                import dataclasses

                cfg = dataclasses.replace(cfg, ode_tol=args.ode_tol)
            rep = run_verify(cfg, args.suite)
            _emit(render_report(rep, args.fmt), args.out)
            return EXIT_OK if rep["passed"] else EXIT_STAGE
    except (SpecFileError, SpecError, ExprError, ValueError) as exc:
        print(f"rigged: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except STAGE_ERRORS as exc:
        print(f"rigged: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
