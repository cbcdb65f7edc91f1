"""TOML system spec files and analysis configuration.

A spec file has the sections ``[system]``, ``[domain]``, ``[points.<name>]``
and ``[config]``; expressions are quoted strings in the expression grammar::

    [system]
    name = "double integrator"
    n = 2
    m = 1
    f = ["q2", "w1"]
    linear = true            # or a [system.linear] table with A and B

    [domain]
    t = [0.0, 1.0]
    q = [[-1.0, 1.0], [-1.0, 1.0]]
    w = [[-1.0, 1.0]]

    [points.origin]
    t = 0.0
    q = [0.0, 0.0]
    w = [0.0]
    stable = true
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import re
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from .expr import ExprError, SymbolTable, analyticity_warnings, parse_expr
from .system import LinearPart, SpecError, SystemSpec, extract_linear_part

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class SpecFileError(SpecError):
    def __init__(self, message: str, line: Optional[int] = None, path: str = ""):
        self.line = line
        self.path = path
        where = f"{path}:{line}: " if line is not None else (f"{path}: " if path else "")
        super().__init__(f"{where}{message}")


@dataclass(frozen=True)
class PointOfInterest:
    name: str
    coords: tuple[float, ...]  # (t, q..., w...)
    stable: bool = False


@dataclass(frozen=True)
class AnalysisConfig:
    seed: int = 0
    rank_tol: float = 1e-8
    ode_tol: float = 1e-10
    samples: int = 20
    verdict_samples: int = 4
    cloud_size: int = 64
    cloud_radius: float = 1e-2
    max_depth: int = 6
    search_budget: int = 10_000
    omegas: tuple[float, ...] = (1e-1, 3e-2, 1e-2)
    rho: float = 0.5
    mutate_bracket: bool = False

    def __post_init__(self) -> None:
        for name in ("rank_tol", "ode_tol", "cloud_radius", "rho"):
            if not getattr(self, name) > 0:
                raise SpecError(f"config.{name} must be positive")
        if not 0 < self.rho < 1:
            raise SpecError("config.rho must lie in (0, 1)")
        if any(not o > 0 for o in self.omegas):
            raise SpecError("config.omegas must be positive")
        for name in ("samples", "cloud_size", "max_depth", "search_budget"):
            if getattr(self, name) < 1:
                raise SpecError(f"config.{name} must be at least 1")
        if self.verdict_samples < 0:
            raise SpecError("config.verdict_samples must be nonnegative")

    def digest(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class SpecFile:
    spec: SystemSpec
    points: tuple[PointOfInterest, ...]
    config: AnalysisConfig
    path: str = ""
    source_hash: str = field(default="", compare=False)


def _line_of(text: str, key: str, section: Optional[str] = None) -> Optional[int]:
    """1-based line of ``key =`` (inside ``[section]`` when given)."""
    lines = text.splitlines()
    start = 0
    if section is not None:
        pat = re.compile(r"^\s*\[\s*" + re.escape(section) + r"\s*\]")
        for i, ln in enumerate(lines):
            if pat.match(ln):
                start = i
                break
        else:
            return None
    kpat = re.compile(r"^\s*" + re.escape(key) + r"\s*=")
    for i in range(start, len(lines)):
        if kpat.match(lines[i]):
            return i + 1
    return start + 1 if section is not None else None


def _interval(value: Any, what: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in value)
    except (TypeError, ValueError):
        raise ValueError(f"{what} must be a pair [lo, hi]") from None
    if not lo <= hi:
        raise ValueError(f"{what} is empty: [{lo}, {hi}]")
    return lo, hi


def _config_from(table: dict, base: AnalysisConfig, text: str, path: str) -> AnalysisConfig:
    known = {f.name: f for f in dataclasses.fields(AnalysisConfig)}
    updates = {}
    for key, value in table.items():
        if key not in known:
            raise SpecFileError(f"unknown config key {key!r}", _line_of(text, key, "config"), path)
        if key == "omegas":
            value = tuple(float(v) for v in value)
        updates[key] = value
    try:
        return dataclasses.replace(base, **updates)
    except (SpecError, TypeError) as exc:
        raise SpecFileError(str(exc), _line_of(text, next(iter(updates), "config"), "config"), path) from None


def parse_spec_text(text: str, path: str = "<spec>", config: Optional[AnalysisConfig] = None) -> SpecFile:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise SpecFileError(f"syntax error: {exc}", int(m.group(1)) if m else None, path) from None

    sysd = data.get("system")
    if not isinstance(sysd, dict):
        raise SpecFileError("missing [system] section", None, path)
    for key in ("n", "m", "f"):
        if key not in sysd:
            raise SpecFileError(f"[system] needs {key!r}", _line_of(text, "system", None), path)
    n, m = sysd["n"], sysd["m"]
    if not (isinstance(n, int) and isinstance(m, int) and n >= 1 and m >= 1):
        raise SpecFileError("n and m must be positive integers", _line_of(text, "n", "system"), path)
    table = SymbolTable(n, m)
    f_src = sysd["f"]
    if not isinstance(f_src, list) or len(f_src) != n:
        raise SpecFileError(f"f must be a list of {n} expression strings", _line_of(text, "f", "system"), path)
    exprs = []
    for i, src in enumerate(f_src):
        try:
            exprs.append(parse_expr(str(src), table))
        except ExprError as exc:
            raise SpecFileError(f"f{i + 1}: {exc}", _line_of(text, "f", "system"), path) from None

    dom = data.get("domain", {})
    try:
        t_dom = _interval(dom.get("t", [0.0, 1.0]), "domain.t")
        q_dom = tuple(_interval(v, f"domain.q[{k}]") for k, v in enumerate(dom.get("q", [[-1.0, 1.0]] * n)))
        w_dom = tuple(_interval(v, f"domain.w[{k}]") for k, v in enumerate(dom.get("w", [[-1.0, 1.0]] * m)))
    except ValueError as exc:
        raise SpecFileError(str(exc), _line_of(text, "domain", None) or _line_of(text, "t", "domain"), path) from None
    if len(q_dom) != n or len(w_dom) != m:
        raise SpecFileError("domain boxes do not match n and m", _line_of(text, "q", "domain"), path)

    lin = None
    lin_src = sysd.get("linear", False)
    try:
        if lin_src is True:
            lin = extract_linear_part(table, exprs)
        elif isinstance(lin_src, dict):
            A = np.asarray(lin_src["A"], dtype=float)
            B = np.asarray(lin_src["B"], dtype=float)
            lin = LinearPart(tuple(map(tuple, A)), tuple(map(tuple, B)))
    except (SpecError, KeyError, ValueError) as exc:
        raise SpecFileError(f"linear part: {exc}", _line_of(text, "linear", "system") or _line_of(text, "A", "system.linear"), path) from None

    try:
        spec = SystemSpec(
            table,
            tuple(exprs),
            q_dom,
            w_dom,
            t_dom,
            lin,
            str(sysd.get("name", "")),
            tuple(note for e in exprs for note in analyticity_warnings(e)),
        )
    except SpecError as exc:
        line = _line_of(text, "A", "system.linear") if "row" in str(exc) else None
        raise SpecFileError(str(exc), line, path) from None

    points = []
    for name, pt in (data.get("points") or {}).items():
        sec = f"points.{name}"
        try:
            q = [float(v) for v in pt.get("q", [0.0] * n)]
            w = [float(v) for v in pt.get("w", [0.0] * m)]
            t = float(pt.get("t", t_dom[0]))
        except (TypeError, ValueError, AttributeError):
            raise SpecFileError(f"point {name!r} has non-numeric coordinates", _line_of(text, "q", sec), path) from None
        if len(q) != n or len(w) != m:
            raise SpecFileError(f"point {name!r} needs {n} q and {m} w coordinates", _line_of(text, "q", sec), path)
        points.append(PointOfInterest(str(name), (t, *q, *w), bool(pt.get("stable", False))))

    cfg = _config_from(data.get("config", {}), config or AnalysisConfig(), text, path)
    digest = hashlib.sha256(text.encode()).hexdigest()[:16]
    return SpecFile(spec, tuple(points), cfg, path, digest)


def load_spec(path: Union[str, Path], config: Optional[AnalysisConfig] = None) -> SpecFile:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise SpecFileError(f"cannot read spec file: {exc.strerror}", None, str(p)) from None
    return parse_spec_text(text, str(p), config)


def load_config(path: Union[str, Path], base: Optional[AnalysisConfig] = None) -> AnalysisConfig:
    """A standalone TOML file whose ``[config]`` table (or top level) overrides ``base``."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
        data = tomllib.loads(text)
    except OSError as exc:
        raise SpecFileError(f"cannot read config file: {exc.strerror}", None, str(p)) from None
    except tomllib.TOMLDecodeError as exc:
        raise SpecFileError(f"syntax error: {exc}", None, str(p)) from None
    return _config_from(data.get("config", data), base or AnalysisConfig(), text, str(p))


FIXTURES = ("double_integrator", "quadratic_control", "brockett", "zero_dynamics")


def fixture_path(name: str) -> Path:
    ref = resources.files("rigged") / "fixtures" / f"{name}.toml"
    return Path(str(ref))


def load_fixture(name: str, config: Optional[AnalysisConfig] = None) -> SpecFile:
    if name not in FIXTURES:
        raise KeyError(name)
    return load_spec(fixture_path(name), config)
