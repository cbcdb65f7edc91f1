"""Scalar expression kernel.

Expressions are immutable trees over the coordinates ``t, q1..qn, w1..wm`` of
the extended space.  The tree itself is a sympy expression wrapped in
:class:`Expr`; sympy supplies flattening, canonical argument order and
constant folding, and :func:`simplify` adds ring normalization (expansion) of
polynomial parts.  Parsing is done by a small recursive-descent parser so that
the accepted language is exactly the documented grammar.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence, Union

import sympy as sp

DEFAULT_SIZE_CAP = 10**6
FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "tanh")

_SP_FUNCS = {
    "sin": sp.sin,
    "cos": sp.cos,
    "exp": sp.exp,
    "log": sp.log,
    "sqrt": sp.sqrt,
    "tanh": sp.tanh,
}


class ExprError(Exception):
    """Base class for expression-kernel errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int, text: str = ""):
        self.offset = offset
        self.text = text
        super().__init__(f"{message} at byte offset {offset}")


class UnknownIdentifierError(ExprError):
    def __init__(self, name: str, offset: int):
        self.name = name
        self.offset = offset
        super().__init__(f"unknown identifier {name!r} at byte offset {offset}")


class DomainError(ExprError):
    """Evaluation outside the real-analytic domain of some node."""

    def __init__(self, message: str, subtree: "sp.Basic | None" = None):
        self.subtree = subtree
        detail = f" in subtree {to_text_sym(subtree)}" if subtree is not None else ""
        super().__init__(message + detail)


class TreeSizeError(ExprError):
    def __init__(self, size: int, cap: int):
        self.size = size
        self.cap = cap
        super().__init__(f"expression tree has {size} nodes, exceeding the cap of {cap}")


@dataclass(frozen=True)
class SymbolTable:
    """Coordinates of M = R x Q x K in the fixed order t, q1..qn, w1..wm."""

    n: int
    m: int

    def __post_init__(self) -> None:
        if self.n < 1 or self.m < 1:
            raise ValueError(f"need n >= 1 and m >= 1, got n={self.n}, m={self.m}")

    @property
    def N(self) -> int:
        return 1 + self.n + self.m

    @cached_property
    def names(self) -> tuple[str, ...]:
        return ("t",) + tuple(f"q{i}" for i in range(1, self.n + 1)) + tuple(
            f"w{a}" for a in range(1, self.m + 1)
        )

    @cached_property
    def symbols(self) -> tuple[sp.Symbol, ...]:
        return tuple(sp.Symbol(name) for name in self.names)

    @cached_property
    def _index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.names)}

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise UnknownIdentifierError(name, -1) from None

    def symbol(self, name: str) -> sp.Symbol:
        return self.symbols[self.index(name)]

    @property
    def q_slice(self) -> slice:
        return slice(1, 1 + self.n)

    @property
    def w_slice(self) -> slice:
        return slice(1 + self.n, self.N)


class Expr:
    """Immutable expression node bound to a :class:`SymbolTable`."""

    __slots__ = ("sym", "table")

    def __init__(self, sym: sp.Basic, table: SymbolTable):
        object.__setattr__(self, "sym", sp.sympify(sym))
        object.__setattr__(self, "table", table)

    def __setattr__(self, key, value):
        raise AttributeError("Expr is immutable")

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Expr) and self.table == other.table and self.sym == other.sym

    def __hash__(self) -> int:
        return hash((self.table, self.sym))

    def __repr__(self) -> str:
        return f"Expr({to_text(self)})"

    def __str__(self) -> str:
        return to_text(self)

    @property
    def kind(self) -> str:
        return _kind(self.sym)

    @property
    def children(self) -> tuple["Expr", ...]:
        s = self.sym
        if isinstance(s, sp.Pow):
            base, ex = s.args
            if ex == sp.Rational(1, 2):
                return (Expr(base, self.table),)
            return (Expr(base, self.table), Expr(ex, self.table))
        if s.is_Atom:
            return ()
        return tuple(Expr(a, self.table) for a in s.args)

    def is_zero(self) -> bool:
        return self.sym == 0

    def is_constant(self) -> bool:
        return not self.sym.free_symbols

    def variables(self) -> frozenset[str]:
        return frozenset(str(s) for s in self.sym.free_symbols)


def _kind(s: sp.Basic) -> str:
    if s.is_Number or s is sp.E:
        return "constant"
    if s.is_Symbol:
        return "variable"
    if s.is_Add:
        return "sum"
    if s.is_Mul:
        if any(isinstance(a, sp.Pow) and a.exp.is_negative for a in s.args):
            return "quotient"
        return "product"
    if isinstance(s, sp.Pow):
        if s.exp == sp.Rational(1, 2):
            return "sqrt"
        if s.exp.is_negative:
            return "quotient"
        return "power"
    if isinstance(s, sp.Function):
        return s.func.__name__
    return type(s).__name__


def tree_size(e: Union[Expr, sp.Basic]) -> int:
    s = e.sym if isinstance(e, Expr) else e
    return sum(1 for _ in sp.preorder_traversal(s))


def _check_size(s: sp.Basic, cap: int) -> sp.Basic:
    if s.args:
        size = tree_size(s)
        if size > cap:
            raise TreeSizeError(size, cap)
    return s


def _normalize(s: sp.Basic) -> sp.Basic:
    return sp.expand(
        s, deep=True, mul=True, multinomial=True, power_exp=False, power_base=False, log=False
    )


def _check_real(s: sp.Basic) -> None:
    if s.has(sp.zoo, sp.nan, sp.oo, -sp.oo):
        raise DomainError("division by zero or non-finite constant", s)
    if s.has(sp.I):
        raise DomainError("non-real constant (root of a negative number)", s)


def simplify(e: Expr, size_cap: int = DEFAULT_SIZE_CAP) -> Expr:
    """Ring-normalize ``e``: expand products and powers, fold and drop zero terms."""
    out = _normalize(e.sym)
    _check_size(out, size_cap)
    return Expr(out, e.table)


def make_expr(s: sp.Basic, table: SymbolTable, size_cap: int = DEFAULT_SIZE_CAP) -> Expr:
    """Wrap a sympy expression, checking variables and normalizing."""
    s = sp.sympify(s)
    allowed = set(table.symbols)
    for sym in s.free_symbols:
        if sym not in allowed:
            raise UnknownIdentifierError(str(sym), -1)
    _check_real(s)
    out = _normalize(s)
    _check_size(out, size_cap)
    return Expr(out, table)


def constant(value, table: SymbolTable) -> Expr:
    return Expr(to_rational(value), table)


def variable(name: str, table: SymbolTable) -> Expr:
    return Expr(table.symbol(name), table)


def to_rational(value) -> sp.Rational:
    """Exact rational for ints, Fractions and floats."""
    if isinstance(value, sp.Basic):
        if value.is_Float:
            return sp.Rational(repr(float(value)))
        return value
    if isinstance(value, float):
        if not math.isfinite(value):
            raise DomainError(f"non-finite constant {value}")
        # shortest decimal that rounds to the same double
        return sp.Rational(repr(float(value)))
    return sp.Rational(value)


# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<id>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


class _Parser:
    def __init__(self, text: str, table: SymbolTable):
        self.text = text
        self.table = table
        self.tokens: list[tuple[str, str, int]] = []
        self._tokenize()
        self.pos = 0

    def _byte_offset(self, char_offset: int) -> int:
        return len(self.text[:char_offset].encode("utf-8"))

    def _tokenize(self) -> None:
        i = 0
        text = self.text
        while i < len(text):
            if text[i].isspace():
                i += 1
                continue
            mt = _TOKEN.match(text, i)
            if mt is None or mt.end() == i:
                raise ExprSyntaxError(f"unexpected character {text[i]!r}", self._byte_offset(i), text)
            kind = mt.lastgroup
            start = mt.start(kind)
            self.tokens.append((kind, mt.group(kind), start))
            i = mt.end()
        self.tokens.append(("end", "", len(text)))

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.pos]

    def take(self) -> tuple[str, str, int]:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def error(self, message: str, tok: tuple[str, str, int]) -> ExprSyntaxError:
        return ExprSyntaxError(message, self._byte_offset(tok[2]), self.text)

    def expect(self, value: str) -> None:
        tok = self.take()
        if tok[0] != "op" or tok[1] != value:
            found = tok[1] or "end of input"
            raise self.error(f"expected {value!r}, found {found!r}", tok)

    def parse(self) -> sp.Basic:
        out = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise self.error(f"unexpected token {tok[1]!r}", tok)
        return out

    # expr := ['+'|'-'] term (('+'|'-') term)*
    def expr(self) -> sp.Basic:
        sign = 1
        tok = self.peek()
        if tok[0] == "op" and tok[1] in "+-":
            self.take()
            sign = -1 if tok[1] == "-" else 1
        acc = sign * self.term()
        while True:
            tok = self.peek()
            if tok[0] == "op" and tok[1] in "+-":
                self.take()
                rhs = self.term()
                acc = acc + rhs if tok[1] == "+" else acc - rhs
            else:
                return acc

    def term(self) -> sp.Basic:
        acc = self.factor()
        while True:
            tok = self.peek()
            if tok[0] == "op" and tok[1] in "*/":
                self.take()
                rhs = self.factor()
                if tok[1] == "*":
                    acc = acc * rhs
                else:
                    if rhs == 0:
                        raise self.error("division by zero", tok)
                    acc = acc / rhs
            else:
                return acc

    def factor(self) -> sp.Basic:
        base = self.base()
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "^":
            self.take()
            sign = 1
            nxt = self.peek()
            if nxt[0] == "op" and nxt[1] in "+-":
                self.take()
                sign = -1 if nxt[1] == "-" else 1
            ex = self.take()
            if ex[0] != "num" or not ex[1].isdigit():
                raise self.error("exponent must be an integer", ex)
            k = sign * int(ex[1])
            if k < 0 and base == 0:
                raise self.error("division by zero", ex)
            return base**k
        return base

    def base(self) -> sp.Basic:
        tok = self.take()
        kind, value, _ = tok
        if kind == "num":
            return sp.Rational(value)
        if kind == "id":
            if value in _SP_FUNCS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return _SP_FUNCS[value](arg)
            if value in self.table.names:
                return self.table.symbol(value)
            raise UnknownIdentifierError(value, self._byte_offset(tok[2]))
        if kind == "op" and value == "(":
            inner = self.expr()
            self.expect(")")
            return inner
        found = value or "end of input"
        raise self.error(f"unexpected token {found!r}", tok)


def parse_expr(text: str, table: SymbolTable, size_cap: int = DEFAULT_SIZE_CAP) -> Expr:
    """Parse ``text`` in the expression grammar and return its normal form."""
    raw = _Parser(text, table).parse()
    return make_expr(raw, table, size_cap)


def parse_raw(text: str, table: SymbolTable) -> sp.Basic:
    """Parse without ring normalization (sympy's automatic canonicalization only)."""
    return _Parser(text, table).parse()


# ------------------------------------------------------------- evaluation

Point = Union[Mapping[str, float], Sequence[float]]


def _assignment(table: SymbolTable, point: Point) -> dict[sp.Symbol, float]:
    if isinstance(point, Mapping):
        return {table.symbol(k): float(v) for k, v in point.items()}
    values = list(point)
    if len(values) != table.N:
        raise ValueError(f"point has {len(values)} coordinates, expected {table.N}")
    return {s: float(v) for s, v in zip(table.symbols, values)}


def _eval(s: sp.Basic, env: Mapping[sp.Symbol, float]) -> float:
    if s.is_Number:
        return float(s)
    if s is sp.E:
        return math.e
    if s.is_Symbol:
        try:
            return env[s]
        except KeyError:
            raise DomainError(f"variable {s} is not assigned") from None
    if s.is_Add:
        return math.fsum(_eval(a, env) for a in s.args)
    if s.is_Mul:
        out = 1.0
        for a in s.args:
            out *= _eval(a, env)
        return out
    if isinstance(s, sp.Pow):
        base = _eval(s.base, env)
        ex = s.exp
        if ex.is_Integer:
            k = int(ex)
            if k < 0 and base == 0.0:
                raise DomainError("division by zero", s)
            return base**k
        if ex.is_Rational and ex.q == 2:
            if base < 0.0 or (base == 0.0 and ex < 0):
                raise DomainError("sqrt of a negative number" if base < 0 else "division by zero", s)
            return math.sqrt(base) ** int(ex.p)
        raise DomainError(f"unsupported exponent {ex}", s)
    if isinstance(s, sp.Function):
        name = s.func.__name__
        x = _eval(s.args[0], env)
        if name == "log":
            if x <= 0.0:
                raise DomainError("log of a non-positive number", s)
            return math.log(x)
        try:
            return {"sin": math.sin, "cos": math.cos, "exp": math.exp, "tanh": math.tanh}[name](x)
        except KeyError:
            raise DomainError(f"unsupported function {name}", s) from None
        except OverflowError:
            raise DomainError("overflow", s) from None
    raise DomainError(f"unsupported node {type(s).__name__}", s)


def eval_expr(e: Expr, point: Point) -> float:
    """Evaluate ``e`` at ``point`` (a name->value mapping or a full coordinate vector)."""
    return _eval(e.sym, _assignment(e.table, point))


def diff_expr(e: Expr, v: Union[str, int], size_cap: int = DEFAULT_SIZE_CAP) -> Expr:
    """Exact partial derivative in normal form; ``v`` is a name or coordinate index."""
    sym = e.table.symbols[v] if isinstance(v, int) else e.table.symbol(v)
    out = _normalize(sp.diff(e.sym, sym))
    _check_size(out, size_cap)
    return Expr(out, e.table)


def analyticity_warnings(e: Expr) -> list[str]:
    """Denominators and log/sqrt arguments the user must keep away from zero."""
    notes: list[str] = []
    for node in sp.preorder_traversal(e.sym):
        if isinstance(node, sp.Pow) and node.exp.is_negative:
            notes.append(f"denominator {to_text_sym(node.base)} must not vanish")
        elif isinstance(node, sp.Pow) and node.exp.is_Rational and node.exp.q == 2:
            notes.append(f"sqrt argument {to_text_sym(node.base)} must stay positive")
        elif isinstance(node, sp.log):
            notes.append(f"log argument {to_text_sym(node.args[0])} must stay positive")
    return sorted(set(notes))


# --------------------------------------------------------------- printing


def to_text(e: Expr) -> str:
    """Print ``e`` in the input grammar, so that parsing the output returns ``e``."""
    return to_text_sym(e.sym)


def to_text_sym(s: "sp.Basic | None") -> str:
    if s is None:
        return ""
    return _print(sp.sympify(s))


def _number(s: sp.Basic) -> str:
    if s.is_Integer:
        return str(int(s))
    if s.is_Rational:
        return f"{int(s.p)}/{int(s.q)}"
    return repr(float(s))


def _atomic(s: sp.Basic) -> bool:
    return (s.is_Symbol or (s.is_Integer and s >= 0) or isinstance(s, sp.Function) or s is sp.E)


def _wrap(s: sp.Basic) -> str:
    text = _print(s)
    return text if _atomic(s) else f"({text})"


def _print_pow(base: sp.Basic, k: sp.Rational) -> str:
    # k > 0 here
    if k.q == 2:
        root = f"sqrt({_print(base)})"
        return root if k.p == 1 else f"{root}^{int(k.p)}"
    if k == 1:
        return _wrap(base)
    return f"{_wrap(base)}^{int(k)}"


def _print_mul(s: sp.Basic) -> str:
    coeff, factors = s.as_coeff_mul()
    num: list[str] = []
    den: list[str] = []
    for f in factors:
        if isinstance(f, sp.Pow) and f.exp.is_negative:
            den.append(_print_pow(f.base, -f.exp))
        elif isinstance(f, sp.Pow):
            num.append(_print_pow(f.base, f.exp))
        else:
            num.append(_wrap(f))
    if coeff.is_Rational:
        p, q = int(coeff.p), int(coeff.q)
        if abs(p) != 1 or not num:
            num.insert(0, str(abs(p)))
        if q != 1:
            den.insert(0, str(q))
        sign = "-" if p < 0 else ""
    else:
        value = float(coeff)
        num.insert(0, repr(abs(value)))
        sign = "-" if value < 0 else ""
    text = "*".join(num)
    if den:
        text += "/" + ("/".join(den))
    return sign + text


def _print(s: sp.Basic) -> str:
    if s is sp.E:
        return "exp(1)"
    if s.is_Number:
        text = _number(s)
        return text if s >= 0 else f"-{_number(-s)}"
    if s.is_Symbol:
        return str(s)
    if s.is_Add:
        parts: list[str] = []
        for i, term in enumerate(s.as_ordered_terms()):
            text = _print(term)
            if text.startswith("-"):
                parts.append(("-" if i == 0 else " - ") + text[1:])
            else:
                parts.append(("" if i == 0 else " + ") + text)
        return "".join(parts)
    if s.is_Mul:
        return _print_mul(s)
    if isinstance(s, sp.Pow):
        if s.exp.is_negative:
            return f"1/{_print_pow(s.base, -s.exp)}"
        return _print_pow(s.base, s.exp)
    if isinstance(s, sp.Function):
        return f"{s.func.__name__}({_print(s.args[0])})"
    raise ExprError(f"cannot print node {type(s).__name__}")


# --------------------------------------------------------- compiled forms


def compile_exprs(exprs: Iterable[Union[Expr, sp.Basic]], table: SymbolTable):
    """Return ``f(x) -> list[float]`` evaluating all ``exprs`` at a coordinate vector."""
    syms = [e.sym if isinstance(e, Expr) else sp.sympify(e) for e in exprs]
    fn = sp.lambdify([table.symbols], syms, modules="math", cse=len(syms) > 1)

    def evaluate(x):
        try:
            out = fn(x)
            if not any(isinstance(v, complex) for v in out):
                return out
        except (ValueError, ZeroDivisionError, OverflowError):
            pass
        env = _assignment(table, x)
        return [_eval(s, env) for s in syms]

    return evaluate
