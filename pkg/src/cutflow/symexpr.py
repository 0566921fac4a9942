"""Symbolic integer expressions and index ranges.

Expressions are immutable trees.  The same node types carry tasklet code
(floats, comparisons, ``select``), but shape, subset and capacity
expressions stay within the integer fragment ``+ - * // % min max``.
"""

from __future__ import annotations

import ast
import enum
import math
from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Mapping, Optional, Union

from .errors import (DivisionByZero, ExprError, NegativeExtent, ParseError,
                     RankMismatch, UnboundSymbol)

Number = Union[int, float, bool]


class Expr:
    """Base class for expression nodes."""

    __slots__ = ()

    def __add__(self, other):
        return BinOp("+", self, as_expr(other))

    def __radd__(self, other):
        return BinOp("+", as_expr(other), self)

    def __sub__(self, other):
        return BinOp("-", self, as_expr(other))

    def __rsub__(self, other):
        return BinOp("-", as_expr(other), self)

    def __mul__(self, other):
        return BinOp("*", self, as_expr(other))

    def __rmul__(self, other):
        return BinOp("*", as_expr(other), self)

    def __floordiv__(self, other):
        return BinOp("//", self, as_expr(other))

    def __mod__(self, other):
        return BinOp("%", self, as_expr(other))

    def __neg__(self):
        return Neg(self)

    def __str__(self):
        return _fmt(self)

    def __repr__(self):
        return f"Expr({_fmt(self)!r})"


@dataclass(frozen=True, repr=False)
class Const(Expr):
    value: Number


@dataclass(frozen=True, repr=False)
class Sym(Expr):
    name: str


@dataclass(frozen=True, repr=False)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True, repr=False)
class Cmp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True, repr=False)
class BoolOp(Expr):
    op: str  # "and" | "or"
    left: Expr
    right: Expr


@dataclass(frozen=True, repr=False)
class Not(Expr):
    operand: Expr


@dataclass(frozen=True, repr=False)
class Neg(Expr):
    operand: Expr


@dataclass(frozen=True, repr=False)
class Call(Expr):
    fn: str
    args: tuple


ARITH_OPS = ("+", "-", "*", "//", "%", "/")
INT_OPS = ("+", "-", "*", "//", "%")
CMP_OPS = ("<", "<=", ">", ">=", "==", "!=")
# arity per function; None means variadic (>= 2)
FUNCTIONS = {
    "min": None, "max": None, "select": 3, "abs": 1, "sqrt": 1, "exp": 1,
    "log": 1, "sin": 1, "cos": 1, "tanh": 1, "floor": 1,
}
INT_FUNCTIONS = ("min", "max")

TRUE = Const(True)


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, (bool, int, float)):
        return Const(x)
    if isinstance(x, str):
        return parse(x)
    raise TypeError(f"cannot convert {type(x).__name__} to Expr")


# -- parsing ----------------------------------------------------------------

_BINOPS = {ast.Add: "+", ast.Sub: "-", ast.Mult: "*", ast.FloorDiv: "//",
           ast.Mod: "%", ast.Div: "/"}
_CMPOPS = {ast.Lt: "<", ast.LtE: "<=", ast.Gt: ">", ast.GtE: ">=",
           ast.Eq: "==", ast.NotEq: "!="}


def parse(text: str) -> Expr:
    """Parse the textual expression syntax (a subset of Python syntax)."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ParseError(f"cannot parse expression {text!r}: {exc.msg}") from None
    return _convert(tree.body, text)


def _convert(node, text):
    if isinstance(node, ast.Constant) and isinstance(node.value, (bool, int, float)):
        return Const(node.value)
    if isinstance(node, ast.Name):
        if node.id in ("True", "False"):
            return Const(node.id == "True")
        return Sym(node.id)
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return BinOp(_BINOPS[type(node.op)], _convert(node.left, text),
                     _convert(node.right, text))
    if isinstance(node, ast.UnaryOp):
        inner = _convert(node.operand, text)
        if isinstance(node.op, ast.USub):
            if isinstance(inner, Const) and not isinstance(inner.value, bool):
                return Const(-inner.value)
            return Neg(inner)
        if isinstance(node.op, ast.UAdd):
            return inner
        if isinstance(node.op, ast.Not):
            return Not(inner)
    if isinstance(node, ast.Compare) and len(node.ops) == 1 and type(node.ops[0]) in _CMPOPS:
        return Cmp(_CMPOPS[type(node.ops[0])], _convert(node.left, text),
                   _convert(node.comparators[0], text))
    if isinstance(node, ast.BoolOp):
        op = "and" if isinstance(node.op, ast.And) else "or"
        vals = [_convert(v, text) for v in node.values]
        return reduce(lambda a, b: BoolOp(op, a, b), vals)
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
        fn = node.func.id
        if fn not in FUNCTIONS:
            raise ParseError(f"unknown function {fn!r} in {text!r}")
        args = tuple(_convert(a, text) for a in node.args)
        arity = FUNCTIONS[fn]
        if (arity is None and len(args) < 2) or (arity is not None and len(args) != arity):
            raise ParseError(f"wrong number of arguments to {fn} in {text!r}")
        return Call(fn, args)
    raise ParseError(f"unsupported syntax in expression {text!r}")


# -- printing ---------------------------------------------------------------

_PREC = {"or": 1, "and": 2, "not": 3, "cmp": 4, "+": 5, "-": 5, "*": 6, "//": 6,
         "%": 6, "/": 6, "neg": 7}
_ATOM = 9


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, BoolOp):
        return _PREC[e.op]
    if isinstance(e, Cmp):
        return _PREC["cmp"]
    if isinstance(e, Not):
        return _PREC["not"]
    if isinstance(e, Neg):
        return _PREC["neg"]
    if isinstance(e, Const) and not isinstance(e.value, bool) and e.value < 0:
        return _PREC["neg"]
    return _ATOM


def _wrap(e: Expr, minprec: int) -> str:
    s = _fmt(e)
    return f"({s})" if _prec(e) < minprec else s


def _fmt(e: Expr) -> str:
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Sym):
        return e.name
    if isinstance(e, (BinOp, BoolOp, Cmp)):
        p = _prec(e)
        # left-associative: the right operand needs strictly higher precedence
        right_min = p + 1 if not isinstance(e, Cmp) else p + 1
        return f"{_wrap(e.left, p if not isinstance(e, Cmp) else p + 1)} {e.op} {_wrap(e.right, right_min)}"
    if isinstance(e, Not):
        return f"not {_wrap(e.operand, _PREC['not'])}"
    if isinstance(e, Neg):
        return f"-{_wrap(e.operand, _ATOM)}"
    if isinstance(e, Call):
        return f"{e.fn}({', '.join(_fmt(a) for a in e.args)})"
    raise TypeError(e)


# -- structural queries -----------------------------------------------------

def free_symbols(e: Expr) -> frozenset:
    if isinstance(e, Sym):
        return frozenset((e.name,))
    if isinstance(e, Const):
        return frozenset()
    out = set()
    for child in children(e):
        out |= free_symbols(child)
    return frozenset(out)


def children(e: Expr) -> tuple:
    if isinstance(e, (BinOp, Cmp, BoolOp)):
        return (e.left, e.right)
    if isinstance(e, (Not, Neg)):
        return (e.operand,)
    if isinstance(e, Call):
        return e.args
    return ()


def rebuild(e: Expr, kids: tuple) -> Expr:
    if isinstance(e, BinOp):
        return BinOp(e.op, *kids)
    if isinstance(e, Cmp):
        return Cmp(e.op, *kids)
    if isinstance(e, BoolOp):
        return BoolOp(e.op, *kids)
    if isinstance(e, Not):
        return Not(kids[0])
    if isinstance(e, Neg):
        return Neg(kids[0])
    if isinstance(e, Call):
        return Call(e.fn, tuple(kids))
    return e


def substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    if isinstance(e, Sym):
        return as_expr(mapping[e.name]) if e.name in mapping else e
    kids = children(e)
    if not kids:
        return e
    return rebuild(e, tuple(substitute(k, mapping) for k in kids))


def is_integer_expr(e: Expr) -> bool:
    """True when ``e`` only uses the integer operator set."""
    if isinstance(e, Const):
        return isinstance(e.value, int) and not isinstance(e.value, bool)
    if isinstance(e, Sym):
        return True
    if isinstance(e, BinOp):
        return e.op in INT_OPS and is_integer_expr(e.left) and is_integer_expr(e.right)
    if isinstance(e, Neg):
        return is_integer_expr(e.operand)
    if isinstance(e, Call):
        return e.fn in INT_FUNCTIONS and all(is_integer_expr(a) for a in e.args)
    return False


# -- evaluation -------------------------------------------------------------

def _floordiv(a, b):
    if b == 0:
        raise DivisionByZero("integer division by zero")
    return a // b


def _mod(a, b):
    if b == 0:
        raise DivisionByZero("modulo by zero")
    return a % b


def _truediv(a, b):
    if b == 0:
        if isinstance(a, float) or isinstance(b, float):
            if a == 0 or math.isnan(a):
                return math.nan
            return math.copysign(math.inf, a) * math.copysign(1.0, b)
        raise DivisionByZero("division by zero")
    return a / b


_ARITH = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "//": _floordiv,
    "%": _mod,
    "/": _truediv,
}
_CMP = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
}
_MATH = {"abs": abs, "sqrt": math.sqrt, "exp": math.exp, "log": math.log,
         "sin": math.sin, "cos": math.cos, "tanh": math.tanh, "floor": math.floor}


def evaluate(e: Expr, env: Mapping[str, Number]) -> Number:
    """Evaluate under a total binding.  Integer division floors toward -inf."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Sym):
        try:
            return env[e.name]
        except KeyError:
            raise UnboundSymbol(e.name) from None
    if isinstance(e, BinOp):
        return _ARITH[e.op](evaluate(e.left, env), evaluate(e.right, env))
    if isinstance(e, Cmp):
        return _CMP[e.op](evaluate(e.left, env), evaluate(e.right, env))
    if isinstance(e, BoolOp):
        lhs = bool(evaluate(e.left, env))
        if e.op == "and":
            return lhs and bool(evaluate(e.right, env))
        return lhs or bool(evaluate(e.right, env))
    if isinstance(e, Not):
        return not evaluate(e.operand, env)
    if isinstance(e, Neg):
        return -evaluate(e.operand, env)
    if isinstance(e, Call):
        if e.fn == "select":
            cond = evaluate(e.args[0], env)
            return evaluate(e.args[1] if cond else e.args[2], env)
        vals = [evaluate(a, env) for a in e.args]
        if e.fn == "min":
            return min(vals)
        if e.fn == "max":
            return max(vals)
        return _MATH[e.fn](*vals)
    raise TypeError(e)


def eval_int(e, binding: Mapping[str, int]) -> int:
    v = evaluate(as_expr(e), binding)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ExprError(f"expression {e} did not evaluate to an integer")
    return v


# -- affine forms and simplification ---------------------------------------

def to_affine(e: Expr) -> Optional[dict]:
    """Return {symbol: coefficient, None: constant} or None if not affine."""
    if isinstance(e, Const):
        if isinstance(e.value, bool) or not isinstance(e.value, int):
            return None
        return {None: e.value}
    if isinstance(e, Sym):
        return {e.name: 1, None: 0}
    if isinstance(e, Neg):
        a = to_affine(e.operand)
        return None if a is None else {k: -v for k, v in a.items()}
    if isinstance(e, BinOp) and e.op in ("+", "-", "*"):
        a, b = to_affine(e.left), to_affine(e.right)
        if a is None or b is None:
            return None
        if e.op == "*":
            if len(a) == 1:
                a, b = b, a
            if len(b) != 1:
                return None
            c = b[None]
            return {k: v * c for k, v in a.items()}
        sign = 1 if e.op == "+" else -1
        out = dict(a)
        for k, v in b.items():
            out[k] = out.get(k, 0) + sign * v
        return out
    return None


def from_affine(a: Mapping) -> Expr:
    const = a.get(None, 0)
    terms = sorted((k, v) for k, v in a.items() if k is not None and v != 0)
    out: Optional[Expr] = None
    for name, coef in terms:
        mag = abs(coef)
        term = Sym(name) if mag == 1 else BinOp("*", Const(mag), Sym(name))
        if out is None:
            out = term if coef > 0 else Neg(term) if mag == 1 else BinOp("*", Const(coef), Sym(name))
        else:
            out = BinOp("+" if coef > 0 else "-", out, term)
    if out is None:
        return Const(const)
    if const > 0:
        out = BinOp("+", out, Const(const))
    elif const < 0:
        out = BinOp("-", out, Const(-const))
    return out


def constant_difference(a: Expr, b: Expr) -> Optional[int]:
    """a - b when it is a known constant, else None."""
    fa, fb = to_affine(a), to_affine(b)
    if fa is None or fb is None:
        return None if a != b else 0
    diff = dict(fa)
    for k, v in fb.items():
        diff[k] = diff.get(k, 0) - v
    if any(v != 0 for k, v in diff.items() if k is not None):
        return None
    return diff.get(None, 0)


def simplify(e: Expr) -> Expr:
    """Constant folding plus canonical affine form.  Preserves value."""
    e = as_expr(e)
    kids = children(e)
    if kids:
        e = rebuild(e, tuple(simplify(k) for k in kids))
    aff = to_affine(e)
    if aff is not None:
        return from_affine(aff)
    if isinstance(e, BinOp) and e.op in ("//", "%"):
        if isinstance(e.left, Const) and isinstance(e.right, Const) and e.right.value != 0 \
                and isinstance(e.left.value, int) and isinstance(e.right.value, int):
            return Const(_ARITH[e.op](e.left.value, e.right.value))
        if isinstance(e.right, Const) and e.right.value == 1 and e.op == "//":
            return e.left
    if isinstance(e, Call) and e.fn in ("min", "max"):
        return _simplify_minmax(e)
    return e


def _simplify_minmax(e: Call) -> Expr:
    pick_low = e.fn == "min"
    flat = []
    for a in e.args:
        if isinstance(a, Call) and a.fn == e.fn:
            flat.extend(a.args)
        else:
            flat.append(a)
    kept: list = []
    for a in flat:
        dominated = False
        for i, k in enumerate(kept):
            d = constant_difference(a, k)
            if d is None:
                continue
            if (d >= 0) == pick_low or d == 0:
                dominated = True  # k already at least as extreme
            else:
                kept[i] = a
                dominated = True
            break
        if not dominated:
            kept.append(a)
    if len(kept) == 1:
        return kept[0]
    kept.sort(key=str)
    return Call(e.fn, tuple(kept))


# -- interval bounds --------------------------------------------------------

Bound = Optional[int]
DEFAULT_ASSUMPTION = (1, None)


def _bmul(a, b):
    if a == 0 or b == 0:
        return 0
    return None if a is None or b is None else a * b


def bounds(e: Expr, assumptions: Optional[Mapping[str, tuple]] = None,
           default: tuple = DEFAULT_ASSUMPTION) -> tuple:
    """Conservative (lo, hi) integer bounds, ``None`` meaning unbounded."""
    assumptions = assumptions or {}
    if isinstance(e, Const):
        v = e.value
        return (v, v) if isinstance(v, int) else (None, None)
    if isinstance(e, Sym):
        return tuple(assumptions.get(e.name, default))
    if isinstance(e, Neg):
        lo, hi = bounds(e.operand, assumptions, default)
        return (None if hi is None else -hi, None if lo is None else -lo)
    if isinstance(e, BinOp):
        (al, ah), (bl, bh) = bounds(e.left, assumptions, default), bounds(e.right, assumptions, default)
        if e.op == "+":
            return (None if al is None or bl is None else al + bl,
                    None if ah is None or bh is None else ah + bh)
        if e.op == "-":
            return (None if al is None or bh is None else al - bh,
                    None if ah is None or bl is None else ah - bl)
        if e.op == "*":
            if isinstance(e.right, Const) or isinstance(e.left, Const):
                c, (lo, hi) = ((e.right.value, (al, ah)) if isinstance(e.right, Const)
                               else (e.left.value, (bl, bh)))
                if not isinstance(c, int):
                    return (None, None)
                if c >= 0:
                    return (_bmul(lo, c), _bmul(hi, c))
                return (_bmul(hi, c), _bmul(lo, c))
            if al is not None and bl is not None and al >= 0 and bl >= 0:
                return (al * bl, _bmul(ah, bh) if ah is not None and bh is not None else None)
            return (None, None)
        if e.op == "//" and isinstance(e.right, Const) and isinstance(e.right.value, int) \
                and e.right.value > 0:
            c = e.right.value
            return (None if al is None else al // c, None if ah is None else ah // c)
        if e.op == "%" and isinstance(e.right, Const) and isinstance(e.right.value, int) \
                and e.right.value > 0:
            return (0, e.right.value - 1)
        return (None, None)
    if isinstance(e, Call) and e.fn in ("min", "max"):
        bs = [bounds(a, assumptions, default) for a in e.args]
        los, his = [b[0] for b in bs], [b[1] for b in bs]
        if e.fn == "min":
            lo = None if any(x is None for x in los) else min(los)
            known = [h for h in his if h is not None]
            return (lo, min(known) if known else None)
        known = [x for x in los if x is not None]
        hi = None if any(h is None for h in his) else max(his)
        return (max(known) if known else None, hi)
    return (None, None)


def provably_nonneg(e: Expr, assumptions=None, default=DEFAULT_ASSUMPTION) -> bool:
    e = simplify(e)
    aff = to_affine(e)
    if aff is not None and all(v == 0 for k, v in aff.items() if k is not None):
        return aff.get(None, 0) >= 0
    lo, _ = bounds(e, assumptions, default)
    return lo is not None and lo >= 0


def provably_le(a: Expr, b: Expr, assumptions=None, default=DEFAULT_ASSUMPTION) -> bool:
    return provably_nonneg(BinOp("-", as_expr(b), as_expr(a)), assumptions, default)


def monotonicity(e: Expr, name: str) -> Optional[int]:
    """+1 / -1 when ``e`` is monotone in ``name``, 0 if independent, None if unknown."""
    if name not in free_symbols(e):
        return 0
    if isinstance(e, Sym):
        return 1
    if isinstance(e, Neg):
        m = monotonicity(e.operand, name)
        return None if m is None else -m
    if isinstance(e, BinOp):
        ml, mr = monotonicity(e.left, name), monotonicity(e.right, name)
        if ml is None or mr is None:
            return None
        if e.op == "+":
            return _combine(ml, mr)
        if e.op == "-":
            return _combine(ml, -mr)
        if e.op == "*" and (isinstance(e.left, Const) or isinstance(e.right, Const)):
            c = e.left.value if isinstance(e.left, Const) else e.right.value
            m = mr if isinstance(e.left, Const) else ml
            return 0 if c == 0 else m if c > 0 else -m
        if e.op == "//" and isinstance(e.right, Const) and isinstance(e.right.value, int) \
                and e.right.value > 0:
            return ml
        return None
    if isinstance(e, Call) and e.fn in ("min", "max"):
        ms = [monotonicity(a, name) for a in e.args]
        out = 0
        for m in ms:
            if m is None:
                return None
            out = _combine(out, m)
            if out is None:
                return None
        return out
    return None


def _combine(a, b):
    if a == 0:
        return b
    if b == 0 or a == b:
        return a
    return None


# -- ranges and subsets -----------------------------------------------------

@dataclass(frozen=True)
class Range:
    """Half-open strided index range ``begin:end:step``."""

    begin: Expr
    end: Expr
    step: Expr = Const(1)

    @staticmethod
    def make(begin, end, step=1) -> "Range":
        return Range(as_expr(begin), as_expr(end), as_expr(step))

    @staticmethod
    def index(e) -> "Range":
        e = as_expr(e)
        return Range(e, simplify(BinOp("+", e, Const(1))), Const(1))

    def is_index(self) -> bool:
        return constant_difference(self.end, self.begin) == 1 and self.step == Const(1)

    def size(self, binding) -> int:
        b, e, s = (eval_int(x, binding) for x in (self.begin, self.end, self.step))
        if s < 1:
            raise NegativeExtent(f"non-positive step {s} in {self}")
        if e < b:
            raise NegativeExtent(f"range {self} has end < begin ({e} < {b})")
        return -(-(e - b) // s)

    def size_expr(self) -> Expr:
        if self.step == Const(1):
            return simplify(BinOp("-", self.end, self.begin))
        return simplify(BinOp("//", BinOp("+", BinOp("-", self.end, self.begin),
                                          BinOp("-", self.step, Const(1))), self.step))

    def free_symbols(self) -> frozenset:
        return free_symbols(self.begin) | free_symbols(self.end) | free_symbols(self.step)

    def __str__(self):
        if self.is_index():
            return str(self.begin)
        if self.step == Const(1):
            return f"{self.begin}:{self.end}"
        return f"{self.begin}:{self.end}:{self.step}"


@dataclass(frozen=True)
class SubsetRange:
    dims: tuple

    @staticmethod
    def parse(text: str) -> "SubsetRange":
        return SubsetRange(tuple(_parse_range(p) for p in _split_top(text, ",")))

    @staticmethod
    def full(shape) -> "SubsetRange":
        return SubsetRange(tuple(Range(Const(0), as_expr(s), Const(1)) for s in shape))

    @property
    def rank(self) -> int:
        return len(self.dims)

    def free_symbols(self) -> frozenset:
        out = frozenset()
        for d in self.dims:
            out |= d.free_symbols()
        return out

    def substitute(self, mapping) -> "SubsetRange":
        return SubsetRange(tuple(Range(substitute(d.begin, mapping), substitute(d.end, mapping),
                                       substitute(d.step, mapping)) for d in self.dims))

    def offset(self, origins) -> "SubsetRange":
        """Shift every dimension down by the given origin expressions."""
        return SubsetRange(tuple(
            Range(simplify(BinOp("-", d.begin, o)), simplify(BinOp("-", d.end, o)), d.step)
            for d, o in zip(self.dims, origins)))

    def volume_expr(self) -> Expr:
        out: Expr = Const(1)
        for d in self.dims:
            out = BinOp("*", out, d.size_expr())
        return simplify(out)

    def __str__(self):
        return ", ".join(str(d) for d in self.dims)


def _split_top(text: str, sep: str) -> list:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return [p.strip() for p in parts if p.strip()]


def _parse_range(text: str) -> Range:
    pieces = _split_top(text, ":") if ":" in text else [text]
    if len(pieces) == 1:
        return Range.index(parse(pieces[0]))
    if len(pieces) == 2:
        return Range(parse(pieces[0]), parse(pieces[1]), Const(1))
    if len(pieces) == 3:
        return Range(parse(pieces[0]), parse(pieces[1]), parse(pieces[2]))
    raise ParseError(f"bad range {text!r}")


def volume(r: SubsetRange, binding: Mapping[str, int]) -> int:
    """Number of elements addressed by ``r`` under ``binding``."""
    out = 1
    for d in r.dims:
        out *= d.size(binding)
    return out


class Overlap(enum.Enum):
    DISJOINT = "Disjoint"
    MAY_OVERLAP = "MayOverlap"


def _dim_disjoint(a: Range, b: Range, assumptions, default) -> bool:
    if provably_le(a.end, b.begin, assumptions, default) or \
            provably_le(b.end, a.begin, assumptions, default):
        return True
    if isinstance(a.step, Const) and a.step == b.step and isinstance(a.step.value, int) \
            and a.step.value > 1:
        d = constant_difference(a.begin, b.begin)
        if d is not None and d % a.step.value != 0:
            return True
    return False


def disjoint(a: SubsetRange, b: SubsetRange, assumptions=None,
             default: tuple = DEFAULT_ASSUMPTION) -> Overlap:
    """Conservative disjointness: DISJOINT only when provable."""
    if a.rank != b.rank:
        raise RankMismatch(f"subsets of rank {a.rank} and {b.rank}")
    for da, db in zip(a.dims, b.dims):
        if _dim_disjoint(da, db, assumptions, default):
            return Overlap.DISJOINT
    return Overlap.MAY_OVERLAP


def may_overlap(a: SubsetRange, b: SubsetRange, assumptions=None) -> bool:
    return disjoint(a, b, assumptions) is Overlap.MAY_OVERLAP


# -- propagation over map domains -----------------------------------------

def _extreme(e: Expr, params: Iterable[tuple], want_max: bool) -> Optional[Expr]:
    """Substitute each parameter by the domain point that extremizes ``e``."""
    for name, rng in params:
        m = monotonicity(e, name)
        if m is None:
            return None
        if m == 0:
            continue
        lo = rng.begin
        hi = simplify(BinOp("-", rng.end, Const(1)))
        take_hi = (m > 0) == want_max
        e = substitute(e, {name: hi if take_hi else lo})
    return simplify(e)


def propagate(subset: SubsetRange, params: list) -> Optional[SubsetRange]:
    """Over-approximate the union of ``subset`` over a map domain.

    ``params`` is a list of (name, Range), innermost last.  Returns None
    when some dimension is not monotone in the parameters.
    """
    names = {n for n, _ in params}
    dims = []
    for d in subset.dims:
        if not (d.free_symbols() & names):
            dims.append(d)
            continue
        if free_symbols(d.step) & names:
            return None
        order = list(reversed(params))
        lo = _extreme(d.begin, order, want_max=False)
        last = simplify(BinOp("-", d.end, Const(1)))
        hi = _extreme(last, order, want_max=True)
        if lo is None or hi is None:
            return None
        dims.append(Range(lo, simplify(BinOp("+", hi, Const(1))), Const(1)))
    return SubsetRange(tuple(dims))


def hull_bound(exprs: list, lowest: bool) -> Optional[Expr]:
    """min (or max) of expressions when all pairs are comparable."""
    best = exprs[0]
    for e in exprs[1:]:
        d = constant_difference(e, best)
        if d is None:
            return None
        if (d < 0) == lowest and d != 0:
            best = e
    return simplify(best)


def hull(subsets: list) -> Optional[SubsetRange]:
    """Per-dimension interval hull, or None if not resolvable symbolically."""
    rank = subsets[0].rank
    dims = []
    for k in range(rank):
        b = hull_bound([s.dims[k].begin for s in subsets], lowest=True)
        e = hull_bound([s.dims[k].end for s in subsets], lowest=False)
        if b is None or e is None:
            return None
        dims.append(Range(b, e, Const(1)))
    return SubsetRange(tuple(dims))
