"""Differential gray-box fuzzing of a cutout against its transformed version.

Inputs are drawn from a :class:`ConstraintSet` derived statically from the
cutout (index uses, enclosing loops, container sizes) and optionally
narrowed by the user.  Each trial runs both versions on the same input and
compares the system state.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .analysis import validate
from .cutout import Cutout
from .errors import (CutflowError, EmptyInterval, ExprError, MalformedDocument, SiteStale,
                     TransformationInapplicable, UnknownElement)
from .fileformat import canonical_json, decode_data, encode_data, load_program, save_program
from .interp import (NP_DTYPES, TIMEOUT, Comparison, ExecutionInput,
                     ExecutionOutcome, compare_states, run)
from .ir import AccessNode, Program
from .symexpr import BinOp, Cmp, Const, Expr, Sym, as_expr, eval_int, free_symbols, simplify, to_affine
from .version import __version__
from .xform import TransformationInstance, apply

INDEX_USE = "IndexUse"
LOOP_BOUND = "LoopBound"
SIZE_SYMBOL = "SizeSymbol"
USER_PROVIDED = "UserProvided"
DEFAULT = "Default"

VALID = "Valid"
INVALID = "Invalid"
INCONCLUSIVE = "Inconclusive"

STATE_DIFFERS = "StateDiffers"
CRASH_ONLY_TRANSFORMED = "CrashOnlyTransformed"
HANG_ONLY_TRANSFORMED = "HangOnlyTransformed"
INVALID_CODE = "InvalidCode"

BUNDLE_VERSION = 1
SPECIAL_VALUE_RATE = 0.01
WORKERS_ENV = "CUTFLOW_WORKERS"


# -- constraints ----------------------------------------------------------------

@dataclass(frozen=True)
class Bound:
    expr: Expr
    provenance: str
    note: str = ""


@dataclass
class SymbolConstraint:
    """Inclusive integer interval ``max(lows) <= v <= min(highs)``."""

    name: str
    lows: list = field(default_factory=list)
    highs: list = field(default_factory=list)
    multiple_of: Optional[int] = None

    @property
    def provenance(self) -> list:
        return sorted({b.provenance for b in self.lows + self.highs})

    def depends_on(self) -> frozenset:
        out = frozenset()
        for b in self.lows + self.highs:
            out |= free_symbols(b.expr)
        return out - {self.name}

    def interval(self, env: dict) -> tuple:
        lo = max(eval_int(b.expr, env) for b in self.lows)
        hi = min(eval_int(b.expr, env) for b in self.highs)
        if self.multiple_of:
            k = self.multiple_of
            lo, hi = -(-lo // k) * k, (hi // k) * k
        return lo, hi

    def to_doc(self) -> dict:
        return {"lows": [[str(b.expr), b.provenance] for b in self.lows],
                "highs": [[str(b.expr), b.provenance] for b in self.highs],
                "multiple_of": self.multiple_of}


@dataclass
class ConstraintSet:
    symbols: dict = field(default_factory=dict)  # name -> SymbolConstraint
    value_ranges: dict = field(default_factory=dict)  # container -> (lo, hi)
    float_range: tuple = (-1.0, 1.0)
    int_range: tuple = (-100, 100)
    allow_nan_inf: bool = False
    size_max: int = 64
    size_symbols: frozenset = frozenset()

    def order(self) -> list:
        """Symbols in an order where every bound only uses earlier symbols."""
        done, out = set(), []
        pending = sorted(self.symbols, key=lambda s: (s not in self.size_symbols, s))
        while pending:
            ready = [s for s in pending if self.symbols[s].depends_on() <= done]
            if not ready:
                raise EmptyInterval(f"cyclic symbol constraints among {pending}")
            for s in ready:
                done.add(s)
                out.append(s)
            pending = [s for s in pending if s not in done]
        return out

    def range_of(self, name: str, dtype: str) -> tuple:
        if name in self.value_ranges:
            return self.value_ranges[name]
        if dtype.startswith("f"):
            return self.float_range
        if dtype == "bool":
            return (0, 1)
        return self.int_range

    def symbol_ok(self, symbols: dict) -> bool:
        for name in self.order():
            if name not in symbols:
                return False
            lo, hi = self.symbols[name].interval(symbols)
            v = symbols[name]
            if not lo <= v <= hi:
                return False
        return True

    def contains(self, inp: ExecutionInput, c: Cutout) -> bool:
        """Membership test for a concrete input configuration."""
        try:
            if not self.symbol_ok(inp.symbols):
                return False
        except ExprError:
            return False
        for name, buf in inp.data.items():
            desc = c.program.containers[name]
            try:
                shape = tuple(eval_int(s, inp.symbols) for s in desc.shape)
            except ExprError:
                return False
            if buf.shape != shape or buf.dtype != np.dtype(NP_DTYPES[desc.dtype]):
                return False
            lo, hi = self.range_of(name, desc.dtype)
            vals = buf.astype(np.float64)
            finite = np.isfinite(vals)
            if not self.allow_nan_inf and not finite.all():
                return False
            if ((vals[finite] < lo) | (vals[finite] > hi)).any():
                return False
        return True

    def to_doc(self) -> dict:
        return {"symbols": {k: v.to_doc() for k, v in sorted(self.symbols.items())},
                "value_ranges": {k: list(v) for k, v in sorted(self.value_ranges.items())},
                "float_range": list(self.float_range), "int_range": list(self.int_range),
                "allow_nan_inf": self.allow_nan_inf, "size_max": self.size_max}


def _single_symbol_offset(e: Expr, candidates: set) -> Optional[tuple]:
    """``v + c`` with v in candidates -> (v, c)."""
    aff = to_affine(simplify(e))
    if aff is None:
        return None
    syms = [k for k in aff if k is not None and aff[k] != 0]
    if len(syms) != 1 or syms[0] not in candidates or aff[syms[0]] != 1:
        return None
    return syms[0], aff.get(None, 0)


def _index_bounds(q: Program, candidates: set) -> list:
    """(symbol, 'lo'|'hi', expr, note) implied by in-bounds subscripts."""
    out = []
    for state in q.states.values():
        for e in state.edges.values():
            m = e.memlet
            if m is None:
                continue
            uses = [(m.data, m.subset)]
            if m.other_subset is not None and isinstance(state.nodes.get(e.dst), AccessNode):
                uses.append((state.nodes[e.dst].data, m.other_subset))
            for data, subset in uses:
                shape = q.containers[data].shape
                if len(shape) != subset.rank:
                    continue
                for d, extent in zip(subset.dims, shape):
                    b = _single_symbol_offset(d.begin, candidates)
                    if b is not None:
                        out.append((b[0], "lo", Const(-b[1]), f"{data} begin"))
                    t = _single_symbol_offset(d.end, candidates)
                    if t is not None:
                        out.append((t[0], "hi", simplify(BinOp("-", as_expr(extent), Const(t[1]))),
                                    f"{data} end"))
    return out


def loop_ranges(p: Program) -> dict:
    """Inclusive value ranges of state-machine loop variables, {var: [(lo, hi)]}."""
    out: dict = {}
    for guard in p.states.values():
        ins, outs = p.in_interstate(guard.id), p.out_interstate(guard.id)
        for back in ins:
            if len(back.assignments) != 1:
                continue
            (var, nxt), = back.assignments.items()
            step = simplify(BinOp("-", nxt, Sym(var)))
            if not isinstance(step, Const) or not isinstance(step.value, int) or step.value == 0:
                continue
            inits = [e for e in ins if e is not back and var in e.assignments]
            conds = [e.condition for e in outs
                     if isinstance(e.condition, Cmp) and e.condition.left == Sym(var)
                     and e.condition.op == ("<" if step.value > 0 else ">")]
            if len(inits) != 1 or len(conds) != 1:
                continue
            begin, end = inits[0].assignments[var], conds[0].right
            if step.value > 0:
                rng = (begin, simplify(BinOp("-", end, Const(1))))
            else:
                rng = (simplify(BinOp("+", end, Const(1))), begin)
            out.setdefault(var, []).append(rng)
    return out


def _user_doc(user) -> dict:
    if user is None:
        return {}
    if isinstance(user, str):
        with open(user) as fh:
            user = json.load(fh)
    if not isinstance(user, dict):
        raise MalformedDocument("constraints must be a JSON object")
    return user


def derive_constraints(p: Program, c: Cutout, size_max: int = 64, user=None) -> ConstraintSet:
    """Constraint set for sampling inputs of ``c``; ``user`` is a dict or JSON path."""
    user = _user_doc(user)
    size_max = int(user.get("size_max", size_max))
    q = c.program
    free = set(q.free_symbols())
    sizes = set()
    for d in q.containers.values():
        sizes |= d.free_symbols()
    sizes &= free
    cs = ConstraintSet(size_max=size_max, size_symbols=frozenset(sizes),
                       allow_nan_inf=bool(user.get("allow_nan", False)))
    for key, attr in (("float_range", "float_range"), ("int_range", "int_range")):
        if key in user:
            setattr(cs, attr, tuple(user[key]))
    for name, rng in user.get("values", {}).items():
        cs.value_ranges[name] = (rng[0], rng[1])
    for name in sorted(free):
        cs.symbols[name] = SymbolConstraint(name)
    for name in sizes:
        sc = cs.symbols[name]
        sc.lows.append(Bound(Const(1), SIZE_SYMBOL))
        sc.highs.append(Bound(Const(size_max), SIZE_SYMBOL))
    index_syms = free - sizes
    for name, side, expr, note in _index_bounds(q, index_syms):
        target = cs.symbols[name].lows if side == "lo" else cs.symbols[name].highs
        target.append(Bound(expr, INDEX_USE, note))
    for var, ranges in loop_ranges(p).items():
        if var not in cs.symbols:
            continue
        for lo, hi in ranges:
            if free_symbols(lo) | free_symbols(hi) <= free:
                cs.symbols[var].lows.append(Bound(lo, LOOP_BOUND))
                cs.symbols[var].highs.append(Bound(hi, LOOP_BOUND))
    declared = {n: (i.lo, i.hi) for n, i in p.symbols.items()}
    for name, spec in user.get("symbols", {}).items():
        if isinstance(spec, dict):
            lo, hi, mult = spec.get("lo"), spec.get("hi"), spec.get("multiple_of")
        else:
            (lo, hi), mult = spec, None
        declared[name] = (lo if lo is not None else declared.get(name, (None, None))[0],
                          hi if hi is not None else declared.get(name, (None, None))[1])
        if name in cs.symbols and mult:
            cs.symbols[name].multiple_of = int(mult)
    for name, (lo, hi) in declared.items():
        if name not in cs.symbols:
            continue
        if lo is not None:
            cs.symbols[name].lows.append(Bound(Const(int(lo)), USER_PROVIDED))
        if hi is not None:
            cs.symbols[name].highs.append(Bound(Const(int(hi)), USER_PROVIDED))
    for sc in cs.symbols.values():
        if not sc.lows:
            sc.lows.append(Bound(Const(-size_max), DEFAULT))
        if not sc.highs:
            sc.highs.append(Bound(Const(size_max), DEFAULT))
    _check_nonempty(cs)
    return cs


def _check_nonempty(cs: ConstraintSet) -> None:
    for name in cs.order():
        sc = cs.symbols[name]
        if sc.depends_on():
            continue
        lo, hi = sc.interval({})
        if lo > hi:
            raise EmptyInterval(f"no admissible value for {name}: bounds give [{lo}, {hi}]")
    for name, (lo, hi) in cs.value_ranges.items():
        if lo > hi:
            raise EmptyInterval(f"empty value range for {name}: [{lo}, {hi}]")


# -- sampling -----------------------------------------------------------------------

def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([seed, trial])


def _draw_int(lo: int, hi: int, mult: Optional[int], rng) -> int:
    if mult:
        return int(rng.integers(lo // mult, hi // mult + 1)) * mult
    return int(rng.integers(lo, hi + 1))


def _sample_symbols(cs: ConstraintSet, c: Cutout, rng, attempts: int = 64) -> dict:
    order = cs.order()
    for _ in range(attempts):
        env: dict = {}
        for name in order:
            lo, hi = cs.symbols[name].interval(env)
            if lo > hi:
                break
            env[name] = _draw_int(lo, hi, cs.symbols[name].multiple_of, rng)
        else:
            if _shapes_ok(c.program, env):
                return env
    raise EmptyInterval(f"could not satisfy the symbol constraints after {attempts} draws")


def _shapes_ok(q: Program, env: dict) -> bool:
    try:
        return all(eval_int(s, env) >= 0 for d in q.containers.values() for s in d.shape)
    except ExprError:
        return False


def _specials(cs: ConstraintSet, lo, hi, is_float: bool) -> list:
    out = [v for v in (0, lo, hi) if lo <= v <= hi]
    if is_float and cs.allow_nan_inf:
        out += [math.nan, math.inf, -math.inf]
    return out


def _fill(cs: ConstraintSet, name: str, dtype: str, shape: tuple, rng) -> np.ndarray:
    lo, hi = cs.range_of(name, dtype)
    dt = NP_DTYPES[dtype]
    if dtype.startswith("f"):
        buf = rng.uniform(lo, hi, size=shape).astype(dt)
    elif dtype == "bool":
        buf = rng.integers(0, 2, size=shape).astype(dt)
    else:
        buf = rng.integers(int(lo), int(hi) + 1, size=shape).astype(dt)
    if buf.size and rng.random() < SPECIAL_VALUE_RATE:
        choices = _specials(cs, lo, hi, dtype.startswith("f"))
        if choices:
            buf.flat[int(rng.integers(buf.size))] = choices[int(rng.integers(len(choices)))]
    return buf


def _input_buffers(c: Cutout) -> list:
    names = sorted({n for n, _ in c.input_configuration})
    return [n for n in names if n in c.program.containers and not c.program.containers[n].transient]


def sample(cs: ConstraintSet, c: Cutout, rng) -> ExecutionInput:
    """Draw one input configuration for ``c`` from ``cs``."""
    env = _sample_symbols(cs, c, rng)
    data = {}
    for name in _input_buffers(c):
        desc = c.program.containers[name]
        shape = tuple(eval_int(s, env) for s in desc.shape)
        data[name] = _fill(cs, name, desc.dtype, shape, rng)
    return ExecutionInput(env, data)


# -- mutation -------------------------------------------------------------------------

def _clamp_symbols(cs: ConstraintSet, env: dict) -> dict:
    out = dict(env)
    for name in cs.order():
        sc = cs.symbols[name]
        lo, hi = sc.interval(out)
        if lo > hi:
            return dict(env)
        out[name] = min(max(out[name], lo), hi)
        if sc.multiple_of:
            out[name] = lo + (out[name] - lo) // sc.multiple_of * sc.multiple_of
    return out


def _clamp_buffer(cs: ConstraintSet, name: str, dtype: str, buf: np.ndarray, rng) -> np.ndarray:
    lo, hi = cs.range_of(name, dtype)
    if dtype.startswith("f"):
        bad = ~np.isfinite(buf)
        if bad.any() and not cs.allow_nan_inf:
            buf[bad] = rng.uniform(lo, hi, size=int(bad.sum()))
        fin = np.isfinite(buf)
        buf[fin] = np.clip(buf[fin], lo, hi)
        return buf
    return np.clip(buf, lo, hi).astype(buf.dtype)


def mutate(inp: ExecutionInput, cs: ConstraintSet, c: Cutout, rng) -> ExecutionInput:
    """One random mutation of ``inp``; the result stays inside ``cs``."""
    out = inp.copy()
    names = [n for n in _input_buffers(c) if out.data.get(n) is not None and out.data[n].size]
    if cs.symbols and (not names or rng.random() < 0.2):
        name = sorted(cs.symbols)[int(rng.integers(len(cs.symbols)))]
        step = cs.symbols[name].multiple_of or 1
        out.symbols[name] += int(rng.choice([-1, 1])) * step
        new = _clamp_symbols(cs, out.symbols)
        if not _shapes_ok(c.program, new):
            return inp.copy()
        out.symbols = new
        for n in _input_buffers(c):
            desc = c.program.containers[n]
            shape = tuple(eval_int(s, new) for s in desc.shape)
            if out.data.get(n) is None or out.data[n].shape != shape:
                out.data[n] = _fill(cs, n, desc.dtype, shape, rng)
        return out
    if not names:
        return out
    name = names[int(rng.integers(len(names)))]
    desc = c.program.containers[name]
    buf = out.data[name]
    lo, hi = cs.range_of(name, desc.dtype)
    i = int(rng.integers(buf.size))
    op = rng.random()
    flat = buf.reshape(-1)
    if desc.dtype == "bool":
        flat[i] = not flat[i]
    elif op < 0.5:
        flat[i] = _fill(cs, name, desc.dtype, (1,), rng)[0]
    elif op < 0.7:
        delta = (hi - lo) * rng.uniform(-0.1, 0.1)
        flat[i] = flat[i] + (delta if desc.dtype.startswith("f") else int(round(delta)) or 1)
    elif op < 0.8:
        choices = _specials(cs, lo, hi, desc.dtype.startswith("f"))
        if choices:
            flat[i] = choices[int(rng.integers(len(choices)))]
    else:
        raw = flat[i:i + 1].view(np.uint8)
        raw[int(rng.integers(raw.size))] ^= np.uint8(1 << int(rng.integers(8)))
    out.data[name] = _clamp_buffer(cs, name, desc.dtype, buf, rng)
    return out


# -- verdicts -----------------------------------------------------------------------------

@dataclass
class TrialConfig:
    trials: int = 100
    tolerance: float = 1e-5
    seed: int = 0
    budget_multiplier: int = 64
    min_budget: int = 10**6
    max_steps: int = 10**8
    mode: str = "uniform"
    size_max: int = 64
    constraints: object = None  # dict or path to a JSON file
    p_fresh: float = 0.25
    attempts_factor: int = 4
    workers: Optional[int] = None

    def __post_init__(self):
        if self.trials < 1:
            raise CutflowError("trial count must be at least 1")
        if self.tolerance < 0:
            raise CutflowError("tolerance must be non-negative")
        if self.mode not in ("uniform", "coverage"):
            raise CutflowError(f"unknown mode {self.mode!r}")


@dataclass
class TrialStats:
    trials_run: int = 0
    conclusive: int = 0
    uninteresting: int = 0
    coverage: int = 0
    corpus_size: int = 0
    both_fault_kinds: dict = field(default_factory=dict)

    def to_doc(self) -> dict:
        return {"trials_run": self.trials_run, "conclusive": self.conclusive,
                "uninteresting": self.uninteresting, "coverage": self.coverage,
                "corpus_size": self.corpus_size,
                "both_fault_kinds": dict(sorted(self.both_fault_kinds.items()))}


@dataclass
class Verdict:
    outcome: str
    trial: Optional[int] = None
    cause: Optional[str] = None
    detail: str = ""
    original_faulted: bool = False
    stats: TrialStats = field(default_factory=TrialStats)

    @property
    def valid(self) -> bool:
        return self.outcome == VALID

    @property
    def invalid(self) -> bool:
        return self.outcome == INVALID

    def to_doc(self) -> dict:
        return {"outcome": self.outcome, "trial": self.trial, "cause": self.cause,
                "detail": self.detail, "original_faulted": self.original_faulted,
                "stats": self.stats.to_doc()}

    def summary(self) -> str:
        if self.outcome == INVALID:
            where = "" if self.trial is None else f" at trial {self.trial}"
            return f"Invalid ({self.cause}){where}: {self.detail}"
        if self.outcome == VALID:
            return f"Valid after {self.stats.conclusive} trials"
        return f"Inconclusive ({self.stats.uninteresting} uninteresting trials)"

    def advice(self) -> Optional[str]:
        if not self.stats.uninteresting:
            return None
        kinds = ", ".join(f"{k} x{n}" for k, n in sorted(self.stats.both_fault_kinds.items()))
        return (f"{self.stats.uninteresting} trial(s) faulted in both versions ({kinds}); "
                "consider tightening symbol or value constraints")


def classify(a: ExecutionOutcome, b: ExecutionOutcome, names, tolerance: float) -> tuple:
    """(kind, cause, comparison, original_faulted); kind is pass, fail or uninteresting."""
    if not a.completed and not b.completed:
        return "uninteresting", None, Comparison("Equal"), True
    if a.completed and not b.completed:
        cause = HANG_ONLY_TRANSFORMED if b.status == TIMEOUT else CRASH_ONLY_TRANSFORMED
        return "fail", cause, Comparison("StatusMismatch"), False
    if not a.completed:
        return "fail", STATE_DIFFERS, Comparison("StatusMismatch"), True
    cmp = compare_states(a, b, names, tolerance)
    if cmp.equal:
        return "pass", None, cmp, False
    return "fail", STATE_DIFFERS, cmp, False


def _detail(cause: str, cmp: Comparison, a: ExecutionOutcome, b: ExecutionOutcome) -> str:
    if cmp.kind == "Differs":
        return cmp.describe()
    if cause in (CRASH_ONLY_TRANSFORMED, HANG_ONLY_TRANSFORMED):
        return f"transformed: {b.describe()}"
    return f"original: {a.describe()}, transformed: {b.describe()}"


@dataclass
class _Trial:
    index: int
    input: ExecutionInput
    a: ExecutionOutcome
    b: ExecutionOutcome
    budget: int
    kind: str
    cause: Optional[str]
    comparison: Comparison
    original_faulted: bool


class _Campaign:
    def __init__(self, c: Cutout, inst: TransformationInstance, cfg: TrialConfig,
                 p: Optional[Program]):
        self.c, self.inst, self.cfg = c, inst, cfg
        try:
            self.tc, _ = apply(inst, c.program)
        except (SiteStale, UnknownElement, TransformationInapplicable) as exc:
            raise TransformationInapplicable(
                f"{inst.address()} does not apply to the cutout: {exc}") from exc
        self.cs = derive_constraints(p if p is not None else c.program, c, cfg.size_max,
                                     cfg.constraints)
        self.names = c.state_names()
        self.stats = TrialStats()
        self._caches = ({}, {})

    def execute(self, k: int, inp: ExecutionInput) -> _Trial:
        a = run(self.c.program, inp, self.cfg.max_steps, self._caches[0])
        budget = max(self.cfg.min_budget, self.cfg.budget_multiplier * a.steps)
        b = run(self.tc, inp, budget, self._caches[1])
        kind, cause, cmp, orig = classify(a, b, self.names, self.cfg.tolerance)
        return _Trial(k, inp, a, b, budget, kind, cause, cmp, orig)

    def record(self, tr: _Trial) -> None:
        self.stats.trials_run += 1
        if tr.kind == "uninteresting":
            self.stats.uninteresting += 1
            key = tr.a.fault.kind if tr.a.fault is not None else tr.a.status
            self.stats.both_fault_kinds[key] = self.stats.both_fault_kinds.get(key, 0) + 1
        else:
            self.stats.conclusive += 1

    def finish(self, failing: Optional[_Trial]):
        if failing is not None:
            v = Verdict(INVALID, failing.index, failing.cause,
                        _detail(failing.cause, failing.comparison, failing.a, failing.b),
                        failing.original_faulted, self.stats)
            return v, self.bundle(failing, v)
        if self.stats.conclusive >= self.cfg.trials:
            return Verdict(VALID, stats=self.stats), None
        return Verdict(INCONCLUSIVE, stats=self.stats), None

    def invalid_code(self):
        diags = validate(self.tc)
        if not diags:
            return None
        detail = "; ".join(str(d) for d in diags[:3])
        return Verdict(INVALID, None, INVALID_CODE, detail, False, self.stats), None

    def bundle(self, tr: _Trial, v: Verdict) -> "ReproducerBundle":
        return ReproducerBundle(self.c.program, self.tc, tr.input, (tr.a, tr.b), v, self.inst,
                                self.cfg.seed, tr.index, self.cfg.tolerance, list(self.names),
                                self.cfg.max_steps, tr.budget, __version__)


def _workers(cfg: TrialConfig) -> int:
    if cfg.workers is not None:
        return max(1, cfg.workers)
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def verify(c: Cutout, inst: TransformationInstance, cfg: Optional[TrialConfig] = None,
           p: Optional[Program] = None) -> tuple:
    """Uniform differential fuzzing; returns (Verdict, ReproducerBundle or None).

    ``p`` is the program ``c`` was cut from; it supplies loop context for
    the constraints.  Trials are drawn until ``cfg.trials`` of them are
    conclusive or ``attempts_factor * trials`` have run.
    """
    cfg = cfg or TrialConfig()
    if cfg.mode == "coverage":
        return coverage_guided_loop(c, inst, cfg, p)
    camp = _Campaign(c, inst, cfg, p)
    early = camp.invalid_code()
    if early is not None:
        return early
    limit = cfg.attempts_factor * cfg.trials
    width = _workers(cfg)
    k = 0
    pool = ThreadPoolExecutor(width) if width > 1 else None
    try:
        while k < limit and camp.stats.conclusive < cfg.trials:
            need = cfg.trials - camp.stats.conclusive
            batch = list(range(k, min(limit, k + max(need, width) if width > 1 else k + 1)))
            inputs = [sample(camp.cs, c, trial_rng(cfg.seed, i)) for i in batch]
            if pool is None:
                results = [camp.execute(i, x) for i, x in zip(batch, inputs)]
            else:
                results = list(pool.map(camp.execute, batch, inputs))
            for tr in results:
                if camp.stats.conclusive >= cfg.trials:
                    break
                camp.record(tr)
                if tr.kind == "fail":
                    return camp.finish(tr)
            k = batch[-1] + 1
    finally:
        if pool is not None:
            pool.shutdown()
    return camp.finish(None)


def coverage_signature(a: ExecutionOutcome, b: ExecutionOutcome) -> frozenset:
    return frozenset("o:" + k for k in a.coverage) | frozenset("t:" + k for k in b.coverage)


def coverage_guided_loop(c: Cutout, inst: TransformationInstance,
                         cfg: Optional[TrialConfig] = None, p: Optional[Program] = None) -> tuple:
    """Like :func:`verify`, but mutates corpus inputs that reached new coverage."""
    cfg = cfg or TrialConfig(mode="coverage")
    camp = _Campaign(c, inst, cfg, p)
    early = camp.invalid_code()
    if early is not None:
        return early
    corpus: list = []
    seen: set = set()
    limit = cfg.attempts_factor * cfg.trials
    for k in range(limit):
        if camp.stats.conclusive >= cfg.trials:
            break
        rng = trial_rng(cfg.seed, k)
        if not corpus or rng.random() < cfg.p_fresh:
            inp = sample(camp.cs, c, rng)
        else:
            parent = corpus[-1] if rng.random() < 0.5 else corpus[int(rng.integers(len(corpus)))]
            inp = mutate(parent, camp.cs, c, rng)
        tr = camp.execute(k, inp)
        camp.record(tr)
        sig = coverage_signature(tr.a, tr.b)
        if not corpus or not sig <= seen:
            corpus.append(inp)
            seen |= sig
        camp.stats.coverage = len(seen)
        camp.stats.corpus_size = len(corpus)
        if tr.kind == "fail":
            return camp.finish(tr)
    return camp.finish(None)


# -- reproducer bundles -----------------------------------------------------------------------

def _sha(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


def outcome_summary(o: ExecutionOutcome) -> dict:
    return {
        "status": o.status,
        "fault": None if o.fault is None else
        {"kind": o.fault.kind, "location": o.fault.location, "detail": o.fault.detail},
        "steps": o.steps,
        "coverage": sorted(o.coverage),
        "warnings": [str(w) for w in o.warnings],
        "data": {name: {"shape": list(arr.shape), "dtype": str(arr.dtype),
                        "sha256": _sha(np.ascontiguousarray(arr).tobytes())}
                 for name, arr in sorted(o.data.items())},
    }


@dataclass
class ReplayResult:
    outcomes: tuple
    kind: str
    cause: Optional[str]
    comparison: Comparison
    report: dict
    reproduced: bool

    @property
    def diverges(self) -> bool:
        return self.kind == "fail"

    def report_bytes(self) -> bytes:
        return canonical_json(self.report)


@dataclass
class ReproducerBundle:
    original: Program
    transformed: Program
    input: ExecutionInput
    outcomes: tuple
    verdict: Verdict
    instance: Optional[TransformationInstance]
    seed: int
    trial: int
    tolerance: float
    system_state: list
    max_steps: int
    budget: int
    tool_version: str = __version__

    FILES = ("original.cfprog.json", "transformed.cfprog.json", "input.cfdata", "report.json")

    def report(self, outcomes: Optional[tuple] = None, verdict: Optional[dict] = None) -> dict:
        a, b = outcomes or self.outcomes
        kind, cause, cmp, orig = classify(a, b, self.system_state, self.tolerance)
        return {
            "format": "cutflow-bundle",
            "version": BUNDLE_VERSION,
            "tool_version": self.tool_version,
            "seed": self.seed,
            "trial": self.trial,
            "transformation": None if self.instance is None else self.instance.to_doc(),
            "address": None if self.instance is None else self.instance.address(),
            "tolerance": self.tolerance,
            "system_state": list(self.system_state),
            "budget": {"original": self.max_steps, "transformed": self.budget},
            "verdict": verdict if verdict is not None else self.verdict.to_doc(),
            "replayed": {"kind": kind, "cause": cause, "original_faulted": orig,
                         "comparison": {"kind": cmp.kind, "container": cmp.container,
                                        "index": None if cmp.index is None else list(cmp.index),
                                        "original": _jsonable(cmp.a_val),
                                        "transformed": _jsonable(cmp.b_val)}},
            "outcomes": {"original": outcome_summary(a), "transformed": outcome_summary(b)},
            "digests": self.digests(),
        }

    def digests(self) -> dict:
        from .fileformat import serialize

        return {"original.cfprog.json": _sha(serialize(self.original)),
                "transformed.cfprog.json": _sha(serialize(self.transformed)),
                "input.cfdata": _sha(encode_data(self.input.symbols, self.input.data))}

    def write(self, directory: str) -> str:
        os.makedirs(directory, exist_ok=True)
        save_program(self.original, os.path.join(directory, "original.cfprog.json"))
        save_program(self.transformed, os.path.join(directory, "transformed.cfprog.json"))
        with open(os.path.join(directory, "input.cfdata"), "wb") as fh:
            fh.write(encode_data(self.input.symbols, self.input.data))
        with open(os.path.join(directory, "report.json"), "wb") as fh:
            fh.write(canonical_json(self.report()))
        return directory

    @staticmethod
    def load(directory: str) -> "ReproducerBundle":
        for name in ReproducerBundle.FILES:
            if not os.path.isfile(os.path.join(directory, name)):
                raise MalformedDocument(f"bundle {directory} lacks {name}")
        try:
            with open(os.path.join(directory, "report.json")) as fh:
                rep = json.load(fh)
            if rep.get("format") != "cutflow-bundle" or rep.get("version") != BUNDLE_VERSION:
                raise MalformedDocument(f"unsupported bundle report in {directory}")
            a = load_program(os.path.join(directory, "original.cfprog.json"))
            b = load_program(os.path.join(directory, "transformed.cfprog.json"))
            with open(os.path.join(directory, "input.cfdata"), "rb") as fh:
                symbols, data = decode_data(fh.read())
            v = rep["verdict"]
            stats = TrialStats(**{k: v["stats"][k] for k in TrialStats().to_doc()})
            verdict = Verdict(v["outcome"], v["trial"], v["cause"], v["detail"],
                              v["original_faulted"], stats)
            inst = None if rep["transformation"] is None else \
                TransformationInstance.from_doc(rep["transformation"])
            bundle = ReproducerBundle(a, b, ExecutionInput(symbols, data), None, verdict, inst,
                                      rep["seed"], rep["trial"], rep["tolerance"],
                                      list(rep["system_state"]), rep["budget"]["original"],
                                      rep["budget"]["transformed"], rep["tool_version"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedDocument(f"corrupt bundle {directory}: {exc}") from None
        bundle._stored = rep
        return bundle

    def replay(self) -> ReplayResult:
        a = run(self.original, self.input, self.max_steps)
        b = run(self.transformed, self.input, self.budget)
        kind, cause, cmp, _ = classify(a, b, self.system_state, self.tolerance)
        rep = self.report((a, b), self.verdict.to_doc())
        stored = getattr(self, "_stored", None)
        if stored is None and self.outcomes is not None:
            stored = self.report()
        return ReplayResult((a, b), kind, cause, cmp, rep, stored == rep)


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    if isinstance(v, tuple):
        return list(v)
    return v


def replay(directory: str) -> ReplayResult:
    return ReproducerBundle.load(directory).replay()


__all__ = [
    "Bound", "SymbolConstraint", "ConstraintSet", "derive_constraints", "loop_ranges",
    "sample", "mutate", "trial_rng", "TrialConfig", "TrialStats", "Verdict", "classify",
    "verify", "coverage_guided_loop", "coverage_signature", "ReproducerBundle",
    "ReplayResult", "replay", "outcome_summary",
    "VALID", "INVALID", "INCONCLUSIVE", "STATE_DIFFERS", "CRASH_ONLY_TRANSFORMED",
    "HANG_ONLY_TRANSFORMED", "INVALID_CODE", "INDEX_USE", "LOOP_BOUND", "SIZE_SYMBOL",
    "USER_PROVIDED", "DEFAULT",
]
