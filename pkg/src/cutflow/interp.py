"""Deterministic reference interpreter.

Map scopes are evaluated node-by-node over their whole iteration domain
with numpy: every node of a scope body processes all domain points (in
lexicographic order) before the next node runs.  For race-free maps this
is indistinguishable from sequential execution; writes that collide
without a combiner fault instead of silently picking a winner.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .analysis import is_copy_edge, scope_dict
from .errors import DivisionByZero, ExprError, InputShapeMismatch, UnboundSymbol, UnknownContainer
from .ir import COMPUTE_KINDS, AccessNode, MapEntry, Program, State
from .symexpr import BinOp, BoolOp, Call, Cmp, Const, Expr, Neg, Not, Sym, eval_int, evaluate

NP_DTYPES = {"f64": np.float64, "f32": np.float32, "i64": np.int64, "i32": np.int32,
             "bool": np.bool_}
DEFAULT_BUDGET = 10**9

COMPLETED = "Completed"
FAULT = "Fault"
TIMEOUT = "Timeout"


@dataclass
class ExecutionInput:
    """Concrete symbol binding plus buffers for (some) non-transient containers."""

    symbols: dict
    data: dict = field(default_factory=dict)

    def copy(self) -> "ExecutionInput":
        return ExecutionInput(dict(self.symbols), {k: v.copy() for k, v in self.data.items()})


@dataclass(frozen=True)
class Fault:
    kind: str
    location: str
    detail: str = ""


@dataclass
class ExecutionOutcome:
    status: str
    data: dict
    coverage: frozenset
    steps: int
    fault: Optional[Fault] = None
    warnings: tuple = ()

    @property
    def completed(self) -> bool:
        return self.status == COMPLETED

    def describe(self) -> str:
        if self.fault is not None:
            return f"{self.status}({self.fault.kind} at {self.fault.location})"
        return self.status


class _Trap(Exception):
    def __init__(self, fault: Fault):
        super().__init__(fault.kind)
        self.fault = fault


class _OutOfSteps(Exception):
    pass


def run(p: Program, inp: ExecutionInput, budget: Optional[int] = DEFAULT_BUDGET,
        cache: Optional[dict] = None) -> ExecutionOutcome:
    """Execute ``p`` on ``inp``.  Faults and timeouts are returned, not raised.

    ``cache`` may be any dict owned by the caller; it memoizes per-program
    analyses across runs and must not be shared between different or
    modified programs.
    """
    machine = _Machine(p, inp, DEFAULT_BUDGET if budget is None else budget,
                       {} if cache is None else cache)
    return machine.execute()


class _Machine:
    def __init__(self, p: Program, inp: ExecutionInput, budget: int, cache: dict):
        self.p = p
        self.budget = budget
        self.steps = 0
        self.coverage: set = set()
        self.warnings: list = []
        self.env: dict = {}
        self._scopes: dict = cache.setdefault("scopes", {})
        self._orders: dict = cache.setdefault("orders", {})
        self._out: dict = cache.setdefault("out", {})
        if "free" not in cache:
            cache["free"] = p.free_symbols()
        missing = [s for s in cache["free"] if s not in inp.symbols]
        if missing:
            raise InputShapeMismatch(f"missing values for symbols {missing}")
        for k, v in inp.symbols.items():
            self.env[k] = int(v)
        self.arrays: dict = {}
        for name, desc in p.containers.items():
            try:
                shape = tuple(eval_int(s, self.env) for s in desc.shape)
            except ExprError as exc:
                raise InputShapeMismatch(f"cannot size container {name}: {exc}") from None
            if any(d < 0 for d in shape):
                raise InputShapeMismatch(f"negative extent for container {name}: {shape}")
            dt = NP_DTYPES[desc.dtype]
            if name in inp.data:
                if desc.transient:
                    raise InputShapeMismatch(f"container {name} is transient")
                buf = np.asarray(inp.data[name])
                if buf.size != math.prod(shape):
                    raise InputShapeMismatch(
                        f"buffer for {name} has {buf.size} elements, expected {math.prod(shape)}")
                if buf.dtype != np.dtype(dt):
                    raise InputShapeMismatch(f"buffer for {name} has dtype {buf.dtype}, expected {desc.dtype}")
                self.arrays[name] = buf.reshape(shape).copy()
            else:
                self.arrays[name] = np.zeros(shape, dtype=dt)

    # -- driver -----------------------------------------------------------

    def execute(self) -> ExecutionOutcome:
        status, fault = COMPLETED, None
        with np.errstate(all="ignore"):
            try:
                self._run_machine()
            except _Trap as trap:
                status, fault = FAULT, trap.fault
            except _OutOfSteps:
                status = TIMEOUT
        data = {name: arr.copy() for name, arr in self.arrays.items()
                if not self.p.containers[name].transient}
        return ExecutionOutcome(status, data, frozenset(self.coverage), self.steps, fault,
                                tuple(self.warnings))

    def _tick(self, n: int) -> None:
        self.steps += int(n)
        if self.steps > self.budget:
            raise _OutOfSteps()

    def _run_machine(self) -> None:
        sid = self.p.start
        out_edges = self._out
        while True:
            self._run_state(self.p.states[sid])
            if sid not in out_edges:
                out_edges[sid] = self.p.out_interstate(sid)
            taken = None
            for e in out_edges[sid]:
                try:
                    ok = bool(evaluate(e.condition, self.env))
                except UnboundSymbol as exc:
                    raise _Trap(Fault("UnboundSymbol", e.id, str(exc))) from None
                except DivisionByZero as exc:
                    raise _Trap(Fault("DivisionByZero", e.id, str(exc))) from None
                if ok:
                    if taken is None:
                        taken = e
                    else:
                        self.warnings.append(f"NondeterminismWarning: {sid} has several true guards")
                        break
            if taken is None:
                return
            self.coverage.add(f"edge:{taken.id}")
            try:
                updates = {k: int(evaluate(v, self.env)) for k, v in taken.assignments.items()}
            except (UnboundSymbol, DivisionByZero) as exc:
                raise _Trap(Fault(type(exc).__name__, taken.id, str(exc))) from None
            self.env.update(updates)
            self._tick(1)
            sid = taken.dst

    # -- states and scopes ------------------------------------------------

    def _run_state(self, state: State) -> None:
        if state.id not in self._scopes:
            self._scopes[state.id] = scope_dict(state)
            self._orders[state.id] = state.topological_order()
        sd = self._scopes[state.id]
        order = self._orders[state.id]
        for nid in order:
            if sd[nid] is not None:
                continue
            node = state.nodes[nid]
            if isinstance(node, AccessNode):
                for e in state.in_edges(nid):
                    if is_copy_edge(state, e):
                        self._copy(state, e)
            elif isinstance(node, COMPUTE_KINDS):
                self._tasklet(state, node, {}, 1)
            elif isinstance(node, MapEntry):
                self._scope(state, node, {}, 1, sd, order)

    def _scope(self, state: State, entry: MapEntry, domain: dict, size: int, sd, order) -> None:
        domain, size = self._expand(entry, domain, size)
        if size == 0:
            return
        for nid in order:
            if sd[nid] != entry.id:
                continue
            node = state.nodes[nid]
            if isinstance(node, COMPUTE_KINDS):
                self._tasklet(state, node, domain, size)
            elif isinstance(node, MapEntry):
                self._scope(state, node, domain, size, sd, order)

    def _expand(self, entry: MapEntry, domain: dict, size: int) -> tuple:
        for name, rng in entry.domain():
            env = {**self.env, **domain}
            try:
                b = _as_int_array(self._vec(rng.begin, env), size)
                e = _as_int_array(self._vec(rng.end, env), size)
                s = _as_int_array(self._vec(rng.step, env), size)
            except _Trap as trap:
                raise _Trap(Fault(trap.fault.kind, entry.id, trap.fault.detail)) from None
            if np.any(s < 1):
                raise _Trap(Fault("BadStep", entry.id, f"non-positive step for {name}"))
            counts = np.maximum(0, -(-(e - b) // s))
            total = int(counts.sum())
            offsets = np.cumsum(counts) - counts
            local = np.arange(total, dtype=np.int64) - np.repeat(offsets, counts)
            values = np.repeat(b, counts) + np.repeat(s, counts) * local
            domain = {k: np.repeat(v, counts) for k, v in domain.items()}
            domain[name] = values
            size = total
        return domain, size

    # -- tasklets ---------------------------------------------------------

    def _tasklet(self, state: State, node, domain: dict, size: int) -> None:
        self._tick(size)
        env = {**self.env, **domain}
        values = {}
        for e in state.in_edges(node.id):
            if e.memlet is None or e.dst_conn is None:
                continue
            arr = self.arrays[e.memlet.data]
            idx = self._indices(node.id, e.memlet, arr, env, size)
            values[e.dst_conn] = arr[idx]
        env.update(values)
        results = {}
        for out, expr in node.code.items():
            try:
                results[out] = self._vec(expr, env, node.id)
            except _Trap as trap:
                raise _Trap(Fault(trap.fault.kind, node.id, trap.fault.detail)) from None
        for e in state.out_edges(node.id):
            if e.memlet is None or e.src_conn is None:
                continue
            m = e.memlet
            arr = self.arrays[m.data]
            idx = self._indices(node.id, m, arr, env, size)
            val = np.broadcast_to(np.asarray(results[e.src_conn]), (size,)).astype(arr.dtype)
            if m.wcr == "sum":
                np.add.at(arr, idx, val)
            elif m.wcr == "min":
                np.minimum.at(arr, idx, val)
            elif m.wcr == "max":
                np.maximum.at(arr, idx, val)
            else:
                if size > 1 and arr.ndim > 0:
                    flat = np.ravel_multi_index(idx, arr.shape)
                    if np.unique(flat).size != size:
                        raise _Trap(Fault("WriteConflict", node.id,
                                          f"several map points write the same element of {m.data}"))
                arr[idx] = val

    def _indices(self, node_id: str, memlet, arr: np.ndarray, env: dict, size: int) -> tuple:
        if memlet.subset.rank != arr.ndim:
            raise _Trap(Fault("RankMismatch", node_id, f"access to {memlet.data}"))
        idx = []
        for k, d in enumerate(memlet.subset.dims):
            if not d.is_index():
                raise _Trap(Fault("NonScalarAccess", node_id,
                                  f"tasklet memlet on {memlet.data} moves more than one element"))
            try:
                v = _as_int_array(self._vec(d.begin, env), size)
            except _Trap as trap:
                raise _Trap(Fault(trap.fault.kind, node_id, trap.fault.detail)) from None
            bad = (v < 0) | (v >= arr.shape[k])
            if np.any(bad):
                first = int(np.argmax(bad))
                raise _Trap(Fault("OutOfBounds", node_id,
                                  f"{memlet.data} dim {k} index {int(v[first])} outside [0, {arr.shape[k]})"))
            idx.append(v)
        return tuple(idx)

    # -- copies -----------------------------------------------------------

    def _copy(self, state: State, e) -> None:
        m = e.memlet
        dst_name = state.nodes[e.dst].data
        src, dst = self.arrays[m.data], self.arrays[dst_name]
        src_sl = self._slices(e.id, m.subset, src)
        dst_sub = m.other_subset if m.other_subset is not None else m.subset
        dst_sl = self._slices(e.id, dst_sub, dst)
        chunk = src[src_sl]
        target = dst[dst_sl]
        if chunk.size != target.size:
            raise _Trap(Fault("CopyShapeMismatch", e.id, f"{chunk.size} vs {target.size} elements"))
        self._tick(chunk.size)
        dst[dst_sl] = chunk.reshape(target.shape).astype(dst.dtype)

    def _slices(self, where: str, subset, arr: np.ndarray) -> tuple:
        if subset.rank != arr.ndim:
            raise _Trap(Fault("RankMismatch", where, "copy subset rank"))
        out = []
        for k, d in enumerate(subset.dims):
            try:
                b, e, s = (eval_int(x, self.env) for x in (d.begin, d.end, d.step))
            except (UnboundSymbol, DivisionByZero) as exc:
                raise _Trap(Fault(type(exc).__name__, where, str(exc))) from None
            if s < 1 or e < b:
                raise _Trap(Fault("BadRange", where, f"range {b}:{e}:{s}"))
            count = -(-(e - b) // s)
            if count and (b < 0 or b + (count - 1) * s >= arr.shape[k]):
                raise _Trap(Fault("OutOfBounds", where, f"dim {k} range {b}:{e}:{s} outside [0, {arr.shape[k]})"))
            out.append(slice(b, e, s))
        return tuple(out)

    # -- vectorized expression evaluation ----------------------------------

    def _vec(self, e: Expr, env: Mapping, node_id: str = ""):
        if isinstance(e, Const):
            return e.value
        if isinstance(e, Sym):
            try:
                return env[e.name]
            except KeyError:
                raise _Trap(Fault("UnboundSymbol", node_id, e.name)) from None
        if isinstance(e, BinOp):
            a, b = self._vec(e.left, env, node_id), self._vec(e.right, env, node_id)
            return _binop(e.op, a, b)
        if isinstance(e, Cmp):
            a, b = self._vec(e.left, env, node_id), self._vec(e.right, env, node_id)
            return _CMP[e.op](a, b)
        if isinstance(e, BoolOp):
            a, b = self._vec(e.left, env, node_id), self._vec(e.right, env, node_id)
            return np.logical_and(a, b) if e.op == "and" else np.logical_or(a, b)
        if isinstance(e, Not):
            return np.logical_not(self._vec(e.operand, env, node_id))
        if isinstance(e, Neg):
            return np.negative(self._vec(e.operand, env, node_id))
        if isinstance(e, Call):
            if e.fn == "select":
                cond = np.asarray(self._vec(e.args[0], env, node_id), dtype=bool)
                if node_id:
                    key = f"select:{node_id}:{_select_key(e)}"
                    if cond.any():
                        self.coverage.add(key + ":T")
                    if not cond.all():
                        self.coverage.add(key + ":F")
                a = self._vec(e.args[1], env, node_id)
                b = self._vec(e.args[2], env, node_id)
                return np.where(cond, a, b)
            args = [self._vec(a, env, node_id) for a in e.args]
            if e.fn == "min":
                out = args[0]
                for a in args[1:]:
                    out = np.minimum(out, a)
                return out
            if e.fn == "max":
                out = args[0]
                for a in args[1:]:
                    out = np.maximum(out, a)
                return out
            return _UFUNCS[e.fn](args[0])
        raise TypeError(e)


def _select_key(e: Call) -> str:
    # stable across processes, unlike hash()
    return format(zlib.crc32(str(e.args[0]).encode()), "08x")


def _is_int(x) -> bool:
    return np.issubdtype(np.asarray(x).dtype, np.integer) or np.asarray(x).dtype == np.bool_


def _binop(op: str, a, b):
    if op == "+":
        return np.add(a, b)
    if op == "-":
        return np.subtract(a, b)
    if op == "*":
        return np.multiply(a, b)
    if op in ("//", "%", "/"):
        if _is_int(a) and _is_int(b) and np.any(np.asarray(b) == 0):
            raise _Trap(Fault("DivisionByZero", "", f"integer {op} by zero"))
        if op == "//":
            return np.floor_divide(a, b)
        if op == "%":
            return np.mod(a, b)
        return np.true_divide(a, b)
    raise TypeError(op)


_CMP = {"<": np.less, "<=": np.less_equal, ">": np.greater, ">=": np.greater_equal,
        "==": np.equal, "!=": np.not_equal}
_UFUNCS = {"abs": np.abs, "sqrt": np.sqrt, "exp": np.exp, "log": np.log, "sin": np.sin,
           "cos": np.cos, "tanh": np.tanh, "floor": np.floor}


def _as_int_array(v, size: int) -> np.ndarray:
    arr = np.asarray(v)
    if not (np.issubdtype(arr.dtype, np.integer) or arr.dtype == np.bool_):
        raise _Trap(Fault("NonIntegerIndex", "", f"index of dtype {arr.dtype}"))
    return np.broadcast_to(arr.astype(np.int64), (size,))


# -- comparison -------------------------------------------------------------

@dataclass(frozen=True)
class Comparison:
    kind: str  # "Equal" | "Differs" | "StatusMismatch"
    container: Optional[str] = None
    index: Optional[tuple] = None
    a_val: object = None
    b_val: object = None

    @property
    def equal(self) -> bool:
        return self.kind == "Equal"

    def describe(self) -> str:
        if self.kind == "Differs":
            return f"{self.container}{list(self.index) if self.index is not None else ''}: {self.a_val!r} != {self.b_val!r}"
        return self.kind


def compare_states(a: ExecutionOutcome, b: ExecutionOutcome, containers, tolerance: float = 0.0) -> Comparison:
    """Compare the listed containers of two outcomes.

    Floats differ when |x-y| > tol*(1+max(|x|,|y|)) or exactly one is NaN;
    ``tolerance == 0`` and all non-float types compare bit for bit.
    """
    if a.completed != b.completed:
        return Comparison("StatusMismatch")
    if not a.completed:
        return Comparison("Equal")
    for name in containers:
        if name not in a.data or name not in b.data:
            raise UnknownContainer(f"container {name!r} not in both outcomes")
        x, y = a.data[name], b.data[name]
        if x.shape != y.shape or x.dtype != y.dtype:
            return Comparison("Differs", name, None, x.shape, y.shape)
        bad = _differing(x, y, tolerance)
        if bad.any():
            flat = int(np.argmax(bad.ravel()))
            index = tuple(int(i) for i in np.unravel_index(flat, x.shape)) if x.ndim else ()
            return Comparison("Differs", name, index, _py(x[index]), _py(y[index]))
    return Comparison("Equal")


def _differing(x: np.ndarray, y: np.ndarray, tol: float) -> np.ndarray:
    if np.issubdtype(x.dtype, np.floating) and tol > 0:
        nx, ny = np.isnan(x), np.isnan(y)
        with np.errstate(all="ignore"):
            scale = tol * (1.0 + np.maximum(np.abs(x), np.abs(y)))
            diff = np.abs(x.astype(np.float64) - y.astype(np.float64)) > scale
        return (nx != ny) | (diff & ~nx & ~ny)
    xb = np.ascontiguousarray(x).view(np.uint8).reshape(x.shape + (-1,)) if x.ndim else \
        np.frombuffer(np.ascontiguousarray(x).tobytes(), np.uint8)[None]
    yb = np.ascontiguousarray(y).view(np.uint8).reshape(y.shape + (-1,)) if y.ndim else \
        np.frombuffer(np.ascontiguousarray(y).tobytes(), np.uint8)[None]
    out = (xb != yb).any(axis=-1)
    return out if x.ndim else out.reshape(())


def _py(v):
    v = np.asarray(v)
    return v.item()
