"""Parametric dataflow program representation.

A :class:`Program` is a state machine.  Each :class:`State` holds an
acyclic dataflow multigraph of access nodes, tasklets, map scopes and
opaque calls, connected by edges that carry a :class:`Memlet` naming the
exact subset of a container that moves along the edge.
"""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field
from typing import Dict, Iterator, Optional, Union

from .errors import DuplicateName, IRError, UnknownContainer, UnknownElement
from .symexpr import (Cmp, Const, Expr, Range, SubsetRange, Sym, as_expr,
                      free_symbols, hull, parse, propagate, simplify)

DTYPES = ("f64", "f32", "i64", "i32", "bool")
WCR_KINDS = ("sum", "min", "max")


@dataclass
class DataDescriptor:
    name: str
    dtype: str
    shape: tuple
    transient: bool = False

    def free_symbols(self) -> frozenset:
        out = frozenset()
        for s in self.shape:
            out |= free_symbols(s)
        return out

    @property
    def rank(self) -> int:
        return len(self.shape)


@dataclass
class SymbolInfo:
    """A program symbol with optional user constraints (inclusive bounds)."""

    lo: Optional[int] = None
    hi: Optional[int] = None


@dataclass
class AccessNode:
    id: str
    data: str


@dataclass
class Tasklet:
    id: str
    label: str
    inputs: tuple
    outputs: tuple
    code: dict  # outlet -> Expr


@dataclass
class Opaque:
    """A library call or user callback.  Executable, but flagged."""

    id: str
    label: str
    inputs: tuple
    outputs: tuple
    code: dict
    may_have_side_effects: bool = True


@dataclass
class MapEntry:
    id: str
    label: str
    params: tuple
    ranges: tuple  # Range per param

    def domain(self) -> list:
        return list(zip(self.params, self.ranges))


@dataclass
class MapExit:
    id: str
    entry: str


Node = Union[AccessNode, Tasklet, Opaque, MapEntry, MapExit]
COMPUTE_KINDS = (Tasklet, Opaque)


@dataclass
class Memlet:
    data: str
    subset: SubsetRange
    wcr: Optional[str] = None
    other_subset: Optional[SubsetRange] = None  # destination subset of a copy

    def __str__(self):
        s = f"{self.data}[{self.subset}]"
        if self.other_subset is not None:
            s += f" -> [{self.other_subset}]"
        if self.wcr:
            s += f" (wcr {self.wcr})"
        return s


@dataclass
class Edge:
    id: str
    src: str
    src_conn: Optional[str]
    dst: str
    dst_conn: Optional[str]
    memlet: Optional[Memlet] = None


@dataclass
class State:
    id: str
    label: str = ""
    nodes: Dict[str, Node] = field(default_factory=dict)
    edges: Dict[str, Edge] = field(default_factory=dict)

    def in_edges(self, node_id: str) -> list:
        return [e for e in self.edges.values() if e.dst == node_id]

    def out_edges(self, node_id: str) -> list:
        return [e for e in self.edges.values() if e.src == node_id]

    def predecessors(self, node_id: str) -> list:
        return _unique(e.src for e in self.in_edges(node_id))

    def successors(self, node_id: str) -> list:
        return _unique(e.dst for e in self.out_edges(node_id))

    def access_nodes(self) -> list:
        return [n for n in self.nodes.values() if isinstance(n, AccessNode)]

    def topological_order(self) -> list:
        """Kahn's algorithm, ties broken by node ID."""
        indeg = {n: 0 for n in self.nodes}
        succ = {n: [] for n in self.nodes}
        for e in self.edges.values():
            if e.src in indeg and e.dst in indeg:
                indeg[e.dst] += 1
                succ[e.src].append(e.dst)
        order = []
        ready = [n for n in self.nodes if indeg[n] == 0]
        while ready:
            ready.sort(key=id_key)
            n = ready.pop(0)
            order.append(n)
            for m in succ[n]:
                indeg[m] -= 1
                if indeg[m] == 0:
                    ready.append(m)
        if len(order) != len(self.nodes):
            raise IRError(f"state {self.id} contains a cycle")
        return order


@dataclass
class InterstateEdge:
    id: str
    src: str
    dst: str
    condition: Expr = Const(True)
    assignments: dict = field(default_factory=dict)  # symbol -> Expr


@dataclass
class LoopHandle:
    """States created by :meth:`Program.add_loop`."""

    var: str
    init: State
    guard: State
    body: State
    exit_condition: Expr


def _unique(xs) -> list:
    seen, out = set(), []
    for x in xs:
        if x not in seen:
            seen.add(x)
            out.append(x)
    return out


_ID_RE = re.compile(r"([A-Za-z_]*)(\d*)(.*)")


def id_key(ident: str):
    """Natural sort key so that n2 < n10."""
    m = _ID_RE.fullmatch(ident)
    prefix, num, rest = m.groups()
    return (prefix, int(num) if num else -1, rest)


_ACCESS_RE = re.compile(r"^\s*([A-Za-z_]\w*)\s*(?:\[(.*)\])?\s*$", re.S)


def parse_access(text: str) -> tuple:
    """Split ``A[i, 0:N]`` into ("A", SubsetRange) (subset None when absent)."""
    m = _ACCESS_RE.match(text)
    if not m:
        raise IRError(f"bad access expression {text!r}")
    name, sub = m.groups()
    return name, (SubsetRange.parse(sub) if sub is not None else None)


def _parse_code(code) -> dict:
    if isinstance(code, dict):
        return {k: as_expr(v) for k, v in code.items()}
    out = {}
    for stmt in re.split(r"[;\n]", code):
        if not stmt.strip():
            continue
        lhs, rhs = stmt.split("=", 1)
        out[lhs.strip()] = parse(rhs)
    return out


def _parse_range_spec(spec) -> Range:
    if isinstance(spec, Range):
        return spec
    sub = SubsetRange.parse(spec)
    if sub.rank != 1:
        raise IRError(f"bad map range {spec!r}")
    return sub.dims[0]


@dataclass
class Program:
    name: str = "program"
    symbols: Dict[str, SymbolInfo] = field(default_factory=dict)
    containers: Dict[str, DataDescriptor] = field(default_factory=dict)
    states: Dict[str, State] = field(default_factory=dict)
    interstate: Dict[str, InterstateEdge] = field(default_factory=dict)
    start: Optional[str] = None
    next_id: int = 1

    # -- identity ---------------------------------------------------------

    def fresh_id(self, prefix: str) -> str:
        ident = f"{prefix}{self.next_id}"
        self.next_id += 1
        return ident

    def clone(self) -> "Program":
        return copy.deepcopy(self)

    def node_states(self) -> dict:
        return {nid: s.id for s in self.states.values() for nid in s.nodes}

    def edge_states(self) -> dict:
        return {eid: s.id for s in self.states.values() for eid in s.edges}

    def find_node(self, node_id: str) -> tuple:
        for s in self.states.values():
            if node_id in s.nodes:
                return s, s.nodes[node_id]
        raise UnknownElement(f"no node {node_id!r}")

    def all_nodes(self) -> Iterator[tuple]:
        for s in self.states.values():
            for n in s.nodes.values():
                yield s, n

    def out_interstate(self, state_id: str) -> list:
        """Outgoing interstate edges in priority order (by ID)."""
        return sorted((e for e in self.interstate.values() if e.src == state_id), key=lambda e: id_key(e.id))

    def in_interstate(self, state_id: str) -> list:
        return [e for e in self.interstate.values() if e.dst == state_id]

    def assigned_symbols(self) -> set:
        return {k for e in self.interstate.values() for k in e.assignments}

    def free_symbols(self) -> list:
        """Symbols that must be bound by the caller, sorted."""
        assigned = self.assigned_symbols()
        used = set()
        for d in self.containers.values():
            used |= d.free_symbols()
        for s in self.states.values():
            for n in s.nodes.values():
                if isinstance(n, MapEntry):
                    for r in n.ranges:
                        used |= r.free_symbols()
                elif isinstance(n, COMPUTE_KINDS):
                    for c in n.code.values():
                        used |= free_symbols(c)
            for e in s.edges.values():
                if e.memlet is not None:
                    used |= e.memlet.subset.free_symbols()
                    if e.memlet.other_subset is not None:
                        used |= e.memlet.other_subset.free_symbols()
        for e in self.interstate.values():
            used |= free_symbols(e.condition)
            for v in e.assignments.values():
                used |= free_symbols(v)
        local = self.map_params()
        return sorted(s for s in used & set(self.symbols) if s not in assigned and s not in local)

    def map_params(self) -> set:
        return {p for _, n in self.all_nodes() if isinstance(n, MapEntry) for p in n.params}

    # -- builders ---------------------------------------------------------

    def add_symbol(self, name: str, lo: Optional[int] = None, hi: Optional[int] = None) -> str:
        if name in self.containers:
            raise DuplicateName(f"symbol {name!r} collides with a container")
        info = self.symbols.setdefault(name, SymbolInfo())
        if lo is not None:
            info.lo = lo
        if hi is not None:
            info.hi = hi
        return name

    def add_container(self, name: str, shape, dtype: str = "f64",
                      transient: bool = False) -> DataDescriptor:
        if name in self.containers or name in self.symbols:
            raise DuplicateName(f"name {name!r} already defined")
        if dtype not in DTYPES:
            raise IRError(f"unknown dtype {dtype!r}")
        shape = tuple(as_expr(s) for s in shape)
        for s in shape:
            for sym in free_symbols(s):
                self.add_symbol(sym)
        desc = DataDescriptor(name, dtype, shape, transient)
        self.containers[name] = desc
        return desc

    def add_state(self, label: str = "", after: Union[State, LoopHandle, None] = None,
                  condition=None, assignments: Optional[dict] = None) -> State:
        state = State(self.fresh_id("s"), label)
        self.states[state.id] = state
        if self.start is None:
            self.start = state.id
        if isinstance(after, LoopHandle):
            cond = after.exit_condition if condition is None else condition
            self.add_interstate(after.guard, state, cond, assignments)
        elif after is not None:
            self.add_interstate(after, state, condition, assignments)
        return state

    def add_interstate(self, src: State, dst: State, condition=None,
                       assignments: Optional[dict] = None) -> InterstateEdge:
        cond = Const(True) if condition is None else as_expr(condition)
        assigns = {k: as_expr(v) for k, v in (assignments or {}).items()}
        for k in assigns:
            self.add_symbol(k)
        edge = InterstateEdge(self.fresh_id("t"), _sid(src), _sid(dst), cond, assigns)
        self.interstate[edge.id] = edge
        return edge

    def add_loop(self, var: str, begin, end, step: int = 1,
                 before: Union[State, LoopHandle, None] = None, label: str = "loop") -> LoopHandle:
        """Counted state-machine loop ``for var in range(begin, end, step)``.

        Creates (or reuses ``before`` as) the init state, a guard state and
        a body state connected by three interstate edges.  Attach the loop
        exit with ``add_state(after=handle)``.
        """
        if step == 0:
            raise IRError("loop step must be non-zero")
        self.add_symbol(var)
        if isinstance(before, LoopHandle) or before is None:
            init = self.add_state(f"{label}_init", after=before)
        else:
            init = before
        guard = self.add_state(f"{label}_guard")
        body = self.add_state(f"{label}_body")
        cond = Cmp("<" if step > 0 else ">", Sym(var), as_expr(end))
        self.add_interstate(init, guard, None, {var: as_expr(begin)})
        self.add_interstate(guard, body, cond)
        self.add_interstate(body, guard, None, {var: simplify(Sym(var) + step)})
        exit_cond = Cmp(">=" if step > 0 else "<=", Sym(var), as_expr(end))
        return LoopHandle(var, init, guard, body, exit_cond)

    def _check_container(self, name: str):
        if name not in self.containers:
            raise UnknownContainer(f"unknown container {name!r}")

    def add_access(self, state: State, data: str) -> AccessNode:
        self._check_container(data)
        node = AccessNode(self.fresh_id("n"), data)
        state.nodes[node.id] = node
        return node

    def add_tasklet(self, state: State, label: str, inputs, outputs, code) -> Tasklet:
        node = Tasklet(self.fresh_id("n"), label, tuple(inputs), tuple(outputs), _parse_code(code))
        state.nodes[node.id] = node
        return node

    def add_opaque(self, state: State, label: str, inputs, outputs, code,
                   may_have_side_effects: bool = True) -> Opaque:
        node = Opaque(self.fresh_id("n"), label, tuple(inputs), tuple(outputs),
                      _parse_code(code), may_have_side_effects)
        state.nodes[node.id] = node
        return node

    def add_map(self, state: State, label: str, ranges: dict) -> tuple:
        for p in ranges:
            self.add_symbol(p)
        entry = MapEntry(self.fresh_id("n"), label, tuple(ranges),
                         tuple(_parse_range_spec(r) for r in ranges.values()))
        exit_ = MapExit(self.fresh_id("n"), entry.id)
        state.nodes[entry.id] = entry
        state.nodes[exit_.id] = exit_
        return entry, exit_

    def add_memlet(self, state: State, src, src_conn, dst, dst_conn, data: Optional[str] = None,
                   subset=None, wcr: Optional[str] = None, other_subset=None) -> Edge:
        src_id, dst_id = _nid(src), _nid(dst)
        for nid in (src_id, dst_id):
            if nid not in state.nodes:
                raise UnknownElement(f"node {nid!r} not in state {state.id}")
        memlet = None
        if data is not None:
            self._check_container(data)
            if subset is None:
                subset = SubsetRange.full(self.containers[data].shape)
            elif isinstance(subset, str):
                subset = SubsetRange.parse(subset)
            if isinstance(other_subset, str):
                other_subset = SubsetRange.parse(other_subset)
            if wcr is not None and wcr not in WCR_KINDS:
                raise IRError(f"unknown wcr {wcr!r}")
            memlet = Memlet(data, subset, wcr, other_subset)
        edge = Edge(self.fresh_id("e"), src_id, src_conn, dst_id, dst_conn, memlet)
        state.edges[edge.id] = edge
        return edge

    def add_copy(self, state: State, src: AccessNode, dst: AccessNode,
                 subset=None, other_subset=None) -> Edge:
        return self.add_memlet(state, src, None, dst, None, src.data, subset,
                               other_subset=other_subset)

    def add_mapped_tasklet(self, state: State, label: str, map_ranges: dict, inputs: dict,
                           code, outputs: dict, input_nodes: Optional[dict] = None,
                           output_nodes: Optional[dict] = None) -> tuple:
        """Tasklet inside a map with access nodes and propagated outer memlets.

        ``inputs``/``outputs`` map connector names to access strings such as
        ``"A[i, k]"``; an output string may end with ``" (sum)"`` to request a
        write-conflict resolution.  Returns (entry, tasklet, exit).
        """
        input_nodes = dict(input_nodes or {})
        output_nodes = dict(output_nodes or {})
        entry, exit_ = self.add_map(state, label, map_ranges)
        task = self.add_tasklet(state, label, inputs, outputs, code)
        domain = entry.domain()
        seen_in: dict = {}
        for conn, text in inputs.items():
            data, sub = parse_access(text)
            self._check_container(data)
            if data not in input_nodes:
                input_nodes[data] = self.add_access(state, data)
            self.add_memlet(state, entry, f"OUT_{data}", task, conn, data, sub)
            outer = propagate(sub, domain) or SubsetRange.full(self.containers[data].shape)
            seen_in.setdefault(data, []).append(outer)
        for data, subs in seen_in.items():
            self.add_memlet(state, input_nodes[data], None, entry, f"IN_{data}", data,
                            _merge_outer(subs, self.containers[data]))
        if not inputs:
            self.add_memlet(state, entry, None, task, None)
        seen_out: dict = {}
        for conn, text in outputs.items():
            wcr = None
            m = re.match(r"^(.*?)\s*\((sum|min|max)\)\s*$", text)
            if m:
                text, wcr = m.group(1), m.group(2)
            data, sub = parse_access(text)
            self._check_container(data)
            self.add_memlet(state, task, conn, exit_, f"IN_{data}", data, sub, wcr)
            outer = propagate(sub, domain) or SubsetRange.full(self.containers[data].shape)
            seen_out.setdefault(data, ([], wcr))[0].append(outer)
        for data, (subs, wcr) in seen_out.items():
            if data not in output_nodes:
                output_nodes[data] = self.add_access(state, data)
            self.add_memlet(state, exit_, f"OUT_{data}", output_nodes[data], None, data,
                            _merge_outer(subs, self.containers[data]), wcr)
        return entry, task, exit_


def _merge_outer(subs: list, desc: DataDescriptor) -> SubsetRange:
    if len(subs) == 1:
        return subs[0]
    return hull(subs) or SubsetRange.full(desc.shape)


def _sid(s) -> str:
    return s.id if isinstance(s, State) else s


def _nid(n) -> str:
    return n if isinstance(n, str) else n.id


__all__ = [
    "AccessNode", "DataDescriptor", "Edge", "InterstateEdge", "LoopHandle", "MapEntry",
    "MapExit", "Memlet", "Opaque", "Program", "State", "SymbolInfo", "Tasklet",
    "DTYPES", "WCR_KINDS", "id_key", "parse_access",
]
