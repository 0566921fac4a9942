"""Structural queries over programs: scopes, read/write sets, validation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .errors import IRError
from .ir import (COMPUTE_KINDS, WCR_KINDS, AccessNode, MapEntry, MapExit, Program,
                 State)
from .symexpr import SubsetRange, eval_int, free_symbols, propagate, volume


# -- scopes -----------------------------------------------------------------

def scope_dict(state: State) -> dict:
    """node id -> id of the innermost enclosing MapEntry (None at top level).

    A MapExit is considered inside its own scope.  Raises IRError when the
    scope structure is unbalanced.
    """
    order = state.topological_order()
    scope: dict = {}
    for nid in order:
        node = state.nodes[nid]
        candidates = set()
        for e in state.in_edges(nid):
            src = state.nodes[e.src]
            if isinstance(src, MapEntry):
                candidates.add(src.id)
            elif isinstance(src, MapExit):
                if src.entry not in scope:
                    raise IRError(f"map exit {src.id} has no entry")
                candidates.add(scope[src.entry])
            else:
                candidates.add(scope[e.src])
        if isinstance(node, MapExit):
            if node.entry not in state.nodes:
                raise IRError(f"map exit {nid} pairs with unknown entry {node.entry}")
            candidates.discard(node.entry)
            if candidates and candidates != {scope.get(node.entry)}:
                raise IRError(f"map exit {nid} reached from outside its scope")
            scope[nid] = node.entry
            continue
        if len(candidates) > 1:
            raise IRError(f"node {nid} is reached from several scopes")
        scope[nid] = candidates.pop() if candidates else None
    entries = [n for n in state.nodes.values() if isinstance(n, MapEntry)]
    exits = [n for n in state.nodes.values() if isinstance(n, MapExit)]
    paired = {x.entry for x in exits}
    for en in entries:
        if en.id not in paired:
            raise IRError(f"map entry {en.id} has no exit")
    if len(paired) != len(exits):
        raise IRError("several exits share one map entry")
    return scope


def exit_of(state: State, entry_id: str) -> str:
    for n in state.nodes.values():
        if isinstance(n, MapExit) and n.entry == entry_id:
            return n.id
    raise IRError(f"no exit for map entry {entry_id}")


def enclosing_maps(state: State, node_id: str, sd: dict) -> list:
    """MapEntry nodes enclosing ``node_id``, outermost first."""
    out = []
    cur = sd.get(node_id)
    node = state.nodes[node_id]
    if isinstance(node, MapExit):
        cur = sd.get(node.entry)
    elif isinstance(node, MapEntry):
        cur = sd.get(node_id)
    while cur is not None:
        out.append(state.nodes[cur])
        cur = sd.get(cur)
    return list(reversed(out))


def outermost(state: State, node_id: str, sd: dict) -> str:
    """Top-level owner of a node: itself, or its outermost enclosing map entry."""
    node = state.nodes[node_id]
    if isinstance(node, MapExit):
        node_id = node.entry
    chain = enclosing_maps(state, node_id, sd)
    return chain[0].id if chain else node_id


def scope_members(state: State, entry_id: str, sd: dict) -> set:
    """Entry, exit and every node nested (transitively) inside the scope."""
    members = {entry_id, exit_of(state, entry_id)}
    for nid in state.nodes:
        cur = sd.get(nid)
        while cur is not None:
            if cur == entry_id:
                members.add(nid)
                break
            cur = sd.get(cur)
    return members


def closure_of(state: State, node_ids, sd: Optional[dict] = None) -> set:
    """Add the full outermost scope of every node that sits inside a map."""
    sd = scope_dict(state) if sd is None else sd
    out = set()
    for nid in node_ids:
        top = outermost(state, nid, sd)
        if isinstance(state.nodes[top], MapEntry):
            out |= scope_members(state, top, sd)
        else:
            out.add(nid)
    return out


# -- accesses ---------------------------------------------------------------

@dataclass(frozen=True)
class Access:
    data: str
    subset: SubsetRange
    wcr: Optional[str] = None


def _outer_subset(p: Program, state: State, node_id: str, subset: SubsetRange, sd: dict,
                  data: str) -> SubsetRange:
    maps = enclosing_maps(state, node_id, sd)
    domain = [(n, r) for m in maps for n, r in m.domain()]
    if not domain:
        return subset
    out = propagate(subset, domain)
    return out if out is not None else SubsetRange.full(p.containers[data].shape)


def node_accesses(p: Program, state: State, node_id: str, sd: Optional[dict] = None) -> tuple:
    """(reads, writes) of a computation node, propagated to the top level.

    Writes with a conflict-resolution combiner also read their target.
    """
    sd = scope_dict(state) if sd is None else sd
    node = state.nodes[node_id]
    reads, writes = [], []
    if not isinstance(node, COMPUTE_KINDS):
        return reads, writes
    for e in state.in_edges(node_id):
        if e.memlet is not None:
            reads.append(Access(e.memlet.data,
                                _outer_subset(p, state, node_id, e.memlet.subset, sd, e.memlet.data)))
    for e in state.out_edges(node_id):
        if e.memlet is not None:
            acc = Access(e.memlet.data,
                         _outer_subset(p, state, node_id, e.memlet.subset, sd, e.memlet.data),
                         e.memlet.wcr)
            writes.append(acc)
            if acc.wcr:
                reads.append(acc)
    return reads, writes


def copy_accesses(state: State, edge) -> tuple:
    """(reads, writes) of an access-to-access copy edge."""
    m = edge.memlet
    dst = state.nodes[edge.dst]
    dst_subset = m.other_subset if m.other_subset is not None else m.subset
    return [Access(m.data, m.subset)], [Access(dst.data, dst_subset)]


def is_copy_edge(state: State, edge) -> bool:
    return (edge.memlet is not None and isinstance(state.nodes.get(edge.src), AccessNode)
            and isinstance(state.nodes.get(edge.dst), AccessNode))


def owner_accesses(p: Program, state: State, node_ids, sd: Optional[dict] = None) -> tuple:
    """Reads/writes performed by the given set of nodes (and copies between them)."""
    sd = scope_dict(state) if sd is None else sd
    node_ids = set(node_ids)
    reads, writes = [], []
    for nid in state.topological_order():
        if nid not in node_ids:
            continue
        r, w = node_accesses(p, state, nid, sd)
        reads += r
        writes += w
    for e in state.edges.values():
        if e.dst in node_ids and is_copy_edge(state, e):
            r, w = copy_accesses(state, e)
            reads += r
            writes += w
    return reads, writes


def read_write_sets(p: Program) -> tuple:
    """container -> list of subsets, for reads and writes over the whole program."""
    reads: dict = {}
    writes: dict = {}
    for s in p.states.values():
        r, w = owner_accesses(p, s, s.nodes)
        for a in r:
            reads.setdefault(a.data, []).append(a.subset)
        for a in w:
            writes.setdefault(a.data, []).append(a.subset)
    return reads, writes


# -- state machine ----------------------------------------------------------

def state_successors(p: Program, sid: str) -> list:
    return [e.dst for e in p.out_interstate(sid)]


def reachable_states(p: Program, sources, include_sources: bool = False) -> set:
    """States reachable via at least one interstate edge (or the sources themselves)."""
    seen = set(sources) if include_sources else set()
    frontier = list(sources)
    while frontier:
        s = frontier.pop()
        for t in state_successors(p, s):
            if t not in seen:
                seen.add(t)
                frontier.append(t)
    return seen


def reaching_states(p: Program, targets) -> set:
    """States from which some target is reachable via at least one edge."""
    seen: set = set()
    frontier = list(targets)
    while frontier:
        s = frontier.pop()
        for e in p.in_interstate(s):
            if e.src not in seen:
                seen.add(e.src)
                frontier.append(e.src)
    return seen


def descendants(state: State, node_ids) -> set:
    out: set = set()
    frontier = list(node_ids)
    while frontier:
        n = frontier.pop()
        for m in state.successors(n):
            if m not in out:
                out.add(m)
                frontier.append(m)
    return out


def ancestors(state: State, node_ids) -> set:
    out: set = set()
    frontier = list(node_ids)
    while frontier:
        n = frontier.pop()
        for m in state.predecessors(n):
            if m not in out:
                out.add(m)
                frontier.append(m)
    return out


# -- validation -------------------------------------------------------------

@dataclass(frozen=True)
class Diagnostic:
    code: str
    element: str
    message: str
    severity: str = "error"

    def __str__(self):
        return f"{self.severity}: {self.code} at {self.element}: {self.message}"


def validate(p: Program, warnings: bool = False) -> list:
    """Return diagnostics; an empty list means the program is well formed.

    Warnings (e.g. possibly conflicting writes inside a map) are only
    included when ``warnings`` is true.
    """
    diags: list = []
    add = lambda code, el, msg, sev="error": diags.append(Diagnostic(code, el, msg, sev))  # noqa: E731

    for name in p.symbols:
        if name in p.containers:
            add("NameCollision", name, "symbol shares a name with a container")
    for d in p.containers.values():
        for sym in d.free_symbols():
            if sym not in p.symbols:
                add("UnknownSymbol", d.name, f"shape uses undeclared symbol {sym}")

    if p.start is None or p.start not in p.states:
        add("NoStartState", p.name, "program has no valid start state")
    else:
        reach = reachable_states(p, [p.start], include_sources=True)
        for sid in p.states:
            if sid not in reach:
                add("UnreachableState", sid, "state not reachable from the start state")
    for e in p.interstate.values():
        if e.src not in p.states or e.dst not in p.states:
            add("DanglingInterstateEdge", e.id, "interstate edge references unknown state")
        for sym in free_symbols(e.condition):
            if sym not in p.symbols:
                add("UnknownSymbol", e.id, f"condition uses undeclared symbol {sym}")
        for k, v in e.assignments.items():
            if k not in p.symbols:
                add("UnknownSymbol", e.id, f"assignment to undeclared symbol {k}")
            for sym in free_symbols(v):
                if sym not in p.symbols:
                    add("UnknownSymbol", e.id, f"assignment uses undeclared symbol {sym}")

    seen_ids: set = set()
    for s in p.states.values():
        for nid in list(s.nodes) + list(s.edges):
            if nid in seen_ids:
                add("DuplicateId", nid, "identifier used twice")
            seen_ids.add(nid)
        _validate_state(p, s, add, warnings)
    return diags


def _validate_state(p: Program, s: State, add, warnings: bool) -> None:
    for e in s.edges.values():
        if e.src not in s.nodes or e.dst not in s.nodes:
            add("DanglingEdge", e.id, "edge endpoint not in state")
            return
    try:
        s.topological_order()
    except IRError as exc:
        add("Cycle", s.id, str(exc))
        return
    try:
        sd = scope_dict(s)
    except IRError as exc:
        add("UnbalancedScope", s.id, str(exc))
        return

    for n in s.nodes.values():
        if isinstance(n, AccessNode) and n.data not in p.containers:
            add("UnknownContainer", n.id, f"access to unknown container {n.data}")
        if isinstance(n, MapEntry):
            for r in n.ranges:
                for sym in r.free_symbols():
                    if sym not in p.symbols:
                        add("UnknownSymbol", n.id, f"map range uses undeclared symbol {sym}")
        if isinstance(n, COMPUTE_KINDS):
            if set(n.code) != set(n.outputs):
                add("BadTaskletCode", n.id, "every outlet needs exactly one expression")
            scope_params = {prm for m in enclosing_maps(s, n.id, sd) for prm in m.params}
            allowed = set(n.inputs) | scope_params | set(p.symbols)
            for expr in n.code.values():
                for name in free_symbols(expr):
                    if name not in allowed:
                        add("UnknownName", n.id, f"tasklet code references {name}")
            in_conns = [e.dst_conn for e in s.in_edges(n.id) if e.memlet is not None]
            for conn in n.inputs:
                if in_conns.count(conn) != 1:
                    add("UnconnectedInlet", n.id, f"inlet {conn} needs exactly one memlet")
            out_conns = [e.src_conn for e in s.out_edges(n.id) if e.memlet is not None]
            for conn in n.outputs:
                if out_conns.count(conn) != 1:
                    add("UnconnectedOutlet", n.id, f"outlet {conn} needs exactly one memlet")
            if warnings:
                _check_conflicts(s, n, sd, add)

    for e in s.edges.values():
        m = e.memlet
        if m is None:
            continue
        if m.data not in p.containers:
            add("UnknownContainer", e.id, f"memlet references unknown container {m.data}")
            continue
        desc = p.containers[m.data]
        if m.subset.rank != desc.rank:
            add("RankMismatch", e.id,
                f"subset rank {m.subset.rank} on {desc.rank}-D container {m.data}")
        if m.wcr is not None and m.wcr not in WCR_KINDS:
            add("BadWcr", e.id, f"unknown combiner {m.wcr}")
        if m.other_subset is not None and isinstance(s.nodes[e.dst], AccessNode):
            dst_desc = p.containers.get(s.nodes[e.dst].data)
            if dst_desc is not None and m.other_subset.rank != dst_desc.rank:
                add("RankMismatch", e.id, "destination subset rank mismatch")
        if not m.subset.free_symbols():
            try:
                if volume(m.subset, {}) < 1:
                    add("EmptyMemlet", e.id, "memlet moves no data")
            except Exception as exc:  # NegativeExtent and friends
                add("EmptyMemlet", e.id, str(exc))


def _check_conflicts(s: State, n, sd: dict, add) -> None:
    maps = enclosing_maps(s, n.id, sd)
    params = {prm for m in maps for prm in m.params}
    for e in s.out_edges(n.id):
        if e.memlet is None or e.memlet.wcr is not None:
            continue
        missing = params - e.memlet.subset.free_symbols()
        if missing:
            add("WriteConflict", e.id,
                f"write to {e.memlet.data} ignores map parameters {sorted(missing)}",
                "warning")


def require_valid(p: Program) -> None:
    diags = validate(p)
    if diags:
        raise IRError("invalid program: " + "; ".join(str(d) for d in diags))


def container_volume(p: Program, name: str, binding: dict) -> int:
    out = 1
    for s in p.containers[name].shape:
        out *= eval_int(s, binding)
    return out

