"""Transformations, change sets and structural diffs.

Every built-in transformation reports the elements it touches (white-box
reporting); :func:`diff` recomputes the same information from two program
versions by comparing stable element IDs (black-box reporting).  Buggy
variants are selected with a flag on the instance so that correct and buggy
builds match exactly the same sites.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional
from urllib.parse import parse_qsl, urlencode

from .analysis import scope_dict
from .errors import CutflowError, SiteStale, TransformationInapplicable, UnknownElement
from .ir import (AccessNode, Edge, InterstateEdge, MapEntry, MapExit, Program, State, Tasklet,
                 id_key)
from .symexpr import BinOp, Call, Cmp, Const, Range, Sym, as_expr, simplify, substitute


@dataclass(frozen=True)
class ChangeSet:
    modified: frozenset = frozenset()
    added: frozenset = frozenset()
    removed: frozenset = frozenset()
    states: frozenset = frozenset()

    def is_empty(self) -> bool:
        return not (self.modified or self.added or self.removed or self.states)

    def nodes(self) -> frozenset:
        return self.modified | self.added | self.removed

    def covers(self, other: "ChangeSet") -> bool:
        """True when every element of ``other`` is also reported here."""
        return (other.nodes() <= self.nodes() and other.added <= self.added
                and other.removed <= self.removed and other.states <= self.states)

    def to_doc(self) -> dict:
        return {k: sorted(getattr(self, k), key=id_key)
                for k in ("modified", "added", "removed", "states")}

    def describe(self) -> str:
        if self.is_empty():
            return "no changes"
        parts = []
        for k, v in self.to_doc().items():
            if v:
                parts.append(f"{k}: {', '.join(v)}")
        return "\n".join(parts)


class _Recorder:
    """Accumulates a ChangeSet while a rewrite mutates a program."""

    def __init__(self, p: Program):
        self.p = p
        self.modified, self.added, self.removed, self.states = set(), set(), set(), set()

    def touch(self, *node_ids):
        for n in node_ids:
            if n not in self.added and n not in self.removed:
                self.modified.add(n)

    def add_node(self, state: State, node):
        state.nodes[node.id] = node
        self.added.add(node.id)
        self.states.add(state.id)

    def remove_node(self, state: State, node_id: str):
        for e in list(state.edges.values()):
            if node_id in (e.src, e.dst):
                self.remove_edge(state, e.id)
        del state.nodes[node_id]
        self.modified.discard(node_id)
        self.removed.add(node_id)
        self.states.add(state.id)

    def add_edge(self, state: State, edge: Edge):
        state.edges[edge.id] = edge
        self.touch(edge.src, edge.dst)
        self.states.add(state.id)

    def remove_edge(self, state: State, edge_id: str):
        e = state.edges.pop(edge_id)
        self.touch(e.src, e.dst)
        self.states.add(state.id)

    def retarget(self, state: State, edge: Edge, src=None, dst=None, src_conn=None, dst_conn=None):
        self.touch(edge.src, edge.dst)
        if src is not None:
            edge.src = src
            edge.src_conn = src_conn
        if dst is not None:
            edge.dst = dst
            edge.dst_conn = dst_conn
        self.touch(edge.src, edge.dst)
        self.states.add(state.id)

    def touch_state(self, *state_ids):
        self.states.update(state_ids)

    def result(self) -> ChangeSet:
        for nid in self.modified | self.added:
            for s in self.p.states.values():
                if nid in s.nodes:
                    self.states.add(s.id)
        return ChangeSet(frozenset(self.modified - self.added - self.removed),
                         frozenset(self.added), frozenset(self.removed), frozenset(self.states))


@dataclass(frozen=True)
class TransformationInstance:
    kind: str
    site: tuple
    params: tuple = ()
    bug: Optional[str] = None
    fingerprint: str = field(default="", compare=False)

    def param(self, name: str, default=None):
        return dict(self.params).get(name, default)

    def address(self) -> str:
        query = dict(self.params)
        if self.bug:
            query["bug"] = BUG_ALIASES_REVERSE[self.bug]
        text = f"{self.kind}@{self.site[0]}"
        return text + ("?" + urlencode(sorted(query.items())) if query else "")

    def with_options(self, params: Optional[dict] = None, bug: Optional[str] = None) -> "TransformationInstance":
        merged = dict(self.params)
        merged.update(params or {})
        return TransformationInstance(self.kind, self.site, tuple(sorted(merged.items())),
                                      bug if bug is not None else self.bug, self.fingerprint)

    def to_doc(self) -> dict:
        return {"kind": self.kind, "site": list(self.site), "params": dict(self.params),
                "bug": self.bug, "fingerprint": self.fingerprint}

    @staticmethod
    def from_doc(doc: dict) -> "TransformationInstance":
        return TransformationInstance(doc["kind"], tuple(doc["site"]),
                                      tuple(sorted(doc.get("params", {}).items())),
                                      doc.get("bug"), doc.get("fingerprint", ""))


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _node_shape(state: State, node_id: str) -> list:
    """Structure of a node and its incident edges, memlet subsets excluded."""
    node = state.nodes[node_id]
    attrs = {k: (str(v) if not isinstance(v, (str, bool, int, type(None))) else v)
             for k, v in vars(node).items() if k != "code"}
    if hasattr(node, "code"):
        attrs["code"] = {k: str(v) for k, v in node.code.items()}
    edges = sorted((e.id, e.src, e.src_conn, e.dst, e.dst_conn,
                    None if e.memlet is None else (e.memlet.data, e.memlet.wcr))
                   for e in state.edges.values() if node_id in (e.src, e.dst))
    return [type(node).__name__, attrs, edges]


def _interstate_shape(e: InterstateEdge) -> list:
    return [e.id, e.src, e.dst, str(e.condition), {k: str(v) for k, v in sorted(e.assignments.items())}]


class Transformation:
    kind = ""
    bugs: tuple = ()
    defaults: dict = {}

    def sites(self, p: Program) -> list:
        raise NotImplementedError

    def fingerprint(self, p: Program, site: tuple) -> str:
        raise NotImplementedError

    def check(self, p: Program, site: tuple, params: dict) -> None:
        """Raise TransformationInapplicable when the pattern no longer applies."""

    def rewrite(self, p: Program, site: tuple, params: dict, bug: Optional[str], rec: _Recorder) -> None:
        raise NotImplementedError


def _require_nodes(p: Program, ids) -> State:
    state = None
    for nid in ids:
        s, _ = p.find_node(nid)
        if state is not None and s.id != state.id:
            raise SiteStale("site nodes span several states")
        state = s
    return state


# -- map tiling ---------------------------------------------------------------

class MapTiling(Transformation):
    kind = "map-tiling"
    bugs = ("TilingOffByOne", "TilingNoBoundGuard")
    defaults = {"tile_size": 32}

    def sites(self, p):
        out = []
        for s in p.states.values():
            sd = scope_dict(s)
            for n in s.nodes.values():
                if isinstance(n, MapEntry) and sd[n.id] is None and _unit_steps(n):
                    exit_id = next(x.id for x in s.nodes.values()
                                   if isinstance(x, MapExit) and x.entry == n.id)
                    out.append((n.id, exit_id))
        return out

    def fingerprint(self, p, site):
        state = _require_nodes(p, site)
        return _digest([_node_shape(state, n) for n in site])

    def check(self, p, site, params):
        state = _require_nodes(p, site)
        entry = state.nodes[site[0]]
        if not isinstance(entry, MapEntry) or not _unit_steps(entry):
            raise TransformationInapplicable(f"{site[0]} is not a unit-step map")
        if int(params.get("tile_size", 32)) < 1:
            raise TransformationInapplicable("tile_size must be >= 1")

    def rewrite(self, p, site, params, bug, rec):
        tile = int(params.get("tile_size", 32))
        state = _require_nodes(p, site)
        entry, exit_ = state.nodes[site[0]], state.nodes[site[1]]
        taken = set(p.symbols) | set(p.containers)
        tile_params, tile_ranges, inner = [], [], []
        for name, rng in entry.domain():
            tname = _fresh_name(f"tile_{name}", taken)
            taken.add(tname)
            p.add_symbol(tname)
            tile_params.append(tname)
            tile_ranges.append(Range(rng.begin, rng.end, Const(tile)))
            t = Sym(tname)
            if bug == "TilingNoBoundGuard":
                end = simplify(t + tile)
            else:
                end = Call("min", (simplify(t + tile), rng.end))
                if bug == "TilingOffByOne":
                    end = BinOp("+", end, Const(1))
            inner.append(Range(t, end, Const(1)))
        outer_entry = MapEntry(p.fresh_id("n"), f"{entry.label}_tiles", tuple(tile_params),
                               tuple(tile_ranges))
        outer_exit = MapExit(p.fresh_id("n"), outer_entry.id)
        rec.add_node(state, outer_entry)
        rec.add_node(state, outer_exit)
        entry.ranges = tuple(inner)
        rec.touch(entry.id, exit_.id)
        for e in state.in_edges(entry.id):
            conn = e.dst_conn
            new = Edge(p.fresh_id("e"), outer_entry.id, _out_conn(conn), entry.id, conn,
                       copy.deepcopy(e.memlet))
            rec.retarget(state, e, dst=outer_entry.id, dst_conn=conn)
            rec.add_edge(state, new)
        for e in state.out_edges(exit_.id):
            conn = e.src_conn
            new = Edge(p.fresh_id("e"), exit_.id, conn, outer_exit.id, _in_conn(conn),
                       copy.deepcopy(e.memlet))
            rec.retarget(state, e, src=outer_exit.id, src_conn=conn)
            rec.add_edge(state, new)


def _unit_steps(entry: MapEntry) -> bool:
    return all(r.step == Const(1) for r in entry.ranges)


def _out_conn(conn):
    return None if conn is None else "OUT_" + conn[3:] if conn.startswith("IN_") else conn


def _in_conn(conn):
    return None if conn is None else "IN_" + conn[4:] if conn.startswith("OUT_") else conn


def _fresh_name(base: str, taken: set) -> str:
    name, k = base, 1
    while name in taken:
        k += 1
        name = f"{base}{k}"
    return name


# -- loop unrolling -------------------------------------------------------------

@dataclass
class _Loop:
    var: str
    init_edge: InterstateEdge
    enter_edge: InterstateEdge
    back_edge: InterstateEdge
    exit_edge: InterstateEdge
    begin: int
    end: int
    step: int

    @property
    def trip(self) -> int:
        return max(0, -(-(self.end - self.begin) // self.step))


def _as_int(e) -> Optional[int]:
    e = simplify(as_expr(e))
    if isinstance(e, Const) and isinstance(e.value, int) and not isinstance(e.value, bool):
        return e.value
    return None


def _detect_loop(p: Program, guard_id: str) -> Optional[_Loop]:
    guard = p.states.get(guard_id)
    if guard is None or guard.nodes:
        return None
    ins, outs = p.in_interstate(guard_id), p.out_interstate(guard_id)
    if len(ins) != 2 or len(outs) != 2:
        return None
    for init_edge, back_edge in (ins, ins[::-1]):
        if len(init_edge.assignments) != 1 or len(back_edge.assignments) != 1:
            continue
        (var, begin), = init_edge.assignments.items()
        if set(back_edge.assignments) != {var}:
            continue
        step = _as_int(simplify(back_edge.assignments[var] - Sym(var)))
        b = _as_int(begin)
        if step in (None, 0) or b is None:
            continue
        body_id = back_edge.src
        for enter_edge, exit_edge in (outs, outs[::-1]):
            if enter_edge.dst != body_id or enter_edge.assignments or exit_edge.assignments:
                continue
            c = enter_edge.condition
            want = "<" if step > 0 else ">"
            if not (isinstance(c, Cmp) and c.op == want and c.left == Sym(var)):
                continue
            end = _as_int(c.right)
            if end is None:
                continue
            if [e.id for e in p.out_interstate(body_id)] != [back_edge.id]:
                continue
            if [e.id for e in p.in_interstate(body_id)] != [enter_edge.id]:
                continue
            if init_edge.src in (guard_id, body_id) or exit_edge.dst in (guard_id, body_id):
                continue
            loop = _Loop(var, init_edge, enter_edge, back_edge, exit_edge, b, end, step)
            if loop.trip >= 1:
                return loop
    return None


class LoopUnroll(Transformation):
    kind = "loop-unroll"
    bugs = ("UnrollIgnoresNegativeStep",)

    def sites(self, p):
        out = []
        for sid in p.states:
            loop = _detect_loop(p, sid)
            if loop is not None:
                out.append((sid, loop.enter_edge.dst, loop.init_edge.src, loop.exit_edge.dst))
        return out

    def fingerprint(self, p, site):
        guard, body = site[0], site[1]
        for sid in site:
            if sid not in p.states:
                raise UnknownElement(f"no state {sid!r}")
        edges = [e for e in p.interstate.values() if {e.src, e.dst} & {guard, body}]
        return _digest(sorted(_interstate_shape(e) for e in edges))

    def check(self, p, site, params):
        loop = _detect_loop(p, site[0])
        if loop is None or loop.enter_edge.dst != site[1]:
            raise TransformationInapplicable(f"{site[0]} no longer guards a counted loop")

    def rewrite(self, p, site, params, bug, rec):
        loop = _detect_loop(p, site[0])
        body = p.states[site[1]]
        trip = loop.trip
        copies = trip
        if bug == "UnrollIgnoresNegativeStep" and loop.step < 0:
            copies = -(-trip // 2)
        values = [loop.begin + k * loop.step for k in range(copies)]
        final = loop.begin + trip * loop.step
        bodies = [body]
        for k in range(1, copies):
            clone = _clone_state(p, body, f"{body.label}_{k}")
            p.states[clone.id] = clone
            for n in clone.nodes:
                rec.added.add(n)
            rec.touch_state(clone.id)
            bodies.append(clone)
        var = loop.var
        guard_id = site[0]
        rec.touch_state(guard_id, body.id, loop.init_edge.src, loop.exit_edge.dst)
        loop.init_edge.dst = body.id
        loop.init_edge.assignments = {var: Const(values[0])}
        prev = body
        for k in range(1, copies):
            if k == 1:
                e = loop.back_edge
                e.dst = bodies[1].id
                e.assignments = {var: Const(values[1])}
            else:
                e = InterstateEdge(p.fresh_id("t"), prev.id, bodies[k].id, Const(True),
                                   {var: Const(values[k])})
                p.interstate[e.id] = e
            prev = bodies[k]
        if copies == 1:
            del p.interstate[loop.back_edge.id]
        loop.exit_edge.src = prev.id
        loop.exit_edge.condition = Const(True)
        loop.exit_edge.assignments = {var: Const(final)}
        del p.interstate[loop.enter_edge.id]
        for nid in list(p.states[guard_id].nodes):
            rec.removed.add(nid)
        del p.states[guard_id]


def _clone_state(p: Program, state: State, label: str) -> State:
    new = State(p.fresh_id("s"), label)
    mapping = {}
    for nid in sorted(state.nodes, key=id_key):
        mapping[nid] = p.fresh_id("n")
    for nid, node in state.nodes.items():
        n2 = copy.deepcopy(node)
        n2.id = mapping[nid]
        if isinstance(n2, MapExit):
            n2.entry = mapping[n2.entry]
        new.nodes[n2.id] = n2
    for eid in sorted(state.edges, key=id_key):
        e = state.edges[eid]
        e2 = Edge(p.fresh_id("e"), mapping[e.src], e.src_conn, mapping[e.dst], e.dst_conn,
                  copy.deepcopy(e.memlet))
        new.edges[e2.id] = e2
    return new


# -- tasklet fusion -------------------------------------------------------------

class TaskletFusion(Transformation):
    kind = "tasklet-fusion"
    bugs = ("FusionDropsLiveWrite",)

    def sites(self, p):
        out = []
        for s in p.states.values():
            sd = scope_dict(s)
            for n in s.nodes.values():
                site = _fusion_site(s, n, sd)
                if site is not None:
                    out.append(site)
        return out

    def fingerprint(self, p, site):
        state = _require_nodes(p, site)
        return _digest([_node_shape(state, n) for n in site])

    def check(self, p, site, params):
        state = _require_nodes(p, site)
        if _fusion_site(state, state.nodes[site[0]], scope_dict(state)) != tuple(site):
            raise TransformationInapplicable(f"{site[0]} is not a fusable intermediate")

    def rewrite(self, p, site, params, bug, rec):
        state = _require_nodes(p, site)
        mid_id, t1_id, t2_id = site
        mid, t1, t2 = (state.nodes[x] for x in site)
        (w_edge,) = state.out_edges(t1_id)
        (r_edge,) = state.out_edges(mid_id)
        taken = set(t2.inputs) | set(t2.outputs) | set(p.symbols) | set(p.containers)
        rename = {}
        for conn in t1.inputs:
            rename[conn] = _fresh_name(f"{t1.label}_{conn}", taken)
            taken.add(rename[conn])
        value = substitute(t1.code[w_edge.src_conn], {k: Sym(v) for k, v in rename.items()})
        code = {k: substitute(v, {r_edge.dst_conn: value}) for k, v in t2.code.items()}
        inputs = [c for c in t2.inputs if c != r_edge.dst_conn] + [rename[c] for c in t1.inputs]
        outputs = list(t2.outputs)
        for e in state.in_edges(t1_id):
            rec.retarget(state, e, dst=t2_id, dst_conn=rename.get(e.dst_conn, e.dst_conn))
        rec.remove_edge(state, r_edge.id)
        live = _is_live(p, state, mid)
        if live and bug != "FusionDropsLiveWrite":
            keep = _fresh_name(f"{t1.label}_out", taken)
            outputs.append(keep)
            code[keep] = value
            rec.retarget(state, w_edge, src=t2_id, src_conn=keep)
        else:
            rec.remove_node(state, mid_id)
        t2.inputs, t2.outputs, t2.code = tuple(inputs), tuple(outputs), code
        rec.touch(t2_id)
        rec.remove_node(state, t1_id)


def _fusion_site(state: State, node, sd) -> Optional[tuple]:
    if not isinstance(node, AccessNode):
        return None
    ins, outs = state.in_edges(node.id), state.out_edges(node.id)
    if len(ins) != 1 or len(outs) != 1:
        return None
    w, r = ins[0], outs[0]
    t1, t2 = state.nodes[w.src], state.nodes[r.dst]
    if type(t1) is not Tasklet or type(t2) is not Tasklet:
        return None
    if len(state.out_edges(t1.id)) != 1 or w.memlet is None or r.memlet is None:
        return None
    if w.memlet.wcr is not None or w.memlet.subset != r.memlet.subset:
        return None
    if not (sd[t1.id] == sd[node.id] == sd[t2.id]):
        return None
    if r.dst_conn is None or w.src_conn is None:
        return None
    return (node.id, t1.id, t2.id)


def _is_live(p: Program, state: State, mid: AccessNode) -> bool:
    if not p.containers[mid.data].transient:
        return True
    return any(isinstance(n, AccessNode) and n.data == mid.data and n.id != mid.id
               for _, n in p.all_nodes())


# -- identity -------------------------------------------------------------------

class Identity(Transformation):
    """Matches every state and changes nothing."""

    kind = "identity"

    def sites(self, p):
        return [(sid,) for sid in p.states]

    def fingerprint(self, p, site):
        if site[0] not in p.states:
            raise UnknownElement(f"no state {site[0]!r}")
        return _digest(site)

    def rewrite(self, p, site, params, bug, rec):
        pass


# -- registry and driver ------------------------------------------------------------

KINDS: dict = {}

BUG_ALIASES = {
    "off-by-one": "TilingOffByOne",
    "no-bound-guard": "TilingNoBoundGuard",
    "ignores-negative-step": "UnrollIgnoresNegativeStep",
    "drops-live-write": "FusionDropsLiveWrite",
}
BUG_ALIASES_REVERSE = {v: k for k, v in BUG_ALIASES.items()}


def register(cls) -> type:
    KINDS[cls.kind] = cls()
    for b in cls.bugs:
        BUG_ALIASES_REVERSE.setdefault(b, b)
    return cls


for _cls in (MapTiling, LoopUnroll, TaskletFusion, Identity):
    register(_cls)


def _lookup(kind: str) -> Transformation:
    try:
        return KINDS[kind]
    except KeyError:
        raise CutflowError(f"unknown transformation kind {kind!r}; known: {sorted(KINDS)}") from None


def normalize_bug(kind: str, bug: Optional[str]) -> Optional[str]:
    if bug is None:
        return None
    flag = BUG_ALIASES.get(bug, bug)
    if flag not in _lookup(kind).bugs:
        raise CutflowError(f"{kind} has no bug variant {bug!r}")
    return flag


def match(kind: str, p: Program, params: Optional[dict] = None, bug: Optional[str] = None) -> list:
    t = _lookup(kind)
    merged = dict(t.defaults)
    merged.update(params or {})
    flag = normalize_bug(kind, bug)
    out = []
    for site in t.sites(p):
        out.append(TransformationInstance(kind, tuple(site), tuple(sorted(merged.items())), flag,
                                          t.fingerprint(p, site)))
    return sorted(out, key=lambda x: [id_key(s) for s in x.site])


def apply(inst: TransformationInstance, p: Program) -> tuple:
    """Apply ``inst`` to a clone of ``p``; returns (new program, reported ChangeSet)."""
    t = _lookup(inst.kind)
    current = t.fingerprint(p, inst.site)
    if inst.fingerprint and current != inst.fingerprint:
        raise SiteStale(f"site {inst.site[0]} changed since it was matched")
    params = dict(inst.params)
    try:
        t.check(p, inst.site, params)
    except TransformationInapplicable as exc:
        raise SiteStale(str(exc)) from None
    q = p.clone()
    rec = _Recorder(q)
    t.rewrite(q, inst.site, params, inst.bug, rec)
    return q, rec.result()


def parse_address(text: str) -> tuple:
    """``kind@site?tile_size=4&bug=off-by-one`` -> (kind, site or None, params, bug)."""
    head, _, query = text.partition("?")
    kind, _, site = head.partition("@")
    params, bug = {}, None
    for k, v in parse_qsl(query, keep_blank_values=True):
        if k == "bug":
            bug = v
        else:
            params[k] = int(v) if v.lstrip("-").isdigit() else v
    return kind, (site or None), params, bug


def resolve(p: Program, text: str) -> list:
    kind, site, params, bug = parse_address(text)
    found = match(kind, p, params, bug)
    if site is not None:
        found = [i for i in found if i.site[0] == site]
        if not found:
            raise UnknownElement(f"no {kind} site at {site!r}")
    return found


# -- structural diff ---------------------------------------------------------------

def diff(p: Program, q: Program) -> ChangeSet:
    pn = {n.id: (s.id, n) for s, n in p.all_nodes()}
    qn = {n.id: (s.id, n) for s, n in q.all_nodes()}
    added = set(qn) - set(pn)
    removed = set(pn) - set(qn)
    modified = {nid for nid in set(pn) & set(qn) if pn[nid] != qn[nid]}
    pe = {e.id: e for s in p.states.values() for e in s.edges.values()}
    qe = {e.id: e for s in q.states.values() for e in s.edges.values()}
    pes, qes = p.edge_states(), q.edge_states()
    for eid in set(pe) | set(qe):
        a, b = pe.get(eid), qe.get(eid)
        if a is not None and b is not None and a == b and pes[eid] == qes[eid]:
            continue
        for e in (a, b):
            if e is not None:
                modified.update({e.src, e.dst})
    changed_data = {k for k in set(p.containers) | set(q.containers)
                    if p.containers.get(k) != q.containers.get(k)}
    for table in (pn, qn):
        for nid, (_, n) in table.items():
            if isinstance(n, AccessNode) and n.data in changed_data:
                modified.add(nid)
    modified -= added | removed
    states = {s for s in set(p.states) ^ set(q.states)}
    for sid in set(p.states) & set(q.states):
        if p.states[sid].label != q.states[sid].label:
            states.add(sid)
    for nid in modified | added | removed:
        for table in (pn, qn):
            if nid in table:
                states.add(table[nid][0])
    for eid in set(p.interstate) | set(q.interstate):
        a, b = p.interstate.get(eid), q.interstate.get(eid)
        if a != b:
            for e in (a, b):
                if e is not None:
                    states.update({e.src, e.dst})
    if p.start != q.start:
        states.update(s for s in (p.start, q.start) if s is not None)
    return ChangeSet(frozenset(modified), frozenset(added), frozenset(removed), frozenset(states))
