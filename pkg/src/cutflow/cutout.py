"""Cutout extraction.

A cutout is a standalone program made of the nodes (or states) touched by a
transformation plus everything they need to run.  Alongside the program we
record which containers must be supplied from outside (the input
configuration) and which written containers can be observed afterwards (the
system state).
"""

from __future__ import annotations

import copy
import json
import os
import warnings as _warnings
from dataclasses import dataclass, field
from typing import Optional

import networkx as nx

from .analysis import (ancestors, closure_of, copy_accesses, descendants, is_copy_edge,
                       node_accesses, reachable_states, reaching_states, scope_dict)
from .errors import EmptyChangeSet, UnknownElement
from .fileformat import canonical_json, load_program, save_program
from .ir import AccessNode, Opaque, Program, State, id_key
from .symexpr import (BinOp, Const, SubsetRange, hull, may_overlap, parse, provably_le,
                      provably_nonneg, simplify, volume)
from .xform import ChangeSet

META_VERSION = 1


class CutoutWarning(UserWarning):
    pass


@dataclass
class Region:
    """Nodes of the original program covered by a cutout, per state."""

    nodes: dict  # state id -> frozenset of node ids
    entry: str
    multi_state: bool = False

    @property
    def states(self) -> list:
        return sorted(self.nodes, key=id_key)

    def all_nodes(self) -> frozenset:
        out = frozenset()
        for ids in self.nodes.values():
            out |= ids
        return out

    def to_doc(self) -> dict:
        return {"entry": self.entry, "multi_state": self.multi_state,
                "nodes": {k: sorted(v, key=id_key) for k, v in sorted(self.nodes.items())}}

    @staticmethod
    def from_doc(doc) -> "Region":
        return Region({k: frozenset(v) for k, v in doc["nodes"].items()}, doc["entry"],
                      bool(doc["multi_state"]))


@dataclass
class Cutout:
    program: Program
    region: Region
    origin: dict
    input_configuration: list
    system_state: list
    change_set: ChangeSet = field(default_factory=ChangeSet)
    offsets: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    @property
    def input_symbols(self) -> list:
        return self.program.free_symbols()

    def input_names(self) -> list:
        return self.input_symbols + [name for name, _ in self.input_configuration]

    def state_names(self) -> list:
        return [name for name, _ in self.system_state]

    def input_volume(self, binding: dict) -> int:
        return sum(volume(sub, binding) for _, sub in self.input_configuration)

    def meta(self) -> dict:
        return {
            "version": META_VERSION,
            "origin": dict(sorted(self.origin.items(), key=lambda kv: id_key(kv[0]))),
            "region": self.region.to_doc(),
            "input_symbols": self.input_symbols,
            "input_configuration": [{"data": n, "subset": str(s)} for n, s in self.input_configuration],
            "system_state": [{"data": n, "subset": str(s)} for n, s in self.system_state],
            "offsets": {k: [str(x) for x in v] for k, v in sorted(self.offsets.items())},
            "change_set": self.change_set.to_doc(),
            "warnings": list(self.warnings),
        }


def symbol_assumptions(p: Program) -> dict:
    """Integer ranges usable in overlap proofs.

    Size symbols are at least 1; every other symbol only gets the bounds its
    user constraints give it.
    """
    sizes = set()
    for d in p.containers.values():
        sizes |= d.free_symbols()
    out = {}
    for name, info in p.symbols.items():
        lo, hi = info.lo, info.hi
        if name in sizes:
            lo = 1 if lo is None else max(lo, 1)
        out[name] = (lo, hi)
    for name in p.map_params() | p.assigned_symbols():
        out.setdefault(name, (None, None))
    return out


# -- region selection ---------------------------------------------------------

def select_region(p: Program, cs: ChangeSet) -> Region:
    if cs.is_empty():
        raise EmptyChangeSet("empty change set")
    where = p.node_states()
    seeds: dict = {}
    for nid in sorted(cs.modified | cs.removed, key=id_key):
        if nid not in where:
            raise UnknownElement(f"change set names unknown node {nid!r}")
        seeds.setdefault(where[nid], set()).add(nid)
    touched = set(seeds) | (set(cs.states) & set(p.states))
    if not touched:
        raise EmptyChangeSet("change set touches nothing in the program")
    if len(touched) == 1 and set(seeds) == touched:
        (sid,) = touched
        state = p.states[sid]
        return Region({sid: frozenset(with_boundary(state, closure_of(state, seeds[sid])))}, sid)
    states = _state_region(p, touched)
    entry = _entry_of(p, states)
    return Region({sid: frozenset(p.states[sid].nodes) for sid in states}, entry, True)


def with_boundary(state: State, ids: set) -> set:
    """Add access nodes adjacent to selected computation nodes."""
    out = set(ids)
    for nid in ids:
        if isinstance(state.nodes[nid], AccessNode):
            continue
        for e in state.in_edges(nid) + state.out_edges(nid):
            other = e.src if e.dst == nid else e.dst
            if isinstance(state.nodes[other], AccessNode):
                out.add(other)
    return out


def _state_graph(p: Program) -> nx.DiGraph:
    g = nx.DiGraph()
    g.add_nodes_from(p.states)
    g.add_edges_from((e.src, e.dst) for e in p.interstate.values())
    return g


def _state_region(p: Program, touched: set) -> set:
    """States on paths between touched states, grown until single-entry."""
    g = _state_graph(p)
    region = set(touched)
    while True:
        down = set()
        for t in region:
            down |= nx.descendants(g, t) | {t}
        up = set()
        for t in region:
            up |= nx.ancestors(g, t) | {t}
        region = (down & up) | region
        entries = _entries(p, region)
        if len(entries) <= 1:
            return region
        dom = nx.immediate_dominators(g, p.start)
        common = _common_dominator(dom, entries, p.start)
        region.add(common)


def _entries(p: Program, region: set) -> set:
    out = {e.dst for e in p.interstate.values() if e.dst in region and e.src not in region}
    if p.start in region:
        out.add(p.start)
    return out


def _common_dominator(dom: dict, nodes: set, start: str) -> str:
    def chain(n):
        out = [n]
        while n in dom and dom[n] != n:
            n = dom[n]
            out.append(n)
        return out

    chains = [chain(n) for n in sorted(nodes, key=id_key)]
    shared = set(chains[0])
    for c in chains[1:]:
        shared &= set(c)
    for n in chains[0]:
        if n in shared:
            return n
    return start


def _entry_of(p: Program, states: set) -> str:
    entries = _entries(p, states)
    if not entries:
        return min(states, key=id_key)
    return min(entries, key=id_key)


# -- access bookkeeping -------------------------------------------------------

def _accesses(p: Program, state: State, ids: set, sd: dict, copies: str) -> tuple:
    """Reads/writes of ``ids``.  ``copies``: 'inside' (both ends) or 'dst'."""
    reads, writes = [], []
    for nid in ids:
        r, w = node_accesses(p, state, nid, sd)
        reads += r
        writes += w
    for e in state.edges.values():
        if not is_copy_edge(state, e):
            continue
        if (copies == "inside" and e.src in ids and e.dst in ids) or (copies == "dst" and e.dst in ids):
            r, w = copy_accesses(state, e)
            reads += r
            writes += w
    return reads, writes


def region_accesses(p: Program, region: Region) -> tuple:
    reads, writes = [], []
    for sid, ids in region.nodes.items():
        s = p.states[sid]
        r, w = _accesses(p, s, set(ids), scope_dict(s), "inside")
        reads += r
        writes += w
    return reads, writes


def _later_states(p: Program, region: Region) -> set:
    if not region.multi_state:
        (sid,) = region.nodes
        return reachable_states(p, [sid])
    targets = [e.dst for e in p.interstate.values() if e.src in region.nodes and e.dst not in region.nodes]
    return reachable_states(p, targets, include_sources=True)


def _earlier_states(p: Program, region: Region) -> set:
    if not region.multi_state:
        (sid,) = region.nodes
        return reaching_states(p, [sid])
    sources = [e.src for e in p.interstate.values() if e.dst in region.nodes and e.src not in region.nodes]
    return reaching_states(p, sources) | set(sources)


def _units(p: Program, state: State, ids: set, sd: dict) -> list:
    """(anchor node, reads, writes) per computation node and internal copy of a cutout."""
    out = []
    for nid in sorted(ids, key=id_key):
        r, w = node_accesses(p, state, nid, sd)
        if r or w:
            out.append((nid, r, w))
    for e in state.edges.values():
        if is_copy_edge(state, e) and e.src in ids and e.dst in ids:
            r, w = copy_accesses(state, e)
            out.append((e.dst, r, w))
    return out


def _whole_state(p: Program, sids) -> tuple:
    reads, writes = [], []
    for sid in sids:
        s = p.states[sid]
        r, w = _accesses(p, s, set(s.nodes), scope_dict(s), "dst")
        reads += r
        writes += w
    return reads, writes


def after_pairs(p: Program, region: Region) -> list:
    """(cutout writes, reads that may execute after them) pairs.

    Within the cutout's own state a node can run after a cutout writer
    unless it is one of that writer's ancestors.
    """
    later_reads, _ = _whole_state(p, _later_states(p, region))
    if region.multi_state:
        _, writes = region_accesses(p, region)
        return [(writes, later_reads)]
    (sid,) = region.nodes
    s = p.states[sid]
    ids = set(region.nodes[sid])
    sd = scope_dict(s)
    pairs = []
    for anchor, _, w in _units(p, s, ids, sd):
        if not w:
            continue
        others = set(s.nodes) - ids - ancestors(s, {anchor})
        r, _ = _accesses(p, s, others, sd, "dst")
        pairs.append((w, r + later_reads))
    return pairs


def before_pairs(p: Program, region: Region) -> list:
    """(cutout reads, writes that may execute before them) pairs."""
    _, earlier_writes = _whole_state(p, _earlier_states(p, region))
    if region.multi_state:
        reads, _ = region_accesses(p, region)
        return [(reads, earlier_writes)]
    (sid,) = region.nodes
    s = p.states[sid]
    ids = set(region.nodes[sid])
    sd = scope_dict(s)
    # copies from outside into cutout access nodes run right before those nodes
    entering = []
    for e in s.edges.values():
        if is_copy_edge(s, e) and e.dst in ids and e.src not in ids:
            entering += copy_accesses(s, e)[1]
    pairs = []
    for anchor, r, _ in _units(p, s, ids, sd):
        if not r:
            continue
        others = set(s.nodes) - ids - descendants(s, {anchor})
        _, w = _accesses(p, s, others, sd, "dst")
        pairs.append((r, w + entering + earlier_writes))
    return pairs


def _opaque_containers(p: Program, region: Region) -> tuple:
    names, labels = set(), []
    for sid, ids in region.nodes.items():
        s = p.states[sid]
        for nid in ids:
            n = s.nodes[nid]
            if isinstance(n, Opaque):
                labels.append(f"{n.label} ({nid})")
                for e in s.in_edges(nid) + s.out_edges(nid):
                    if e.memlet is not None:
                        names.add(e.memlet.data)
    return names, labels


def _summarize(p: Program, region: Region, names, subsets_by_name: dict) -> list:
    # symbols assigned between region states vary over the run: widen to the full container
    varying = p.assigned_symbols() if region.multi_state else set()
    out = []
    for name in sorted(names):
        full = SubsetRange.full(p.containers[name].shape)
        subs = subsets_by_name.get(name) or [full]
        h = hull(subs) if len(subs) > 1 else subs[0]
        if h is None or h.free_symbols() & varying:
            h = full
        out.append((name, h))
    return out


def _group(accesses) -> dict:
    out: dict = {}
    for a in accesses:
        out.setdefault(a.data, []).append(a.subset)
    return out


def _linked(pairs, assumptions) -> set:
    """Containers where some cutout access may overlap an outside access."""
    names = set()
    for mine, theirs in pairs:
        a, b = _group(mine), _group(theirs)
        for name in a.keys() & b.keys():
            if name not in names and any(may_overlap(x, y, assumptions)
                                         for x in a[name] for y in b[name]):
                names.add(name)
    return names


def system_state_of(p: Program, region: Region) -> list:
    _, writes = region_accesses(p, region)
    written = _group(writes)
    names = {n for n in written if not p.containers[n].transient}
    names |= _linked(after_pairs(p, region), symbol_assumptions(p))
    opaque, _ = _opaque_containers(p, region)
    names |= opaque
    return _summarize(p, region, names, written)


def input_config_of(p: Program, region: Region) -> list:
    reads, _ = region_accesses(p, region)
    read = _group(reads)
    names = {n for n in read if not p.containers[n].transient}
    names |= _linked(before_pairs(p, region), symbol_assumptions(p))
    opaque, _ = _opaque_containers(p, region)
    names |= opaque
    return _summarize(p, region, names, read)


def compute_system_state(p: Program, c: Cutout) -> list:
    return system_state_of(p, c.region)


def compute_input_config(p: Program, c: Cutout) -> list:
    return input_config_of(p, c.region)


# -- program construction ------------------------------------------------------

def _build_program(p: Program, region: Region) -> Program:
    q = Program(f"{p.name}_cutout", copy.deepcopy(p.symbols), {}, {}, {}, region.entry, p.next_id)
    used = set()
    for sid in region.states:
        src = p.states[sid]
        ids = region.nodes[sid]
        st = State(sid, src.label)
        for nid in sorted(ids, key=id_key):
            node = copy.deepcopy(src.nodes[nid])
            st.nodes[nid] = node
            if isinstance(node, AccessNode):
                used.add(node.data)
        for eid in sorted(src.edges, key=id_key):
            e = src.edges[eid]
            if e.src in ids and e.dst in ids:
                st.edges[eid] = copy.deepcopy(e)
                if e.memlet is not None:
                    used.add(e.memlet.data)
        q.states[sid] = st
    if region.multi_state:
        terminal = None
        for eid in sorted(p.interstate, key=id_key):
            e = p.interstate[eid]
            if e.src not in region.nodes:
                continue
            e2 = copy.deepcopy(e)
            if e.dst not in region.nodes:
                if terminal is None:
                    terminal = State(q.fresh_id("s"), "cutout_exit")
                    q.states[terminal.id] = terminal
                e2.dst = terminal.id
            q.interstate[eid] = e2
    for name in sorted(used):
        q.containers[name] = copy.deepcopy(p.containers[name])
    return q


def _shrink(q: Program, assumptions: dict) -> dict:
    """Shrink containers to the hull of their accesses; returns origin offsets."""
    offsets = {}
    fixed = set(q.free_symbols())
    reads, writes = [], []
    for s in q.states.values():
        r, w = _accesses(q, s, set(s.nodes), scope_dict(s), "inside")
        reads += r
        writes += w
    by_name = _group(reads + writes)
    for name, desc in q.containers.items():
        subs = by_name.get(name)
        if not subs:
            continue
        h = hull(subs)
        if h is None or not (h.free_symbols() <= fixed):
            continue
        if not all(provably_nonneg(d.begin, assumptions) and provably_le(d.end, ext, assumptions)
                   for d, ext in zip(h.dims, desc.shape)):
            continue
        shape = tuple(simplify(BinOp("-", d.end, d.begin)) for d in h.dims)
        begins = tuple(simplify(d.begin) for d in h.dims)
        if shape == tuple(simplify(x) for x in desc.shape) and all(b == Const(0) for b in begins):
            continue
        desc.shape = shape
        offsets[name] = begins
    if offsets:
        _rebase(q, offsets)
    return offsets


def _rebase(q: Program, offsets: dict) -> None:
    for s in q.states.values():
        for e in s.edges.values():
            m = e.memlet
            if m is None:
                continue
            if is_copy_edge(s, e):
                dst_name = s.nodes[e.dst].data
                src_sub = m.subset
                dst_sub = m.other_subset if m.other_subset is not None else m.subset
                if m.data in offsets:
                    src_sub = src_sub.offset(offsets[m.data])
                if dst_name in offsets:
                    dst_sub = dst_sub.offset(offsets[dst_name])
                m.subset = src_sub
                m.other_subset = None if dst_sub == src_sub else dst_sub
            elif m.data in offsets:
                m.subset = m.subset.offset(offsets[m.data])


def build_cutout(p: Program, region: Region, cs: Optional[ChangeSet] = None) -> Cutout:
    inputs = input_config_of(p, region)
    state = system_state_of(p, region)
    q = _build_program(p, region)
    boundary = {n for n, _ in inputs} | {n for n, _ in state}
    for name, desc in q.containers.items():
        if name in boundary:
            desc.transient = False
    notes = []
    _, opaque = _opaque_containers(p, region)
    for label in opaque:
        notes.append(f"opaque node {label} may have side effects; its containers are treated as inputs and outputs")
    if not state:
        notes.append("cutout has an empty system state; a transformation here cannot be observed")
    for msg in notes:
        _warnings.warn(msg, CutoutWarning, stacklevel=3)
    offsets = _shrink(q, symbol_assumptions(p))
    origin = {nid: nid for nid in region.all_nodes()}
    return Cutout(q, region, origin, inputs, state, cs or ChangeSet(), offsets, notes)


def extract(p: Program, cs: ChangeSet) -> Cutout:
    """Cut the region touched by ``cs`` out of ``p``."""
    return build_cutout(p, select_region(p, cs), cs)


def whole_program(p: Program) -> Cutout:
    """The trivial cutout: all of ``p``, every non-transient container in and out."""
    region = Region({sid: frozenset(s.nodes) for sid, s in p.states.items()}, p.start,
                    len(p.states) > 1)
    outside = [(name, SubsetRange.full(d.shape)) for name, d in sorted(p.containers.items())
               if not d.transient]
    origin = {nid: nid for nid in region.all_nodes()}
    return Cutout(p.clone(), region, origin, list(outside), list(outside))


# -- persistence --------------------------------------------------------------

def write_cutout(c: Cutout, directory: str) -> tuple:
    os.makedirs(directory, exist_ok=True)
    prog = os.path.join(directory, "cutout.cfprog.json")
    meta = os.path.join(directory, "cutout-meta.json")
    save_program(c.program, prog)
    with open(meta, "wb") as fh:
        fh.write(canonical_json(c.meta()))
    return prog, meta


def load_cutout(directory: str) -> Cutout:
    q = load_program(os.path.join(directory, "cutout.cfprog.json"))
    with open(os.path.join(directory, "cutout-meta.json")) as fh:
        meta = json.load(fh)
    cs = ChangeSet(*(frozenset(meta["change_set"][k]) for k in ("modified", "added", "removed", "states")))
    return Cutout(q, Region.from_doc(meta["region"]), dict(meta["origin"]),
                  [(d["data"], SubsetRange.parse(d["subset"])) for d in meta["input_configuration"]],
                  [(d["data"], SubsetRange.parse(d["subset"])) for d in meta["system_state"]],
                  cs, {k: tuple(parse(x) for x in v) for k, v in meta["offsets"].items()},
                  list(meta["warnings"]))


__all__ = ["Cutout", "CutoutWarning", "Region", "build_cutout", "compute_input_config",
           "compute_system_state", "extract", "load_cutout", "select_region", "symbol_assumptions",
           "write_cutout"]
