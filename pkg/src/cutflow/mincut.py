"""Input minimization through a minimum s-t cut.

The cutout's state is turned into a flow network whose edge capacities are
data volumes.  A minimum cut between the dummy source and the sink (which
stands in for the cutout) tells which producers are cheaper to recompute
inside the cutout than to feed in as inputs.  Map scopes are collapsed to a
single node so that a cut never splits a scope.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .analysis import container_volume, outermost, scope_dict, scope_members
from .cutout import Cutout, Region, with_boundary, build_cutout
from .ir import AccessNode, MapEntry, Program, id_key
from .symexpr import volume

SOURCE = "S"
SINK = "T"
DEFAULT_SYMBOL_VALUE = 64


@dataclass
class FlowEdge:
    src: str
    dst: str
    capacity: Optional[int]  # None while infinite and not yet concretized
    ref: Optional[str] = None  # id of the original edge, if any
    rule: str = ""


@dataclass
class FlowNetwork:
    nodes: list
    edges: list
    source: str = SOURCE
    sink: str = SINK
    infinity: Optional[int] = None
    data_nodes: set = field(default_factory=set)

    def finalize(self) -> "FlowNetwork":
        """Replace infinite capacities by a sentinel above every finite cut."""
        finite = sum(e.capacity for e in self.edges if e.capacity is not None)
        self.infinity = finite + 1
        for e in self.edges:
            if e.capacity is None:
                e.capacity = self.infinity
        return self

    def capacity_of(self, e: FlowEdge) -> int:
        return self.infinity if e.capacity is None else e.capacity

    def to_dot(self, source_side: Optional[set] = None) -> str:
        lines = ["digraph flow {", "  rankdir=LR;"]
        for n in self.nodes:
            color = ""
            if source_side is not None:
                color = ", style=filled, fillcolor=" + ("lightblue" if n in source_side else "lightpink")
            shape = "ellipse" if n in self.data_nodes else "box"
            lines.append(f'  "{n}" [shape={shape}{color}];')
        for e in self.edges:
            cap = "inf" if e.capacity is None or e.capacity == self.infinity else str(e.capacity)
            lines.append(f'  "{e.src}" -> "{e.dst}" [label="{cap}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


@dataclass
class CutResult:
    flow: int
    source_side: frozenset
    sink_side: frozenset
    network: FlowNetwork
    cutout: Optional[Cutout] = None
    old_volume: Optional[int] = None
    new_volume: Optional[int] = None
    accepted: bool = False


def max_flow(net: FlowNetwork) -> CutResult:
    """Edmonds-Karp: shortest augmenting paths on the residual graph."""
    if net.infinity is None and any(e.capacity is None for e in net.edges):
        net.finalize()
    residual: dict = {n: {} for n in net.nodes}
    for n in (net.source, net.sink):
        residual.setdefault(n, {})
    for e in net.edges:
        residual.setdefault(e.src, {})
        residual.setdefault(e.dst, {})
        residual[e.src][e.dst] = residual[e.src].get(e.dst, 0) + net.capacity_of(e)
        residual[e.dst].setdefault(e.src, 0)
    order = {n: sorted(residual[n], key=str) for n in residual}
    flow = 0
    while True:
        parent = {net.source: None}
        queue = deque([net.source])
        while queue and net.sink not in parent:
            u = queue.popleft()
            for v in order[u]:
                if v not in parent and residual[u][v] > 0:
                    parent[v] = u
                    queue.append(v)
        if net.sink not in parent:
            break
        bottleneck, v = None, net.sink
        while parent[v] is not None:
            u = parent[v]
            c = residual[u][v]
            bottleneck = c if bottleneck is None else min(bottleneck, c)
            v = u
        v = net.sink
        while parent[v] is not None:
            u = parent[v]
            residual[u][v] -= bottleneck
            residual[v][u] += bottleneck
            v = u
        flow += bottleneck
    side = set(parent)
    return CutResult(flow, frozenset(side), frozenset(set(residual) - side), net)


# -- preparation -----------------------------------------------------------------

def default_binding(p: Program) -> dict:
    return {s: DEFAULT_SYMBOL_VALUE for s in p.free_symbols()}


def _complete(p: Program, c: Cutout, binding: Optional[dict]) -> dict:
    # loop variables become free inside single-state cutouts and need a value too
    out = {**default_binding(p), **default_binding(c.program)}
    out.update(binding or {})
    return out


def prepare(p: Program, c: Cutout, binding: Optional[dict] = None) -> FlowNetwork:
    """Flow network of the cutout's state; requires a single-state cutout."""
    if c.region.multi_state:
        raise ValueError("flow preparation needs a single-state cutout")
    binding = _complete(p, c, binding)
    (sid,) = c.region.nodes
    state = p.states[sid]
    sd = scope_dict(state)
    owner = {nid: outermost(state, nid, sd) for nid in state.nodes}
    inside = {owner[n] for n in c.region.nodes[sid]}
    units = sorted({owner[n] for n in state.nodes}, key=id_key)
    data = {u for u in units if isinstance(state.nodes[u], AccessNode)}
    inputs = {name for name, _ in c.input_configuration}

    raw = []  # (src, dst, volume, edge id)
    for eid in sorted(state.edges, key=id_key):
        e = state.edges[eid]
        a, b = owner[e.src], owner[e.dst]
        if a == b:
            continue
        vol = 0 if e.memlet is None else volume(e.memlet.subset, binding)
        raw.append((a, b, vol, eid))

    def size(u):
        return container_volume(p, state.nodes[u].data, binding)

    succ: dict = {u: set() for u in units}
    for a, b, _, _ in raw:
        succ[a].add(b)
    feeds_cutout = {a for a, b, _, _ in raw if b in inside and a not in inside}

    def returns(v) -> bool:
        seen, todo = {v}, [v]
        while todo:
            u = todo.pop()
            if u in feeds_cutout:
                return True
            for w in succ[u]:
                if w not in inside and w not in seen:
                    seen.add(w)
                    todo.append(w)
        return False

    indeg = {u: 0 for u in units}
    for a, b, _, _ in raw:
        indeg[b] += 1
    outside = [u for u in units if u not in inside]
    non_transient = {u for u in outside if u in data and not p.containers[state.nodes[u].data].transient}
    edges = []
    for u in outside:
        if indeg[u] == 0 or u in non_transient:
            edges.append(FlowEdge(SOURCE, u, size(u) if u in data else 0, None, "source"))
    for a, b, vol, eid in raw:
        if a in inside and b in inside:
            continue
        if b in inside:
            if b in data and state.nodes[b].data in inputs:
                edges.append(FlowEdge(a, SINK, vol, eid, "to-sink"))
            continue
        if a in inside:
            if returns(b):
                edges.append(FlowEdge(SOURCE, SINK, 0, eid, "loop-back"))
            else:
                edges.append(FlowEdge(SINK, b, vol, eid, "from-sink"))
            continue
        if b in non_transient:
            cap = None
        elif a in data:
            cap = None
        else:
            cap = vol
        edges.append(FlowEdge(a, b, cap, eid, "data" if a in data else "compute"))
    for e in edges:
        if e.src in data:
            e.capacity = None
    net = FlowNetwork([SOURCE] + outside + [SINK], edges, data_nodes=set(data) & set(outside))
    return net.finalize()


def _reaches_sink(net: FlowNetwork, candidates: set) -> set:
    pred: dict = {}
    for e in net.edges:
        pred.setdefault(e.dst, set()).add(e.src)
    seen, todo = set(), [net.sink]
    while todo:
        u = todo.pop()
        for w in pred.get(u, ()):
            if w not in seen and w != net.source:
                seen.add(w)
                todo.append(w)
    return seen & candidates


def min_input_cut(p: Program, c: Cutout, binding: Optional[dict] = None) -> CutResult:
    binding = _complete(p, c, binding)
    old = c.input_volume(binding)
    if c.region.multi_state:
        net = FlowNetwork([SOURCE, SINK], [])
        return CutResult(0, frozenset({SOURCE}), frozenset({SINK}), net, c, old, old, False)
    net = prepare(p, c, binding)
    result = max_flow(net)
    (sid,) = c.region.nodes
    state = p.states[sid]
    sd = scope_dict(state)
    grow = _reaches_sink(net, set(result.sink_side) - {SINK})
    nodes = set(c.region.nodes[sid])
    for u in grow:
        nodes |= scope_members(state, u, sd) if isinstance(state.nodes[u], MapEntry) else {u}
    nodes = with_boundary(state, nodes)
    result.old_volume = old
    if nodes == set(c.region.nodes[sid]):
        result.cutout, result.new_volume = c, old
        return result
    extended = build_cutout(p, Region({sid: frozenset(nodes)}, sid), c.change_set)
    new = extended.input_volume(binding)
    result.new_volume = new
    if new < old:
        result.cutout, result.accepted = extended, True
    else:
        result.cutout = c
    return result


def minimize_inputs(p: Program, c: Cutout, binding: Optional[dict] = None) -> Cutout:
    """Extended cutout with a strictly smaller input volume, or ``c`` itself."""
    return min_input_cut(p, c, binding).cutout
