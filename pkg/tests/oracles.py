"""Independent reference implementations used by the tests."""

import itertools

from cutflow.mincut import SINK, SOURCE, FlowEdge, FlowNetwork


def network(edges) -> FlowNetwork:
    nodes = sorted({u for e in edges for u in e[:2]} | {SOURCE, SINK})
    return FlowNetwork(nodes, [FlowEdge(a, b, c) for a, b, c in edges])


def brute_force_min_cut(net: FlowNetwork) -> int:
    """Cheapest S/T partition by exhaustive enumeration."""
    inner = [n for n in net.nodes if n not in (SOURCE, SINK)]
    best = None
    for bits in itertools.product((0, 1), repeat=len(inner)):
        side = {SOURCE} | {n for n, b in zip(inner, bits) if b}
        cost = sum(e.capacity for e in net.edges if e.src in side and e.dst not in side)
        best = cost if best is None else min(best, cost)
    return best


def random_dag(rnd, max_nodes: int = 10, max_cap: int = 20) -> FlowNetwork:
    """Random DAG over S, v0.., T in topological order, at most ``max_nodes`` nodes."""
    k = rnd.randint(0, max_nodes - 2)
    order = [SOURCE] + [f"v{i}" for i in range(k)] + [SINK]
    edges = []
    for i, j in itertools.combinations(range(len(order)), 2):
        if rnd.random() < 0.4:
            edges.append((order[i], order[j], rnd.randint(0, max_cap)))
    return network(edges)


def crossing(net: FlowNetwork, side) -> int:
    return sum(net.capacity_of(e) for e in net.edges if e.src in side and e.dst not in side)
