"""Builders for the shipped example programs.

Each builder returns a fresh :class:`~cutflow.ir.Program`; the same
programs ship as ``.cfprog.json`` files under ``cutflow/data``.
"""

from __future__ import annotations

import os

from .ir import Program


def matrix_chain() -> Program:
    """R += ((A @ B) @ C) @ D with the intermediate products in U and V."""
    p = Program("matrix_chain")
    for name in ("A", "B", "C", "D", "U", "V", "R"):
        p.add_container(name, ("N", "N"))
    p.add_container("tmp1", ("N", "N"), transient=True)
    s = p.add_state("main")
    tmp = p.add_access(s, "tmp1")
    p.add_mapped_tasklet(s, "mm1", {"i": "0:N", "j": "0:N", "k": "0:N"},
                         {"a": "A[i, k]", "b": "B[k, j]"}, "c = a * b",
                         {"c": "tmp1[i, j] (sum)"}, output_nodes={"tmp1": tmp})
    u = p.add_access(s, "U")
    p.add_copy(s, tmp, u)
    v = p.add_access(s, "V")
    p.add_mapped_tasklet(s, "mm2", {"i": "0:N", "j": "0:N", "k": "0:N"},
                         {"a": "U[i, k]", "b": "C[k, j]"}, "c = a * b",
                         {"c": "V[i, j] (sum)"}, input_nodes={"U": u}, output_nodes={"V": v})
    p.add_mapped_tasklet(s, "mm3", {"i": "0:N", "j": "0:N", "k": "0:N"},
                         {"a": "V[i, k]", "b": "D[k, j]"}, "c = a * b",
                         {"c": "R[i, j] (sum)"}, input_nodes={"V": v})
    return p


def two_stage_map(p: Program, s, label: str, ranges: dict, first: tuple, second: tuple,
                   inner: str, in_nodes: dict, out_nodes: dict):
    """A map whose body is ``first -> inner access node -> second``.

    ``first``/``second`` are (label, {conn: access}, code, {conn: access}).
    The second stage's input named ``"t"`` is fed from the inner node.
    """
    entry, exit_ = p.add_map(s, label, ranges)
    t1 = p.add_tasklet(s, first[0], first[1], first[3], first[2])
    t2 = p.add_tasklet(s, second[0], list(second[1]) + ["t"], second[3], second[2])
    mid = p.add_access(s, inner)
    outer_reads: dict = {}
    for task, ins in ((t1, first[1]), (t2, second[1])):
        for conn, text in ins.items():
            data = text.split("[")[0]
            p.add_memlet(s, entry, f"OUT_{data}", task, conn, data, text[len(data) + 1:-1])
            outer_reads.setdefault(data, True)
    (oconn, otext), = first[3].items()
    p.add_memlet(s, t1, oconn, mid, None, inner, otext[len(inner) + 1:-1])
    p.add_memlet(s, mid, None, t2, "t", inner, otext[len(inner) + 1:-1])
    for data in outer_reads:
        p.add_memlet(s, in_nodes[data], None, entry, f"IN_{data}", data)
    for conn, text in second[3].items():
        data = text.split("[")[0]
        p.add_memlet(s, t2, conn, exit_, f"IN_{data}", data, text[len(data) + 1:-1])
        p.add_memlet(s, exit_, f"OUT_{data}", out_nodes[data], None, data)
    return entry, t1, mid, t2, exit_


def fusion_chain() -> Program:
    """x -f-> y -g-> z; then tmp = z * 2 and out = h(y, tmp) in one map."""
    p = Program("fusion_chain")
    p.add_container("x", ("N",))
    p.add_container("y", ("N",), transient=True)
    p.add_container("z", ("N",), transient=True)
    p.add_container("tmp", ("N",), transient=True)
    p.add_container("out", ("N",))
    s = p.add_state("main")
    x, y, z, out = (p.add_access(s, n) for n in ("x", "y", "z", "out"))
    p.add_mapped_tasklet(s, "f", {"i": "0:N"}, {"a": "x[i]"}, "b = a * a + 1.0",
                         {"b": "y[i]"}, input_nodes={"x": x}, output_nodes={"y": y})
    p.add_mapped_tasklet(s, "g", {"i": "0:N"}, {"a": "y[i]"}, "b = a - 0.5",
                         {"b": "z[i]"}, input_nodes={"y": y}, output_nodes={"z": z})
    two_stage_map(p, s, "h", {"i": "0:N"},
                   ("mul", {"a": "z[i]"}, "b = a * 2", {"b": "tmp[i]"}),
                   ("h", {"u": "y[i]"}, "o = u * t + u", {"o": "out[i]"}),
                   "tmp", {"y": y, "z": z}, {"out": out})
    return p


def chain_tie() -> Program:
    """U = X * 2 elementwise, then V += U @ C.  Recomputing U costs as much as reading it."""
    p = Program("chain_tie")
    for name in ("X", "C", "V"):
        p.add_container(name, ("N", "N"))
    p.add_container("U", ("N", "N"), transient=True)
    s = p.add_state("main")
    u = p.add_access(s, "U")
    p.add_mapped_tasklet(s, "scale", {"i": "0:N", "j": "0:N"}, {"a": "X[i, j]"}, "b = a * 2.0",
                         {"b": "U[i, j]"}, output_nodes={"U": u})
    p.add_mapped_tasklet(s, "mm", {"i": "0:N", "j": "0:N", "k": "0:N"},
                         {"a": "U[i, k]", "b": "C[k, j]"}, "c = a * b",
                         {"c": "V[i, j] (sum)"}, input_nodes={"U": u})
    return p


def first_ten() -> Program:
    """Only my_arr[0:10] is touched, whatever the size N >= 10."""
    p = Program("first_ten")
    p.add_container("my_arr", ("N",))
    p.add_symbol("N", lo=10)
    p.add_container("res", (10,))
    s = p.add_state("main")
    p.add_mapped_tasklet(s, "scale", {"i": "0:10"}, {"a": "my_arr[i]"}, "b = a * 3.0 + 1.0",
                         {"b": "res[i]"})
    return p


def countdown_loop() -> Program:
    """for i = 4 down to 1: b[i-1] = a[i-1] * i."""
    p = Program("countdown_loop")
    p.add_container("a", (4,))
    p.add_container("b", (4,))
    init = p.add_state("init")
    loop = p.add_loop("i", 4, 0, -1, before=init)
    p.add_mapped_tasklet(loop.body, "body", {"k": "0:1"}, {"x": "a[i - 1 + k]"}, "y = x * i",
                         {"y": "b[i - 1 + k]"})
    p.add_state("done", after=loop)
    return p


def _fusion_base(name: str) -> tuple:
    p = Program(name)
    p.add_container("x", ("N",))
    p.add_container("y", ("N",))
    p.add_container("tmp", ("N",), transient=True)
    s = p.add_state("compute")
    x, y = p.add_access(s, "x"), p.add_access(s, "y")
    two_stage_map(p, s, "pair", {"i": "0:N"},
                   ("mul", {"a": "x[i]"}, "b = a * 3.0", {"b": "tmp[i]"}),
                   ("add", {"u": "x[i]"}, "o = t + u", {"o": "y[i]"}),
                   "tmp", {"x": x}, {"y": y})
    return p, s


def fusion_live() -> Program:
    """The intermediate tmp is read again in a later state."""
    p, s = _fusion_base("fusion_live")
    p.add_container("w", ("N",))
    s2 = p.add_state("consume", after=s)
    p.add_mapped_tasklet(s2, "reuse", {"j": "0:N"}, {"a": "tmp[j]"}, "b = a - 1.0", {"b": "w[j]"})
    return p


def fusion_dead() -> Program:
    """The intermediate tmp is only read by the fused consumer."""
    return _fusion_base("fusion_dead")[0]


def nested_branch() -> Program:
    """Three nested guards on scalar inputs; each level is a coverage milestone."""
    p = Program("nested_branch")
    for name in ("x", "y", "z", "out"):
        p.add_container(name, (1,))
    s = p.add_state("main")
    t = p.add_tasklet(s, "pick", ["a", "b", "c"], ["o"],
                      "o = select(a > 800, select(b > 800, select(c > 800, 1.0, 0.0), 0.0), 0.0)")
    for conn, name in (("a", "x"), ("b", "y"), ("c", "z")):
        p.add_memlet(s, p.add_access(s, name), None, t, conn, name, "0")
    p.add_memlet(s, t, "o", p.add_access(s, "out"), None, "out", "0")
    return p


FIXTURES = {
    "matrix_chain": matrix_chain,
    "fusion_chain": fusion_chain,
    "chain_tie": chain_tie,
    "first_ten": first_ten,
    "countdown_loop": countdown_loop,
    "fusion_live": fusion_live,
    "fusion_dead": fusion_dead,
    "nested_branch": nested_branch,
}

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")


def fixture_path(name: str) -> str:
    return os.path.join(DATA_DIR, f"{name}.cfprog.json")


def write_fixtures(directory: str = DATA_DIR) -> list:
    from .fileformat import save_program

    os.makedirs(directory, exist_ok=True)
    paths = []
    for name, build in FIXTURES.items():
        path = os.path.join(directory, f"{name}.cfprog.json")
        save_program(build(), path)
        paths.append(path)
    return paths
