import json
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cutflow.analysis import read_write_sets, validate
from cutflow.errors import DuplicateName, MalformedDocument, UnknownContainer, UnknownVersion
from cutflow.fileformat import (decode_data, deserialize, encode_data, load_program, serialize,
                                to_dot)
from cutflow.fixtures import FIXTURES, fusion_chain, fixture_path, matrix_chain
from cutflow.ir import AccessNode, MapEntry, Program, Tasklet
from cutflow.symexpr import Cmp, Sym

from progen import random_program


def codes(p):
    return {d.code for d in validate(p)}


def test_fixtures_validate():
    for name, build in FIXTURES.items():
        assert validate(build()) == [], name


def test_rank_mismatch_diagnostic():
    p = Program("bad")
    p.add_container("A", ("N", "N"))
    p.add_container("B", ("N", "N"))
    s = p.add_state()
    t = p.add_tasklet(s, "t", ["a"], ["b"], "b = a")
    p.add_memlet(s, p.add_access(s, "A"), None, t, "a", "A", "0")
    p.add_memlet(s, t, "b", p.add_access(s, "B"), None, "B", "0, 0")
    assert "RankMismatch" in codes(p)


def test_unbalanced_scope_diagnostic():
    p = fusion_chain()
    s = p.states[p.start]
    exit_id = next(n.id for n in s.nodes.values() if type(n).__name__ == "MapExit")
    for eid in [e.id for e in s.edges.values() if exit_id in (e.src, e.dst)]:
        del s.edges[eid]
    del s.nodes[exit_id]
    assert "UnbalancedScope" in codes(p)


def test_add_loop_shape():
    p = Program("loop")
    p.add_container("a", ("N",))
    loop = p.add_loop("i", 0, "N", 1)
    edges = list(p.interstate.values())
    assert len(edges) == 3
    guard = [e for e in edges if e.src == loop.guard.id and e.dst == loop.body.id][0]
    assert guard.condition == Cmp("<", Sym("i"), Sym("N"))
    back = [e for e in edges if e.src == loop.body.id][0]
    assert str(back.assignments["i"]) == "i + 1"


def test_fusion_chain_structure():
    p = fusion_chain()
    s = p.states[p.start]
    tasklets = sorted(n.label for n in s.nodes.values() if isinstance(n, Tasklet))
    assert tasklets == ["f", "g", "h", "mul"]
    outer = {n.data for n in s.nodes.values() if isinstance(n, AccessNode)}
    assert outer == {"x", "y", "z", "tmp", "out"}


def test_builder_errors():
    p = Program("e")
    p.add_container("A", (4,))
    with pytest.raises(DuplicateName):
        p.add_container("A", (4,))
    with pytest.raises(DuplicateName):
        p.add_symbol("A")
    s = p.add_state()
    with pytest.raises(UnknownContainer):
        p.add_access(s, "missing")
    t = p.add_tasklet(s, "t", [], ["o"], "o = 1.0")
    with pytest.raises(UnknownContainer):
        p.add_memlet(s, t, "o", p.add_access(s, "A"), None, "nope", "0")


def test_read_write_sets_of_matrix_chain():
    reads, writes = read_write_sets(matrix_chain())
    assert set(reads) | set(writes) == {"A", "B", "C", "D", "tmp1", "U", "V", "R"}
    assert {str(r) for r in writes["V"]} == {"0:N, 0:N"}
    assert {str(r) for r in reads["tmp1"]} == {"0:N, 0:N"}


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_roundtrip_fixture(name):
    p = FIXTURES[name]()
    blob = serialize(p)
    q = deserialize(blob)
    assert serialize(q) == blob
    assert q.states.keys() == p.states.keys()
    for sid in p.states:
        assert q.states[sid].nodes == p.states[sid].nodes
        assert q.states[sid].edges == p.states[sid].edges
    assert q.interstate == p.interstate
    assert q.containers == p.containers


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_shipped_files_match_builders(name):
    assert serialize(load_program(fixture_path(name))) == serialize(FIXTURES[name]())


def _shuffled(p: Program, seed: int) -> Program:
    rnd = random.Random(seed)
    q = p.clone()

    def shuffle(d):
        items = list(d.items())
        rnd.shuffle(items)
        d.clear()
        d.update(items)

    shuffle(q.states)
    shuffle(q.interstate)
    shuffle(q.containers)
    for s in q.states.values():
        shuffle(s.nodes)
        shuffle(s.edges)
    return q


@given(st.integers(0, 10**6), st.integers(0, 1000))
@settings(max_examples=60, deadline=None)
def test_equal_programs_serialize_identically(seed, shuffle_seed):
    p = random_program(seed)
    assert validate(p) == []
    assert serialize(_shuffled(p, shuffle_seed)) == serialize(p)
    assert serialize(deserialize(serialize(p))) == serialize(p)


def test_malformed_documents():
    blob = serialize(matrix_chain())
    with pytest.raises(MalformedDocument):
        deserialize(blob[: len(blob) // 2])
    doc = json.loads(blob)
    doc["version"] = 99
    with pytest.raises(UnknownVersion):
        deserialize(json.dumps(doc).encode())
    doc["version"] = 1
    del doc["states"]
    with pytest.raises(MalformedDocument):
        deserialize(json.dumps(doc).encode())


def test_cfdata_roundtrip():
    data = {"a": np.arange(6, dtype=np.float64).reshape(2, 3), "b": np.array([1, -2], dtype=np.int32),
            "c": np.array([True, False])}
    symbols, back = decode_data(encode_data({"N": 3}, data))
    assert symbols == {"N": 3}
    for k, v in data.items():
        assert back[k].dtype == v.dtype and np.array_equal(back[k], v)
    with pytest.raises(MalformedDocument):
        decode_data(b"garbage")


def test_topological_order_is_deterministic():
    p = matrix_chain()
    s = p.states[p.start]
    first = s.topological_order()
    q = _shuffled(p, 7)
    assert q.states[s.id].topological_order() == first


def test_dot_export_mentions_every_node():
    p = fusion_chain()
    dot = to_dot(p)
    assert dot.startswith("digraph")
    for _, n in p.all_nodes():
        assert n.id in dot
    assert any(isinstance(n, MapEntry) for _, n in p.all_nodes())
