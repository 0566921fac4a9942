import dataclasses
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cutflow.analysis import validate
from cutflow.cutout import (CutoutWarning, compute_input_config, compute_system_state, extract,
                            load_cutout, whole_program, write_cutout)
from cutflow.errors import EmptyChangeSet, UnknownElement
from cutflow.fixtures import (FIXTURES, countdown_loop, fusion_chain, first_ten, fusion_dead,
                              fusion_live, matrix_chain)
from cutflow.interp import ExecutionInput, compare_states, run
from cutflow.ir import MapEntry, Program, Tasklet
from cutflow.xform import ChangeSet, apply, match

from progen import SOUNDNESS_VARIANTS, random_program


def quiet_extract(p, cs):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return extract(p, cs)


def cutout_for(p, kind, index=0, params=None, bug=None):
    inst = match(kind, p, params, bug)[index]
    _, cs = apply(inst, p)
    return quiet_extract(p, cs)


def tasklet_id(p, label):
    return next(n.id for _, n in p.all_nodes() if isinstance(n, Tasklet) and n.label == label)


def split_write(extra_reader: bool = False) -> Program:
    """a[0:10] is written first, then a[10:20]; only a[10:20] is read later."""
    p = Program("split_write")
    p.add_container("x", (20,))
    p.add_container("a", (20,), transient=True)
    p.add_container("out", (10,))
    s0 = p.add_state("write")
    p.add_mapped_tasklet(s0, "low", {"i": "0:10"}, {"u": "x[i]"}, "v = u * 2.0", {"v": "a[i]"})
    p.add_mapped_tasklet(s0, "high", {"i": "0:10"}, {"u": "x[i + 10]"}, "v = u + 1.0",
                         {"v": "a[i + 10]"})
    s1 = p.add_state("read", after=s0)
    p.add_mapped_tasklet(s1, "use", {"j": "0:10"}, {"u": "a[j + 10]"}, "v = u", {"v": "out[j]"})
    if extra_reader:
        p.add_container("peek", (1,))
        s2 = p.add_state("peek", after=s1)
        t = p.add_tasklet(s2, "peek", ["u"], ["v"], "v = u")
        p.add_memlet(s2, p.add_access(s2, "a"), None, t, "u", "a", "5")
        p.add_memlet(s2, t, "v", p.add_access(s2, "peek"), None, "peek", "0")
    return p


# -- examples -------------------------------------------------------------------

def test_mm2_cutout_boundary():
    c = cutout_for(matrix_chain(), "map-tiling", 1)
    assert set(c.input_names()) == {"N", "C", "U", "V"}
    assert c.state_names() == ["V"]
    assert validate(c.program) == []


def test_fusion_cutout_inputs():
    c = cutout_for(fusion_chain(), "tasklet-fusion")
    assert set(c.input_names()) == {"N", "y", "z"}
    assert c.state_names() == ["out"]


def test_first_ten_shrinks_to_ten():
    c = cutout_for(first_ten(), "map-tiling")
    assert [str(x) for x in c.program.containers["my_arr"].shape] == ["10"]
    for n in (10, 11, 64, 1024):
        assert c.input_volume({"N": n}) == 10


def test_scope_closure_pulls_in_enclosing_maps():
    p = matrix_chain()
    q, _ = apply(match("map-tiling", p)[1], p)
    inner = tasklet_id(q, "mm2")
    c = quiet_extract(q, ChangeSet(modified=frozenset({inner})))
    entries = [n for n in c.program.states[c.region.entry].nodes.values() if isinstance(n, MapEntry)]
    assert len(entries) == 2
    assert validate(c.program) == []


def test_transient_dead_after_region_is_excluded():
    c = cutout_for(fusion_dead(), "tasklet-fusion")
    assert "tmp" not in c.state_names()
    assert c.state_names() == ["y"]


def test_transient_live_after_region_is_included():
    c = cutout_for(fusion_live(), "tasklet-fusion")
    assert "tmp" in c.state_names()


def test_write_only_container_is_not_an_input():
    c = cutout_for(fusion_dead(), "tasklet-fusion")
    assert "y" not in c.input_names() and "x" in c.input_names()


def test_disjoint_downstream_read_is_excluded_and_sound():
    p = split_write()
    low = tasklet_id(p, "low")
    c = quiet_extract(p, ChangeSet(modified=frozenset({low})))
    assert "a" not in c.state_names()
    # whole-program oracle: changing what the low half computes is unobservable
    q = p.clone()
    code = next(n.code for _, n in q.all_nodes() if n.id == tasklet_id(q, "high"))
    for st_ in q.states.values():
        if low in st_.nodes:
            st_.nodes[low] = dataclasses.replace(st_.nodes[low], code=code)
    rng = np.random.default_rng(4)
    for _ in range(50):
        inp = ExecutionInput({}, {"x": rng.uniform(-5, 5, 20)})
        assert compare_states(run(p, inp), run(q, inp), ["x", "out"], 0.0).equal


def test_adding_a_downstream_read_grows_the_state():
    low = tasklet_id(split_write(), "low")
    cs = ChangeSet(modified=frozenset({low}))
    before = set(quiet_extract(split_write(), cs).state_names())
    after = set(quiet_extract(split_write(True), cs).state_names())
    assert before <= after and "a" in after


def test_multi_state_region_for_loop_unroll():
    c = cutout_for(countdown_loop(), "loop-unroll")
    assert c.region.multi_state
    assert c.input_names() == ["a"] and c.state_names() == ["b"]
    out = run(c.program, ExecutionInput({}, {"a": np.ones(4), "b": np.zeros(4)}))
    assert out.completed and np.array_equal(out.data["b"], np.arange(1.0, 5.0))


def test_empty_and_unknown_change_sets():
    p = matrix_chain()
    with pytest.raises(EmptyChangeSet):
        extract(p, ChangeSet())
    with pytest.raises(UnknownElement):
        extract(p, ChangeSet(modified=frozenset({"n9999"})))


def test_opaque_node_warns_and_is_conservative():
    p = Program("opaque")
    for n in ("x", "y"):
        p.add_container(n, (4,))
    s = p.add_state()
    o = p.add_opaque(s, "lib", ["a"], ["b"], "b = a")
    p.add_memlet(s, p.add_access(s, "x"), None, o, "a", "x", "0:4")
    p.add_memlet(s, o, "b", p.add_access(s, "y"), None, "y", "0:4")
    with pytest.warns(CutoutWarning, match="opaque"):
        c = extract(p, ChangeSet(modified=frozenset({o.id})))
    assert {"x", "y"} <= set(c.input_names()) and {"x", "y"} <= set(c.state_names())


def test_empty_system_state_warns():
    p = Program("sink")
    p.add_container("x", (4,))
    p.add_container("t", (4,), transient=True)
    s = p.add_state()
    p.add_mapped_tasklet(s, "dead", {"i": "0:4"}, {"u": "x[i]"}, "v = u", {"v": "t[i]"})
    with pytest.warns(CutoutWarning, match="empty system state"):
        c = extract(p, ChangeSet(modified=frozenset({tasklet_id(p, "dead")})))
    assert c.system_state == []


def test_write_and_load_roundtrip(tmp_path):
    c = cutout_for(matrix_chain(), "map-tiling", 1)
    prog, meta = write_cutout(c, str(tmp_path / "cut"))
    back = load_cutout(str(tmp_path / "cut"))
    assert back.meta() == c.meta()
    assert back.input_configuration == c.input_configuration
    assert back.change_set == c.change_set


def test_whole_program_cutout():
    p = matrix_chain()
    c = whole_program(p)
    names = {n for n, d in p.containers.items() if not d.transient}
    assert set(c.state_names()) == names
    assert set(c.input_names()) == names | {"N"}


# -- invariants ----------------------------------------------------------------------

def _check_invariants(p, c):
    assert validate(c.program) == []
    assert compute_input_config(p, c) == c.input_configuration
    assert compute_system_state(p, c) == c.system_state
    for name in c.input_names()[len(c.input_symbols):] + c.state_names():
        assert not c.program.containers[name].transient
    written = set()
    for s in c.program.states.values():
        for e in s.edges.values():
            if e.memlet is not None and s.nodes[e.dst].__class__.__name__ == "AccessNode":
                written.add(e.memlet.data)
    assert set(c.state_names()) <= written | {n for n, _ in c.input_configuration}


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_fixture_cutouts_are_self_consistent(name):
    p = FIXTURES[name]()
    for kind, bug in SOUNDNESS_VARIANTS:
        for inst in match(kind, p, None, bug):
            _, cs = apply(inst, p)
            _check_invariants(p, quiet_extract(p, cs))


@given(st.integers(0, 10**6))
@settings(max_examples=40, deadline=None)
def test_generated_cutouts_are_self_consistent(seed):
    p = random_program(seed)
    for kind, bug in SOUNDNESS_VARIANTS:
        params = {"tile_size": 3} if kind == "map-tiling" else None
        for inst in match(kind, p, params, bug):
            _, cs = apply(inst, p)
            _check_invariants(p, quiet_extract(p, cs))


@given(st.integers(0, 10**6))
@settings(max_examples=8, deadline=None)
def test_cutout_verdict_agrees_with_whole_program(seed):
    from progen import soundness_counterexamples
    _, _, bad = soundness_counterexamples(seed, trials=20, max_sites=1)
    assert bad == []
