import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cutflow.analysis import validate
from cutflow.cutout import extract
from cutflow.errors import SiteStale, UnknownElement
from cutflow.fixtures import FIXTURES, countdown_loop, fusion_chain, matrix_chain
from cutflow.interp import ExecutionInput, compare_states, run
from cutflow.ir import AccessNode, MapEntry
from cutflow.symexpr import eval_int
from cutflow.xform import (BUG_ALIASES, KINDS, ChangeSet, TransformationInstance, apply, diff,
                           match, parse_address, resolve)

from progen import random_program

BUILTIN = [("map-tiling", None), ("map-tiling", "off-by-one"), ("map-tiling", "no-bound-guard"),
           ("loop-unroll", None), ("loop-unroll", "ignores-negative-step"),
           ("tasklet-fusion", None), ("tasklet-fusion", "drops-live-write")]


def random_input(p, n, rng):
    symbols = {s: n for s in p.free_symbols()}
    data = {}
    for name, d in p.containers.items():
        if d.transient:
            continue
        shape = tuple(eval_int(x, symbols) for x in d.shape)
        data[name] = rng.uniform(-1, 1, size=shape)
    return ExecutionInput(symbols, data)


def outputs(p):
    return [n for n, d in p.containers.items() if not d.transient]


def test_match_counts():
    assert len(match("map-tiling", matrix_chain())) == 3
    assert len(match("loop-unroll", countdown_loop())) == 1
    (inst,) = match("tasklet-fusion", fusion_chain())
    p = fusion_chain()
    s = p.states[p.start]
    assert isinstance(s.nodes[inst.site[0]], AccessNode) and s.nodes[inst.site[0]].data == "tmp"


def test_match_is_sorted_and_stable():
    a = [i.address() for i in match("map-tiling", matrix_chain())]
    b = [i.address() for i in match("map-tiling", matrix_chain())]
    assert a == b


@pytest.mark.parametrize("kind,bug", BUILTIN)
@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_apply_valid_and_reports_soundly(name, kind, bug):
    p = FIXTURES[name]()
    for inst in match(kind, p, bug=bug):
        q, reported = apply(inst, p)
        assert validate(q) == []
        assert reported.covers(diff(p, q))
        before = {n.id for _, n in p.all_nodes()}
        after = {n.id: n for _, n in q.all_nodes()}
        for nid in before - reported.nodes():
            assert nid in after


@given(st.integers(0, 10**6))
@settings(max_examples=40, deadline=None)
def test_reporting_is_sound_on_generated_programs(seed):
    p = random_program(seed)
    for kind, bug in BUILTIN:
        for inst in match(kind, p, {"tile_size": 3} if kind == "map-tiling" else None, bug):
            q, reported = apply(inst, p)
            assert validate(q) == []
            assert reported.covers(diff(p, q))


@pytest.mark.parametrize("kind", ["map-tiling", "loop-unroll", "tasklet-fusion"])
@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_correct_variants_preserve_semantics(name, kind):
    p = FIXTURES[name]()
    rng = np.random.default_rng(11)
    for inst in match(kind, p, {"tile_size": 4} if kind == "map-tiling" else None):
        q, _ = apply(inst, p)
        lo = max([1] + [p.symbols[s].lo or 1 for s in p.free_symbols()])
        for _ in range(100):
            inp = random_input(p, int(rng.integers(lo, lo + 11)), rng)
            a, b = run(p, inp), run(q, inp)
            assert a.completed
            assert compare_states(a, b, outputs(p), 1e-5).equal, inst.address()


def test_tiling_tile32_equals_untiled_at_64():
    p = matrix_chain()
    inst = match("map-tiling", p, {"tile_size": 32})[1]
    q, _ = apply(inst, p)
    inp = random_input(p, 64, np.random.default_rng(0))
    assert compare_states(run(p, inp), run(q, inp), outputs(p), 1e-5).equal


def test_off_by_one_faults_at_32():
    p = matrix_chain()
    q, _ = apply(match("map-tiling", p, bug="off-by-one")[0], p)
    out = run(q, random_input(p, 32, np.random.default_rng(0)))
    assert out.fault is not None and out.fault.kind == "OutOfBounds"


def test_no_bound_guard_only_fails_on_non_multiples():
    p = matrix_chain()
    q, _ = apply(match("map-tiling", p, {"tile_size": 4}, "no-bound-guard")[0], p)
    rng = np.random.default_rng(5)
    assert run(q, random_input(p, 8, rng)).completed
    assert run(q, random_input(p, 7, rng)).fault.kind == "OutOfBounds"


def test_unroll_body_instances():
    p = countdown_loop()
    (inst,) = match("loop-unroll", p)
    labels = lambda prog: sorted(s.label for s in prog.states.values())  # noqa: E731
    q, _ = apply(inst, p)
    bodies = [s for s in q.states.values() if any(isinstance(n, MapEntry) for n in s.nodes.values())]
    assert len(bodies) == 4
    buggy, _ = apply(inst.with_options(bug="UnrollIgnoresNegativeStep"), p)
    bodies = [s for s in buggy.states.values() if any(isinstance(n, MapEntry) for n in s.nodes.values())]
    assert len(bodies) == 2
    assert labels(q) != labels(p)


def test_untouched_ids_preserved():
    p = matrix_chain()
    inst = match("map-tiling", p)[0]
    q, cs = apply(inst, p)
    for s, n in p.all_nodes():
        if n.id not in cs.nodes():
            assert q.states[s.id].nodes[n.id] == n


def test_diff_examples():
    p = matrix_chain()
    assert diff(p, p).is_empty() and diff(p, p).describe() == "no changes"
    inst = match("map-tiling", p)[0]
    q, _ = apply(inst, p)
    d = diff(p, q)
    entry, exit_ = inst.site[:2]
    assert {entry, exit_} <= d.modified
    new_maps = {n.id for _, n in q.all_nodes() if isinstance(n, MapEntry)} - \
               {n.id for _, n in p.all_nodes()}
    assert new_maps and new_maps <= d.added


def test_site_stale_after_change():
    p = matrix_chain()
    inst = match("map-tiling", p)[0]
    q, _ = apply(inst, p)
    with pytest.raises(SiteStale):
        apply(inst, q)


def test_under_reported_change_set_traps_on_reapply():
    p = countdown_loop()
    (inst,) = match("loop-unroll", p)
    body = p.states[inst.site[1]]
    under = ChangeSet(modified=frozenset({next(iter(body.nodes))}))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        c = extract(p, under)
    with pytest.raises((SiteStale, UnknownElement)):
        apply(inst, c.program)


def test_reapply_on_honest_cutout_works():
    p = fusion_chain()
    (inst,) = match("tasklet-fusion", p)
    _, cs = apply(inst, p)
    c = extract(p, cs)
    q, _ = apply(inst, c.program)
    assert validate(q) == []


def test_addresses_roundtrip():
    p = matrix_chain()
    for inst in match("map-tiling", p, {"tile_size": 8}, "off-by-one"):
        text = inst.address()
        kind, site, params, bug = parse_address(text)
        assert (kind, site, params["tile_size"], bug) == ("map-tiling", inst.site[0], 8, "off-by-one")
        (again,) = resolve(p, text)
        assert again == inst
        assert TransformationInstance.from_doc(inst.to_doc()) == inst


def test_registry_and_bug_aliases():
    assert {"map-tiling", "loop-unroll", "tasklet-fusion", "identity"} <= set(KINDS)
    assert set(BUG_ALIASES.values()) == {"TilingOffByOne", "TilingNoBoundGuard",
                                         "UnrollIgnoresNegativeStep", "FusionDropsLiveWrite"}
