import numpy as np
import pytest

from cutflow.errors import InputShapeMismatch, UnknownContainer
from cutflow.fixtures import FIXTURES, countdown_loop, matrix_chain, nested_branch
from cutflow.interp import (COMPLETED, FAULT, TIMEOUT, ExecutionInput, ExecutionOutcome,
                            compare_states, run)
from cutflow.ir import Program
from cutflow.xform import apply, match


def chain_input(n, mats):
    return ExecutionInput({"N": n}, dict(zip("ABCD", mats)))


def matmul_oracle(a, b):
    n, m = a.shape[0], b.shape[1]
    out = np.zeros((n, m), dtype=np.result_type(a, b))
    for i in range(n):
        for j in range(m):
            out[i, j] = sum(a[i, k] * b[k, j] for k in range(a.shape[1]))
    return out


def scalar_outcome(v, status=COMPLETED):
    return ExecutionOutcome(status, {"x": np.array([v])}, frozenset(), 0)


def test_identity_chain():
    eye = np.eye(2)
    out = run(matrix_chain(), chain_input(2, [eye] * 4))
    assert out.status == COMPLETED
    assert np.array_equal(out.data["R"], eye)


def test_chain_matches_matmul_oracle():
    rng = np.random.default_rng(3)
    mats = [rng.integers(-5, 6, size=(3, 3)).astype(np.float64) for _ in range(4)]
    out = run(matrix_chain(), chain_input(3, mats))
    a, b, c, d = mats
    want = matmul_oracle(matmul_oracle(matmul_oracle(a, b), c), d)
    assert np.array_equal(out.data["R"], want)
    assert np.array_equal(out.data["U"], matmul_oracle(a, b))


def test_off_by_one_tiling_faults_out_of_bounds():
    p = matrix_chain()
    inst = [i for i in match("map-tiling", p, bug="off-by-one")][1]
    q, _ = apply(inst, p)
    rng = np.random.default_rng(0)
    out = run(q, chain_input(33, [rng.random((33, 33)) for _ in range(4)]))
    assert out.status == FAULT and out.fault.kind == "OutOfBounds"
    assert out.fault.location in q.states[q.start].nodes


def test_countdown_loop_result_and_coverage():
    a = np.array([1.0, 2.0, 3.0, 4.0])
    out = run(countdown_loop(), ExecutionInput({}, {"a": a}))
    assert np.array_equal(out.data["b"], a * np.arange(1, 5))
    assert any(k.startswith("edge:") for k in out.coverage)
    assert out.steps >= 4


def test_timeout():
    out = run(countdown_loop(), ExecutionInput({}, {"a": np.ones(4)}), budget=3)
    assert out.status == TIMEOUT


def test_determinism_over_repeated_runs():
    rng = np.random.default_rng(1)
    inp = chain_input(4, [rng.random((4, 4)) for _ in range(4)])
    first = run(matrix_chain(), inp)
    for _ in range(100):
        again = run(matrix_chain(), inp)
        assert again.status == first.status and again.steps == first.steps
        for k in first.data:
            assert first.data[k].tobytes() == again.data[k].tobytes()


def _sum_program(reverse: bool) -> Program:
    p = Program("sum")
    p.add_container("a", ("N",), dtype="i64")
    p.add_container("s", (1,), dtype="i64")
    st = p.add_state()
    sub = "N - 1 - i" if reverse else "i"
    p.add_mapped_tasklet(st, "acc", {"i": "0:N"}, {"x": f"a[{sub}]"}, "y = x", {"y": "s[0] (sum)"})
    return p


def test_integer_sum_is_order_independent():
    a = np.random.default_rng(2).integers(-1000, 1000, size=17)
    fwd = run(_sum_program(False), ExecutionInput({"N": 17}, {"a": a}))
    rev = run(_sum_program(True), ExecutionInput({"N": 17}, {"a": a}))
    assert fwd.data["s"][0] == rev.data["s"][0] == a.sum()


def test_write_conflict_fault():
    p = Program("conflict")
    p.add_container("a", ("N",))
    p.add_container("o", (1,))
    st = p.add_state()
    p.add_mapped_tasklet(st, "w", {"i": "0:N"}, {"x": "a[i]"}, "y = x", {"y": "o[0]"})
    out = run(p, ExecutionInput({"N": 3}, {"a": np.ones(3)}))
    assert out.status == FAULT and out.fault.kind == "WriteConflict"


def test_integer_division_by_zero_fault():
    p = Program("div")
    for n in ("a", "b", "o"):
        p.add_container(n, (2,), dtype="i64")
    st = p.add_state()
    p.add_mapped_tasklet(st, "d", {"i": "0:2"}, {"x": "a[i]", "y": "b[i]"}, "z = x // y", {"z": "o[i]"})
    out = run(p, ExecutionInput({}, {"a": np.array([4, 5]), "b": np.array([2, 0])}))
    assert out.status == FAULT and out.fault.kind == "DivisionByZero"


def test_unbound_symbol_fault():
    p = Program("unbound")
    s0 = p.add_state("a")
    s1 = p.add_state("b", after=s0, condition="k > 0")
    p.add_state("c", after=s1, assignments={"k": 1})
    out = run(p, ExecutionInput({}, {}))
    assert out.status == FAULT and out.fault.kind == "UnboundSymbol"


def test_nondeterminism_warning_and_first_edge_wins():
    p = Program("nd")
    p.add_container("o", (1,))
    s0 = p.add_state("start")
    s1 = p.add_state("one", after=s0)
    s2 = p.add_state("two", after=s0)
    for s, v in ((s1, "1.0"), (s2, "2.0")):
        t = p.add_tasklet(s, "w", [], ["y"], f"y = {v}")
        p.add_memlet(s, t, "y", p.add_access(s, "o"), None, "o", "0")
    out = run(p, ExecutionInput({}, {}))
    assert out.data["o"][0] == 1.0
    assert any("Nondeterminism" in w for w in out.warnings)


def test_select_coverage_keys():
    p = nested_branch()
    lo = run(p, ExecutionInput({}, {n: np.array([0.0]) for n in "xyz"}))
    hi = run(p, ExecutionInput({}, {n: np.array([900.0]) for n in "xyz"}))
    assert lo.data["out"][0] == 0.0 and hi.data["out"][0] == 1.0
    assert any(k.startswith("select:") for k in lo.coverage)
    assert lo.coverage != hi.coverage


def test_input_shape_mismatch():
    p = matrix_chain()
    with pytest.raises(InputShapeMismatch):
        run(p, ExecutionInput({}, {}))
    with pytest.raises(InputShapeMismatch):
        run(p, ExecutionInput({"N": 2}, {"A": np.ones(3)}))
    with pytest.raises(InputShapeMismatch):
        run(p, ExecutionInput({"N": 2}, {"A": np.ones(4, dtype=np.int64)}))
    with pytest.raises(InputShapeMismatch):
        run(p, ExecutionInput({"N": 2}, {"tmp1": np.ones(4)}))


def test_compare_states_examples():
    a = scalar_outcome(1.0)
    assert compare_states(a, scalar_outcome(1.0), ["x"], 1e-5).kind == "Equal"
    assert compare_states(a, scalar_outcome(1.0 + 1e-7), ["x"], 1e-5).kind == "Equal"
    d = compare_states(a, scalar_outcome(1.0 + 1e-3), ["x"], 1e-5)
    assert d.kind == "Differs" and d.container == "x" and d.index == (0,)
    assert compare_states(a, scalar_outcome(1.0 + 1e-7), ["x"], 0.0).kind == "Differs"
    fault = ExecutionOutcome(FAULT, {}, frozenset(), 0)
    assert compare_states(a, fault, ["x"], 1e-5).kind == "StatusMismatch"
    assert compare_states(a, scalar_outcome(np.nan), ["x"], 1e-5).kind == "Differs"
    assert compare_states(scalar_outcome(np.nan), scalar_outcome(np.nan), ["x"], 1e-5).kind == "Equal"
    with pytest.raises(UnknownContainer):
        compare_states(a, a, ["missing"], 1e-5)


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_fixtures_run_with_default_data(name):
    p = FIXTURES[name]()
    out = run(p, ExecutionInput({s: 12 for s in p.free_symbols()}, {}))
    assert out.status == COMPLETED
    transient = {n for n, d in p.containers.items() if d.transient}
    assert set(out.data) == set(p.containers) - transient
