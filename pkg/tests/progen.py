"""Random program generator for property and soundness tests.

Generated programs are hazard free: every container is written by exactly
one tasklet and each state has at most one access node per container, so a
difference in any value written inside a cutout either reaches the program's
observable output or is provably dead.
"""

import numpy as np

from cutflow.fixtures import two_stage_map
from cutflow.ir import Program

CODES = ("o = a * 2.0 + b", "o = a - b * 0.5", "o = a * b + 1.0", "o = a + b + 0.25")
LOOP_SIZE = 4


def random_program(seed: int, max_states: int = 3) -> Program:
    rng = np.random.default_rng(seed)
    p = Program(f"gen{seed}")
    readable = []
    for k in range(int(rng.integers(1, 3))):
        p.add_container(f"in{k}", ("N",))
        readable.append(f"in{k}")
    prev = None
    counter = 0
    for si in range(int(rng.integers(1, max_states + 1))):
        if rng.random() < 0.25:
            if prev is None:
                prev = p.add_state("init")
            src, dst = f"lin{si}", f"lout{si}"
            p.add_container(src, (LOOP_SIZE,))
            p.add_container(dst, (LOOP_SIZE,))
            if rng.random() < 0.5:
                loop = p.add_loop(f"i{si}", LOOP_SIZE, 0, -1, before=prev)
                sub = f"i{si} - 1 + k"
            else:
                loop = p.add_loop(f"i{si}", 0, LOOP_SIZE, 1, before=prev)
                sub = f"i{si} + k"
            p.add_mapped_tasklet(loop.body, f"lb{si}", {"k": "0:1"}, {"x": f"{src}[{sub}]"},
                                 f"y = x * i{si} + 1.0", {"y": f"{dst}[{sub}]"})
            prev = loop
            continue
        s = p.add_state(f"s{si}", after=prev)
        nodes: dict = {}

        def node(name):
            if name not in nodes:
                nodes[name] = p.add_access(s, name)
            return nodes[name]

        for _ in range(int(rng.integers(1, 4))):
            picks = rng.choice(len(readable), size=2)
            a, b = readable[int(picks[0])], readable[int(picks[1])]
            out = f"c{counter}"
            counter += 1
            p.add_container(out, ("N",), transient=bool(rng.random() < 0.5))
            code = CODES[int(rng.integers(len(CODES)))]
            if rng.random() < 0.3:
                mid = f"m{counter}"
                p.add_container(mid, ("N",), transient=True)
                ins = {a: node(a)}
                ins.setdefault(b, node(b))
                two_stage_map(p, s, f"t{counter}", {"i": "0:N"},
                              (f"f{counter}", {"a": f"{a}[i]"}, "b = a * 3.0 - 1.0", {"b": f"{mid}[i]"}),
                              (f"g{counter}", {"u": f"{b}[i]"}, "o = t * u + t", {"o": f"{out}[i]"}),
                              mid, ins, {out: node(out)})
            else:
                ins = {"a": f"{a}[i]", "b": f"{b}[i]"}
                in_nodes = {a: node(a), b: node(b)}
                p.add_mapped_tasklet(s, f"t{counter}", {"i": "0:N"}, ins, code,
                                     {"o": f"{out}[i]"}, input_nodes=in_nodes,
                                     output_nodes={out: node(out)})
            readable.append(out)
        prev = s
    return p


SOUNDNESS_VARIANTS = (("map-tiling", None), ("map-tiling", "off-by-one"),
                      ("map-tiling", "no-bound-guard"), ("tasklet-fusion", None),
                      ("tasklet-fusion", "drops-live-write"), ("loop-unroll", None),
                      ("loop-unroll", "ignores-negative-step"))


def soundness_counterexamples(seed: int, trials: int = 50, max_sites: int = 2,
                              size_max: int = 8, minimize: bool = False) -> tuple:
    """Compare cutout verdicts with whole-program differential verdicts.

    Returns (instances checked, invalid cutout verdicts, counterexamples).
    """
    import warnings

    from cutflow.cutout import extract, whole_program
    from cutflow.fuzz import INCONCLUSIVE, TrialConfig, verify
    from cutflow.mincut import minimize_inputs
    from cutflow.xform import apply, match

    p = random_program(seed)
    checked, invalid, bad = 0, 0, []
    for kind, bug in SOUNDNESS_VARIANTS:
        params = {"tile_size": 3} if kind == "map-tiling" else None
        for inst in match(kind, p, params, bug)[:max_sites]:
            _, cs = apply(inst, p)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                c = extract(p, cs)
                if minimize:
                    c = minimize_inputs(p, c)
            cfg = TrialConfig(trials=trials, seed=seed, size_max=size_max)
            vc, _ = verify(c, inst, cfg, p)
            vw, _ = verify(whole_program(p), inst, cfg, p)
            checked += 1
            invalid += vc.invalid
            if vc.invalid != vw.invalid or INCONCLUSIVE in (vc.outcome, vw.outcome):
                bad.append((seed, inst.address(), vc.summary(), vw.summary()))
    return checked, invalid, bad
