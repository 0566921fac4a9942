"""Command-line driver.

Exit codes: 0 when everything checked out, 1 when an invalid
transformation (or a reproduced divergence) was found, 2 on usage or input
errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .analysis import require_valid
from .cutout import CutoutWarning, extract, write_cutout
from .errors import CutflowError, EmptyChangeSet
from .fileformat import canonical_json, load_data, load_program
from .fixtures import write_fixtures
from .fuzz import INVALID, INVALID_CODE, TrialConfig, replay, verify
from .interp import ExecutionInput, run
from .mincut import default_binding, min_input_cut
from .version import __version__
from .xform import apply, diff, match

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2
REPORT_VERSION = 1


class UsageError(CutflowError):
    pass


# -- reports ----------------------------------------------------------------------

@dataclass
class InstanceRecord:
    transformation: str
    site: str
    verdict: str
    cause: Optional[str] = None
    category: Optional[str] = None
    trial: Optional[int] = None
    trials: int = 0
    uninteresting: int = 0
    wall_time: float = 0.0
    detail: str = ""
    bundle: Optional[str] = None
    inputs: list = field(default_factory=list)
    system_state: list = field(default_factory=list)
    input_volume: Optional[list] = None
    advice: Optional[str] = None

    def to_doc(self) -> dict:
        return dict(self.__dict__)


@dataclass
class CampaignReport:
    program: str
    seed: int
    records: list = field(default_factory=list)

    @property
    def tested(self) -> int:
        return sum(1 for r in self.records if r.verdict != "Skipped")

    @property
    def invalid(self) -> int:
        return sum(1 for r in self.records if r.verdict == INVALID)

    def exit_code(self) -> int:
        return EXIT_INVALID if self.invalid else EXIT_OK

    def to_doc(self) -> dict:
        return {"version": REPORT_VERSION, "tool_version": __version__, "program": self.program,
                "seed": self.seed, "records": [r.to_doc() for r in self.records],
                "totals": {"instances": len(self.records), "tested": self.tested,
                           "invalid": self.invalid}}

    def text(self) -> str:
        lines = [f"program {self.program}, seed {self.seed}"]
        for r in self.records:
            head = f"{r.transformation} @ {r.site}: {r.verdict}"
            if r.verdict == INVALID:
                head += f" [{r.category}] ({r.cause}"
                head += f", trial {r.trial})" if r.trial is not None else ")"
            lines.append(head)
            if r.detail:
                lines.append(f"    {r.detail}")
            if r.input_volume is not None:
                old, new = r.input_volume
                lines.append(f"    input volume {old} -> {new}" + (" (halved)" if new * 2 == old else ""))
            if r.inputs:
                lines.append(f"    inputs: {', '.join(r.inputs)}; system state: {', '.join(r.system_state)}")
            if r.advice:
                lines.append(f"    advice: {r.advice}")
            if r.bundle:
                lines.append(f"    reproducer: {r.bundle}")
        counts: dict = {}
        for r in self.records:
            if r.verdict == INVALID:
                counts[r.category] = counts.get(r.category, 0) + 1
        lines.append(f"{self.tested} instance(s) tested, {self.invalid} invalid")
        for cat in ("change-in-semantics", "input-dependent", "invalid code"):
            if counts.get(cat):
                lines.append(f"  {cat}: {counts[cat]}")
        return "\n".join(lines)


def categorize(verdict) -> Optional[str]:
    """Failure taxonomy: invalid code, input-dependent or change-in-semantics."""
    if verdict.outcome != INVALID:
        return None
    if verdict.cause == INVALID_CODE:
        return "invalid code"
    passed = verdict.stats.conclusive - 1
    return "input-dependent" if passed > 0 else "change-in-semantics"


# -- helpers ----------------------------------------------------------------------

def _load(path: str):
    p = load_program(path)
    require_valid(p)
    return p


def _params(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--param expects KEY=VALUE, got {item!r}")
        out[key] = int(value) if value.lstrip("-").isdigit() else value
    return out


def _binding(text: Optional[str], p) -> dict:
    binding = default_binding(p)
    if text:
        for part in text.split(","):
            key, sep, value = part.partition("=")
            if not sep:
                raise UsageError(f"--binding expects NAME=INT pairs, got {part!r}")
            binding[key.strip()] = int(value)
    return binding


def _instances(p, args) -> list:
    found = match(args.xform, p, _params(args.param), args.bug)
    if args.site is not None:
        found = [i for i in found if args.site in i.site]
        if not found:
            raise UsageError(f"no {args.xform} site at {args.site!r}")
    return found


def _extract(p, inst, args):
    _, cs = apply(inst, p)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", CutoutWarning)
        c = extract(p, cs)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    volumes = None
    if args.mincut:
        result = min_input_cut(p, c, _binding(getattr(args, "binding", None), p))
        volumes = [result.old_volume, result.new_volume if result.accepted else result.old_volume]
        c = result.cutout
    return c, volumes


def _table(title: str, rows) -> str:
    lines = [title]
    for name, subset in rows:
        lines.append(f"  {name:<12} [{subset}]")
    if len(lines) == 1:
        lines.append("  (none)")
    return "\n".join(lines)


def _slug(text: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in text)


# -- commands ----------------------------------------------------------------------

def cmd_verify(args) -> int:
    p = _load(args.program)
    cfg = TrialConfig(trials=args.trials, tolerance=args.tol, seed=args.seed,
                      size_max=args.size_max, constraints=args.constraints, mode=args.mode)
    report = CampaignReport(os.path.basename(args.program), args.seed)
    for inst in _instances(p, args):
        start = time.perf_counter()
        rec = InstanceRecord(inst.kind, inst.site[0], "Skipped")
        report.records.append(rec)
        try:
            c, rec.input_volume = _extract(p.clone(), inst, args)
        except EmptyChangeSet:
            rec.detail = "empty change set; nothing to verify"
            continue
        rec.inputs = c.input_names()
        rec.system_state = c.state_names()
        verdict, bundle = verify(c, inst, cfg, p)
        rec.verdict, rec.cause, rec.trial = verdict.outcome, verdict.cause, verdict.trial
        rec.category = categorize(verdict)
        rec.trials, rec.uninteresting = verdict.stats.trials_run, verdict.stats.uninteresting
        rec.detail = verdict.detail
        rec.advice = verdict.advice()
        if bundle is not None:
            rec.bundle = bundle.write(os.path.join(args.out, "bundles", _slug(inst.address())))
        rec.wall_time = round(time.perf_counter() - start, 3)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.json"), "wb") as fh:
        fh.write(canonical_json(report.to_doc()))
    text = report.text()
    with open(os.path.join(args.out, "report.txt"), "w") as fh:
        fh.write(text + "\n")
    print(text)
    return report.exit_code()


def cmd_cutout(args) -> int:
    p = _load(args.program)
    insts = _instances(p, args)
    if not insts:
        raise UsageError(f"no {args.xform} sites in {args.program}")
    for inst in insts:
        c, volumes = _extract(p.clone(), inst, args)
        out = args.out if len(insts) == 1 else os.path.join(args.out, _slug(inst.site[0]))
        prog, meta = write_cutout(c, out)
        print(f"{inst.address()} -> {prog}")
        print(f"input symbols: {', '.join(c.input_symbols) or '(none)'}")
        print(_table("input configuration:", c.input_configuration))
        print(_table("system state:", c.system_state))
        if volumes is not None:
            print(f"input volume {volumes[0]} -> {volumes[1]}")
    return EXIT_OK


def cmd_replay(args) -> int:
    result = replay(args.bundle)
    a, b = result.outcomes
    print(f"original: {a.describe()}, {a.steps} steps")
    print(f"transformed: {b.describe()}, {b.steps} steps")
    if not result.diverges:
        print("warning: no divergence; the bundle does not reproduce a failure")
        return EXIT_OK
    if result.comparison.kind == "Differs":
        print(f"first difference: {result.comparison.describe()}")
    else:
        print(f"status mismatch: {result.cause}")
    if not result.reproduced:
        print("warning: replayed outcomes differ from the recorded report")
    return EXIT_INVALID


def _print_array(name: str, arr: np.ndarray) -> None:
    with np.printoptions(threshold=200, linewidth=100):
        print(f"{name} =\n{arr}")


def cmd_run(args) -> int:
    p = _load(args.program)
    if args.input:
        symbols, data = load_data(args.input)
    else:
        symbols, data = {}, {}
    symbols.update(_binding_only(args.symbol))
    out = run(p, ExecutionInput(symbols, data), args.budget)
    print(f"status: {out.describe()}, {out.steps} steps")
    for w in out.warnings:
        print(f"warning: {w}")
    for name in sorted(out.data):
        _print_array(name, out.data[name])
    return EXIT_OK if out.completed else EXIT_INVALID


def _binding_only(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--symbol expects NAME=INT, got {item!r}")
        out[key] = int(value)
    return out


def cmd_diff(args) -> int:
    print(diff(_load(args.a), _load(args.b)).describe())
    return EXIT_OK


def cmd_fixtures(args) -> int:
    for path in write_fixtures(args.out):
        print(path)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------

def _xform_args(sp) -> None:
    sp.add_argument("program", help="program file (.cfprog.json)")
    sp.add_argument("--xform", required=True, help="transformation kind, e.g. map-tiling")
    sp.add_argument("--site", help="restrict to the site with this node or state id")
    sp.add_argument("--bug", help="seeded bug variant, e.g. off-by-one")
    sp.add_argument("--param", action="append", metavar="KEY=VALUE",
                    help="transformation parameter (repeatable)")
    sp.add_argument("--mincut", action="store_true", help="minimize the cutout's input volume")
    sp.add_argument("--binding", help="symbol values for volume estimates, e.g. N=64")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cutflow", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"cutflow {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="fuzz every matching transformation instance")
    _xform_args(v)
    v.add_argument("--trials", type=int, default=100)
    v.add_argument("--tol", type=float, default=1e-5)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--size-max", type=int, default=64)
    v.add_argument("--constraints", help="JSON file with user constraints")
    v.add_argument("--mode", choices=("uniform", "coverage"), default="uniform")
    v.add_argument("--out", default="cutflow-out", help="report and bundle directory")
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("cutout", help="extract the cutout of a transformation instance")
    _xform_args(c)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_cutout)

    r = sub.add_parser("replay", help="re-run a reproducer bundle")
    r.add_argument("bundle")
    r.set_defaults(func=cmd_replay)

    x = sub.add_parser("run", help="execute a program")
    x.add_argument("program")
    x.add_argument("--input", help=".cfdata file with symbols and buffers")
    x.add_argument("--symbol", action="append", metavar="NAME=INT")
    x.add_argument("--budget", type=int, default=None)
    x.set_defaults(func=cmd_run)

    d = sub.add_parser("diff", help="structural change set between two programs")
    d.add_argument("a")
    d.add_argument("b")
    d.set_defaults(func=cmd_diff)

    f = sub.add_parser("fixtures", help="write the example programs")
    f.add_argument("--out", default=".")
    f.set_defaults(func=cmd_fixtures)
    return ap


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EmptyChangeSet:
        print("error: empty change set", file=sys.stderr)
        return EXIT_USAGE
    except (CutflowError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
