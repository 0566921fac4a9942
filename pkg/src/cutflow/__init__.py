"""cutflow: cutouts, minimum input cuts and differential fuzzing for dataflow programs."""

from .version import __version__
from .errors import CutflowError
from .ir import Program
from .interp import ExecutionInput, ExecutionOutcome, compare_states, run
from .xform import ChangeSet, TransformationInstance, apply, diff, match
from .cutout import Cutout, extract, whole_program
from .mincut import min_input_cut, minimize_inputs
from .fuzz import ConstraintSet, ReproducerBundle, TrialConfig, Verdict, derive_constraints, sample, verify

__all__ = [
    "__version__", "CutflowError", "Program", "ExecutionInput", "ExecutionOutcome",
    "compare_states", "run", "ChangeSet", "TransformationInstance", "apply", "diff", "match",
    "Cutout", "extract", "whole_program", "min_input_cut", "minimize_inputs", "ConstraintSet",
    "ReproducerBundle", "TrialConfig", "Verdict", "derive_constraints", "sample", "verify",
]
