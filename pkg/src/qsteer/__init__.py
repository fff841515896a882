"""Optimal measurement-selection feedback policies for quantum state steering."""

from .evaluation import (
    evaluate_policy_exact,
    expected_arrival_exact,
    make_naive_policy,
    make_s1_policy,
    simulate,
)
from .graph import StateExplosionError, StateGraph, canonical_key, enumerate_reachable
from .qdm import (
    DensityMatrix,
    Measurement,
    MeasurementSet,
    apply_measurement,
    basis_state,
    build_standard_set,
    fidelity,
    is_target,
    make_pure_state,
    unconditional_evolve,
)
from .solvers import (
    NoProperPolicyError,
    NotConvergedError,
    Policy,
    append_target_action,
    solve_max_fidelity,
    solve_max_success,
    solve_min_arrival,
)

__version__ = "0.1.0"
