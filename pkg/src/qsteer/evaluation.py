"""Exact and Monte Carlo evaluation of measurement policies.

Exact evaluation pushes the outcome distribution through the state graph.
The simulator samples trajectories on the same graph, with one Philox
(counter-based) stream per trial keyed by ``(seed, trial_index)``, so a
trial's result never depends on how many other trials run or in which order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .graph import StateGraph, enumerate_reachable
from .qdm import DEFAULT_EPS, DensityMatrix, MeasurementSet, basis_state, build_standard_set
from .solvers import Policy

DEFAULT_MAX_STEPS = 1000
_CHUNK = 8192
_BLOCK = 16


def make_naive_policy(mset: MeasurementSet, N: int) -> Policy:
    """Measure E_1, E_2, ..., E_N in turn, ignoring outcomes."""
    if N < 0:
        raise ValueError("N must be >= 0")
    if N > len(mset):
        raise ValueError(f"naive policy needs N <= T, got N={N} > T={len(mset)}")
    return Policy("deterministic_sequence", np.arange(N), horizon=N, objective="success",
                  action_names=tuple(mset.names))


def _same_set(a: MeasurementSet, b: MeasurementSet) -> bool:
    if len(a) != len(b) or a.dim != b.dim:
        return False
    return all(
        len(x.kraus) == len(y.kraus)
        and all(np.allclose(p, q, atol=1e-10) for p, q in zip(x.kraus, y.kraus))
        for x, y in zip(a.actions, b.actions)
    )


def make_s1_policy(mset: MeasurementSet, graph: StateGraph | None = None) -> Policy:
    """One-bit feedback for T = 3: after E_1, pick E_3 on outcome psi_1.

    Every other decision follows the naive order E_1, E_2, E_3. The policy is
    Markov over the states of ``graph`` (built from |0> if not given).
    """
    if not _same_set(mset, build_standard_set(3)):
        raise ValueError("S1 policy is defined only for the standard set with T = 3")
    if graph is None:
        graph = enumerate_reachable(basis_state(0), mset)
    psi_1 = mset[0].kraus[1]
    psi_id = graph.find(DensityMatrix(psi_1))
    choice = np.zeros((3, graph.num_states), dtype=np.int64)
    choice[1] = 1
    if psi_id is not None:
        choice[1, psi_id] = 2
    choice[2] = 2
    return Policy("markov", choice, horizon=3, objective="success",
                  action_names=tuple(mset.names))


def _horizon(policy: Policy, steps: int | None) -> int:
    if steps is not None:
        return steps
    if policy.kind == "stationary":
        raise ValueError("stationary policies need an explicit number of steps")
    return policy.horizon if policy.horizon is not None else len(policy.choice)


def _check_policy_width(policy: Policy, graph: StateGraph):
    width = {"markov": lambda c: c.shape[1], "stationary": lambda c: c.shape[0]}
    if policy.kind in width and policy.choice.size:
        if width[policy.kind](policy.choice) != graph.num_states:
            raise ValueError("policy references state absent from graph")
    if policy.choice.size and policy.choice.max() >= graph.num_actions:
        raise ValueError("policy chooses an action the graph does not have")


class ExactEvaluation(NamedTuple):
    success_prob: float
    fidelity_expectation: float
    distribution_by_step: list[dict[int, float]]


def evaluate_policy_exact(policy: Policy, graph: StateGraph, rho0_id: int | None = None,
                          target: DensityMatrix | None = None, eps: float = DEFAULT_EPS,
                          steps: int | None = None) -> ExactEvaluation:
    """Exact law of the state after each step under ``policy``.

    ``success_prob`` is the mass on target states at the final step and
    ``fidelity_expectation`` is E[<t|rho_N|t>], the expected squared overlap
    with the target.
    """
    if target is None:
        target = basis_state(1, graph.states[0].dim)
    N = _horizon(policy, steps)
    _check_policy_width(policy, graph)
    start = graph.initial_id if rho0_id is None else rho0_id
    S = graph.num_states
    dist = np.zeros(S)
    dist[start] = 1.0
    history = [_as_map(dist)]
    rows = np.arange(S)
    for k in range(N):
        live = dist > 0
        if not graph.expanded[live].all():
            raise ValueError(f"policy reaches an unexpanded state at step {k}")
        act = policy.actions_at(k, rows)
        p = graph.prob[rows, act] * dist[:, None]
        new = np.zeros(S)
        np.add.at(new, graph.next_id[rows, act].ravel(), p.ravel())
        dist = new
        history.append(_as_map(dist))
    vec = target.pure_vector()
    success = float(dist[graph.target_mask(target, eps)].sum())
    fid = float(dist @ np.clip(graph.overlaps(vec), 0.0, 1.0))
    return ExactEvaluation(success, fid, history)


def _as_map(dist: np.ndarray) -> dict[int, float]:
    return {int(i): float(dist[i]) for i in np.flatnonzero(dist)}


def expected_arrival_exact(policy: Policy, graph: StateGraph,
                           target: DensityMatrix | None = None,
                           eps: float = DEFAULT_EPS) -> np.ndarray:
    """Expected hitting time of the target from every state under a stationary policy.

    Solves (I - P) v = 1 on the non-target states. States that cannot hit the
    target almost surely get ``inf``.
    """
    if policy.kind != "stationary":
        raise ValueError("expected arrival time needs a stationary policy")
    if target is None:
        target = basis_state(1, graph.states[0].dim)
    _check_policy_width(policy, graph)
    S = graph.num_states
    is_tgt = graph.target_mask(target, eps)
    rows = np.arange(S)
    act = policy.choice
    P = np.zeros((S, S))
    np.add.at(P, (np.repeat(rows, graph.prob.shape[2]), graph.next_id[rows, act].ravel()),
              graph.prob[rows, act].ravel())
    # Almost-sure hitting under the fixed chain: states that cannot reach a
    # closed class without the target.
    reach = is_tgt.copy()
    while True:
        grown = reach | ((P > 0) & reach[None, :]).any(axis=1)
        if (grown == reach).all():
            break
        reach = grown
    ok = reach.copy()
    while True:
        leak = ((P > 0) & ~ok[None, :]).any(axis=1)
        shrunk = ok & ~(leak & ~is_tgt)
        if (shrunk == ok).all():
            break
        ok = shrunk
    v = np.full(S, np.inf)
    v[is_tgt] = 0.0
    inner = ok & ~is_tgt
    if inner.any():
        idx = np.flatnonzero(inner)
        A = np.eye(len(idx)) - P[np.ix_(idx, idx)]
        v[idx] = np.linalg.solve(A, np.ones(len(idx)))
    return v


@dataclass(frozen=True)
class TrajectoryRecord:
    seed: int
    trial: int
    steps: tuple[tuple[str, str, int], ...]
    arrived: bool
    arrival_step: int | None

    def __post_init__(self):
        if self.arrived != (self.arrival_step is not None):
            raise ValueError("arrival_step must be set exactly when arrived")


class SimulationResult(NamedTuple):
    success_rate: float
    mean_arrival: float
    records: list[TrajectoryRecord]
    trials: int
    arrived: int
    success_stderr: float
    arrival_stderr: float

    @property
    def not_arrived(self) -> int:
        return self.trials - self.arrived


def trial_generator(seed: int, trial: int) -> np.random.Generator:
    """Philox4x32-10 stream for one trial, keyed by the pair (seed, trial)."""
    if seed < 0 or trial < 0:
        raise ValueError("seed and trial index must be non-negative")
    return np.random.Generator(np.random.Philox(key=(seed % 2**64) << 64 | trial))


def simulate(policy: Policy, graph: StateGraph, target: DensityMatrix | None = None,
             trials: int = 10_000, seed: int = 0, max_steps: int | None = None,
             eps: float = DEFAULT_EPS, rho0_id: int | None = None,
             record: bool = True) -> SimulationResult:
    """Sample trajectories of ``policy`` on ``graph``.

    Finite-horizon policies run for their horizon and succeed when the final
    state is the target. Stationary policies stop at the first arrival or
    after ``max_steps``; their success rate is the arrival fraction.
    ``mean_arrival`` averages the first-hit step over trials that arrived
    (``nan`` if none did).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if target is None:
        target = basis_state(1, graph.states[0].dim)
    _check_policy_width(policy, graph)
    stationary = policy.kind == "stationary"
    if stationary:
        steps = DEFAULT_MAX_STEPS if max_steps is None else max_steps
    else:
        steps = _horizon(policy, None)
        if max_steps is not None:
            steps = min(steps, max_steps)
    start = graph.initial_id if rho0_id is None else rho0_id
    is_tgt = graph.target_mask(target, eps)
    Y = graph.prob.shape[2]

    successes = 0
    arrival_sum = 0.0
    arrival_sq = 0.0
    arrived_total = 0
    records: list[TrajectoryRecord] = []
    for lo in range(0, trials, _CHUNK):
        ids = np.arange(lo, min(trials, lo + _CHUNK))
        n = len(ids)
        gens = [trial_generator(seed, int(i)) for i in ids]
        cur = np.full(n, start, dtype=np.int64)
        arrival = np.where(is_tgt[cur], 0, -1)
        acts = np.full((n, steps), -1, dtype=np.int64)
        outs = np.full((n, steps), -1, dtype=np.int64)
        path = np.full((n, steps), -1, dtype=np.int64)
        u = np.empty((n, 0))
        for k in range(steps):
            moving = arrival < 0 if stationary else np.ones(n, dtype=bool)
            if not moving.any():
                break
            if k % _BLOCK == 0:
                u = np.stack([g.random(_BLOCK) for g in gens])
            if not graph.expanded[cur[moving]].all():
                raise ValueError(f"trajectory reached an unexpanded state at step {k}")
            idx = np.flatnonzero(moving)
            s = cur[idx]
            a = policy.actions_at(k, s)
            p = graph.prob[s, a]
            cum = np.cumsum(p, axis=1)
            last = Y - 1 - np.argmax(p[:, ::-1] > 0, axis=1)
            y = np.minimum((u[idx, k % _BLOCK][:, None] >= cum).sum(axis=1), last)
            nxt = graph.next_id[s, a, y]
            cur[idx] = nxt
            acts[idx, k] = a
            outs[idx, k] = y
            path[idx, k] = nxt
            hit = (arrival[idx] < 0) & is_tgt[nxt]
            arrival[idx[hit]] = k + 1
        arrived = arrival >= 0
        if stationary:
            successes += int(arrived.sum())
        else:
            successes += int(is_tgt[cur].sum())
        arrived_total += int(arrived.sum())
        arrival_sum += float(arrival[arrived].sum())
        arrival_sq += float((arrival[arrived].astype(float) ** 2).sum())
        if record:
            for j in range(n):
                taken = acts[j] >= 0
                steps_j = tuple(
                    (graph.action_names[acts[j, k]],
                     graph.outcome_labels[acts[j, k]][outs[j, k]],
                     int(path[j, k]))
                    for k in np.flatnonzero(taken)
                )
                records.append(TrajectoryRecord(
                    seed, int(ids[j]), steps_j, bool(arrived[j]),
                    int(arrival[j]) if arrived[j] else None))

    rate = successes / trials
    if arrived_total:
        mean = arrival_sum / arrived_total
        var = max(arrival_sq / arrived_total - mean**2, 0.0)
        arr_se = math.sqrt(var * arrived_total / max(arrived_total - 1, 1) / arrived_total)
    else:
        mean, arr_se = math.nan, math.nan
    return SimulationResult(
        success_rate=rate,
        mean_arrival=mean,
        records=records,
        trials=trials,
        arrived=arrived_total,
        success_stderr=math.sqrt(rate * (1 - rate) / trials),
        arrival_stderr=arr_se,
    )
