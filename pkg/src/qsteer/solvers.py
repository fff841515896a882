"""Dynamic-programming solvers for the three steering objectives.

* ``solve_max_success``: probability of sitting exactly on the target after
  N measurements (finite-horizon backward induction).
* ``solve_max_fidelity``: expected overlap <t|rho_N|t> after N measurements.
* ``solve_min_arrival``: expected number of measurements until the target is
  first hit (stochastic shortest path, value iteration).

All solvers work on a :class:`~qsteer.graph.StateGraph`, break ties towards
the lowest action index and return a :class:`Policy` carrying its values.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import StateGraph
from .qdm import DEFAULT_EPS, DensityMatrix, MeasurementSet

log = logging.getLogger(__name__)

TIE_TOL = 1e-12
VALUE_CAP = 1e6


class NoProperPolicyError(RuntimeError):
    """No policy reaches the target with probability one from the initial state."""


class NotConvergedError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Policy:
    """A measurement-selection rule and, for solver output, its value table.

    ``kind`` is one of:

    - ``"markov"``: ``choice`` has shape (horizon, num_states), indexed by step.
    - ``"stationary"``: ``choice`` has shape (num_states,).
    - ``"deterministic_sequence"``: ``choice`` has shape (horizon,); the
      action at step k ignores the state.

    For finite-horizon solvers ``values[t, s]`` is the optimal value at state
    ``s`` with ``t`` steps remaining (so step k uses row N - k). Arrival-time
    values are ``inf`` at states flagged unreachable.
    """

    kind: str
    choice: np.ndarray
    horizon: int | None = None
    values: np.ndarray | None = None
    objective: str | None = None
    action_names: tuple[str, ...] = ()
    value: float | None = None
    unreachable: np.ndarray | None = field(default=None, repr=False)
    residuals: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        if self.kind not in ("markov", "stationary", "deterministic_sequence"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        choice = np.asarray(self.choice, dtype=np.int64)
        want = {"markov": 2, "stationary": 1, "deterministic_sequence": 1}[self.kind]
        if choice.ndim != want and not (choice.size == 0 and self.horizon == 0):
            raise ValueError(f"{self.kind} policy needs a {want}-d choice array")
        if self.action_names and choice.size and (
            choice.min() < 0 or choice.max() >= len(self.action_names)
        ):
            raise ValueError("policy chooses an action outside the measurement set")
        choice.setflags(write=False)
        object.__setattr__(self, "choice", choice)

    def action(self, step: int, state_id: int) -> int:
        if self.kind == "stationary":
            return int(self.choice[state_id])
        if self.kind == "markov":
            return int(self.choice[step, state_id])
        return int(self.choice[step])

    def actions_at(self, step: int, state_ids: np.ndarray) -> np.ndarray:
        """Vectorized :meth:`action` over an array of state ids."""
        if self.kind == "stationary":
            return self.choice[state_ids]
        if self.kind == "markov":
            return self.choice[step][state_ids]
        return np.full(np.shape(state_ids), self.choice[step], dtype=np.int64)

    def to_dict(self, graph: StateGraph | None = None) -> dict:
        def name(a):
            return self.action_names[a] if self.action_names else int(a)

        choices = []
        if self.kind == "stationary":
            for s, a in enumerate(self.choice):
                choices.append({"step": None, "state_id": s, "action": name(a)})
        elif self.kind == "markov":
            for k in range(self.choice.shape[0]):
                for s, a in enumerate(self.choice[k]):
                    choices.append({"step": k, "state_id": s, "action": name(a)})
        else:
            for k, a in enumerate(self.choice):
                choices.append({"step": k, "state_id": None, "action": name(a)})
        out = {
            "kind": self.kind,
            "objective": self.objective,
            "horizon": self.horizon,
            "value": self.value,
            "choices": choices,
            "values": _values_to_json(self.values),
        }
        if graph is not None:
            out["state_labels"] = list(graph.labels)
        return out

    def save(self, path: str | Path, graph: StateGraph | None = None):
        Path(path).write_text(json.dumps(self.to_dict(graph), indent=1))


def _values_to_json(values):
    if values is None:
        return None
    return [None if not np.isfinite(v) else float(v) for v in values.ravel()] \
        if values.ndim == 1 else [_values_to_json(row) for row in values]


def _q_values(graph: StateGraph, v: np.ndarray) -> np.ndarray:
    """Q[s, a] = sum_y P(y | a, s) v[next(s, a, y)]."""
    return np.einsum("say,say->sa", graph.prob, v[graph.next_id])


def _argbest(q: np.ndarray, maximize: bool, tol: float = TIE_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Best value per row and the lowest action index within ``tol`` of it."""
    if maximize:
        best = q.max(axis=1)
        pick = np.argmax(q >= best[:, None] - tol, axis=1)
    else:
        best = q.min(axis=1)
        pick = np.argmax(q <= best[:, None] + tol, axis=1)
    return best, pick


def _check_inputs(graph: StateGraph, mset: MeasurementSet, N: int | None):
    if graph.num_actions != len(mset):
        raise ValueError("graph and measurement set disagree on the number of actions")
    if N is not None:
        if N < 0:
            raise ValueError("horizon N must be >= 0")
        if graph.horizon is not None and graph.horizon < N:
            raise ValueError(f"graph truncated at depth {graph.horizon} < N = {N}")


def _backward(graph: StateGraph, terminal: np.ndarray, N: int, objective: str,
              action_names) -> Policy:
    S = graph.num_states
    values = np.empty((N + 1, S))
    choice = np.zeros((N, S), dtype=np.int64)
    values[0] = terminal
    for t in range(1, N + 1):
        q = _q_values(graph, values[t - 1])
        best, pick = _argbest(q, maximize=True)
        # Unexpanded states only occur at the final step of a truncated graph.
        values[t] = np.where(graph.expanded, best, 0.0)
        choice[N - t] = pick
    values.setflags(write=False)
    return Policy("markov", choice, horizon=N, values=values, objective=objective,
                  action_names=tuple(action_names),
                  value=float(values[N, graph.initial_id]))


def solve_max_success(graph: StateGraph, mset: MeasurementSet, N: int,
                      target: DensityMatrix, eps: float = DEFAULT_EPS) -> Policy:
    """Maximize the probability that the state equals ``target`` after N steps.

    Boundary values are 1 on states passing the target test and 0 elsewhere;
    ``values[t, s]`` is the best success probability from ``s`` with ``t``
    measurements left. If the target is unreachable every value is 0.
    """
    _check_inputs(graph, mset, N)
    terminal = graph.target_mask(target, eps).astype(float)
    return _backward(graph, terminal, N, "success", mset.names)


def solve_max_fidelity(graph: StateGraph, mset: MeasurementSet, N: int,
                       target: DensityMatrix) -> Policy:
    """Maximize the expected overlap <t|rho_N|t> with a pure target after N steps."""
    _check_inputs(graph, mset, N)
    vec = target.pure_vector()
    if vec is None:
        raise ValueError("target state must be pure")
    terminal = np.clip(graph.overlaps(vec), 0.0, 1.0)
    return _backward(graph, terminal, N, "fidelity", mset.names)


def append_target_action(policy: Policy, mset: MeasurementSet) -> Policy:
    """Extend a Markov policy by one step that always measures the target action."""
    if mset.target_action is None:
        raise ValueError("measurement set has no designated target action")
    if policy.kind != "markov":
        raise ValueError("only Markov policies can be extended")
    S = policy.choice.shape[1] if policy.choice.ndim == 2 else None
    if S is None:
        raise ValueError("cannot infer the number of states of an empty policy")
    last = np.full((1, S), mset.target_action, dtype=np.int64)
    return Policy("markov", np.vstack([policy.choice, last]), horizon=policy.horizon + 1,
                  objective=policy.objective, action_names=policy.action_names)


def proper_states(graph: StateGraph, target_mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """States from which some policy reaches the target with probability one.

    Standard almost-sure reachability fixpoint: repeatedly keep only states
    that can reach the target through actions whose whole support stays in
    the kept set. Returns the state mask and the (state, action) mask of
    actions that stay inside it.
    """
    support = graph.prob > 0
    keep = np.ones(graph.num_states, dtype=bool)
    while True:
        safe = (support & ~keep[graph.next_id]).sum(axis=2) == 0
        safe &= graph.expanded[:, None]
        reach = target_mask.copy()
        while True:
            hits_reach = (support & reach[graph.next_id]).any(axis=2) & safe
            grown = reach | (hits_reach.any(axis=1) & keep)
            if (grown == reach).all():
                break
            reach = grown
        if (reach == keep).all():
            return keep, safe
        keep = reach


def solve_min_arrival(graph: StateGraph, mset: MeasurementSet, target: DensityMatrix,
                      max_iters: int = 100_000, tol: float = 1e-12,
                      eps: float = DEFAULT_EPS, value_cap: float = VALUE_CAP) -> Policy:
    """Minimize the expected number of measurements until the target is hit.

    Jacobi value iteration from V = 0, restricted to states and actions that
    admit a proper policy. States without one get value ``inf`` and are
    flagged in ``policy.unreachable``.

    Raises:
        NoProperPolicyError: the initial state has no proper policy.
        NotConvergedError: ``max_iters`` sweeps did not bring the sup-norm
            change below ``tol``.
    """
    _check_inputs(graph, mset, None)
    if graph.truncated:
        raise ValueError("arrival-time solver needs a fully closed graph")
    is_tgt = graph.target_mask(target, eps)
    keep, safe = proper_states(graph, is_tgt)
    inner = keep & ~is_tgt
    v = np.zeros(graph.num_states)
    v[~keep] = np.inf
    prev_residual = np.inf
    residuals = []
    for it in range(1, max_iters + 1):
        q = np.where(safe, _q_values(graph, np.where(keep, v, 0.0)), np.inf)
        best, _ = _argbest(q, maximize=False)
        new = v.copy()
        new[inner] = 1.0 + best[inner]
        residual = float(np.max(np.abs(new[keep] - v[keep]))) if keep.any() else 0.0
        residuals.append(residual)
        v = new
        # Starting from zero the iterates increase monotonically, so the
        # sup-norm change can only shrink.
        if it > 1 and residual > prev_residual + 1e-12:
            log.warning("value-iteration residual rose from %g to %g at sweep %d",
                        prev_residual, residual, it)
        prev_residual = residual
        if residual <= tol:
            break
        if np.max(v[keep], initial=0.0) > value_cap:
            break
    else:
        raise NotConvergedError(
            f"not converged: residual {residual:.3g} after {max_iters} sweeps")
    log.debug("value iteration finished after %d sweeps (residual %g)", it, residual)

    unreachable = ~keep | (v > value_cap)
    v[unreachable] = np.inf
    if unreachable[graph.initial_id]:
        raise NoProperPolicyError(
            "no proper policy: the target cannot be reached with probability one")
    if residual > tol:
        raise NotConvergedError(f"not converged: residual {residual:.3g}")

    q = np.where(safe, _q_values(graph, np.where(np.isfinite(v), v, 0.0)), np.inf)
    _, pick = _argbest(q, maximize=False)
    # At the target the process has stopped; keep measuring the target action.
    stay = mset.target_action if mset.target_action is not None else 0
    choice = np.where(is_tgt, stay, np.where(unreachable, 0, pick))
    v.setflags(write=False)
    return Policy("stationary", choice, values=v, objective="arrival",
                  action_names=tuple(mset.names), value=float(v[graph.initial_id]),
                  unreachable=unreachable, residuals=tuple(residuals))
