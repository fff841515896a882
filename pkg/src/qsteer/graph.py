"""Reachable-state enumeration: turns a measurement set into a finite MDP."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .qdm import (
    COMPARE_TOL,
    DEFAULT_EPS,
    PROB_FLOOR,
    DensityMatrix,
    MeasurementSet,
    _matrix_to_json,
)

KEY_RESOLUTION = 1e-8
DEFAULT_MAX_STATES = 10_000


class StateExplosionError(RuntimeError):
    """The reachable set grew past ``max_states``."""


def canonical_key(rho: DensityMatrix, resolution: float = KEY_RESOLUTION) -> tuple[int, ...]:
    """Quantized real/imaginary entries of ``rho``.

    A density matrix is already invariant under the global phase of a pure
    state, so quantizing the matrix itself is enough.
    """
    return _key(rho.matrix, resolution)


def _key(m: np.ndarray, resolution: float) -> tuple[int, ...]:
    flat = np.concatenate([m.real.ravel(), m.imag.ravel()])
    return tuple(np.rint(flat / resolution).astype(np.int64).tolist())


@dataclass(frozen=True, eq=False)
class StateGraph:
    """Deduplicated reachable states and their transitions.

    Transitions are stored densely: ``next_id[s, a, y]`` and ``prob[s, a, y]``
    for state ``s``, action ``a`` and outcome slot ``y``. Omitted outcomes
    (probability below the floor, or padding for narrower actions) have
    probability 0 and point back at ``s``. Rows of unexpanded states (beyond
    the horizon) are all zero; ``expanded`` tells them apart.
    """

    states: tuple[DensityMatrix, ...]
    labels: tuple[str, ...]
    depth: np.ndarray
    next_id: np.ndarray
    prob: np.ndarray
    expanded: np.ndarray
    outcome_labels: tuple[tuple[str, ...], ...]
    action_names: tuple[str, ...]
    initial_id: int
    target_id: int | None
    horizon: int | None

    @property
    def num_states(self) -> int:
        return len(self.states)

    @property
    def num_actions(self) -> int:
        return self.next_id.shape[1]

    @property
    def truncated(self) -> bool:
        return not bool(self.expanded.all())

    def edges(self, state_id: int, action_id: int) -> list[tuple[str, float, int]]:
        """Surviving (outcome_label, probability, next_state_id) triples."""
        out = []
        for y, label in enumerate(self.outcome_labels[action_id]):
            p = float(self.prob[state_id, action_id, y])
            if p > 0:
                out.append((label, p, int(self.next_id[state_id, action_id, y])))
        return out

    def find(self, rho: DensityMatrix, tol: float = COMPARE_TOL) -> int | None:
        """Id of the stored state within ``tol`` entrywise of ``rho``."""
        stack = np.stack([s.matrix for s in self.states])
        dist = np.abs(stack - rho.matrix).reshape(len(stack), -1).max(axis=1)
        hits = np.flatnonzero(dist <= tol)
        return int(hits[0]) if hits.size else None

    def target_mask(self, target: DensityMatrix, eps: float = DEFAULT_EPS) -> np.ndarray:
        """Boolean mask of states that pass the target test against ``target``."""
        vec = target.pure_vector()
        if vec is None:
            raise ValueError("target state must be pure")
        return self.overlaps(vec) >= 1 - eps

    def overlaps(self, vec: np.ndarray) -> np.ndarray:
        """<v|x|v> for every stored state x."""
        stack = np.stack([s.matrix for s in self.states])
        vec = np.asarray(vec, dtype=complex)
        return np.einsum("i,sij,j->s", vec.conj(), stack, vec).real

    def to_dict(self) -> dict:
        edges = []
        for s in range(self.num_states):
            if not self.expanded[s]:
                continue
            for a in range(self.num_actions):
                edges.append({
                    "state": s,
                    "action": a,
                    "outcomes": [
                        {"label": lab, "probability": p, "next": n}
                        for lab, p, n in self.edges(s, a)
                    ],
                })
        return {
            "states": [
                {"id": i, "label": lab, "depth": int(d), "matrix": _matrix_to_json(st.matrix)}
                for i, (st, lab, d) in enumerate(zip(self.states, self.labels, self.depth))
            ],
            "actions": list(self.action_names),
            "edges": edges,
            "initial_id": self.initial_id,
            "target_id": self.target_id,
            "horizon": self.horizon,
            "truncated": self.truncated,
        }

    def save(self, path: str | Path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


class _StateIndex:
    """Key-bucketed store with a tolerance check on every match."""

    def __init__(self, dim: int, resolution: float, tol: float):
        self.resolution = resolution
        self.tol = tol
        self.buckets: dict[tuple[int, ...], int] = {}
        self.stack = np.empty((16, dim, dim), dtype=complex)
        self.n = 0

    def lookup(self, m: np.ndarray) -> int | None:
        key = _key(m, self.resolution)
        hit = self.buckets.get(key)
        if hit is not None and np.max(np.abs(self.stack[hit] - m)) <= self.tol:
            return hit
        # Keys can straddle a rounding boundary; fall back to a full scan.
        if self.n:
            dist = np.abs(self.stack[: self.n] - m).reshape(self.n, -1).max(axis=1)
            close = np.flatnonzero(dist <= self.tol)
            if close.size:
                self.buckets.setdefault(key, int(close[0]))
                return int(close[0])
        return None

    def add(self, m: np.ndarray) -> int:
        if self.n == len(self.stack):
            self.stack = np.concatenate([self.stack, np.empty_like(self.stack)])
        self.stack[self.n] = m
        self.buckets.setdefault(_key(m, self.resolution), self.n)
        self.n += 1
        return self.n - 1


def _rank_one(k: np.ndarray) -> bool:
    sv = np.linalg.svd(k, compute_uv=False)
    return sv[0] > COMPARE_TOL and (len(sv) == 1 or sv[1] <= COMPARE_TOL * sv[0])


def enumerate_reachable(
    rho0: DensityMatrix,
    mset: MeasurementSet,
    max_states: int = DEFAULT_MAX_STATES,
    horizon: int | None = None,
    target: DensityMatrix | None = None,
    eps: float = DEFAULT_EPS,
    prob_floor: float = PROB_FLOOR,
    key_resolution: float = KEY_RESOLUTION,
) -> StateGraph:
    """Breadth-first closure of ``rho0`` under every action and outcome.

    State ids follow BFS order with actions in set order and outcomes in
    declaration order. With ``horizon`` given, states first reached at that
    depth are kept but not expanded. Exceeding ``max_states`` raises
    :class:`StateExplosionError`.
    """
    if rho0.dim != mset.dim:
        raise ValueError(f"dimension mismatch: state is {rho0.dim}, set is {mset.dim}")
    if max_states < 1:
        raise ValueError("max_states must be >= 1")
    if horizon is not None and horizon < 0:
        raise ValueError("horizon must be >= 0")

    K = mset.kraus_array()
    A, Y = K.shape[:2]
    Kh = K.conj().transpose(0, 1, 3, 2)
    widths = [len(a.kraus) for a in mset.actions]
    valid = np.zeros((A, Y), dtype=bool)
    for a, w in enumerate(widths):
        valid[a, :w] = True
    outcome_labels = tuple(a.labels for a in mset.actions)

    # Rank-one Kraus operators collapse every input onto the same state, so
    # their successor id only has to be resolved once.
    rank_one = np.array([[valid[a, y] and _rank_one(K[a, y]) for y in range(Y)]
                         for a in range(A)])
    fixed_id = np.full((A, Y), -1, dtype=np.int64)

    index = _StateIndex(mset.dim, key_resolution, COMPARE_TOL)
    states: list[DensityMatrix] = []
    labels: list[str] = []
    depth: list[int] = []
    rows_next: dict[int, np.ndarray] = {}
    rows_prob: dict[int, np.ndarray] = {}

    def insert(m: np.ndarray, label: str, d: int) -> tuple[int, bool]:
        hit = index.lookup(m)
        if hit is not None:
            return hit, False
        if index.n >= max_states:
            raise StateExplosionError(
                f"state explosion: more than {max_states} reachable states"
                + ("" if horizon is None else f" within horizon {horizon}")
            )
        sid = index.add(m)
        states.append(DensityMatrix.from_unnormalized(m))
        labels.append(label)
        depth.append(d)
        return sid, True

    initial_id, _ = insert(rho0.matrix, "rho0", 0)
    queue = deque([initial_id])
    while queue:
        s = queue.popleft()
        if horizon is not None and depth[s] >= horizon:
            continue
        rho = states[s].matrix
        post = K @ rho @ Kh
        probs = np.einsum("ayii->ay", post).real
        alive = valid & (probs > prob_floor)
        nxt = np.full((A, Y), s, dtype=np.int64)
        pr = np.where(alive, probs, 0.0)
        known = alive & (fixed_id >= 0)
        nxt[known] = fixed_id[known]
        for a, y in zip(*np.nonzero(alive & ~known)):
            m = post[a, y] / probs[a, y]
            m = (m + m.conj().T) / 2
            sid, new = insert(m, outcome_labels[a][y], depth[s] + 1)
            nxt[a, y] = sid
            if rank_one[a, y]:
                fixed_id[a, y] = sid
            if new:
                queue.append(sid)
        rows_next[s] = nxt
        rows_prob[s] = pr

    n = len(states)
    next_id = np.empty((n, A, Y), dtype=np.int64)
    prob = np.zeros((n, A, Y))
    expanded = np.zeros(n, dtype=bool)
    for s in range(n):
        if s in rows_next:
            next_id[s] = rows_next[s]
            prob[s] = rows_prob[s]
            expanded[s] = True
        else:
            next_id[s] = s
    for arr in (next_id, prob, expanded):
        arr.setflags(write=False)
    depth_arr = np.array(depth, dtype=np.int64)
    depth_arr.setflags(write=False)

    graph = StateGraph(
        states=tuple(states),
        labels=tuple(labels),
        depth=depth_arr,
        next_id=next_id,
        prob=prob,
        expanded=expanded,
        outcome_labels=outcome_labels,
        action_names=tuple(mset.names),
        initial_id=initial_id,
        target_id=None,
        horizon=horizon,
    )
    if target is not None:
        hits = np.flatnonzero(graph.target_mask(target, eps))
        if hits.size:
            object.__setattr__(graph, "target_id", int(hits[0]))
    return graph
