"""Finite-dimensional density matrices, Kraus measurements and fidelity."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

CONSTRUCTION_TOL = 1e-10
COMPARE_TOL = 1e-9
PROB_FLOOR = 1e-12
DEFAULT_EPS = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


_EIG_NOISE = 1e-14


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    # Eigenvalues at rounding level (including small negatives) are zeroed:
    # sqrt would blow 1e-17 noise up to 3e-9.
    w, v = np.linalg.eigh((a + a.conj().T) / 2)
    w = np.where(w > _EIG_NOISE, w, 0.0)
    return (v * np.sqrt(w)) @ v.conj().T


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """A d x d Hermitian, positive semidefinite, unit-trace operator.

    The constructor validates the invariants at ``CONSTRUCTION_TOL``. Use
    :meth:`from_unnormalized` for post-measurement operators that still
    need their trace divided out.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
            raise ValueError(f"density matrix must be square, got shape {m.shape}")
        if np.max(np.abs(m - m.conj().T)) > CONSTRUCTION_TOL:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(m) - 1) > CONSTRUCTION_TOL:
            raise ValueError(f"density matrix trace {np.trace(m).real:.3g} != 1")
        if np.linalg.eigvalsh(m)[0] < -CONSTRUCTION_TOL:
            raise ValueError("density matrix is not positive semidefinite")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_unnormalized(cls, a: np.ndarray) -> "DensityMatrix":
        """Hermitize and divide by the trace."""
        a = np.asarray(a, dtype=complex)
        a = (a + a.conj().T) / 2
        tr = np.trace(a).real
        if tr <= 0:
            raise ValueError("cannot normalize an operator with non-positive trace")
        return cls(a / tr)

    @classmethod
    def maximally_mixed(cls, dim: int) -> "DensityMatrix":
        return cls(np.eye(dim) / dim)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def expectation(self, op: np.ndarray) -> float:
        """Real part of tr(rho op)."""
        return float(np.trace(self.matrix @ op).real)

    def overlap(self, vec: np.ndarray) -> float:
        """<v|rho|v> for a normalized vector v."""
        vec = np.asarray(vec, dtype=complex)
        return float((vec.conj() @ self.matrix @ vec).real)

    def purity(self) -> float:
        return float(np.trace(self.matrix @ self.matrix).real)

    def pure_vector(self) -> np.ndarray | None:
        """Dominant eigenvector if the state is rank one, else ``None``.

        The global phase is fixed so that the first entry of largest
        magnitude is real and positive.
        """
        w, v = np.linalg.eigh(self.matrix)
        if abs(w[-1] - 1) > COMPARE_TOL:
            return None
        vec = v[:, -1]
        k = int(np.argmax(np.abs(vec) > np.abs(vec).max() - COMPARE_TOL))
        return vec * (abs(vec[k]) / vec[k])

    def __repr__(self):
        return f"DensityMatrix({np.array2string(self.matrix, precision=4)})"


def make_pure_state(amplitudes: Sequence[complex]) -> DensityMatrix:
    """Build |psi><psi| from a (possibly unnormalized) amplitude vector."""
    vec = np.asarray(amplitudes, dtype=complex).ravel()
    norm = np.linalg.norm(vec)
    if vec.size == 0 or norm < CONSTRUCTION_TOL:
        raise ValueError("degenerate state vector")
    vec = vec / norm
    return DensityMatrix.from_unnormalized(np.outer(vec, vec.conj()))


def basis_state(index: int, dim: int = 2) -> DensityMatrix:
    vec = np.zeros(dim)
    vec[index] = 1.0
    return make_pure_state(vec)


@dataclass(frozen=True, eq=False)
class Measurement:
    """One control action: named Kraus operators with outcome labels."""

    name: str
    labels: tuple[str, ...]
    kraus: tuple[np.ndarray, ...]

    def __post_init__(self):
        kraus = tuple(_frozen(k) for k in self.kraus)
        labels = tuple(self.labels)
        if not kraus:
            raise ValueError(f"measurement {self.name!r} has no outcomes")
        if len(labels) != len(kraus):
            raise ValueError("one label per Kraus operator is required")
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate outcome labels in {self.name!r}")
        d = kraus[0].shape[0]
        for k in kraus:
            if k.shape != (d, d):
                raise ValueError(f"Kraus operators of {self.name!r} differ in shape")
        total = sum(k.conj().T @ k for k in kraus)
        if np.max(np.abs(total - np.eye(d))) > CONSTRUCTION_TOL:
            raise ValueError(f"measurement {self.name!r} violates completeness")
        object.__setattr__(self, "kraus", kraus)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def projective(cls, name: str, vectors: Sequence[Sequence[complex]],
                   labels: Sequence[str]) -> "Measurement":
        """Rank-one projective measurement onto orthonormal ``vectors``."""
        ops = []
        for v in vectors:
            v = np.asarray(v, dtype=complex)
            ops.append(np.outer(v, v.conj()))
        return cls(name, tuple(labels), tuple(ops))

    @property
    def dim(self) -> int:
        return self.kraus[0].shape[0]

    @property
    def stacked(self) -> np.ndarray:
        """Kraus operators as a (Y, d, d) array."""
        return np.stack(self.kraus)

    def is_projective(self, tol: float = CONSTRUCTION_TOL) -> bool:
        for i, a in enumerate(self.kraus):
            if np.max(np.abs(a - a.conj().T)) > tol:
                return False
            for j, b in enumerate(self.kraus):
                want = a if i == j else np.zeros_like(a)
                if np.max(np.abs(a @ b - want)) > tol:
                    return False
        return True


class Outcome(NamedTuple):
    label: str
    probability: float
    state: DensityMatrix


def _check_dims(rho: DensityMatrix, e: Measurement):
    if rho.dim != e.dim:
        raise ValueError(
            f"dimension mismatch: state is {rho.dim}, measurement {e.name!r} is {e.dim}"
        )


def apply_measurement(rho: DensityMatrix, e: Measurement,
                      prob_floor: float = PROB_FLOOR) -> list[Outcome]:
    """Born-rule outcomes of ``e`` on ``rho`` with their collapsed states.

    Outcomes whose probability is at most ``prob_floor`` are omitted.
    """
    _check_dims(rho, e)
    out = []
    for label, m in zip(e.labels, e.kraus):
        post = m @ rho.matrix @ m.conj().T
        p = float(np.trace(post).real)
        if p <= prob_floor:
            continue
        out.append(Outcome(label, p, DensityMatrix.from_unnormalized(post)))
    return out


def unconditional_evolve(rho: DensityMatrix, e: Measurement) -> DensityMatrix:
    _check_dims(rho, e)
    total = sum(m @ rho.matrix @ m.conj().T for m in e.kraus)
    return DensityMatrix.from_unnormalized(total)


def fidelity(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """Uhlmann fidelity tr sqrt(sqrt(rho) sigma sqrt(rho)), clamped to [0, 1].

    This is the square-root convention: F(|0><0|, I/2) = 1/sqrt(2).
    """
    if rho.dim != sigma.dim:
        raise ValueError(f"dimension mismatch: {rho.dim} vs {sigma.dim}")
    # tr sqrt(sqrt(rho) sigma sqrt(rho)) is the trace norm of sqrt(rho) sqrt(sigma).
    prod = _psd_sqrt(rho.matrix) @ _psd_sqrt(sigma.matrix)
    f = float(np.sum(np.linalg.svd(prod, compute_uv=False)))
    return min(max(f, 0.0), 1.0)


def pure_fidelity(rho: DensityMatrix, target_vec: np.ndarray) -> float:
    """sqrt(<t|rho|t>), the fidelity against a pure target."""
    return math.sqrt(min(max(rho.overlap(target_vec), 0.0), 1.0))


def is_target(rho: DensityMatrix, target: DensityMatrix,
              eps: float = DEFAULT_EPS) -> bool:
    """Whether ``rho`` equals the pure ``target`` up to fidelity^2 >= 1 - eps."""
    vec = target.pure_vector()
    if vec is None:
        raise ValueError("target state must be pure")
    return rho.overlap(vec) >= 1 - eps


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """Ordered action set, optionally with a designated target projection.

    ``target_action`` is a 0-based index into ``actions``.
    """

    actions: tuple[Measurement, ...]
    target_action: int | None = None
    dim: int = field(init=False)

    def __post_init__(self):
        actions = tuple(self.actions)
        if not actions:
            raise ValueError("measurement set is empty")
        d = actions[0].dim
        if any(a.dim != d for a in actions):
            raise ValueError("all actions must share one dimension")
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "dim", d)
        if self.target_action is not None:
            if not 0 <= self.target_action < len(actions):
                raise ValueError(f"target_action {self.target_action} out of range")
            e = actions[self.target_action]
            if not e.is_projective() or any(
                abs(np.trace(k).real - 1) > CONSTRUCTION_TOL for k in e.kraus
            ) or (d == 2 and len(e.kraus) != 2):
                raise ValueError(
                    f"target action {e.name!r} is not a rank-one projective measurement"
                )

    def __len__(self):
        return len(self.actions)

    def __getitem__(self, i: int) -> Measurement:
        return self.actions[i]

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.actions]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def kraus_array(self) -> np.ndarray:
        """(A, Y, d, d) array of Kraus operators, zero-padded to the widest action."""
        width = max(len(a.kraus) for a in self.actions)
        out = np.zeros((len(self.actions), width, self.dim, self.dim), dtype=complex)
        for i, a in enumerate(self.actions):
            out[i, : len(a.kraus)] = a.stacked
        return out

    def target_matches(self, target: DensityMatrix, tol: float = CONSTRUCTION_TOL) -> bool:
        """Whether the designated action contains the projector onto ``target``."""
        if self.target_action is None:
            return False
        e = self.actions[self.target_action]
        return any(np.max(np.abs(k - target.matrix)) <= tol for k in e.kraus)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "actions": [
                {
                    "name": a.name,
                    "outcomes": [
                        {"label": lab, "kraus": _matrix_to_json(k)}
                        for lab, k in zip(a.labels, a.kraus)
                    ],
                }
                for a in self.actions
            ],
            "target_action": self.target_action,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MeasurementSet":
        actions = []
        for a in data["actions"]:
            labels = [o["label"] for o in a["outcomes"]]
            kraus = [_matrix_from_json(o["kraus"]) for o in a["outcomes"]]
            actions.append(Measurement(a["name"], tuple(labels), tuple(kraus)))
        mset = cls(tuple(actions), data.get("target_action"))
        if "dim" in data and data["dim"] != mset.dim:
            raise ValueError(f"declared dim {data['dim']} != Kraus dimension {mset.dim}")
        return mset

    def save(self, path: str | Path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "MeasurementSet":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _matrix_to_json(m: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def _matrix_from_json(rows: list) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in rows])


def standard_angle(i: int, T: int) -> float:
    return math.pi * i / (2 * T)


def build_standard_set(T: int) -> MeasurementSet:
    """Qubit projective measurements E_1..E_T rotating |0> towards |1>.

    E_i projects onto |phi_i> = cos(a)|0> + sin(a)|1> and
    |psi_i> = -sin(a)|0> + cos(a)|1> with a = pi*i/(2T). E_T is the
    computational-basis measurement and is marked as the target action.
    """
    if T < 2:
        raise ValueError("set too small")
    actions = []
    for i in range(1, T + 1):
        a = standard_angle(i, T)
        c, s = math.cos(a), math.sin(a)
        if i == T:
            c = 0.0  # cos(pi/2) exactly, so E_T coincides with the basis measurement
            s = 1.0
        actions.append(Measurement.projective(
            f"E_{i}", [(c, s), (-s, c)], (f"phi_{i}", f"psi_{i}")))
    return MeasurementSet(tuple(actions), target_action=T - 1)


def computational_basis_measurement(dim: int = 2) -> Measurement:
    """The basis measurement E_* = {|0><0|, |1><1|, ...}."""
    eye = np.eye(dim)
    return Measurement.projective("E_*", list(eye), tuple(str(i) for i in range(dim)))


def standard_state_vectors(T: int) -> dict[str, np.ndarray]:
    """Named vectors |0>, |1>, |phi_i>, |psi_i> for i < T."""
    out = {"0": np.array([1.0, 0.0]), "1": np.array([0.0, 1.0])}
    for i in range(1, T):
        a = standard_angle(i, T)
        out[f"phi_{i}"] = np.array([math.cos(a), math.sin(a)])
        out[f"psi_{i}"] = np.array([-math.sin(a), math.cos(a)])
    return out
