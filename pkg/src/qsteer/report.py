"""Human-readable policy tables and delimited result rows."""

from __future__ import annotations

import csv
import io
import math
from typing import Iterable, Mapping, Sequence

import numpy as np

from .graph import StateGraph
from .qdm import make_pure_state, standard_state_vectors
from .solvers import Policy

RESULT_COLUMNS = ("policy", "T", "N", "exact_value", "mc_estimate", "mc_stderr", "trials", "seed")


def _ket(name: str) -> str:
    return f"|{name}>"


def state_names(graph: StateGraph, T: int | None = None) -> list[str]:
    """Display names for graph states.

    For the standard qubit family (``T`` given) states are matched against
    |0>, |1>, |phi_i>, |psi_i>; anything else keeps its enumeration label.
    """
    names = [f"s{i}:{lab}" for i, lab in enumerate(graph.labels)]
    if T is None or graph.states[0].dim != 2:
        return names
    for key, vec in standard_state_vectors(T).items():
        sid = graph.find(make_pure_state(vec))
        if sid is not None and not names[sid].startswith("|"):
            names[sid] = _ket(key)
    return names


def table_order(names: Sequence[str], T: int | None = None) -> list[int]:
    """Row order |0>, |1>, |phi_1>, |psi_1>, ... then remaining states by id."""
    if T is None:
        return list(range(len(names)))
    wanted = ["0", "1"] + [f"{p}_{i}" for i in range(1, T) for p in ("phi", "psi")]
    pos = {n: i for i, n in enumerate(names)}
    head = [pos[_ket(w)] for w in wanted if _ket(w) in pos]
    return head + [i for i in range(len(names)) if i not in head]


def _grid(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    rows = [list(header)] + [list(r) for r in rows]
    widths = [max(len(r[c]) for r in rows) for c in range(len(header))]
    sep = "+" + "+".join("-" * (w + 2) for w in widths) + "+"
    out = [sep]
    for i, r in enumerate(rows):
        out.append("| " + " | ".join(cell.ljust(w) for cell, w in zip(r, widths)) + " |")
        if i == 0:
            out.append(sep)
    out.append(sep)
    return "\n".join(out)


def policy_table(policy: Policy, graph: StateGraph, names: Sequence[str] | None = None,
                 order: Sequence[int] | None = None,
                 reachable: Sequence[Mapping[int, float]] | None = None) -> str:
    """States x steps table of chosen actions.

    With ``reachable`` (the per-step distributions of an exact evaluation),
    cells for states that cannot occur at that step show ``*``. Stationary
    policies render as a single row with the states as columns.
    """
    names = list(names or state_names(graph))
    order = list(order if order is not None else range(graph.num_states))
    label = policy.objective or "pi"

    def act(a: int) -> str:
        return policy.action_names[a] if policy.action_names else str(a)

    if policy.kind == "stationary":
        header = ["x"] + [names[s] for s in order]
        row = [f"pi({label})"]
        for s in order:
            if policy.unreachable is not None and policy.unreachable[s]:
                row.append("-")
            else:
                row.append(act(policy.choice[s]))
        return _grid(header, [row])

    N = policy.horizon if policy.horizon is not None else len(policy.choice)
    header = [f"pi({label})"] + [f"k={k}" for k in range(N)]
    rows = []
    for s in order:
        cells = [names[s]]
        for k in range(N):
            if reachable is not None and s not in reachable[k]:
                cells.append("*")
            else:
                cells.append(act(policy.action(k, s)))
        rows.append(cells)
    return _grid(header, rows)


def value_table(policy: Policy, names: Sequence[str], order: Sequence[int]) -> str:
    """Value function next to the policy: rows are states, columns steps-to-go."""
    v = policy.values
    if v is None:
        return ""
    if v.ndim == 1:
        header = ["x", "value"]
        rows = [[names[s], _fmt(v[s])] for s in order]
    else:
        header = ["x"] + [f"t={t}" for t in range(v.shape[0])]
        rows = [[names[s]] + [_fmt(v[t, s]) for t in range(v.shape[0])] for s in order]
    return _grid(header, rows)


def _fmt(x: float) -> str:
    return "inf" if not math.isfinite(x) else f"{x:.6g}"


def result_row(policy: str, T: int, N: int | None, exact_value: float | None,
               mc_estimate: float | None = None, mc_stderr: float | None = None,
               trials: int | None = None, seed: int | None = None) -> dict:
    return dict(zip(RESULT_COLUMNS,
                    (policy, T, N, exact_value, mc_estimate, mc_stderr, trials, seed)))


def to_csv(rows: Sequence[Mapping], columns: Sequence[str] | None = None) -> str:
    columns = list(columns or (rows[0].keys() if rows else RESULT_COLUMNS))
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _csv_cell(r.get(k)) for k in columns})
    return buf.getvalue()


def _csv_cell(x):
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def to_text_table(rows: Sequence[Mapping], columns: Sequence[str] | None = None) -> str:
    columns = list(columns or (rows[0].keys() if rows else RESULT_COLUMNS))
    body = [[_text_cell(r.get(k)) for k in columns] for r in rows]
    return _grid(columns, body)


def _text_cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return _fmt(float(x))
    return str(x)
