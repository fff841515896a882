"""Command-line front end.

    qsteer solve --objective success -T 10 -N 10
    qsteer solve --objective arrival -T 5 --format table
    qsteer evaluate --policy naive -T 3
    qsteer simulate --policy optimal -T 10 --trials 100000 --seed 7
    qsteer sweep fig1
    qsteer graph -T 5 --output graph.json

Exit status: 0 on success, 2 for an invalid configuration, 3 when a solver
cannot produce a policy (no proper policy, state explosion, no convergence).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import report
from .evaluation import (
    evaluate_policy_exact,
    expected_arrival_exact,
    make_naive_policy,
    make_s1_policy,
    simulate,
)
from .graph import DEFAULT_MAX_STATES, StateExplosionError, enumerate_reachable
from .qdm import (
    DEFAULT_EPS,
    DensityMatrix,
    MeasurementSet,
    basis_state,
    build_standard_set,
    make_pure_state,
)
from .solvers import (
    NoProperPolicyError,
    NotConvergedError,
    solve_max_fidelity,
    solve_max_success,
    solve_min_arrival,
)

log = logging.getLogger("qsteer")

EXIT_INVALID = 2
EXIT_SOLVER = 3

FIG_DEFAULTS = {
    "fig1": {"N": (3, 10)},
    "fig2": {"N": (3, 10), "T": (10, 100, 1000)},
    "fig3": {"T": tuple(range(2, 31))},
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    objective: str = "success"
    T: int | None = None
    N: int | None = None
    set_file: str | None = None
    initial: str = "0"
    target: str = "1"
    eps: float = DEFAULT_EPS
    seed: int = 0
    trials: int = 10_000
    output: str | None = None
    format: str = "table"
    policy: str = "optimal"
    max_steps: int | None = None
    max_states: int = DEFAULT_MAX_STATES
    figure: str | None = None
    T_values: list[int] | None = None
    N_values: list[int] | None = None

    def validate(self):
        if self.command == "sweep":
            if self.figure not in FIG_DEFAULTS:
                raise ConfigError(f"unknown figure {self.figure!r}")
        elif self.objective == "arrival":
            if self.N is not None and self.command != "graph":
                raise ConfigError("-N is not allowed with --objective arrival")
        elif self.command != "graph":
            # T = N when only one is given.
            if self.N is None:
                self.N = self.T
            if self.T is None and self.set_file is None:
                self.T = self.N
            if self.N is None:
                raise ConfigError(f"-N is required for --objective {self.objective}")
        if self.command != "sweep" and self.T is None and self.set_file is None:
            raise ConfigError("give -T or --set-file")
        if self.T is not None and self.T < 2 and self.set_file is None:
            raise ConfigError("set too small: -T must be >= 2")
        if self.N is not None and self.N < 0:
            raise ConfigError("-N must be >= 0")
        if self.trials < 1:
            raise ConfigError("--trials must be >= 1")
        if self.seed < 0:
            raise ConfigError("--seed must be >= 0")


def parse_state(spec: str, dim: int) -> DensityMatrix:
    """Parse a state spec: "0", "1", "+", "-", "mixed" or comma-separated amplitudes."""
    spec = spec.strip()
    if spec.isdigit():
        k = int(spec)
        if k >= dim:
            raise ConfigError(f"basis state {k} out of range for dimension {dim}")
        return basis_state(k, dim)
    if spec in ("+", "-") and dim == 2:
        return make_pure_state([1, 1 if spec == "+" else -1])
    if spec == "mixed":
        return DensityMatrix.maximally_mixed(dim)
    try:
        amps = [complex(x.replace(" ", "").replace("i", "j")) for x in spec.split(",")]
    except ValueError as exc:
        raise ConfigError(f"cannot parse state {spec!r}") from exc
    if len(amps) != dim:
        raise ConfigError(f"state {spec!r} has {len(amps)} amplitudes, expected {dim}")
    try:
        return make_pure_state(amps)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


class Problem:
    """Measurement set, states and reachable graph for one configuration."""

    def __init__(self, cfg: RunConfig, T: int | None = None, horizon: int | None = None):
        if cfg.set_file:
            try:
                self.mset = MeasurementSet.load(cfg.set_file)
            except (OSError, KeyError, ValueError, TypeError) as exc:
                raise ConfigError(f"cannot load {cfg.set_file}: {exc}") from exc
        else:
            self.mset = build_standard_set(T or cfg.T)
        self.T = len(self.mset)
        self.standard = not cfg.set_file
        self.rho0 = parse_state(cfg.initial, self.mset.dim)
        self.target = parse_state(cfg.target, self.mset.dim)
        if self.target.pure_vector() is None:
            raise ConfigError("target state must be pure")
        self.eps = cfg.eps
        self.graph = enumerate_reachable(self.rho0, self.mset, max_states=cfg.max_states,
                                         horizon=horizon, target=self.target, eps=cfg.eps)

    def names(self):
        names = report.state_names(self.graph, self.T if self.standard else None)
        order = report.table_order(names, self.T if self.standard else None)
        return names, order


def _solve(prob: Problem, objective: str, N: int | None, max_iters: int = 100_000):
    if objective == "success":
        return solve_max_success(prob.graph, prob.mset, N, prob.target, eps=prob.eps)
    if objective == "fidelity":
        return solve_max_fidelity(prob.graph, prob.mset, N, prob.target)
    return solve_min_arrival(prob.graph, prob.mset, prob.target, max_iters=max_iters,
                             eps=prob.eps)


def _graph_horizon(cfg: RunConfig, prob_N: int | None):
    # Finite-horizon objectives only need N layers; this keeps non-projective
    # sets solvable when their full closure is infinite.
    if cfg.set_file and cfg.objective != "arrival":
        return prob_N
    return None


def _emit(cfg: RunConfig, payload: dict, text: str, rows: list[dict] | None = None,
          columns=None):
    if cfg.format == "json":
        out = json.dumps(payload, indent=1)
    elif cfg.format == "csv":
        out = report.to_csv(rows or [], columns)
    else:
        out = text
    sys.stdout.write(out.rstrip("\n") + "\n")


def cmd_solve(cfg: RunConfig) -> int:
    prob = Problem(cfg, horizon=_graph_horizon(cfg, cfg.N))
    policy = _solve(prob, cfg.objective, cfg.N)
    names, order = prob.names()
    table = report.policy_table(policy, prob.graph, names, order)
    value = f"{policy.value:.6g}"
    doc = policy.to_dict(prob.graph)
    if cfg.output:
        out = Path(cfg.output)
        out.write_text(json.dumps(doc, indent=1))
        out.with_suffix(".txt").write_text(
            table + "\n\n" + report.value_table(policy, names, order) + "\n")
        log.info("wrote %s and %s", out, out.with_suffix(".txt"))
    row = {"objective": cfg.objective, "T": prob.T, "N": cfg.N, "value": policy.value}
    _emit(cfg, {**row, "policy": doc}, f"{value}\n{table}", [row],
          ["objective", "T", "N", "value"])
    return 0


def _benchmark_policy(cfg: RunConfig, prob: Problem):
    if cfg.policy == "naive":
        return make_naive_policy(prob.mset, cfg.N)
    if cfg.policy == "s1":
        return make_s1_policy(prob.mset, prob.graph)
    return _solve(prob, cfg.objective, cfg.N)


def _exact_value(cfg, prob, policy):
    if policy.kind == "stationary":
        return float(expected_arrival_exact(policy, prob.graph, prob.target,
                                            prob.eps)[prob.graph.initial_id])
    ev = evaluate_policy_exact(policy, prob.graph, target=prob.target, eps=prob.eps)
    return ev.fidelity_expectation if cfg.objective == "fidelity" else ev.success_prob


def cmd_evaluate(cfg: RunConfig) -> int:
    prob = Problem(cfg, horizon=_graph_horizon(cfg, cfg.N))
    try:
        policy = _benchmark_policy(cfg, prob)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    exact = _exact_value(cfg, prob, policy)
    row = report.result_row(cfg.policy, prob.T, cfg.N, exact)
    _emit(cfg, row, report.to_text_table([row]), [row], report.RESULT_COLUMNS)
    return 0


def cmd_simulate(cfg: RunConfig) -> int:
    prob = Problem(cfg, horizon=_graph_horizon(cfg, cfg.N))
    try:
        policy = _benchmark_policy(cfg, prob)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    exact = _exact_value(cfg, prob, policy)
    res = simulate(policy, prob.graph, prob.target, trials=cfg.trials, seed=cfg.seed,
                   max_steps=cfg.max_steps, eps=prob.eps, record=False)
    if policy.kind == "stationary":
        est, se = res.mean_arrival, res.arrival_stderr
    else:
        est, se = res.success_rate, res.success_stderr
    row = report.result_row(cfg.policy, prob.T, cfg.N, exact, est, se, cfg.trials, cfg.seed)
    if policy.kind == "stationary":
        log.info("%d of %d trials did not arrive within the step limit",
                 res.not_arrived, res.trials)
    _emit(cfg, {**row, "not_arrived": res.not_arrived}, report.to_text_table([row]),
          [row], report.RESULT_COLUMNS)
    return 0


def _workers() -> int:
    cap = os.environ.get("QSTEER_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = max(1, min(n, int(cap)))
        except ValueError:
            log.warning("ignoring non-integer QSTEER_THREADS=%r", cap)
    return n


def sweep_points(cfg: RunConfig) -> list[tuple]:
    """(series, T, horizons, kind) jobs for one figure, in output order."""
    fig = cfg.figure
    if fig == "fig3":
        Ts = cfg.T_values or list(FIG_DEFAULTS["fig3"]["T"])
        return [("arrival", T, None, "arrival") for T in Ts]
    lo, hi = FIG_DEFAULTS[fig]["N"]
    Ns = cfg.N_values or list(range(lo, hi + 1))
    if fig == "fig1":
        jobs = []
        for N in Ns:
            jobs.append(("naive", N, [N], "naive"))
            jobs.append(("optimal", N, [N], "success"))
        return jobs
    Ts = cfg.T_values or list(FIG_DEFAULTS["fig2"]["T"])
    return [(f"T={T}", T, Ns, "success") for T in Ts]


def _sweep_job(cfg: RunConfig, job: tuple) -> list[dict]:
    series, T, Ns, kind = job
    prob = Problem(RunConfig(command="sweep", T=T, initial=cfg.initial, target=cfg.target,
                             eps=cfg.eps, max_states=cfg.max_states), T=T)
    row = {"figure": cfg.figure, "series": series, "T": T}
    if kind == "arrival":
        return [{**row, "x": T, "N": None, "value": _solve(prob, kind, None).value}]
    if kind == "naive":
        return [{**row, "x": N, "N": N, "value": evaluate_policy_exact(
            make_naive_policy(prob.mset, N), prob.graph, target=prob.target,
            eps=prob.eps).success_prob} for N in Ns]
    # values[t, s] does not depend on the horizon, so one pass covers every N.
    values = _solve(prob, kind, max(Ns)).values
    init = prob.graph.initial_id
    return [{**row, "x": N, "N": N, "value": float(values[N, init])} for N in Ns]


def cmd_sweep(cfg: RunConfig) -> int:
    jobs = sweep_points(cfg)
    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        rows = [r for chunk in pool.map(lambda j: _sweep_job(cfg, j), jobs) for r in chunk]
    cols = ["figure", "series", "x", "T", "N", "value"]
    if cfg.output:
        Path(cfg.output).write_text(report.to_csv(rows, cols))
    _emit(cfg, {"rows": rows}, report.to_text_table(rows, cols), rows, cols)
    return 0


def cmd_graph(cfg: RunConfig) -> int:
    prob = Problem(cfg, horizon=cfg.N if cfg.set_file else None)
    doc = prob.graph.to_dict()
    text = json.dumps(doc, indent=1)
    if cfg.output:
        Path(cfg.output).write_text(text)
    if cfg.format == "json" or not cfg.output:
        sys.stdout.write(text + "\n")
    else:
        names, _ = prob.names()
        sys.stdout.write(f"{prob.graph.num_states} states\n" + "\n".join(names) + "\n")
    return 0


COMMANDS = {
    "solve": cmd_solve,
    "evaluate": cmd_evaluate,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "graph": cmd_graph,
}


def _int_list(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        if "-" in part.strip("-"):
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--objective", choices=["success", "fidelity", "arrival"],
                        default="success")
    common.add_argument("-T", type=int, dest="T", help="size of the standard measurement set")
    common.add_argument("-N", type=int, dest="N", help="horizon (success/fidelity)")
    common.add_argument("--set-file", help="measurement-set JSON instead of the standard set")
    common.add_argument("--initial", default="0", help='initial state: "0", "1", "+", '
                        '"-", "mixed" or comma-separated amplitudes')
    common.add_argument("--target", default="1", help="target pure state, same syntax")
    common.add_argument("--eps", type=float, default=DEFAULT_EPS,
                        help="target test: fidelity^2 >= 1 - eps")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--trials", type=int, default=10_000)
    common.add_argument("--max-steps", type=int)
    common.add_argument("--max-states", type=int, default=DEFAULT_MAX_STATES)
    common.add_argument("--output", help="file to write the artifact to")
    common.add_argument("--format", choices=["json", "csv", "table"], default="table")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="qsteer", description="Optimal measurement-feedback policies for state steering.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve one objective")
    for name in ("evaluate", "simulate"):
        p = sub.add_parser(name, parents=[common], help=f"{name} a policy")
        p.add_argument("--policy", choices=["naive", "s1", "optimal"], default="optimal")
    p = sub.add_parser("sweep", parents=[common], help="reproduce a figure's data")
    p.add_argument("figure", choices=sorted(FIG_DEFAULTS))
    p.add_argument("--T-values", type=_int_list, help="e.g. 10,100,1000 or 2-30")
    p.add_argument("--N-values", type=_int_list, help="e.g. 3-10")
    sub.add_parser("graph", parents=[common], help="export the reachable state graph")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    fields = {k: v for k, v in vars(args).items() if k in RunConfig.__dataclass_fields__}
    cfg = RunConfig(**fields)
    try:
        cfg.validate()
        return COMMANDS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"qsteer: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NoProperPolicyError, StateExplosionError, NotConvergedError) as exc:
        print(f"qsteer: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"qsteer: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
