"""One test per acceptance criterion, each printing a PASS/FAIL line."""

import time

import numpy as np

from qsteer.evaluation import (
    evaluate_policy_exact,
    make_naive_policy,
    make_s1_policy,
    simulate,
)
from qsteer.graph import enumerate_reachable
from qsteer.qdm import (
    DensityMatrix,
    Measurement,
    apply_measurement,
    basis_state,
    build_standard_set,
    fidelity,
    make_pure_state,
    pure_fidelity,
    standard_state_vectors,
    unconditional_evolve,
)
from qsteer.solvers import (
    _q_values,
    append_target_action,
    solve_max_fidelity,
    solve_max_success,
    solve_min_arrival,
)

from oracles import (
    all_tree_policy_values,
    fidelity_sqrtm,
    ket,
    proj,
    random_density,
    random_kraus,
    standard_projectors,
)
from reference_policies import ARRIVAL_T5

ZERO, ONE = basis_state(0), basis_state(1)
CASES = 200


def problem(T):
    mset = build_standard_set(T)
    return mset, enumerate_reachable(ZERO, mset, target=ONE)


def test_c01_optimal_success_t10(verdict):
    start = time.perf_counter()
    mset, g = problem(10)
    value = solve_max_success(g, mset, 10, ONE).value
    elapsed = time.perf_counter() - start
    ok = abs(value - 0.9968) <= 5e-4 and elapsed < 1.0
    assert verdict(1, ok, f"J*(10) = {value:.6f} (0.9968 +/- 5e-4), {elapsed:.3f}s < 1s")


def test_c02_naive_policy(verdict):
    start = time.perf_counter()
    p = {}
    for T in (3, 10):
        mset, g = problem(T)
        p[T] = evaluate_policy_exact(make_naive_policy(mset, T), g, target=ONE).success_prob
    elapsed = time.perf_counter() - start
    ok = 0.55 <= p[3] <= 0.57 and 0.79 <= p[10] <= 0.81 and elapsed < 1.0
    assert verdict(2, ok, f"p(3) = {p[3]:.5f} in [0.55, 0.57], p(10) = {p[10]:.5f} in "
                          f"[0.79, 0.81], {elapsed:.3f}s < 1s")


def test_c03_s1_policy(verdict):
    start = time.perf_counter()
    mset, g = problem(3)
    value = evaluate_policy_exact(make_s1_policy(mset, g), g, target=ONE).success_prob
    elapsed = time.perf_counter() - start
    ok = 0.65 <= value <= 0.67 and elapsed < 1.0
    assert verdict(3, ok, f"S1 success = {value:.5f} in [0.65, 0.67], {elapsed:.3f}s < 1s")


def test_c04_feedback_dominates_naive(verdict):
    margins = {}
    for N in range(3, 11):
        mset, g = problem(N)
        opt = solve_max_success(g, mset, N, ONE).value
        naive = evaluate_policy_exact(make_naive_policy(mset, N), g, target=ONE).success_prob
        margins[N] = opt - naive
    worst = min(margins, key=margins.get)
    ok = all(m > 0.01 for m in margins.values())
    assert verdict(4, ok, f"min optimal - naive = {margins[worst]:.4f} at N={worst} (> 0.01)")


def test_c05_success_fidelity_duality(verdict):
    mset, g = problem(5)
    worst_value = worst_composite = 0.0
    for N in range(2, 7):
        success = solve_max_success(g, mset, N, ONE)
        fid = solve_max_fidelity(g, mset, N - 1, ONE)
        composite = append_target_action(fid, mset)
        achieved = evaluate_policy_exact(composite, g, target=ONE).success_prob
        worst_value = max(worst_value, abs(success.value - fid.value))
        worst_composite = max(worst_composite, abs(success.value - achieved))
    ok = worst_value <= 1e-9 and worst_composite <= 1e-9
    assert verdict(5, ok, f"max |J(N) - J~(N-1)| = {worst_value:.1e}, composite gap "
                          f"{worst_composite:.1e} (<= 1e-9)")


def test_c06_min_arrival_sweep(verdict):
    start = time.perf_counter()
    values = {}
    for T in range(2, 31):
        mset, g = problem(T)
        values[T] = solve_min_arrival(g, mset, ONE).value
    elapsed = time.perf_counter() - start
    lo, hi = min(values.values()), max(values.values())
    mean = float(np.mean(list(values.values())))
    ok = 3.0 <= lo and hi <= 4.5 and 3.6 <= mean <= 4.0 and elapsed < 5.0
    assert verdict(6, ok, f"V(|0>) in [{lo:.4f}, {hi:.4f}] within [3.0, 4.5], mean "
                          f"{mean:.4f} in [3.6, 4.0], {elapsed:.3f}s < 5s")


def test_c07_stationary_policy_shape(verdict):
    mset, g = problem(5)
    policy = solve_min_arrival(g, mset, ONE)
    q = _q_values(g, np.where(np.isfinite(policy.values), policy.values, 0.0))
    target = g.target_mask(ONE)
    mismatched, tied = [], []
    for name, vec in standard_state_vectors(5).items():
        s = g.find(make_pure_state(vec))
        got = mset.names[policy.choice[s]]
        expected = ARRIVAL_T5[name]
        if target[s]:
            if got != expected:
                mismatched.append(name)
            continue
        ordered = np.sort(q[s])
        if ordered[1] - ordered[0] > 1e-9:
            if got != expected:
                mismatched.append(name)
        else:
            tied.append(f"{name}({got}, listed {expected})")
    ok = not mismatched
    assert verdict(7, ok, f"unique-minimum states matched; mismatches {mismatched or 'none'}; "
                          f"tied: {', '.join(tied) or 'none'}")


def test_c08_brute_force_optimality(verdict):
    start = time.perf_counter()
    worst = -np.inf
    count = 0
    for T in (2, 3, 4):
        mset, g = problem(T)
        for N in range(0, 4):
            dp = solve_max_success(g, mset, N, ONE).value
            values = all_tree_policy_values(proj(ket(1, 0)), standard_projectors(T), N,
                                            ket(0, 1))
            count += len(values)
            worst = max(worst, max(values) - dp)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 60.0
    assert verdict(8, ok, f"{count} history-dependent policies, max excess over DP "
                          f"{worst:.1e} (<= 1e-10), {elapsed:.2f}s < 60s")


def test_c09_forward_backward_agreement(verdict):
    worst = 0.0
    for T in range(3, 11):
        mset, g = problem(T)
        opt = solve_max_success(g, mset, T, ONE)
        forward = evaluate_policy_exact(opt, g, target=ONE).success_prob
        worst = max(worst, abs(forward - opt.value))
    ok = worst <= 1e-10
    assert verdict(9, ok, f"max |forward - backward| = {worst:.1e} over T=N in 3..10 (<= 1e-10)")


def test_c10_monte_carlo_consistency(verdict):
    mset, g = problem(10)
    opt = solve_max_success(g, mset, 10, ONE)
    res = simulate(opt, g, ONE, trials=100_000, seed=2024, record=False)
    z_success = abs(res.success_rate - opt.value) / res.success_stderr

    mset5, g5 = problem(5)
    arrival = solve_min_arrival(g5, mset5, ONE)
    res5 = simulate(arrival, g5, ONE, trials=100_000, seed=2024, record=False)
    z_arrival = abs(res5.mean_arrival - arrival.value) / res5.arrival_stderr

    ok = z_success <= 4 and z_arrival <= 4 and res5.not_arrived == 0
    assert verdict(10, ok, f"success {res.success_rate:.5f} vs {opt.value:.5f} "
                           f"({z_success:.2f} se), arrival {res5.mean_arrival:.4f} vs "
                           f"{arrival.value:.4f} ({z_arrival:.2f} se), limit 4 se")


def _random_measurement(rng, d, n_out):
    return Measurement("R", tuple(str(i) for i in range(n_out)),
                       tuple(random_kraus(rng, d, n_out)))


def test_c11_physics_invariants(verdict):
    rng = np.random.default_rng(11)
    failures = {"completeness": 0, "normalization": 0, "channel": 0, "symmetry": 0,
                "pure_target": 0}
    for _ in range(CASES):
        d = int(rng.integers(2, 5))
        n_out = int(rng.integers(1, 5))
        kraus = random_kraus(rng, d, n_out)
        # complete sets are accepted; a perturbed copy must be rejected
        Measurement("R", tuple(str(i) for i in range(n_out)), tuple(kraus))
        bad = [k.copy() for k in kraus]
        bad[0] = bad[0] * 1.01
        try:
            Measurement("R", tuple(str(i) for i in range(n_out)), tuple(bad))
            failures["completeness"] += 1
        except ValueError:
            pass

        e = _random_measurement(rng, d, n_out)
        rho = DensityMatrix(random_density(rng, d, rank=int(rng.integers(1, d + 1))))
        outcomes = apply_measurement(rho, e)
        total = sum(o.probability for o in outcomes)
        if abs(total - 1) > 1e-10 or any(abs(np.trace(o.state.matrix) - 1) > 1e-10
                                         for o in outcomes):
            failures["normalization"] += 1
        mixture = sum(o.probability * o.state.matrix for o in outcomes)
        if np.max(np.abs(mixture - unconditional_evolve(rho, e).matrix)) > 1e-10:
            failures["channel"] += 1

        sigma = DensityMatrix(random_density(rng, d))
        f_ab, f_ba = fidelity(rho, sigma), fidelity(sigma, rho)
        if abs(f_ab - f_ba) > 1e-9 or abs(f_ab - fidelity_sqrtm(rho.matrix, sigma.matrix)) > 1e-7:
            failures["symmetry"] += 1

        v = rng.normal(size=d) + 1j * rng.normal(size=d)
        v /= np.linalg.norm(v)
        shortcut = pure_fidelity(rho, v)
        direct = np.sqrt(max(float((v.conj() @ rho.matrix @ v).real), 0.0))
        if abs(shortcut - direct) > 1e-10 or \
                abs(fidelity(rho, make_pure_state(v)) - shortcut) > 1e-9:
            failures["pure_target"] += 1
    ok = not any(failures.values())
    detail = ", ".join(f"{k} {CASES - n}/{CASES}" for k, n in failures.items())
    assert verdict(11, ok, f"randomized invariants passing: {detail}")
