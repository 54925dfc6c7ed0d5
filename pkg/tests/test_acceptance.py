"""Acceptance suite: one PASS/FAIL line per criterion.

Run under pytest, or directly with ``python3 tests/test_acceptance.py``.
"""

import math
import sys
import time
import warnings

import numpy as np
import pytest

from tcequil import tracking
from tcequil.asymptotics import AsymptoticKit, illiquidity_discount
from tcequil.frictionless import bachelier_price, laplace_price_mc
from tcequil.params import PERTURBED, REFERENCE, ModelParams, derive
from tcequil.riccati import check_existence, solve_direct, solve_picard, sup_gap
from tcequil.simulate import PathConfig, drift_identity_residual, simulate, volume_diagnostics

N_STEPS = 4096
LAMBDAS = (0.25, 0.5, 1.0, 2.0, 4.0)


def _forced(params, n_steps=N_STEPS):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return solve_direct(params, n_steps, force=True)


def criterion_1():
    start = time.perf_counter()
    sol = solve_direct(REFERENCE, N_STEPS)
    elapsed = time.perf_counter() - start
    d = derive(REFERENCE).delta
    f_err = np.max(np.abs(sol["F"] + d * np.tanh(d * (REFERENCE.horizon - sol.grid))))
    abc = max(np.max(np.abs(sol[k])) for k in "ABC")
    ok = abc <= 1e-10 and f_err <= 1e-8 and elapsed < 1.0
    return ok, f"max|A,B,C| = {abc:.2e}, F sup error = {f_err:.2e}, runtime = {elapsed:.3f}s"


def criterion_2():
    sol = solve_direct(REFERENCE, N_STEPS)
    p = REFERENCE
    e_err = np.max(np.abs(sol["E"] - p.beta / p.a * sol["F"]))
    d_err = np.max(np.abs(sol["D"] + p.gamma2 * p.supply / (p.gamma1 + p.gamma2) * sol["F"]))
    return max(e_err, d_err) <= 1e-8, f"E error = {e_err:.2e}, D error = {d_err:.2e}"


def random_valid_params(n, seed=2024):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        gh = rng.uniform(0.5, 4.0)
        base = ModelParams(
            gamma1=gh, gamma2=gh, lambda_cost=rng.uniform(0.3, 5.0), a=rng.uniform(0.4, 1.6),
            b=rng.uniform(-1, 1), beta=rng.uniform(0.1, 1.5), supply=rng.uniform(0.2, 2.0),
            x1=rng.uniform(-1, 2), horizon=rng.uniform(0.3, 1.5))
        eps = rng.uniform(-0.99, 0.99) * check_existence(base).margin
        p = base.with_(gamma1=gh + eps / 2, gamma2=gh - eps / 2)
        if check_existence(p).satisfied:
            out.append(p)
    return out


def criterion_3():
    worst_gap, worst_ratio = 0.0, 0.0
    for p in random_valid_params(50):
        gap = sup_gap(solve_direct(p, N_STEPS), pic := solve_picard(p, N_STEPS))
        gaps = np.array(pic.picard_gaps)
        ratio = float(np.max(gaps[1:] / gaps[:-1])) if gaps.size > 1 and gaps[0] > 0 else 0.0
        worst_gap = max(worst_gap, gap)
        worst_ratio = max(worst_ratio, ratio)
    ok = worst_gap <= 1e-6 and worst_ratio < 1
    return ok, f"50 sets: max direct-Picard gap = {worst_gap:.2e}, max gap ratio = {worst_ratio:.3g}"


def criterion_4():
    ratios = []
    for sign in (1, -1):
        for name in "ABC":
            scaled = []
            for e in (0.04, 0.02, 0.01):
                p = ModelParams.with_eps(sign * e)
                sol = _forced(p)
                first = getattr(AsymptoticKit(p), name + "1")(sol.grid)
                scaled.append(np.max(np.abs(sol[name] - first)) / e**2)
            ratios += [scaled[0] / scaled[1], scaled[1] / scaled[2]]
    ok = all(0.25 <= r <= 4 for r in ratios)
    return ok, f"scaled-error ratios across halvings in [{min(ratios):.3f}, {max(ratios):.3f}]"


_ensemble_cache = {}


def _ensemble(params):
    key = params
    if key not in _ensemble_cache:
        sol = _forced(params)
        _ensemble_cache[key] = (sol, simulate(sol, params, PathConfig(n_paths=10_000, n_steps=256, seed=0)))
    return _ensemble_cache[key]


def criterion_5():
    _, ens = _ensemble(PERTURBED)
    p = PERTURBED
    terminal = np.max(np.abs(ens.S[:, -1] - (p.b * p.horizon + p.a * ens.W[:, -1])))
    clearing = np.max(np.abs(ens.phi1 + ens.phi2 - p.supply))
    scale = np.finfo(float).eps * max(abs(p.supply), float(np.max(np.abs(ens.phi1))))
    ok = terminal <= 1e-12 and clearing <= 2 * scale
    return ok, f"terminal gap = {terminal:.2e}, clearing gap = {clearing:.2e} (roundoff scale {scale:.1e})"


def criterion_6():
    sol, ens = _ensemble(PERTURBED)
    res = drift_identity_residual(sol, PERTURBED, ens)
    return res <= 1e-8, f"max pathwise drift residual = {res:.2e}"


def criterion_7():
    p = PERTURBED
    sol = _forced(p)
    disc = illiquidity_discount(p, "numeric", sol)
    B = sol["B"][:-1]
    component = p.gamma2 * p.supply * p.a * sol["B"]
    avg = float(np.trapezoid(component, sol.grid)) / p.horizon
    sweep = np.array([illiquidity_discount(p.with_(lambda_cost=lam), "numeric",
                                           _forced(p.with_(lambda_cost=lam))) for lam in LAMBDAS])
    first, second = np.diff(sweep), np.diff(sweep, 2)
    ok = disc > 0 and np.all(B > 0) and avg > 0 and np.all(first > 0) and np.all(second <= 0)
    return ok, (f"discount = {disc:.5f}, min B(t<T) = {B.min():.2e}, mean premium component = {avg:.5f}, "
                f"lambda sweep {np.round(sweep, 5).tolist()}")


def criterion_8():
    sol, ens = _ensemble(REFERENCE)
    vd = volume_diagnostics(ens, sol)
    half = vd["half"]
    ok = abs(half["slope"] - half["F0"]) <= 3 * half["se_eff"] and vd["qv_rel_error"] <= 0.05
    return ok, (f"slope {half['slope']:.6f} vs F(T/2;0) {half['F0']:.6f} (se {half['se_eff']:.1e}), "
                f"QV rate error = {100 * vd['qv_rel_error']:.2f}%")


def _tracking_problem(n):
    return tracking.TrackingProblem.constant(2.0, 1.0, 1.0, 0.5, -0.5, 0.5, n_steps=n)


def criterion_9():
    c0 = tracking.solve(_tracking_problem(4000)).c[0]
    gaps = [abs(tracking.dp_oracle(_tracking_problem(n)).kappa[0] + c0) for n in (250, 500, 1000)]
    ratios = [gaps[0] / gaps[1], gaps[1] / gaps[2]]
    linear = all(1.8 <= r <= 2.2 for r in ratios)

    pr = _tracking_problem(1000)
    law = tracking.continuous_feedback(tracking.solve(pr))
    J0 = tracking.expected_objective(pr, *law)
    eta = 1e-3
    t = pr.grid[:-1]
    worst = -math.inf
    for v in (np.ones_like(t), t, 1 - 2 * t, np.sin(3 * t), np.cos(7 * t)):
        up = tracking.expected_objective(pr, *law, shift=eta * v)
        down = tracking.expected_objective(pr, *law, shift=-eta * v)
        curvature = (up + down - 2 * J0) / eta**2
        # improvement measured in units of the quadratic term
        worst = max(worst, (J0 - min(up, down)) / (curvature * eta**2))
    ok = linear and worst <= 1.0
    return ok, (f"|kappa_DP(0)+c(0)| = {', '.join(f'{g:.3e}' for g in gaps)} (ratios "
                f"{ratios[0]:.3f}, {ratios[1]:.3f}); worst improvement / (curvature eta^2) = {worst:.3f}")


def criterion_10():
    start = time.perf_counter()
    est, se = laplace_price_mc(REFERENCE, 0.0, 0.0, 1_000_000, seed=0)
    elapsed = time.perf_counter() - start
    exact = bachelier_price(REFERENCE, 0.0, 0.0)
    z = abs(est - exact) / se
    return z <= 4 and elapsed < 5, f"estimate {est:.6f} vs {exact:.6f}, {z:.2f} SE, runtime = {elapsed:.2f}s"


CRITERIA = {n: globals()[f"criterion_{n}"] for n in range(1, 11)}


def _line(n, ok, detail):
    return f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


@pytest.mark.parametrize("n", sorted(CRITERIA))
def test_criterion(n, capsys):
    ok, detail = CRITERIA[n]()
    with capsys.disabled():
        print("\n" + _line(n, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    results = []
    for n, fn in CRITERIA.items():
        ok, detail = fn()
        print(_line(n, ok, detail), flush=True)
        results.append(ok)
    sys.exit(0 if all(results) else 1)
