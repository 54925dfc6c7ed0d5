import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st
from scipy.integrate import solve_ivp

from tcequil.params import PERTURBED, REFERENCE, ModelParams, derive
from tcequil.riccati import (
    COEFFS,
    ExistenceError,
    PicardNotConverged,
    RiccatiBlowUp,
    check_existence,
    contraction_constant,
    eval_coeff,
    fd_derivatives,
    replace_coeffs,
    residual_norm,
    rhs,
    solve_direct,
    solve_picard,
    sup_gap,
)

from conftest import forced_direct

INSIDE = ModelParams.with_eps(-0.02)


def reference_ivp(params, grid):
    """High-order adaptive integration, backward from the terminal zeros."""
    T = params.horizon
    out = solve_ivp(lambda t, y: rhs(params, y), (T, 0.0), np.zeros(6), method="DOP853",
                    rtol=1e-13, atol=1e-14, dense_output=True)
    assert out.success
    return out.sol(grid)


def test_bounds_reference_values():
    rep = check_existence(PERTURBED)
    assert rep.bound1 == pytest.approx(16 / 132)
    assert rep.bound2 == pytest.approx(32 / 1456)
    assert rep.eps_abs == pytest.approx(0.1)
    assert not rep.satisfied
    assert rep.margin == pytest.approx(32 / 1456 - 0.1)


def test_symmetric_margin_is_smaller_bound():
    rep = check_existence(REFERENCE)
    assert rep.satisfied
    assert rep.margin == min(rep.bound1, rep.bound2)
    assert set(rep.to_dict()) == {"bound1", "bound2", "eps_abs", "satisfied", "margin"}


def test_contraction_constant_below_one_inside_bound():
    p = ModelParams.with_eps(0.9 * check_existence(REFERENCE).margin)
    assert check_existence(p).satisfied
    assert contraction_constant(p) < 1
    assert contraction_constant(REFERENCE) == 0.0


def test_eps_zero_closed_form(ref_sol):
    d = derive(REFERENCE).delta
    tau = REFERENCE.horizon - ref_sol.grid
    assert np.max(np.abs(ref_sol["F"] + d * np.tanh(d * tau))) < 1e-8
    for name in "ABC":
        assert np.max(np.abs(ref_sol[name])) <= 1e-10
    np.testing.assert_allclose(ref_sol["E"], REFERENCE.beta / REFERENCE.a * ref_sol["F"], atol=1e-12)
    np.testing.assert_allclose(ref_sol["D"], -0.5 * ref_sol["F"], atol=1e-12)


def test_terminal_zeros(pert_sol):
    assert np.all(pert_sol.coeffs[:, -1] == 0.0)


def test_direct_matches_adaptive_oracle(pert_sol):
    ref = reference_ivp(PERTURBED, pert_sol.grid)
    assert np.max(np.abs(pert_sol.coeffs - ref)) < 1e-10


def test_residual_second_order():
    res = [forced_direct(PERTURBED, n).residual for n in (1024, 2048, 4096)]
    assert res[0] / res[1] == pytest.approx(4.0, rel=0.02)
    assert res[1] / res[2] == pytest.approx(4.0, rel=0.02)


def test_existence_enforced():
    with pytest.raises(ExistenceError, match="existence bound"):
        solve_direct(PERTURBED)
    with pytest.raises(ExistenceError):
        solve_picard(PERTURBED)
    with pytest.warns(RuntimeWarning, match="proceeding anyway"):
        solve_direct(PERTURBED, 256, force=True)


def test_picard_matches_direct_inside_bound():
    d = solve_direct(INSIDE)
    p = solve_picard(INSIDE)
    assert sup_gap(d, p) < 1e-6
    gaps = np.array(p.picard_gaps)
    assert np.all(gaps[1:] < gaps[:-1])
    assert gaps[-1] < 1e-10
    assert p.method == "picard" and d.method == "direct"


def test_picard_beyond_bound_still_converges(pert_sol):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        p = solve_picard(PERTURBED, force=True)
    assert sup_gap(pert_sol, p) < 1e-6


def test_picard_symmetric_two_solves():
    p = solve_picard(REFERENCE, 512)
    assert p.picard_iters == 2
    assert np.max(np.abs(p.coeffs[:3])) == 0.0


def test_picard_not_converged_reports_gaps():
    with pytest.raises(PicardNotConverged, match="last sup-norm gaps") as info:
        solve_picard(INSIDE, 512, tol=1e-14, max_iter=2)
    assert len(info.value.gaps) == 2


def test_non_finite_values_raise():
    with pytest.raises(RiccatiBlowUp, match="blew up"):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            solve_direct(ModelParams(gamma1=100, gamma2=0.01, beta=50, horizon=10), 256, force=True)


def test_small_grids_rejected():
    with pytest.raises(ValueError):
        solve_direct(REFERENCE, 4)
    with pytest.raises(ValueError):
        solve_picard(REFERENCE, 8)


def test_eval_coeff_nodes_and_between(pert_sol):
    k = 1234
    for name in COEFFS:
        assert eval_coeff(pert_sol, name, pert_sol.grid[k]) == pert_sol[name][k]
    coarse = forced_direct(PERTURBED, 512)
    t = np.linspace(0, 1, 37)
    for name in COEFFS:
        np.testing.assert_allclose(eval_coeff(coarse, name, t), eval_coeff(pert_sol, name, t), atol=1e-9)
    with pytest.raises(ValueError):
        eval_coeff(pert_sol, "G", 0.5)
    with pytest.raises(ValueError):
        eval_coeff(pert_sol, "A", 1.01)


def test_fd_derivatives_track_rhs(pert_sol):
    assert np.max(np.abs(fd_derivatives(pert_sol) - pert_sol.derivatives())) < 1e-9


def test_residual_exposes_fake_solution(pert_sol):
    coeffs = pert_sol.coeffs.copy()
    coeffs[2] += 1e-3
    fake = replace_coeffs(pert_sol, coeffs)
    assert residual_norm(fake) > 1e-5 > pert_sol.residual


def test_solution_is_read_only(pert_sol):
    with pytest.raises(ValueError):
        pert_sol.coeffs[0, 0] = 1.0


def test_csv_round_trip_exact(tmp_path, pert_sol):
    path = tmp_path / "r.csv"
    pert_sol.to_csv(path)
    assert path.read_text().splitlines()[0] == "t,A,B,C,D,E,F"
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.array_equal(data[:, 0], pert_sol.grid)
    assert np.array_equal(data[:, 1:].T, pert_sol.coeffs)


def test_summary_fields(pert_sol):
    s = pert_sol.summary()
    assert s["method"] == "direct" and s["n_steps"] == 4096
    assert s["at_zero"]["B"] == pert_sol["B"][0]


def test_sign_flip_under_agent_swap():
    # swapping risk aversions flips eps; the price corrections flip at first order
    lo = solve_direct(ModelParams.with_eps(-0.01), 1024)
    hi = solve_direct(ModelParams.with_eps(0.01), 1024)
    for name in "BC":
        odd = np.max(np.abs(lo[name] + hi[name]))
        assert odd < 0.05 * np.max(np.abs(lo[name]))


@st.composite
def inside_bound(draw):
    gh = draw(st.floats(0.5, 4))
    lam = draw(st.floats(0.3, 5))
    a = draw(st.floats(0.4, 1.6))
    beta = draw(st.floats(0.1, 1.5))
    T = draw(st.floats(0.3, 1.5))
    base = ModelParams(gamma1=gh, gamma2=gh, lambda_cost=lam, a=a, beta=beta, horizon=T)
    eps = draw(st.floats(-0.95, 0.95)) * check_existence(base).margin
    return base.with_(gamma1=gh + eps / 2, gamma2=gh - eps / 2)


@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(inside_bound())
def test_cross_solver_random(p):
    assert check_existence(p).satisfied
    d = solve_direct(p)
    pic = solve_picard(p)
    assert sup_gap(d, pic) < 1e-6
    assert np.all(d.coeffs[:, -1] == 0)
    assert np.all(np.isfinite(d.coeffs))
