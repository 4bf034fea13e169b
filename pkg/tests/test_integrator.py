from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from silkin import (
    IntegratorConfig,
    ModelParams,
    NegativityViolation,
    OutOfRange,
    State,
    TruncatedSystem,
    dense_eval,
    integrate,
    norm_mu,
)
from silkin.moments import _path_integral

from conftest import constant_rates, decaying_state, power_law_system
from oracles import decoupled_solution

E_INV = 0.36787944117144233  # exp(-1)
E_HALF_INV = 0.6065306597126334  # exp(-0.5)


def decay_trajectory(cfg=None, t_end=1.0):
    sys_ = TruncatedSystem(ModelParams(0.0, 0.0), constant_rates(4, p=0.6, q=0.4))
    y0 = State(t=0.0, x=0.0, M=[1.0, 0.0, 0.0, 0.0, 0.0])
    return integrate(sys_, y0, t_end, cfg)


def test_pure_decay_matches_exponential():
    traj = decay_trajectory()
    assert traj.final_state.M[0] == pytest.approx(E_INV, abs=1e-8)


def test_supply_only_linear_total_matter():
    # no loss channels: total matter grows exactly linearly
    sys_ = TruncatedSystem(ModelParams(r=0.8, alpha=0.5), constant_rates(6, k=1.3))
    y0 = decaying_state(6, x0=0.4, rho=0.5)
    traj = integrate(sys_, y0, 4.0)
    u0 = norm_mu(y0, 1.0)
    for i in range(traj.num_samples):
        s = traj.state(i)
        assert norm_mu(s, 1.0) == pytest.approx(u0 + 1.3 * (s.t - y0.t), abs=1e-11)


def test_decoupled_closed_form_oracle():
    n = 6
    p = np.array([0.3, 0.0, 1.1, 0.7, 0.0, 0.2, 0.9])
    q = np.array([0.2, 0.5, 0.0, 0.4, 0.0, 1.3, 0.1])
    from conftest import rates_from_arrays

    sys_ = TruncatedSystem(ModelParams(r=0.0, alpha=0.25), rates_from_arrays(n, np.zeros(n + 1), p, q))
    M0 = np.array([1.0, 0.8, 0.6, 0.4, 0.3, 0.2, 0.1])
    y0 = State(t=0.0, x=0.5, M=M0)
    traj = integrate(sys_, y0, 5.0)
    for t in (0.5, 1.0, 2.5, 5.0):
        x_ref, M_ref = decoupled_solution(0.5, M0, p, q, 0.0, 0.25, t)
        s = dense_eval(traj, t)
        assert s.x == pytest.approx(x_ref, rel=1e-8, abs=1e-10)
        np.testing.assert_allclose(s.M, M_ref, rtol=1e-8, atol=1e-12)


def test_dense_eval_at_sample_time_is_exact():
    traj = decay_trajectory()
    mid = traj.num_samples // 2
    s = dense_eval(traj, float(traj.t[mid]))
    assert s.x == traj.phase[mid, 0]
    assert np.array_equal(s.M, traj.phase[mid, 1:])


def test_dense_eval_constant_solution():
    sys_ = TruncatedSystem(ModelParams(0.0, 0.0), constant_rates(3))
    y0 = State(t=0.0, x=0.75, M=[0.5, 0.25, 0.0, 0.125])
    traj = integrate(sys_, y0, 2.0)
    for t in np.linspace(0.0, 2.0, 9):
        s = dense_eval(traj, float(t))
        assert s.x == 0.75
        assert np.array_equal(s.M, y0.M)


def test_dense_eval_decay_midpoint():
    traj = decay_trajectory()
    assert dense_eval(traj, 0.5).M[0] == pytest.approx(E_HALF_INV, abs=1e-8)


def test_dense_eval_out_of_range():
    traj = decay_trajectory()
    with pytest.raises(OutOfRange):
        dense_eval(traj, -0.1)
    with pytest.raises(OutOfRange):
        dense_eval(traj, 1.1)


def test_cone_preservation_random_states(rng):
    sys_ = power_law_system(16, gamma=1.0)
    for _ in range(5):
        M = rng.uniform(0.2, 1.0, 17) * rng.uniform(0.3, 0.6) ** np.arange(17)
        y0 = State(t=0.0, x=rng.uniform(0.0, 1.5), M=M)
        traj = integrate(sys_, y0, 3.0)
        assert traj.pre_clamp_min >= traj.cfg.floor
        assert float(np.min(traj.phase)) >= 0.0
        assert np.all(np.diff(traj.t) > 0.0)


def test_norm_growth_and_cohort_bounds(rng):
    sys_ = power_law_system(24, gamma=0.5)
    y0 = decaying_state(24, x0=1.2, rho=0.55)
    traj = integrate(sys_, y0, 5.0)
    u0 = norm_mu(y0, 1.0)
    supply = sys_.params.r + sys_.params.alpha
    w = np.arange(25) + 1.0
    for i in range(traj.num_samples):
        s = traj.state(i)
        budget = u0 + supply * (s.t - y0.t)
        assert norm_mu(s, 1.0) <= budget + 1e-6
        assert float(np.max(w * s.M)) <= budget + 1e-6


def test_tolerance_refinement_converges():
    errors = []
    for rtol in (1e-4, 1e-6, 1e-8):
        traj = decay_trajectory(IntegratorConfig(rel_tol=rtol, abs_tol=rtol * 1e-3))
        errors.append(abs(traj.final_state.M[0] - E_INV))
    assert errors[0] > errors[1] > errors[2]


def test_accumulators_nondecreasing():
    sys_ = power_law_system(12, gamma=1.0)
    traj = integrate(sys_, decaying_state(12), 4.0, flux_orders=(1, 3))
    acc = traj.accumulators
    assert np.all(np.diff(acc, axis=0) >= -1e-10)
    assert np.all(acc[0] == 0.0)


def test_flux_accumulator_cross_checks_quadrature():
    # co-integrated F_1 vs an independent dense-output quadrature of x k_0 M_0
    sys_ = power_law_system(10, gamma=0.5)
    traj = integrate(sys_, decaying_state(10), 3.0, flux_orders=(1,))
    coef = np.zeros(11)
    coef[0] = sys_.rates.k[0]
    quad = _path_integral(traj, coef, 0.0, 3.0, times_x=True)
    assert traj.flux_at(1, 3.0) == pytest.approx(quad, rel=1e-9, abs=1e-11)


def test_bdf_agrees_with_rk45():
    for n in (8, 70):  # below and above the sparse-Jacobian switch
        sys_ = power_law_system(n, gamma=1.0)
        y0 = decaying_state(n, rho=0.4)
        a = integrate(sys_, y0, 2.0, IntegratorConfig(method="rk45")).final_state
        b = integrate(sys_, y0, 2.0, IntegratorConfig(method="bdf", rel_tol=1e-10, abs_tol=1e-13)).final_state
        assert abs(a.x - b.x) + float(np.max(np.abs(a.M - b.M))) < 1e-7


def test_bdf_accumulators_agree_with_rk45():
    sys_ = power_law_system(12, gamma=0.5)
    y0 = decaying_state(12, rho=0.5)
    a = integrate(sys_, y0, 3.0, IntegratorConfig(method="rk45"), flux_orders=(1, 4))
    b = integrate(
        sys_, y0, 3.0, IntegratorConfig(method="bdf", rel_tol=1e-10, abs_tol=1e-13), flux_orders=(1, 4)
    )
    np.testing.assert_allclose(a.accumulators[-1], b.accumulators[-1], rtol=1e-7, atol=1e-10)


def test_augmented_jacobian_matches_finite_differences(rng):
    # the Jacobian handed to the stiff stepper, including accumulator rows
    from silkin.integrator import _augmented_jac, _augmented_rhs

    sys_ = power_law_system(7, gamma=1.0)
    fun = _augmented_rhs(sys_, (1, 3))
    jac = _augmented_jac(sys_, (1, 3))
    for _ in range(20):
        z = np.concatenate([rng.uniform(0.0, 2.0, 9), rng.uniform(0.0, 1.0, 6)])
        J = np.asarray(jac(0.0, z))
        J_fd = np.empty_like(J)
        for j in range(len(z)):
            h = 1e-6 * max(1.0, abs(z[j]))
            zp = z.copy()
            zm = z.copy()
            zp[j] += h
            zm[j] -= h
            J_fd[:, j] = (fun(0.0, zp) - fun(0.0, zm)) / (2.0 * h)
        assert np.max(np.abs(J - J_fd)) < 1e-6 * max(1.0, float(np.max(np.abs(J))))


def test_negativity_floor_policy():
    # a coarse coupled run undershoots zero by ~5e-4: below a tight floor it
    # aborts, above the default floor it is clamped into the cone
    sys_ = power_law_system(32, gamma=1.0, r=0.0, alpha=0.0)
    y0 = decaying_state(32, x0=2.0, rho=0.7)
    with pytest.raises(NegativityViolation):
        integrate(sys_, y0, 8.0, IntegratorConfig(rel_tol=1e-2, abs_tol=1e-4, negativity_floor=-1e-5))
    traj = integrate(sys_, y0, 8.0, IntegratorConfig(rel_tol=1e-2, abs_tol=1e-4))
    assert traj.pre_clamp_min < 0.0
    assert traj.pre_clamp_min >= traj.cfg.floor
    assert float(np.min(traj.phase)) >= 0.0


def test_integrate_validation_errors():
    sys_ = TruncatedSystem(ModelParams(0.0, 0.0), constant_rates(4, p=1.0))
    y0 = State(t=0.0, x=0.0, M=np.ones(5))
    with pytest.raises(ValueError):
        integrate(sys_, y0, 0.0)
    with pytest.raises(ValueError):
        integrate(sys_, State(t=0.0, x=0.0, M=np.ones(4)), 1.0)
    with pytest.raises(ValueError):
        integrate(sys_, y0, 1.0, flux_orders=(0,))
    with pytest.raises(ValueError):
        integrate(sys_, y0, 1.0, flux_orders=(7,))
    with pytest.raises(ValueError):
        IntegratorConfig(rel_tol=0.0)
    with pytest.raises(ValueError):
        IntegratorConfig(negativity_floor=0.5)
    with pytest.raises(ValueError):
        IntegratorConfig(method="euler")


def test_concurrent_integrations_match_serial():
    sys_ = power_law_system(10, gamma=0.5)
    starts = [decaying_state(10, x0=0.2 * j, rho=0.5) for j in range(1, 5)]
    serial = [integrate(sys_, y0, 2.0).final_state for y0 in starts]
    with ThreadPoolExecutor(max_workers=4) as pool:
        parallel = list(pool.map(lambda y0: integrate(sys_, y0, 2.0).final_state, starts))
    for a, b in zip(serial, parallel):
        assert a.x == b.x
        assert np.array_equal(a.M, b.M)


def test_driver_matches_solve_ivp():
    # independent route: scipy's high-level API on the bare vector field
    from scipy.integrate import solve_ivp

    sys_ = power_law_system(16, gamma=0.5)
    y0 = decaying_state(16, rho=0.5)
    traj = integrate(sys_, y0, 3.0, IntegratorConfig(rel_tol=1e-10, abs_tol=1e-13))
    ref = solve_ivp(
        lambda t, v: sys_.rhs(v),
        (0.0, 3.0),
        y0.vector(),
        method="LSODA",
        rtol=1e-11,
        atol=1e-13,
        dense_output=True,
    )
    assert ref.success
    for t in np.linspace(0.5, 3.0, 6):
        mine = traj.dense_vector(float(t))[: sys_.dimension]
        np.testing.assert_allclose(mine, np.maximum(ref.sol(t), 0.0), rtol=1e-7, atol=1e-10)


def test_max_step_is_respected():
    sys_ = power_law_system(8, gamma=0.0)
    traj = integrate(sys_, decaying_state(8), 2.0, IntegratorConfig(max_step=0.05))
    assert float(np.max(np.diff(traj.t))) <= 0.05 + 1e-12


def test_restart_continues_time_axis():
    sys_ = power_law_system(8, gamma=0.0)
    first = integrate(sys_, decaying_state(8), 1.5)
    second = integrate(sys_, first.final_state, 3.0)
    assert second.t_start == 1.5
    assert second.t_end == 3.0
    assert second.initial_state.t == 1.5
