import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from agile_mpc.attitude import IDENTITY, quat_error, quat_from_axis_angle
from agile_mpc.nmpc import (
    NMPC,
    NmpcConfig,
    ShootingTrajectory,
    discrete_dynamics,
    rollout,
    rollout_cost,
    shooting_jacobians,
    target_steps,
)
from agile_mpc.plant import INERTIA, ActuatorLimits, NoiseConfig, Plant, PlantState, rk4

LIM = ActuatorLimits()
J_INV = np.linalg.inv(INERTIA)


def state(q=IDENTITY, w=(0, 0, 0), h=(0, 0, 0)):
    return np.concatenate([q, w, h]).astype(float)


def test_config_defaults():
    cfg = NmpcConfig()
    assert (cfg.N, cfg.weight, cfg.max_sqp_iters, cfg.step_tolerance) == (10, 10.0, 5, 1e-6)
    with pytest.raises(ValueError):
        NmpcConfig(max_sqp_iters=0)


def test_rollout_cost_examples():
    cfg = NmpcConfig(N=1)
    S = np.zeros((2, 10))
    S[:, 0] = 1.0
    assert rollout_cost(ShootingTrajectory(S, np.zeros((1, 3))), cfg) == 0.0
    S[0, 1] = 0.1
    assert rollout_cost(ShootingTrajectory(S, np.zeros((1, 3))), cfg) == pytest.approx(0.01)
    S[0, 1] = 0.0
    assert rollout_cost(ShootingTrajectory(S, np.array([[1e-3, 0, 0]])), cfg) == pytest.approx(1e-5)


def test_dynamics_at_rest_are_unchanged():
    q, w, h = discrete_dynamics(IDENTITY, np.zeros(3), np.zeros(3), np.zeros(3), 2.0)
    np.testing.assert_array_equal(q, IDENTITY)
    assert not w.any() and not h.any()


@given(st.integers(0, 2**32 - 1))
def test_dynamics_match_the_plant(seed):
    rng = np.random.default_rng(seed)
    q0 = quat_from_axis_angle(rng.standard_normal(3), rng.uniform(0, 1))
    w0 = rng.standard_normal(3) * 0.02
    h0 = rng.uniform(-5e-3, 5e-3, 3)
    T = rng.uniform(-1e-3, 1e-3, 3)
    p = Plant(PlantState(q0, w0, h0), noise=NoiseConfig.off())
    p.step(T, 2.0)
    q_t = quat_from_axis_angle([0.3, 0.2, 1.0], 0.4)
    q, w, h = discrete_dynamics(quat_error(q0, q_t), w0, h0, T, 2.0)
    np.testing.assert_allclose(q, quat_error(p.state.q, q_t), atol=1e-10)
    np.testing.assert_allclose(w, p.state.omega, atol=1e-10)
    np.testing.assert_allclose(h, p.state.h_rw, atol=1e-10)


def test_target_steps_track_a_moving_target():
    q_t = np.array([quat_from_axis_angle([0, 0, 1], 0.01 * k) for k in range(3)])
    q0 = quat_from_axis_angle([1, 0, 0], 0.2)
    w0 = np.array([0.01, 0.0, 0.02])
    T = np.array([1e-4, 0, 0])
    steps = target_steps(q_t)
    q1, w1, _ = discrete_dynamics(quat_error(q0, q_t[0]), w0, np.zeros(3), T, 2.0, target_step=steps[0])
    p = Plant(PlantState(q0, w0), noise=NoiseConfig.off())
    p.step(T, 2.0)
    np.testing.assert_allclose(q1, quat_error(p.state.q, q_t[1]) * np.sign(q1[0]), atol=1e-10)


def test_integrator_order():
    s = state(quat_from_axis_angle([1, 2, 0], 0.3), (0.03, -0.02, 0.05), (1e-3, 0, -2e-3))
    T = np.array([1e-3, -1e-3, 5e-4])

    def one_step(dt, substeps=1):
        return np.concatenate(rk4(s[:4], s[4:7], s[7:], T, dt, INERTIA, J_INV, substeps))

    def reference(dt):
        return one_step(dt, substeps=512)

    errs = [np.abs(one_step(dt) - reference(dt)).max() for dt in (4.0, 2.0, 1.0)]
    assert errs[0] / errs[1] > 16 and errs[1] / errs[2] > 16


def test_jacobians_are_consistent_across_perturbation_sizes():
    rng = np.random.default_rng(0)
    N = 4
    U = rng.uniform(-1e-3, 1e-3, (N, 3))
    S = rollout(state(quat_from_axis_angle([1, 0, 1], 0.3), (0.01, 0, -0.02)), U, 2.0, INERTIA, J_INV)
    _, A1, B1 = shooting_jacobians(S, U, 2.0, INERTIA, J_INV, None, 1e-6)
    _, A2, B2 = shooting_jacobians(S, U, 2.0, INERTIA, J_INV, None, 1e-7)
    for a, b in ((A1, A2), (B1, B2)):
        assert np.abs(a - b).max() <= 1e-4 * np.abs(a).max()


def test_at_target_gives_no_torque():
    T = NMPC().step(IDENTITY, np.zeros(3), np.zeros(3), IDENTITY)
    assert np.linalg.norm(T) < 1e-6


@settings(max_examples=15)
@given(st.integers(0, 2**32 - 1))
def test_solutions_respect_limits(seed):
    rng = np.random.default_rng(seed)
    c = NMPC()
    q = quat_from_axis_angle(rng.standard_normal(3), rng.uniform(0, np.radians(60)))
    h = rng.uniform(0.8 * LIM.h_min, 0.8 * LIM.h_max)
    c.step(q, rng.standard_normal(3) * 0.01, h, IDENTITY)
    tr = c.trajectory
    assert np.all(tr.controls <= LIM.t_max + 1e-8) and np.all(tr.controls >= LIM.t_min - 1e-8)
    if c.status == "optimal":
        assert np.all(tr.h_rw <= LIM.h_max + 1e-6) and np.all(tr.h_rw >= LIM.h_min - 1e-6)
    assert c.defect < 1e-6 or c.sqp_iterations == c.cfg.max_sqp_iters
    np.testing.assert_allclose(np.linalg.norm(tr.q_e, axis=1), 1.0, atol=1e-9)


def test_two_step_problem_beats_grid_search():
    J = np.diag([0.2912908, 0.2837495, 0.3940411])
    Ji = np.linalg.inv(J)
    cfg = NmpcConfig(N=2)
    s0 = state(quat_from_axis_angle([1, 0, 0], np.radians(0.5)), (-2e-3, 0, 0))
    sol = NMPC(cfg, J).solve(s0, IDENTITY)
    cost = rollout_cost(ShootingTrajectory(rollout(s0, sol.controls, 2.0, J, Ji), sol.controls), cfg)
    grid = np.linspace(LIM.t_min[0], LIM.t_max[0], 101)
    best = np.inf
    for a in grid:
        for b in grid:
            U = np.array([[a, 0, 0], [b, 0, 0]])
            best = min(best, rollout_cost(ShootingTrajectory(rollout(s0, U, 2.0, J, Ji), U), cfg))
    assert cost <= best + 1e-8


def test_static_target_warm_start_converges_fast():
    p = Plant(PlantState(q=quat_from_axis_angle([1, 1, 0], np.radians(20))), noise=NoiseConfig.off())
    c = NMPC()
    iters = []
    for _ in range(15):
        m = p.measure()
        T = c.step(m.q_meas, m.omega_meas, m.h_rw_meas, IDENTITY)
        iters.append(c.sqp_iterations)
        p.step(T, 2.0)
        assert c.defect < 1e-6
    assert max(iters[3:]) <= 2
    assert c.cost_increases == 0


def test_cost_does_not_increase_over_iterations():
    c = NMPC()
    c.solve(state(quat_from_axis_angle([0, 1, 0], np.radians(10))), IDENTITY)
    hist = np.array(c.cost_history)
    assert np.all(np.diff(hist) <= 1e-12)


def test_horizon_with_moving_target():
    c = NMPC()
    q_t = np.array([quat_from_axis_angle([0, 0, 1], np.radians(0.5 * k)) for k in range(11)])
    T = c.step(q_t[0], np.zeros(3), np.zeros(3), q_t)
    # the target turns about +z, so the wheels must spin the body the same way
    assert T[2] > 0
    frozen = NMPC().step(q_t[0], np.zeros(3), np.zeros(3), q_t[0])
    assert np.linalg.norm(frozen) < 1e-6
