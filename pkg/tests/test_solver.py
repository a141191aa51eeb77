from __future__ import annotations

import numpy as np
import pytest

from dqslam.factors import (
    FactorGraph,
    NoiseModel,
    PriorFactor,
    graph_residual,
)
from dqslam.geometry import DualQuadric, RobotPose, CameraIntrinsics, left_facing_mount
from dqslam.pipeline import build_graph, ground_truth_graph, run_trial
from dqslam.simulator import WorldConfig, generate_dataset
from dqslam.solver import LinearSolveError, SolveReport, SolverConfig, linear_step, solve


K = CameraIntrinsics(1500, 1500, 640, 512, 1280, 1024)


def priors_only_graph(rng, n_poses=4, priors_per_pose=3):
    """Affine residuals only: a genuinely linear least-squares problem."""
    poses = [RobotPose(*rng.normal(0, 0.5, 3)) for _ in range(n_poses)]
    priors = []
    for i in range(n_poses):
        for _ in range(priors_per_pose):
            priors.append(
                PriorFactor(
                    i,
                    RobotPose(*rng.normal(0, 0.5, 3)),
                    NoiseModel.diagonal(rng.uniform(0.1, 1.0, 3)),
                )
            )
    return FactorGraph(
        poses=poses,
        quadrics=[],
        intrinsics=K,
        mount=left_facing_mount(),
        prior_factors=priors,
    )


# -- linear_step ---------------------------------------------------------------

def test_linear_step_gauss_newton_matches_pseudoinverse(rng):
    for _ in range(10):
        m, n = 40, 17
        J = rng.normal(size=(m, n))
        r = rng.normal(size=m)
        delta = linear_step(J, r, lam=0.0)
        expected = -np.linalg.pinv(J) @ r
        assert np.allclose(delta, expected, atol=1e-10)


def test_linear_step_damping_shrinks_step(rng):
    J = rng.normal(size=(30, 10))
    r = rng.normal(size=30)
    norms = [np.linalg.norm(linear_step(J, r, lam)) for lam in (0, 1, 1e2, 1e4, 1e8)]
    assert all(a >= b for a, b in zip(norms, norms[1:]))
    assert norms[-1] < 1e-6 * norms[0]


def test_linear_step_zero_residual(rng):
    J = rng.normal(size=(20, 6))
    delta = linear_step(J, np.zeros(20), lam=0.1)
    assert np.allclose(delta, 0)


def test_linear_step_singular_raises(rng):
    J = np.zeros((10, 4))
    J[:, 0] = rng.normal(size=10)  # three unconstrained columns
    with pytest.raises(LinearSolveError):
        linear_step(J, rng.normal(size=10), lam=0.0)


def test_linear_step_rejects_negative_damping(rng):
    with pytest.raises(ValueError):
        linear_step(rng.normal(size=(5, 2)), rng.normal(size=5), lam=-1.0)


# -- solve ---------------------------------------------------------------------

def test_solve_linear_problem_one_iteration(rng):
    g = priors_only_graph(rng)
    solved, report = solve(g, SolverConfig(initial_lambda=0.0))
    assert report.iterations <= 2

    # dense oracle: whitened linear least squares on the stacked system
    from dqslam.factors import GraphEvaluator

    ev = GraphEvaluator(g)
    J = ev.jacobian(g.pose_array(), g.quadric_array()).toarray()
    r = ev.residual(g.pose_array(), g.quadric_array())
    x0 = np.concatenate([g.pose_array().ravel(), g.quadric_array().ravel()])
    x_opt = x0 - np.linalg.pinv(J) @ r
    x_solved = np.concatenate([solved.pose_array().ravel(), solved.quadric_array().ravel()])
    assert np.allclose(x_solved, x_opt, atol=1e-10)


def test_solve_at_ground_truth_converges_immediately(zero_noise_sensor):
    ds = generate_dataset(WorldConfig(seed=2, landmark_shape="sphere", n_landmarks=3), zero_noise_sensor)
    g = ground_truth_graph(build_graph(ds, mode="with-relpos"), ds)
    solved, report = solve(g)
    assert report.iterations <= 2
    assert report.final_cost < 1e-10
    assert report.converged


def test_solve_zero_noise_recovery(zero_noise_sensor):
    ds = generate_dataset(WorldConfig(seed=2, landmark_shape="sphere"), zero_noise_sensor)
    for mode in ("monocular", "with-relpos"):
        run = run_trial(ds, mode=mode)
        assert run.report.converged
        assert run.result.rmse_pos_slam < 1e-3
        assert run.result.rmse_lm < 5e-2


def test_solve_monotone_and_reported_costs(rng):
    ds = generate_dataset(WorldConfig(seed=4, n_landmarks=4, trajectory_length=65.0, n_loops=1),
                          __import__("dqslam.simulator", fromlist=["SensorConfig"]).SensorConfig())
    g = build_graph(ds, mode="monocular")
    _, cost0 = graph_residual(g)
    costs = []
    for k in (1, 2, 4, 8, 16):
        _, report = solve(g, SolverConfig(max_iterations=k))
        assert report.initial_cost == pytest.approx(cost0, rel=1e-12)
        assert report.final_cost <= report.initial_cost
        costs.append(report.final_cost)
    # accepted-step cost sequence is monotone in the iteration budget
    assert all(a >= b for a, b in zip(costs, costs[1:]))


def test_solve_deterministic(zero_noise_sensor):
    ds = generate_dataset(WorldConfig(seed=6, n_landmarks=3, landmark_shape="sphere"), zero_noise_sensor)
    g = build_graph(ds, mode="monocular")
    s1, r1 = solve(g)
    s2, r2 = solve(g)
    assert r1 == r2
    assert np.array_equal(s1.pose_array(), s2.pose_array())
    assert np.array_equal(s1.quadric_array(), s2.quadric_array())


def test_solve_gradient_at_grad_tol_termination(rng):
    g = priors_only_graph(rng)
    cfg = SolverConfig(grad_tol=1e-8)
    solved, report = solve(g, cfg)
    if report.termination_reason == "grad-tol":
        from dqslam.factors import GraphEvaluator

        ev = GraphEvaluator(solved)
        J = ev.jacobian(solved.pose_array(), solved.quadric_array())
        r = ev.residual(solved.pose_array(), solved.quadric_array())
        assert np.abs(J.T @ r).max() < cfg.grad_tol


def test_solve_stalls_on_unconstrained_variable(rng):
    g = priors_only_graph(rng, n_poses=2)
    g.quadrics = [DualQuadric(np.zeros(9))]  # no factor touches it
    solved, report = solve(g)
    assert report.termination_reason == "stalled"
    assert not report.converged


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(max_iterations=0)
    with pytest.raises(ValueError):
        SolverConfig(lambda_up=0.5)
    with pytest.raises(ValueError):
        SolverConfig(lambda_down=1.5)
    with pytest.raises(ValueError):
        SolverConfig(initial_lambda=-1.0)
    assert SolverConfig(initial_lambda=0.0).initial_lambda == 0.0


def test_solve_report_fields():
    r = SolveReport(3, 10.0, 1.0, True, "cost-tol")
    assert r.final_cost <= r.initial_cost
