"""Batch Levenberg-Marquardt over a pose/quadric factor graph.

Damped normal equations with diagonal scaling, solved sparsely; accepted
steps never increase the whitened cost. Poses update on the SE(2) tangent
(additive with angle wrap), quadrics additively in their 9-vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .factors import FactorGraph, GraphEvaluator, _wrap

__all__ = [
    "SolverConfig",
    "SolveReport",
    "LinearSolveError",
    "linear_step",
    "solve",
]

_LAMBDA_MAX = 1e12
# Step-stagnation scale: steps this small relative to the variables cannot
# change the cost; treated as cost convergence.
_STEP_TOL = 1e-14


class LinearSolveError(RuntimeError):
    """The damped normal equations were singular or produced non-finite values."""


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 100
    initial_lambda: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 0.1
    rel_cost_tol: float = 1e-8
    grad_tol: float = 1e-10

    def __post_init__(self):
        if self.max_iterations <= 0:
            raise ValueError("max_iterations must be positive")
        if self.initial_lambda < 0:
            raise ValueError("initial_lambda must be nonnegative")
        if not (self.lambda_up > 1.0 > self.lambda_down > 0.0):
            raise ValueError("need lambda_up > 1 > lambda_down > 0")
        if self.rel_cost_tol <= 0 or self.grad_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    initial_cost: float
    final_cost: float
    converged: bool
    termination_reason: str  # cost-tol | grad-tol | max-iters | stalled


def linear_step(J, r: np.ndarray, lam: float) -> np.ndarray:
    """One damped Gauss-Newton step: solve (J^T J + lam diag(J^T J)) d = -J^T r.

    Accepts a dense or scipy-sparse Jacobian. lam = 0 gives the plain
    Gauss-Newton step.

    Raises:
        LinearSolveError: singular system or non-finite solution.
    """
    if lam < 0:
        raise ValueError("damping must be nonnegative")
    if not sp.issparse(J):
        J = sp.csr_matrix(np.asarray(J, dtype=float))
    JtJ = (J.T @ J).tocsc()
    g = J.T @ r
    M = JtJ + sp.diags(lam * JtJ.diagonal(), format="csc")
    try:
        delta = spla.splu(M).solve(-g)
    except RuntimeError as exc:
        raise LinearSolveError(f"damped normal equations not solvable: {exc}") from exc
    if not np.all(np.isfinite(delta)):
        raise LinearSolveError("linear solve produced non-finite update")
    return delta


def _retract(poses: np.ndarray, quadrics: np.ndarray, delta: np.ndarray):
    n = poses.shape[0]
    new_poses = poses + delta[: 3 * n].reshape(n, 3)
    new_poses[:, 2] = _wrap(new_poses[:, 2])
    new_quadrics = quadrics + delta[3 * n :].reshape(-1, 9)
    return new_poses, new_quadrics


def solve(graph: FactorGraph, config: SolverConfig | None = None):
    """Minimize the graph's whitened least-squares cost with LM.

    Returns:
        (updated_graph, SolveReport): a copy of the graph carrying the
        optimized variables, and the solve diagnostics.
    """
    config = config or SolverConfig()
    ev = GraphEvaluator(graph)
    poses = graph.pose_array()
    quadrics = graph.quadric_array()

    r = ev.residual(poses, quadrics)
    cost = 0.5 * float(r @ r)
    initial_cost = cost
    lam = config.initial_lambda
    iterations = 0
    converged = False
    reason = "max-iters"

    for _ in range(config.max_iterations):
        J = ev.jacobian(poses, quadrics)
        grad = np.abs(J.T @ r).max() if J.nnz else 0.0
        if grad < config.grad_tol:
            converged = True
            reason = "grad-tol"
            break

        scale = 1.0 + max(
            np.abs(poses).max() if poses.size else 0.0,
            np.abs(quadrics).max() if quadrics.size else 0.0,
        )
        accepted = False
        stalled = False
        stagnated = False
        escalated = False
        while True:
            try:
                delta = linear_step(J, r, lam)
            except LinearSolveError:
                stalled = True
                break
            if np.abs(delta).max() <= _STEP_TOL * scale:
                stagnated = True
                break
            cand_poses, cand_quadrics = _retract(poses, quadrics, delta)
            cand_r = ev.residual(cand_poses, cand_quadrics)
            cand_cost = 0.5 * float(cand_r @ cand_r)
            if np.isfinite(cand_cost) and cand_cost < cost:
                accepted = True
                break
            escalated = True
            lam *= config.lambda_up
            if lam > _LAMBDA_MAX:
                stalled = True
                break

        if stagnated:
            converged = True
            reason = "cost-tol"
            break
        if stalled:
            reason = "stalled"
            break

        if accepted:
            drop = cost - cand_cost
            poses, quadrics, r, cost = cand_poses, cand_quadrics, cand_r, cand_cost
            lam *= config.lambda_down
            iterations += 1
            # A tiny drop only signals convergence when the step was taken
            # at the current damping; steps crippled by in-iteration lambda
            # escalation are adaptation, not convergence.
            if not escalated and drop <= config.rel_cost_tol * max(cost, 1e-300):
                converged = True
                reason = "cost-tol"
                break

    report = SolveReport(
        iterations=iterations,
        initial_cost=initial_cost,
        final_cost=cost,
        converged=converged,
        termination_reason=reason,
    )
    return graph.with_variables(poses, quadrics), report
