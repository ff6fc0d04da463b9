"""Robust damped least-squares over the 4-DOF state [tx, ty, tz, yaw].

Minimizes sum_i rho(r_i(x)^2) by Levenberg-Marquardt on the reweighted
normal equations: each iteration solves

    (J^T W J + lam * diag(J^T W J)) delta = -J^T W r

with w_i = rho'(r_i^2), accepts the step only if the robust cost drops,
and scales the damping down on acceptance / up on rejection. The residual
provider is any callable pose -> (r, J) returning finite residuals (N,)
and Jacobians (N, 4).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import Pose4

ResidualProvider = Callable[[Pose4], tuple[np.ndarray, np.ndarray]]

# Damping beyond this means no progress is numerically possible.
_MAX_DAMPING = 1e100


class LossKind(enum.Enum):
    NONE = "none"
    CAUCHY = "cauchy"


class Termination(enum.Enum):
    PARAM_TOL = "param_tol"
    COST_TOL = "cost_tol"
    MAX_ITER = "max_iter"
    NUMERICAL_FAILURE = "numerical_failure"


def cauchy_rho(s, scale: float) -> tuple[np.ndarray, np.ndarray]:
    """Cauchy robust cost and derivative for squared residual(s) ``s``.

    rho(s) = c^2 * log(1 + s/c^2) with c = scale; rho'(s) = 1/(1 + s/c^2).
    The derivative is the per-residual weight in the reweighted system:
    1 at zero residual, decaying toward 0 as the residual grows, which is
    what suppresses unmapped clutter.
    """
    if not scale > 0.0:
        raise ValueError(f"scale must be positive, got {scale}")
    s = np.asarray(s, dtype=np.float64)
    c2 = scale * scale
    t = s / c2
    return c2 * np.log1p(t), 1.0 / (1.0 + t)


@dataclass(frozen=True)
class RobustLoss:
    """Loss applied to each squared residual: plain quadratic or Cauchy."""

    kind: LossKind = LossKind.CAUCHY
    scale: float = 0.1

    def __post_init__(self):
        if not isinstance(self.kind, LossKind):
            object.__setattr__(self, "kind", LossKind(self.kind))
        if self.kind is LossKind.CAUCHY and not self.scale > 0.0:
            raise ValueError(f"Cauchy loss needs a positive scale, got {self.scale}")

    def cost_and_weights(self, r: np.ndarray) -> tuple[float, np.ndarray]:
        s = r * r
        if self.kind is LossKind.NONE:
            return float(s.sum()), np.ones_like(s)
        rho, w = cauchy_rho(s, self.scale)
        return float(rho.sum()), w


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 50
    param_tolerance: float = 1e-6
    cost_tolerance: float = 1e-8
    initial_damping: float = 1e-4
    damping_increase: float = 10.0
    damping_decrease: float = 0.5

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        for name in ("param_tolerance", "cost_tolerance", "initial_damping"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if not self.damping_increase > 1.0:
            raise ValueError("damping_increase must exceed 1")
        if not 0.0 < self.damping_decrease < 1.0:
            raise ValueError("damping_decrease must lie in (0, 1)")


@dataclass(frozen=True)
class SolveReport:
    final_params: Pose4
    initial_cost: float
    final_cost: float
    iterations: int
    converged: bool
    termination: Termination


def _evaluate(residuals: ResidualProvider, x: np.ndarray, loss: RobustLoss):
    pose = Pose4.from_array(x)
    r, jac = residuals(pose)
    r = np.asarray(r, dtype=np.float64)
    jac = np.asarray(jac, dtype=np.float64)
    cost, w = loss.cost_and_weights(r)
    return pose, r, jac, cost, w


def solve_lm(
    residuals: ResidualProvider,
    x0: Pose4,
    loss: RobustLoss = RobustLoss(),
    opts: SolverOptions = SolverOptions(),
) -> SolveReport:
    """Run the damped iteration from ``x0`` until a tolerance or budget hits.

    Accepted robust costs are strictly decreasing; yaw is re-wrapped after
    every accepted step (Pose4 wraps on construction). Deterministic:
    identical inputs produce a bitwise identical report.
    """
    x = x0.as_array()
    pose, r, jac, cost, w = _evaluate(residuals, x, loss)
    initial_cost = cost
    if not np.isfinite(cost):
        return SolveReport(pose, initial_cost, cost, 0, False, Termination.NUMERICAL_FAILURE)

    lam = opts.initial_damping
    iterations = 0
    termination = Termination.MAX_ITER
    for _ in range(opts.max_iterations):
        iterations += 1
        wj = jac * w[:, None]
        normal = wj.T @ jac
        gradient = jac.T @ (w * r)
        if not (np.isfinite(normal).all() and np.isfinite(gradient).all()):
            termination = Termination.NUMERICAL_FAILURE
            break
        damp_scale = np.maximum(np.diag(normal), 1e-12)

        step_done = False
        while not step_done:
            try:
                delta = np.linalg.solve(normal + lam * np.diag(damp_scale), -gradient)
            except np.linalg.LinAlgError:
                delta = None
            if delta is None or not np.isfinite(delta).all():
                lam *= opts.damping_increase
                if lam > _MAX_DAMPING:
                    termination = Termination.NUMERICAL_FAILURE
                    step_done = True
                continue

            if np.abs(delta).max() < opts.param_tolerance:
                # The admissible step is below resolution: converged (this
                # also catches a rejected-step spiral, where lam blows up
                # and delta shrinks to nothing).
                termination = Termination.PARAM_TOL
                step_done = True
                continue

            pose_new, r_new, jac_new, cost_new, w_new = _evaluate(residuals, x + delta, loss)
            if np.isfinite(cost_new) and cost_new < cost:
                drop = cost - cost_new
                x = pose_new.as_array()
                pose, r, jac, w = pose_new, r_new, jac_new, w_new
                cost = cost_new
                lam = max(lam * opts.damping_decrease, 1e-15)
                if drop < opts.cost_tolerance * max(cost, 1e-300):
                    termination = Termination.COST_TOL
                step_done = True
            else:
                lam *= opts.damping_increase
                if lam > _MAX_DAMPING:
                    termination = Termination.NUMERICAL_FAILURE
                    step_done = True

        if termination is not Termination.MAX_ITER:
            break

    converged = termination in (Termination.PARAM_TOL, Termination.COST_TOL)
    return SolveReport(pose, initial_cost, cost, iterations, converged, termination)
