"""Minimization of scalar objectives over SO(3) via left-multiplied exponential steps.

Each iteration picks the increment ``delta_phi = -alpha D grad`` in the tangent
space and updates ``R <- exp(delta_phi^) R``, so every iterate stays on the
manifold by construction.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import so3
from .errors import EmptyInputError, LengthMismatchError, NonFiniteObjectiveError

_NUMERIC_GRAD_STEP = 1e-5


@dataclass(frozen=True)
class RotationObjective:
    """Evaluation contract for a scalar objective on SO(3).

    ``value`` maps a rotation matrix to a real number.  ``gradient``, when
    provided, returns the tangent-space gradient: the 3-vector ``g`` with
    ``u(exp(d^) R) ~= u(R) + g . d`` for small ``d``.  Alignment-structured
    objectives also carry their point sets.
    """

    value: Callable[[np.ndarray], float]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    points_src: Optional[np.ndarray] = None
    points_dst: Optional[np.ndarray] = None


@dataclass
class OptimizerConfig:
    """Step size, metric, iteration budget and stopping tolerances.

    ``d_matrix`` must be symmetric positive-definite; the default identity
    gives plain tangent-space gradient descent.  ``backtrack`` halves the step
    (up to ``max_backtracks`` times) whenever a trial step would increase the
    objective, which keeps the recorded objective sequence non-increasing.
    """

    alpha: float = 0.1
    d_matrix: np.ndarray = field(default_factory=lambda: np.eye(3))
    max_iters: int = 1000
    grad_tol: float = 1e-9
    step_tol: float = 1e-12
    backtrack: bool = True
    max_backtracks: int = 20

    def validate(self) -> None:
        if not self.alpha > 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha!r}")
        d = np.asarray(self.d_matrix, dtype=float).reshape(3, 3)
        if np.max(np.abs(d - d.T)) > 1e-12:
            raise ValueError("d_matrix must be symmetric")
        if float(np.min(np.linalg.eigvalsh(d))) <= 0.0:
            raise ValueError("d_matrix must be positive-definite")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")


class StopReason(enum.Enum):
    GRAD_TOL = "grad_tol"
    STEP_TOL = "step_tol"
    MAX_ITERS = "max_iters"


@dataclass
class OptimizerTrace:
    """Accepted iterates as (rotation, objective value, gradient norm) triples."""

    iterates: list
    converged: bool
    reason: StopReason

    @property
    def final_rotation(self) -> np.ndarray:
        return self.iterates[-1][0]

    @property
    def final_value(self) -> float:
        return self.iterates[-1][1]

    @property
    def values(self) -> list:
        return [u for _, u, _ in self.iterates]


def perturbation_step(r, delta, cfg: OptimizerConfig) -> np.ndarray:
    """One update ``exp((-alpha D delta)^) R``.

    The result is re-orthonormalized through the polar projection whenever
    floating-point drift pushes the orthogonality defect past 1e-12.
    """
    r = np.asarray(r, dtype=float).reshape(3, 3)
    d = np.asarray(cfg.d_matrix, dtype=float).reshape(3, 3)
    step = -cfg.alpha * (d @ np.asarray(delta, dtype=float).reshape(3))
    out = so3.exp_map(step) @ r
    if so3.orthogonality_defect(out) > 1e-12:
        out = so3.project_to_rotation(out)
    return out


def numeric_gradient(obj: RotationObjective, r, h: float = _NUMERIC_GRAD_STEP) -> np.ndarray:
    """Central-difference tangent gradient over the three basis perturbations."""
    if not 0.0 < h <= 1e-2:
        raise ValueError(f"step h must lie in (0, 1e-2], got {h!r}")
    r = np.asarray(r, dtype=float).reshape(3, 3)
    grad = np.zeros(3)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        up = obj.value(so3.exp_map(e) @ r)
        dn = obj.value(so3.exp_map(-e) @ r)
        grad[k] = (up - dn) / (2.0 * h)
    return grad


def _gradient_of(obj: RotationObjective, r: np.ndarray) -> np.ndarray:
    if obj.gradient is not None:
        return np.asarray(obj.gradient(r), dtype=float).reshape(3)
    return numeric_gradient(obj, r)


def minimize(obj: RotationObjective, r0, cfg: OptimizerConfig) -> OptimizerTrace:
    """Iterate ``delta_phi = -alpha D grad`` until a stopping criterion fires.

    Stops when the gradient norm drops below ``grad_tol``, the applied step
    norm drops below ``step_tol`` (also when backtracking cannot find a
    decreasing step), or the iteration budget runs out.  Raises
    NonFiniteObjectiveError if the objective turns NaN or infinite at an
    accepted iterate.
    """
    cfg.validate()
    r = np.asarray(r0, dtype=float).reshape(3, 3).copy()
    d = np.asarray(cfg.d_matrix, dtype=float).reshape(3, 3)
    iterates = []

    u = float(obj.value(r))
    if not np.isfinite(u):
        raise NonFiniteObjectiveError(f"objective is {u!r} at the initial rotation")
    grad = _gradient_of(obj, r)
    iterates.append((r, u, float(np.linalg.norm(grad))))

    for _ in range(cfg.max_iters):
        if np.linalg.norm(grad) <= cfg.grad_tol:
            return OptimizerTrace(iterates, True, StopReason.GRAD_TOL)

        alpha = cfg.alpha
        direction = d @ grad
        # Sufficient-decrease acceptance: plain "any decrease" admits steps at
        # the curvature stability boundary, where one mode oscillates without
        # contracting and the iteration stalls.
        slope = float(grad @ direction)

        def acceptable(trial_alpha: float, value: float) -> bool:
            return np.isfinite(value) and value <= u - 0.5 * trial_alpha * slope

        candidate = so3.exp_map(-alpha * direction) @ r
        u_cand = float(obj.value(candidate))
        halvings = 0
        while (
            cfg.backtrack
            and not acceptable(alpha, u_cand)
            and halvings < cfg.max_backtracks
        ):
            alpha *= 0.5
            candidate = so3.exp_map(-alpha * direction) @ r
            u_cand = float(obj.value(candidate))
            halvings += 1
        if cfg.backtrack and u_cand > u:
            # No decreasing step exists at the smallest trial size.
            return OptimizerTrace(iterates, True, StopReason.STEP_TOL)
        if not np.isfinite(u_cand):
            raise NonFiniteObjectiveError(f"objective is {u_cand!r} after a step")

        if so3.orthogonality_defect(candidate) > 1e-12:
            candidate = so3.project_to_rotation(candidate)
        r, u = candidate, u_cand
        grad = _gradient_of(obj, r)
        iterates.append((r, u, float(np.linalg.norm(grad))))

        if float(np.linalg.norm(alpha * direction)) <= cfg.step_tol:
            return OptimizerTrace(iterates, True, StopReason.STEP_TOL)

    converged = float(np.linalg.norm(grad)) <= cfg.grad_tol
    reason = StopReason.GRAD_TOL if converged else StopReason.MAX_ITERS
    return OptimizerTrace(iterates, converged, reason)


def wahba_objective(points_src, points_dst) -> RotationObjective:
    """Least-squares alignment objective ``u(R) = sum ||R p_i - q_i||^2``.

    Ships an analytic tangent gradient ``2 sum (R p_i) x (R p_i - q_i)`` built
    on the left-perturbation derivative.  Point pairs are canonicalized into a
    fixed order first so the result is invariant under input relabeling.
    """
    src = np.asarray(points_src, dtype=float).reshape(-1, 3)
    dst = np.asarray(points_dst, dtype=float).reshape(-1, 3)
    if src.shape[0] != dst.shape[0]:
        raise LengthMismatchError(
            f"point lists differ in length: {src.shape[0]} vs {dst.shape[0]}"
        )
    if src.shape[0] == 0:
        raise EmptyInputError("point lists must be nonempty")
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
        raise ValueError("points must be finite")

    order = np.lexsort(np.hstack([src, dst]).T[::-1])
    src = src[order]
    dst = dst[order]

    def value(r: np.ndarray) -> float:
        residual = src @ np.asarray(r, dtype=float).T - dst
        return float(np.sum(residual * residual))

    def gradient(r: np.ndarray) -> np.ndarray:
        rotated = src @ np.asarray(r, dtype=float).T
        residual = rotated - dst
        return 2.0 * np.sum(np.cross(rotated, residual), axis=0)

    return RotationObjective(
        value=value, gradient=gradient, points_src=src, points_dst=dst
    )
