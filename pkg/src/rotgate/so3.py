"""Numerically careful SO(3)/so(3) primitives.

Rotation vectors are 3-arrays ``phi = theta * psi`` with unit axis ``psi`` and
angle ``theta`` in radians.  Rotations are dense row-major 3x3 arrays acting on
column vectors from the left.  All functions are pure and never mutate their
inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    NotSkewSymmetricError,
    NumericalDomainError,
    SingularJacobianError,
)

# Small-angle crossovers chosen so the truncated series' error stays below
# double-precision roundoff at the switch point.
_EXP_SMALL_ANGLE = 1e-8
_JACOBIAN_SMALL_ANGLE = 1e-6
_AXIS_NEAR_PI = 1e-4
_DEFAULT_SKEW_TOL = 1e-9
ROTATION_TOL = 1e-9

BIJECTIVE_ANGLE_BOUND = np.pi / 2.0


def _vec3(v) -> np.ndarray:
    return np.asarray(v, dtype=float).reshape(3)


def _mat3(m) -> np.ndarray:
    return np.asarray(m, dtype=float).reshape(3, 3)


def hat(v) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector, so that ``hat(a) @ b == cross(a, b)``."""
    x, y, z = _vec3(v)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m, tol: float = _DEFAULT_SKEW_TOL) -> np.ndarray:
    """Inverse of :func:`hat`.

    Args:
        m: 3x3 matrix, skew-symmetric within ``tol``.
        tol: maximum allowed entry of ``m + m.T``.

    Returns:
        The 3-vector ``v`` with ``hat(v) == m`` (exactly, for exactly skew input).

    Raises:
        NotSkewSymmetricError: if ``m + m.T`` exceeds ``tol`` anywhere.
    """
    m = _mat3(m)
    defect = float(np.max(np.abs(m + m.T)))
    if defect > tol:
        raise NotSkewSymmetricError(
            f"matrix is not skew-symmetric: max|m + m.T| = {defect:.3e} > {tol:.3e}"
        )
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def angle_of(phi) -> float:
    """Rotation angle ``theta = ||phi||`` of a rotation vector."""
    return float(np.linalg.norm(_vec3(phi)))


def axis_of(phi) -> np.ndarray:
    """Unit rotation axis ``psi = phi / ||phi||``; undefined at the zero vector."""
    phi = _vec3(phi)
    theta = float(np.linalg.norm(phi))
    if theta == 0.0:
        raise ValueError("axis of the zero rotation vector is undefined")
    return phi / theta


def in_bijective_range(phi, bound: float = BIJECTIVE_ANGLE_BOUND) -> bool:
    """True when ``||phi|| <= bound``, the regime where exp/log invert exactly."""
    return angle_of(phi) <= bound


def exp_map(phi) -> np.ndarray:
    """Exponential map so(3) -> SO(3) (Rodrigues form).

    Uses the closed form ``cos(t) I + (1 - cos(t)) psi psi^T + sin(t) hat(psi)``
    and falls back to the second-order series ``I + hat(phi) + hat(phi)^2 / 2``
    below the small-angle crossover to avoid 0/0.
    """
    phi = _vec3(phi)
    theta = float(np.linalg.norm(phi))
    if theta < _EXP_SMALL_ANGLE:
        k = hat(phi)
        return np.eye(3) + k + 0.5 * (k @ k)
    psi = phi / theta
    c = np.cos(theta)
    s = np.sin(theta)
    return c * np.eye(3) + (1.0 - c) * np.outer(psi, psi) + s * hat(psi)


def _log_near_pi(r: np.ndarray, cos_theta: float) -> np.ndarray:
    # Near theta = pi the skew part of R vanishes; recover the axis from the
    # symmetric part psi psi^T = (R + R^T - 2 cos(t) I) / (2 (1 - cos(t))),
    # reading off the column with the largest diagonal entry.  The angle from
    # arccos is ill-conditioned here (error ~ sqrt(eps)); the skew-part norm
    # equals sin(theta) and recovers pi - theta accurately instead.
    theta = np.pi - float(np.arcsin(min(np.linalg.norm(vee(r - r.T) / 2.0), 1.0)))
    outer_part = (0.5 * (r + r.T) - cos_theta * np.eye(3)) / (1.0 - cos_theta)
    j = int(np.argmax(np.diag(outer_part)))
    pivot = np.sqrt(max(float(outer_part[j, j]), 0.0))
    axis = outer_part[:, j] / pivot
    axis = axis / np.linalg.norm(axis)
    # Sign comes from the (possibly tiny) skew part; exactly at pi both signs
    # are valid and we canonicalize deterministically.
    skew = vee(r - r.T) / 2.0
    alignment = float(skew @ axis)
    if abs(alignment) > 1e-12:
        if alignment < 0.0:
            axis = -axis
    else:
        k = int(np.argmax(np.abs(axis)))
        if axis[k] < 0.0:
            axis = -axis
    return theta * axis


def log_map(r) -> np.ndarray:
    """Logarithm map SO(3) -> so(3), returning the principal rotation vector.

    The angle is ``arccos((tr(R) - 1) / 2)`` clamped to [0, pi], except for
    small rotations where the trace loses precision (its conditioning grows as
    1/sin(theta)) and the angle is recovered from the skew part instead.  The
    axis comes from the skew part away from the endpoints and from the
    symmetric part near theta = pi; angles below the small-angle crossover
    return the zero vector.

    Raises:
        NumericalDomainError: if ``tr(R)`` lies outside [-1, 3] beyond 1e-9.
    """
    r = _mat3(r)
    tr = float(np.trace(r))
    if tr < -1.0 - 1e-9 or tr > 3.0 + 1e-9:
        raise NumericalDomainError(f"trace {tr!r} outside the valid range [-1, 3]")
    cos_theta = min(1.0, max(-1.0, (tr - 1.0) / 2.0))
    theta = float(np.arccos(cos_theta))
    if theta > np.pi - _AXIS_NEAR_PI:
        return _log_near_pi(r, cos_theta)
    skew = vee(r - r.T, tol=np.inf) / 2.0  # equals sin(theta) * axis
    sin_theta = float(np.linalg.norm(skew))
    if theta < 1e-2:
        theta = float(np.arcsin(min(sin_theta, 1.0)))
    if theta < _EXP_SMALL_ANGLE:
        return np.zeros(3)
    return theta * (skew / sin_theta)


def left_jacobian(phi) -> np.ndarray:
    """Left Jacobian of SO(3), the series sum of ``hat(phi)^n / (n+1)!``.

    The closed form ``(sin t / t) I + (1 - sin t / t) psi psi^T
    + ((1 - cos t) / t) hat(psi)`` applies above the crossover; below it the
    first-order series ``I + hat(phi) / 2`` is used.
    """
    phi = _vec3(phi)
    theta = float(np.linalg.norm(phi))
    if theta < _JACOBIAN_SMALL_ANGLE:
        return np.eye(3) + 0.5 * hat(phi)
    psi = phi / theta
    a = np.sin(theta) / theta
    # 2 sin^2(t/2) = 1 - cos(t) without the cancellation that loses the
    # skew coefficient near the series crossover.
    b = 2.0 * np.sin(theta / 2.0) ** 2 / theta
    return a * np.eye(3) + (1.0 - a) * np.outer(psi, psi) + b * hat(psi)


def left_jacobian_inv(phi) -> np.ndarray:
    """Matrix inverse of :func:`left_jacobian`.

    Raises:
        SingularJacobianError: when the angle is within 1e-6 of a full turn,
            where the Jacobian loses rank.
    """
    phi = _vec3(phi)
    theta = float(np.linalg.norm(phi))
    if theta >= 2.0 * np.pi - _JACOBIAN_SMALL_ANGLE:
        raise SingularJacobianError(
            f"left Jacobian is singular at angle {theta!r} (full turn)"
        )
    return np.linalg.inv(left_jacobian(phi))


def bch_compose_left(delta_phi, phi) -> np.ndarray:
    """First-order left BCH composition ``log(exp(delta^) exp(phi^))``.

    Returns ``phi + J_l(phi)^{-1} delta_phi``; accurate to second order in
    ``||delta_phi||``.
    """
    return _vec3(phi) + left_jacobian_inv(phi) @ _vec3(delta_phi)


def rotate_point(r, p) -> np.ndarray:
    """Apply a rotation matrix to a 3D point."""
    return _mat3(r) @ _vec3(p)


def perturbation_derivative(r, p) -> np.ndarray:
    """Derivative of ``exp(d^) R p`` with respect to the left perturbation d at 0.

    Equals ``-hat(R p)``.
    """
    return -hat(_mat3(r) @ _vec3(p))


def orthogonality_defect(r) -> float:
    """Max-norm of ``R R^T - I``."""
    r = _mat3(r)
    return float(np.max(np.abs(r @ r.T - np.eye(3))))


def is_rotation(r, tol: float = ROTATION_TOL) -> bool:
    """Check the SO(3) membership invariants within ``tol``."""
    r = _mat3(r)
    return orthogonality_defect(r) <= tol and abs(float(np.linalg.det(r)) - 1.0) <= tol


def project_to_rotation(m) -> np.ndarray:
    """Nearest rotation matrix in Frobenius norm (polar projection via SVD)."""
    u, _, vt = np.linalg.svd(_mat3(m))
    r = u @ vt
    if np.linalg.det(r) < 0.0:
        u = u.copy()
        u[:, -1] *= -1.0
        r = u @ vt
    return r


def geodesic_distance(r_a, r_b) -> float:
    """Angle of the relative rotation between two rotation matrices."""
    return angle_of(log_map(_mat3(r_a).T @ _mat3(r_b)))


def _bracket(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


@dataclass(frozen=True)
class AlgebraPropertyReport:
    """Maximum violations of the four so(3) algebra properties over random trials."""

    seed: int
    trials: int
    closure: float
    alternativity: float
    jacobi: float
    bilinearity: float

    def max_violation(self) -> float:
        return max(self.closure, self.alternativity, self.jacobi, self.bilinearity)

    def within(self, bound: float) -> bool:
        return self.max_violation() <= bound


def check_algebra_properties(seed: int, trials: int) -> AlgebraPropertyReport:
    """Probe closure, alternativity, the Jacobi identity and bilinearity.

    Draws ``trials`` random vector triples and scalar pairs and records the
    worst max-norm violation of each identity under the commutator bracket.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    worst = {"closure": 0.0, "alternativity": 0.0, "jacobi": 0.0, "bilinearity": 0.0}
    for _ in range(trials):
        a, b, c = rng.standard_normal((3, 3))
        alpha, beta = rng.standard_normal(2)
        ah, bh, ch = hat(a), hat(b), hat(c)
        closure = np.max(np.abs(_bracket(ah, bh) - hat(np.cross(a, b))))
        alternativity = np.max(np.abs(_bracket(ah, ah)))
        jacobi = np.max(
            np.abs(
                _bracket(ah, _bracket(bh, ch))
                + _bracket(ch, _bracket(ah, bh))
                + _bracket(bh, _bracket(ch, ah))
            )
        )
        bilinearity = np.max(
            np.abs(
                _bracket(hat(alpha * a + beta * b), ch)
                - alpha * _bracket(ah, ch)
                - beta * _bracket(bh, ch)
            )
        )
        worst["closure"] = max(worst["closure"], float(closure))
        worst["alternativity"] = max(worst["alternativity"], float(alternativity))
        worst["jacobi"] = max(worst["jacobi"], float(jacobi))
        worst["bilinearity"] = max(worst["bilinearity"], float(bilinearity))
    return AlgebraPropertyReport(seed=seed, trials=trials, **worst)
