"""SE(3) rigid transforms: twist hat operator, exponential and logarithm maps.

Twists are 6-arrays ``xi = (rho, phi)`` with the translation part first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import so3
from .errors import ShapeMismatchError


def _twist(xi) -> np.ndarray:
    return np.asarray(xi, dtype=float).reshape(6)


@dataclass(frozen=True)
class Transform:
    """Rigid transform with rotation block ``r`` and translation ``t``.

    The implied 4x4 matrix has bottom row (0, 0, 0, 1) by construction; the
    rotation block is validated on creation.
    """

    r: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float).reshape(3, 3)
        t = np.asarray(self.t, dtype=float).reshape(3)
        if not so3.is_rotation(r):
            raise ShapeMismatchError(
                f"rotation block fails SO(3) invariants "
                f"(orthogonality defect {so3.orthogonality_defect(r):.3e})"
            )
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "Transform":
        return cls(np.eye(3), np.zeros(3))

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.r
        m[:3, 3] = self.t
        return m

    def apply(self, p) -> np.ndarray:
        """Act on a 3D point: ``R p + t``."""
        return self.r @ np.asarray(p, dtype=float).reshape(3) + self.t


def twist_hat(xi) -> np.ndarray:
    """4x4 matrix form of a twist: ``[[hat(phi), rho], [0, 0]]``."""
    xi = _twist(xi)
    m = np.zeros((4, 4))
    m[:3, :3] = so3.hat(xi[3:])
    m[:3, 3] = xi[:3]
    return m


def se3_exp(xi) -> Transform:
    """Exponential map se(3) -> SE(3).

    The rotation block is ``exp(phi^)`` and the translation is
    ``J_l(phi) rho`` with the left Jacobian coupling the two.
    """
    xi = _twist(xi)
    rho, phi = xi[:3], xi[3:]
    return Transform(so3.exp_map(phi), so3.left_jacobian(phi) @ rho)


def se3_log(tf: Transform) -> np.ndarray:
    """Logarithm map SE(3) -> se(3), inverting :func:`se3_exp`.

    Valid for rotation angles below a full turn (raises SingularJacobianError
    at the Jacobian singularity).
    """
    phi = so3.log_map(tf.r)
    rho = so3.left_jacobian_inv(phi) @ tf.t
    return np.concatenate([rho, phi])
