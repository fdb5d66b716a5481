"""Director fields: the helical family, the radial curl-free example, SO(3) sampling."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .grid import Grid, apply_curl, apply_div

QUAT_TOL = 1e-12


class RotationError(ValueError):
    pass


@dataclass(frozen=True)
class Rotation:
    """Unit quaternion ``(w, x, y, z)`` acting on R^3."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        norm2 = self.w**2 + self.x**2 + self.y**2 + self.z**2
        if abs(norm2 - 1.0) > QUAT_TOL:
            raise RotationError(f"quaternion is not unit: |q|^2 = {norm2!r}")

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def normalized(cls, w, x, y, z) -> "Rotation":
        q = np.array([w, x, y, z], dtype=float)
        nrm = np.linalg.norm(q)
        if nrm == 0.0 or not np.isfinite(nrm):
            raise RotationError("cannot normalize a zero quaternion")
        q = q / nrm
        return cls(*map(float, q))

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Rotation":
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        s = math.sin(0.5 * angle)
        return cls.normalized(math.cos(0.5 * angle), *(s * axis))

    @classmethod
    def from_axis_phase(cls, theta: float, phi: float, alpha: float) -> "Rotation":
        """``R_z(phi) R_y(theta) R_z(alpha)``: helix axis at polar ``theta``, azimuth ``phi``."""
        return (
            cls.from_axis_angle((0, 0, 1), phi)
            @ cls.from_axis_angle((0, 1, 0), theta)
            @ cls.from_axis_angle((0, 0, 1), alpha)
        )

    @classmethod
    def from_matrix(cls, m) -> "Rotation":
        m = np.asarray(m, dtype=float)
        tr = np.trace(m)
        # Shepperd's method; pick the largest diagonal pivot for stability
        if tr > 0:
            s = 2.0 * math.sqrt(tr + 1.0)
            q = (0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            q = ((m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
        elif m[1, 1] > m[2, 2]:
            s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
            q = ((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s)
        else:
            s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
            q = ((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s)
        return cls.normalized(*q)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w, self.x, self.y, self.z)

    def __matmul__(self, other: "Rotation") -> "Rotation":
        w1, x1, y1, z1 = self.as_tuple()
        w2, x2, y2, z2 = other.as_tuple()
        return Rotation.normalized(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def inverse(self) -> "Rotation":
        return Rotation(self.w, -self.x, -self.y, -self.z)

    def matrix(self) -> np.ndarray:
        w, x, y, z = self.as_tuple()
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Rotate vectors stored along the last axis."""
        return np.asarray(v) @ self.matrix().T

    @property
    def helix_axis(self) -> np.ndarray:
        return self.matrix()[:, 2]

    def to_json(self) -> list[float]:
        return [float(c) for c in self.as_tuple()]

    @classmethod
    def from_json(cls, data) -> "Rotation":
        # stored values are already unit; keep them bit-exact
        try:
            return cls(*map(float, data))
        except RotationError:
            return cls.normalized(*data)


@dataclass(frozen=True)
class HelicalSpec:
    rotation: Rotation
    tau: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")


def helical_at(points: np.ndarray, rotation: Rotation, tau: float) -> np.ndarray:
    """``Q n_tau(Q^T x)`` at arbitrary points (last axis = coordinates)."""
    Q = rotation.matrix()
    s = np.asarray(points) @ Q[:, 2]  # (Q^T x)_3
    local = np.stack([np.cos(tau * s), np.sin(tau * s), np.zeros_like(s)], axis=-1)
    out = local @ Q.T
    # the rotated vector is unit up to rounding; renormalize to keep |n| = 1 to ~1e-16
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def helical_field(spec: HelicalSpec, grid: Grid) -> np.ndarray:
    return helical_at(grid.coords, spec.rotation, spec.tau)


@dataclass(frozen=True)
class CtauReport:
    curl_residual: float
    div_residual: float
    norm_residual: float

    def to_json(self) -> dict:
        return {
            "curl_residual": self.curl_residual,
            "div_residual": self.div_residual,
            "norm_residual": self.norm_residual,
        }


def verify_ctau(n: np.ndarray, tau: float, grid: Grid) -> CtauReport:
    """Max-norm residuals of ``curl n + tau n = 0``, ``div n = 0`` and ``|n| = 1``."""
    n = grid.check_vector(n)
    curl = apply_curl(n, grid) + tau * n
    return CtauReport(
        curl_residual=float(np.max(np.linalg.norm(curl, axis=-1))),
        div_residual=float(np.max(np.abs(apply_div(n, grid)))),
        norm_residual=float(np.max(np.abs(np.linalg.norm(n, axis=-1) - 1.0))),
    )


def radial_field(a, grid: Grid) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    # distance from a to the closed cube
    gap = np.linalg.norm(np.maximum(np.abs(a) - 0.5 * grid.L, 0.0))
    if gap <= 0.0:
        raise ValueError(f"centre {a.tolist()} lies in the closed cube of side {grid.L}")
    d = grid.coords - a
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def so3_sample_angles(resolution: tuple[int, int, int]) -> list[tuple[float, float, float]]:
    """``(polar, azimuth, phase)`` triples behind :func:`so3_sample`, same order."""
    n_pol, n_az, n_ph = (int(r) for r in resolution)
    if min(n_pol, n_az, n_ph) < 1:
        raise ValueError(f"all sample counts must be >= 1, got {resolution}")
    thetas = [0.0] if n_pol == 1 else [0.5 * math.pi * k / (n_pol - 1) for k in range(n_pol)]
    phis = [2.0 * math.pi * k / n_az for k in range(n_az)]
    alphas = [2.0 * math.pi * k / n_ph for k in range(n_ph)]
    return list(itertools.product(thetas, phis, alphas))


def so3_sample(resolution: tuple[int, int, int]) -> list[Rotation]:
    """Deterministic axis x phase grid of helix orientations.

    Axes cover the closed upper hemisphere on a latitude-longitude grid
    (polar angles ``k*(pi/2)/(n_polar-1)``), phases are ``2*pi*j/n_phase``.
    Antipodal axes give the same field family, so the lower hemisphere is skipped.
    """
    return [Rotation.from_axis_phase(*ang) for ang in so3_sample_angles(resolution)]


def cube_symmetries() -> list[Rotation]:
    """The 24 proper rotations mapping the cube (and a centred grid) onto itself."""
    out = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            m = np.zeros((3, 3))
            for i, j in enumerate(perm):
                m[i, j] = signs[i]
            if np.linalg.det(m) > 0:
                out.append(Rotation.from_matrix(m))
    return out
