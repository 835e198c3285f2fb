"""Polarization algebra on the Poincare sphere.

Stokes convention used throughout the package::

    S1 = |ex|^2 - |ey|^2
    S2 = 2 Re(ex ey*)
    S3 = -2 Im(ex ey*)

normalized by total power, so ``S3 > 0`` is right-circular.  Stokes vectors
are plain ``numpy`` arrays of shape ``(3,)`` (or ``(n, 3)`` for series);
rotations are ``(3, 3)`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Pauli-type matrices ordered to match the Stokes convention above:
# S_i = J^H M_i J for unit-power J.
_M1 = np.array([[1, 0], [0, -1]], dtype=complex)
_M2 = np.array([[0, 1], [1, 0]], dtype=complex)
_M3 = np.array([[0, -1j], [1j, 0]], dtype=complex)
STOKES_GENERATORS = np.stack([_M1, _M2, _M3])

NORM_TOL = 1e-9


class DegenerateFieldError(ValueError):
    """Raised for a Jones field carrying no power."""


class NormalizationError(ValueError):
    """Raised when a vector expected on the unit sphere is not unit-norm."""


class GeometryError(ValueError):
    """Raised when a perturbation is not tangent to its base point."""


@dataclass
class JonesField:
    """Two-component complex field.

    ``carrier_offset`` (rad/s, relative to the optical carrier) and
    ``common_phase`` (rad) describe the polarization-independent phase factor;
    they never influence the Stokes vector.
    """

    ex: complex
    ey: complex
    carrier_offset: float = 0.0
    common_phase: float = 0.0

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.ex, self.ey], dtype=complex)

    @property
    def power(self) -> float:
        return float(abs(self.ex) ** 2 + abs(self.ey) ** 2)


@dataclass
class SopTimeSeries:
    """Uniformly sampled sequence of unit Stokes vectors."""

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self) -> None:
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if self.samples.shape[-1] != 3:
            raise ValueError("samples must have shape (n, 3)")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        norms = np.linalg.norm(self.samples, axis=1)
        if np.any(np.abs(norms - 1.0) > NORM_TOL):
            raise NormalizationError("every SOP sample must be unit-norm")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) / self.sample_rate


def as_stokes(s, tol: float = NORM_TOL) -> np.ndarray:
    """Return ``s`` as a float array, checking that it lies on the unit sphere."""
    v = np.asarray(s, dtype=float)
    if v.shape[-1] != 3:
        raise ValueError(f"Stokes vectors have 3 components, got shape {v.shape}")
    norms = np.linalg.norm(v, axis=-1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise NormalizationError(f"Stokes vector not unit-norm (|s| = {norms})")
    return v


def jones_to_stokes(j) -> np.ndarray:
    """Normalized Stokes vector of a Jones field.

    Accepts a :class:`JonesField`, a length-2 complex vector, or an ``(n, 2)``
    array of fields (vectorized over the leading axis).
    """
    if isinstance(j, JonesField):
        j = j.vector
    e = np.asarray(j, dtype=complex)
    ex, ey = e[..., 0], e[..., 1]
    power = np.abs(ex) ** 2 + np.abs(ey) ** 2
    if np.any(power <= 0):
        raise DegenerateFieldError("cannot take the Stokes vector of a zero-power field")
    cross = ex * np.conj(ey)
    s = np.stack([np.abs(ex) ** 2 - np.abs(ey) ** 2, 2 * cross.real, -2 * cross.imag], axis=-1)
    return s / power[..., None]


def stokes_to_jones(s) -> np.ndarray:
    """Unit-power Jones vector(s) for unit Stokes vector(s).

    Phase gauge: ``ex`` real and non-negative, or ``ey`` real and
    non-negative when ``ex`` vanishes.  Vectorized over leading axes.
    """
    s = as_stokes(s)
    s1, s2, s3 = s[..., 0], s[..., 1], s[..., 2]
    ax = np.sqrt(np.clip((1 + s1) / 2, 0, 1))
    ay = np.sqrt(np.clip((1 - s1) / 2, 0, 1))
    # ex ey* = (s2 - i s3)/2 with ex real => arg(ey) = arg(s2 + i s3); taking
    # the phase alone avoids dividing by a vanishing ex near s1 = -1
    phase = np.where(ax > 0, np.arctan2(s3, s2), 0.0)
    return np.stack([ax.astype(complex), ay * np.exp(1j * phase)], axis=-1)


def su2_to_rotation(u: np.ndarray) -> np.ndarray:
    """Stokes-space rotation induced by a 2x2 unitary acting on Jones vectors."""
    u = np.asarray(u, dtype=complex)
    u_h = u.conj().T
    # S'_i = J^H U^H M_i U J = sum_j R_ij S_j
    r = np.empty((3, 3))
    for i in range(3):
        conj = u_h @ STOKES_GENERATORS[i] @ u
        for k in range(3):
            r[i, k] = 0.5 * np.trace(conj @ STOKES_GENERATORS[k]).real
    return r


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion ``(w, x, y, z)``."""
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quaternion_to_su2(q: np.ndarray) -> np.ndarray:
    """Jones unitary whose Stokes image is ``quaternion_to_rotation(q)``."""
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    # U = w I - i (x M1 + y M2 + z M3) rotates Stokes vectors by +angle about (x, y, z)
    return w * np.eye(2) - 1j * (x * _M1 + y * _M2 + z * _M3)


def rotation_to_su2(r: np.ndarray) -> np.ndarray:
    """One of the two Jones unitaries (+/-U) that induce rotation ``r``."""
    return quaternion_to_su2(rotation_to_quaternion(r))


def rotation_to_quaternion(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    tr = np.trace(r)
    # branch on the largest diagonal element for numerical stability
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
    elif r[1, 1] > r[2, 2]:
        s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
        q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
        q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    return q / np.linalg.norm(q)


def haar_quaternions(rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Uniform unit quaternions (uniform on S^3 <=> Haar on SO(3))."""
    shape = (4,) if size is None else (size, 4)
    q = rng.standard_normal(shape)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def haar_rotation(rng: np.random.Generator) -> np.ndarray:
    """Draw a rotation uniformly from SO(3)."""
    return quaternion_to_rotation(haar_quaternions(rng))


def haar_rotations(rng: np.random.Generator, size: int) -> np.ndarray:
    """Vectorized :func:`haar_rotation`; returns shape ``(size, 3, 3)``."""
    q = haar_quaternions(rng, size)
    w, x, y, z = q.T
    r = np.empty((size, 3, 3))
    r[:, 0, 0] = 1 - 2 * (y * y + z * z)
    r[:, 0, 1] = 2 * (x * y - w * z)
    r[:, 0, 2] = 2 * (x * z + w * y)
    r[:, 1, 0] = 2 * (x * y + w * z)
    r[:, 1, 1] = 1 - 2 * (x * x + z * z)
    r[:, 1, 2] = 2 * (y * z - w * x)
    r[:, 2, 0] = 2 * (x * z - w * y)
    r[:, 2, 1] = 2 * (y * z + w * x)
    r[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def is_rotation(r: np.ndarray, tol: float = 1e-9) -> bool:
    r = np.asarray(r, dtype=float)
    return bool(
        r.shape == (3, 3)
        and np.allclose(r.T @ r, np.eye(3), atol=tol, rtol=0)
        and abs(np.linalg.det(r) - 1.0) <= tol
    )


def tangent_basis(s0) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal basis of the tangent plane at ``s0``.

    ``e1`` is built from the coordinate axis least aligned with ``s0`` (ties go
    to the lowest index) and ``e2 = s0 x e1``.
    """
    s0 = as_stokes(s0)
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(s0)))] = 1.0
    e1 = axis - np.dot(axis, s0) * s0
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(s0, e1)
    return e1, e2


def retract(s0, sigma, tol: float = 1e-9) -> np.ndarray:
    """Exponential map of the tangent vector ``sigma`` at ``s0``.

    Vectorized over ``sigma`` of shape ``(n, 3)``.
    """
    s0 = as_stokes(s0)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(np.abs(sigma @ s0) > tol):
        raise GeometryError("sigma must be tangent to s0")
    r = np.linalg.norm(sigma, axis=-1, keepdims=True)
    safe = np.where(r > 0, r, 1.0)
    out = np.cos(r) * s0 + np.sin(r) * sigma / safe
    # renormalize away rounding so |out| = 1 to machine precision
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def great_circle_angle(a, b) -> np.ndarray:
    """Angle between unit vectors, accurate for both tiny and large angles."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = np.sum(a * b, axis=-1)
    return np.arctan2(cross, dot)


def sop_speed(series: SopTimeSeries) -> np.ndarray:
    """Per-step angular speed (rad/s) between consecutive SOP samples."""
    if len(series) < 2:
        raise ValueError("sop_speed needs at least two samples")
    s = series.samples
    return great_circle_angle(s[:-1], s[1:]) * series.sample_rate


# Named waveplates used in the equivariance tests and examples.
def waveplate(retardance: float, axis_angle: float) -> np.ndarray:
    """Linear retarder with fast axis at ``axis_angle`` (rad from horizontal)."""
    c, s = np.cos(axis_angle), np.sin(axis_angle)
    rot = np.array([[c, -s], [s, c]])
    core = np.diag([np.exp(-0.5j * retardance), np.exp(0.5j * retardance)])
    return rot @ core @ rot.T


def rotator(angle: float) -> np.ndarray:
    """Optical rotator (circular retarder) turning linear SOPs by ``angle``."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]], dtype=complex)


NAMED_UNITARIES = {
    "identity": np.eye(2, dtype=complex),
    "hwp_0": waveplate(np.pi, 0.0),
    "hwp_22.5": waveplate(np.pi, np.pi / 8),
    "hwp_45": waveplate(np.pi, np.pi / 4),
    "qwp_0": waveplate(np.pi / 2, 0.0),
    "qwp_45": waveplate(np.pi / 2, np.pi / 4),
    "qwp_30": waveplate(np.pi / 2, np.pi / 6),
    "retarder_1rad_10deg": waveplate(1.0, np.deg2rad(10)),
    "rotator_30": rotator(np.pi / 6),
    "rotator_45_qwp": rotator(np.pi / 4) @ waveplate(np.pi / 2, 0.3),
}
