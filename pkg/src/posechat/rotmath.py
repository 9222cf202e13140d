"""Rotation representations and conversions.

Conventions used throughout the package:

* Rotation matrices are 3x3, right-handed, determinant +1, and act on
  column vectors (``R @ v``).
* The 6D representation is the first two *columns* ``(a1, a2)`` of a
  rotation matrix, stored as a flat 6-vector ``[a1; a2]``.  Network
  outputs may be arbitrarily scaled; conversion orthonormalizes via
  Gram-Schmidt.
* Axis-angle vectors point along the rotation axis with magnitude equal
  to the angle in radians, canonicalized to angle <= pi.
* A full body pose is an array of shape (24, 3, 3); index 0 is the
  global root orientation.

All functions are pure and accept arbitrary leading batch dimensions.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInput

NUM_JOINTS = 24

# Identity rotation in 6D, the pose-head bias that makes a zero network
# output decode to the identity pose.
IDENTITY_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


def rot6d_to_matrix(r6: np.ndarray) -> np.ndarray:
    """Orthonormalize a 6D rotation (..., 6) into matrices (..., 3, 3).

    b1 = normalize(a1); b2 = normalize(a2 - (b1.a2) b1); b3 = b1 x b2;
    the result has columns [b1 b2 b3].

    Raises:
        DegenerateInput: if a1 is (near) zero or a2 is (near) parallel
            to a1, making the orthogonalization ill-defined.
    """
    r6 = np.asarray(r6, dtype=np.float64)
    if r6.shape[-1] != 6:
        raise ValueError(f"expected trailing dim 6, got {r6.shape}")
    a1 = r6[..., 0:3]
    a2 = r6[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1)
    if np.any(n1 <= 1e-8):
        raise DegenerateInput("first 6D column has near-zero norm")
    b1 = a1 / n1[..., None]
    u2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(u2, axis=-1)
    if np.any(n2 <= 1e-8):
        raise DegenerateInput("6D columns are near-parallel")
    b2 = u2 / n2[..., None]
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def matrix_to_rot6d(m: np.ndarray) -> np.ndarray:
    """First two columns of (..., 3, 3) matrices as a (..., 6) vector."""
    m = np.asarray(m, dtype=np.float64)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def axis_angle_to_matrix(v: np.ndarray) -> np.ndarray:
    """Rodrigues formula mapping axis-angle (..., 3) to matrices.

    The zero vector maps to the identity.  Small angles use the series
    expansions of sin(t)/t and (1-cos t)/t^2 to stay exact near zero.
    """
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v, axis=-1)
    t2 = theta * theta
    small = theta < 1e-8
    with np.errstate(invalid="ignore", divide="ignore"):
        sinc = np.where(small, 1.0 - t2 / 6.0, np.sin(theta) / np.where(small, 1.0, theta))
        cosc = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(theta)) / np.where(small, 1.0, t2))
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    zeros = np.zeros_like(x)
    k = np.stack(
        [
            np.stack([zeros, -z, y], axis=-1),
            np.stack([z, zeros, -x], axis=-1),
            np.stack([-y, x, zeros], axis=-1),
        ],
        axis=-2,
    )
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + sinc[..., None, None] * k + cosc[..., None, None] * (k @ k)


def matrix_to_axis_angle(m: np.ndarray) -> np.ndarray:
    """Inverse of :func:`axis_angle_to_matrix`; angle always in [0, pi].

    At angle pi the axis sign is ambiguous; we fix it so that the first
    nonzero axis component is positive.
    """
    m = np.asarray(m, dtype=np.float64)
    batch = m.shape[:-2]
    flat = m.reshape(-1, 3, 3)
    out = np.empty((flat.shape[0], 3))
    for i, r in enumerate(flat):
        out[i] = _single_matrix_to_axis_angle(r)
    return out.reshape(*batch, 3)


def _single_matrix_to_axis_angle(r: np.ndarray) -> np.ndarray:
    trace = r[0, 0] + r[1, 1] + r[2, 2]
    theta = np.arccos(np.clip((trace - 1.0) / 2.0, -1.0, 1.0))
    # Twice the skew part: w = 2 sin(theta) * axis
    w = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if theta < 1e-4:
        # theta/sin(theta) expansion keeps the map exact through zero
        return 0.5 * w * (1.0 + theta * theta / 6.0 + 7.0 * theta**4 / 360.0)
    if theta < np.pi - 1e-4:
        return (theta / (2.0 * np.sin(theta))) * w
    # Near pi the trace-based angle is ill-conditioned (arccos near -1);
    # the skew norm |w| = 2 sin(theta) recovers it to full precision.
    theta = np.pi - np.arcsin(np.clip(0.5 * np.linalg.norm(w), 0.0, 1.0))
    # The skew part vanishes here; recover |axis| from the symmetric
    # part, which satisfies (R + R^T)/2 = cos(t) I + (1 - cos(t)) aa^T.
    c = np.cos(theta)
    outer = ((r + r.T) * 0.5 - c * np.eye(3)) / (1.0 - c)
    d = np.clip(np.diag(outer), 0.0, None)
    k = int(np.argmax(d))
    axis = np.empty(3)
    axis[k] = np.sqrt(d[k])
    for j in range(3):
        if j != k:
            axis[j] = outer[j, k] / axis[k]
    axis /= np.linalg.norm(axis)
    wn = np.linalg.norm(w)
    if wn > 1e-9:
        # Sign still recoverable from the skew part
        if np.dot(w, axis) < 0.0:
            axis = -axis
    else:
        for comp in axis:
            if abs(comp) > 1e-8:
                if comp < 0.0:
                    axis = -axis
                break
    return theta * axis


def geodesic_distance(r1: np.ndarray, r2: np.ndarray) -> np.ndarray:
    """Rotation angle of r1^T r2, in [0, pi].  Broadcasts over batches."""
    r1 = np.asarray(r1, dtype=np.float64)
    r2 = np.asarray(r2, dtype=np.float64)
    rel = np.swapaxes(r1, -1, -2) @ r2
    trace = rel[..., 0, 0] + rel[..., 1, 1] + rel[..., 2, 2]
    return np.arccos(np.clip((trace - 1.0) / 2.0, -1.0, 1.0))


def is_rotation_matrix(m: np.ndarray, tol: float = 1e-6) -> bool:
    """Check mᵀm = I and det(m) = +1 within tol (all batch entries)."""
    m = np.asarray(m, dtype=np.float64)
    eye = np.broadcast_to(np.eye(3), m.shape)
    ortho = np.abs(np.swapaxes(m, -1, -2) @ m - eye).max() < tol
    det = np.abs(np.linalg.det(m) - 1.0).max() < tol
    return bool(ortho and det)


def validate_pose(pose: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Assert (24, 3, 3) shape and rotation-matrix invariants; returns pose."""
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (NUM_JOINTS, 3, 3):
        raise ValueError(f"pose must have shape (24, 3, 3), got {pose.shape}")
    if not is_rotation_matrix(pose, tol):
        raise ValueError("pose contains non-rotation matrices")
    return pose


def identity_pose() -> np.ndarray:
    return np.broadcast_to(np.eye(3), (NUM_JOINTS, 3, 3)).copy()
