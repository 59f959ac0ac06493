"""6D continuous rotation representation and related helpers."""
import numpy as np

from .errors import DegeneracyError, InvalidInputError

IDENTITY_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


def rot6d_from_matrix(matrix):
    """
    Convert rotation matrices to the 6D representation.

    The 6D vector is the first two columns of the matrix, column-major:
    ``[R00, R10, R20, R01, R11, R21]``.

    Args:
        matrix (np.ndarray): (..., 3, 3) rotation matrices

    Returns:
        np.ndarray: (..., 6)

    Raises:
        InvalidInputError: If the input has the wrong shape or is not finite
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape[-2:] != (3, 3):
        raise InvalidInputError(f"expected (..., 3, 3) matrices, got {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise InvalidInputError("rotation matrix contains non-finite values")
    return np.concatenate([matrix[..., :, 0], matrix[..., :, 1]], axis=-1)


def matrix_from_rot6d(d6, eps=1e-8):
    """
    Recover rotation matrices from 6D vectors by Gram-Schmidt.

    Args:
        d6 (np.ndarray): (..., 6)
        eps (float): Norm below which a vector counts as degenerate

    Returns:
        np.ndarray: (..., 3, 3) with orthonormal columns and determinant +1

    Raises:
        InvalidInputError: If the input is not finite or has the wrong width
        DegeneracyError: If a column is near zero or the two columns are parallel
    """
    d6 = np.asarray(d6, dtype=np.float64)
    if d6.shape[-1] != 6:
        raise InvalidInputError(f"expected (..., 6) vectors, got {d6.shape}")
    if not np.all(np.isfinite(d6)):
        raise InvalidInputError("6D rotation contains non-finite values")
    a1, a2 = d6[..., :3], d6[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 <= eps):
        raise DegeneracyError("first 6D column has near-zero norm")
    b1 = a1 / n1
    u2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(u2, axis=-1, keepdims=True)
    if np.any(n2 <= eps):
        raise DegeneracyError("6D columns are parallel or second column is near zero")
    b2 = u2 / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def rotation_about_y(angle):
    """
    Rotation matrices about the vertical axis.

    Args:
        angle (np.ndarray or float): Angles in radians

    Returns:
        np.ndarray: (..., 3, 3)
    """
    angle = np.asarray(angle, dtype=np.float64)
    c, s = np.cos(angle), np.sin(angle)
    zeros, ones = np.zeros_like(angle), np.ones_like(angle)
    return np.stack([
        np.stack([c, zeros, s], axis=-1),
        np.stack([zeros, ones, zeros], axis=-1),
        np.stack([-s, zeros, c], axis=-1),
    ], axis=-2)


def align_vectors(source, target, eps=1e-12):
    """
    Minimal-arc rotations taking ``source`` directions onto ``target``.

    Args:
        source (np.ndarray): (..., 3) vectors
        target (np.ndarray): (..., 3) vectors

    Returns:
        np.ndarray: (..., 3, 3) rotation matrices; identity where either
        vector has zero length
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    ns = np.linalg.norm(source, axis=-1, keepdims=True)
    nt = np.linalg.norm(target, axis=-1, keepdims=True)
    valid = (ns[..., 0] > eps) & (nt[..., 0] > eps)
    a = np.where(ns > eps, source / np.maximum(ns, eps), 0.0)
    b = np.where(nt > eps, target / np.maximum(nt, eps), 0.0)

    v = np.cross(a, b)
    c = np.sum(a * b, axis=-1)
    shape = a.shape[:-1]
    skew = np.zeros(shape + (3, 3))
    skew[..., 0, 1], skew[..., 0, 2] = -v[..., 2], v[..., 1]
    skew[..., 1, 0], skew[..., 1, 2] = v[..., 2], -v[..., 0]
    skew[..., 2, 0], skew[..., 2, 1] = -v[..., 1], v[..., 0]
    eye = np.broadcast_to(np.eye(3), shape + (3, 3))

    opposite = c < -1.0 + 1e-9
    scale = np.where(opposite, 0.0, 1.0 / np.where(opposite, 1.0, 1.0 + c))
    rot = eye + skew + (skew @ skew) * scale[..., None, None]

    if np.any(opposite & valid):
        # half turn about any axis orthogonal to a
        helper = np.where(np.abs(a[..., :1]) < 0.9, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
        axis = np.cross(a, helper)
        axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
        half_turn = 2.0 * axis[..., :, None] * axis[..., None, :] - eye
        rot = np.where(opposite[..., None, None], half_turn, rot)
    return np.where(valid[..., None, None], rot, eye)
