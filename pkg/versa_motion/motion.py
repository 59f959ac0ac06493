"""Motion representations: joint sequences, the 263-dim feature layout, 2D poses.

Feature layout per frame (all channels rest-relative, velocities per second):

    [0]        root angular velocity about the vertical axis
    [1:3]      root linear velocity x/z in the facing frame
    [3]        root height minus the rest root height
    [4:67]     joints 1..21 positions in the facing frame minus rest positions
    [67:193]   joints 1..21 bone rotations (6D) minus the identity 6D
    [193:259]  joints 0..21 velocities in the facing frame
    [259:263]  foot contacts (left ankle, left foot, right ankle, right foot)
"""
from dataclasses import dataclass, field

import numpy as np

from . import skeleton
from .errors import InsufficientLengthError, InvalidInputError
from .rotations import IDENTITY_6D, align_vectors, rot6d_from_matrix, rotation_about_y

FEATURE_DIM = 263

ROOT_ROT_VEL = slice(0, 1)
ROOT_LIN_VEL = slice(1, 3)
ROOT_HEIGHT = slice(3, 4)
LOCAL_POSITIONS = slice(4, 67)
LOCAL_ROTATIONS = slice(67, 193)
JOINT_VELOCITIES = slice(193, 259)
FOOT_CONTACTS = slice(259, 263)

CONTACT_DISPLACEMENT_SQ = 0.002
CONTACT_HEIGHT = 0.12

CAMERA_EXTENT = 2.4
CAMERA_CENTER_Y = 0.9


@dataclass
class MotionSequence:
    """Per-frame motion features. ``frames`` is (T, 263) float32."""

    frames: np.ndarray
    fps: int = skeleton.FPS

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 2 or frames.shape[1] != FEATURE_DIM:
            raise InvalidInputError(
                f"motion features must be (T, {FEATURE_DIM}), got {frames.shape}")
        if self.fps <= 0:
            raise InvalidInputError(f"fps must be positive, got {self.fps}")
        self.frames = frames

    @property
    def T(self):
        return self.frames.shape[0]

    def __len__(self):
        return self.T

    def __repr__(self):
        return f"MotionSequence(T={self.T}, fps={self.fps})"


@dataclass
class PoseSequence2D:
    """2D poses in normalized image coordinates, ``frames`` is (T, 18, 2)."""

    frames: np.ndarray
    provenance: list = field(default_factory=list)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 3 or frames.shape[1:] != (skeleton.NUM_JOINTS_2D, 2):
            raise InvalidInputError(
                f"2D poses must be (T, {skeleton.NUM_JOINTS_2D}, 2), got {frames.shape}")
        self.frames = frames

    @property
    def T(self):
        return self.frames.shape[0]

    def __len__(self):
        return self.T

    def clamped(self):
        return PoseSequence2D(np.clip(self.frames, 0.0, 1.0), list(self.provenance))

    def __repr__(self):
        return f"PoseSequence2D(T={self.T})"


def facing_angles(positions):
    """
    Heading of each frame from the hip and shoulder lines.

    Args:
        positions (np.ndarray): (T, 22, 3) global joint positions

    Returns:
        np.ndarray: (T,) angles; 0 means facing +z
    """
    across = (positions[:, skeleton.RIGHT_HIP] - positions[:, skeleton.LEFT_HIP]
              + positions[:, skeleton.RIGHT_SHOULDER] - positions[:, skeleton.LEFT_SHOULDER])
    # forward = up x across
    return np.arctan2(across[:, 2], -across[:, 0])


def _wrap(angle):
    return (angle + np.pi) % (2.0 * np.pi) - np.pi


def features_from_joints(poses, fps=skeleton.FPS):
    """
    Compute motion features from a joint sequence.

    Args:
        poses (np.ndarray): (T, 22, 3) Pose3D frames (joint 0 global, others
            relative to joint 0)
        fps (int): Frames per second

    Returns:
        MotionSequence: T-1 feature frames

    Raises:
        InsufficientLengthError: If fewer than two frames are given
        InvalidInputError: If the shape is wrong or values are not finite
    """
    poses = np.asarray(poses, dtype=np.float64)
    if poses.ndim != 3 or poses.shape[1:] != (skeleton.NUM_JOINTS, 3):
        raise InvalidInputError(f"poses must be (T, {skeleton.NUM_JOINTS}, 3), got {poses.shape}")
    if poses.shape[0] < 2:
        raise InsufficientLengthError("features need at least two frames")
    if fps <= 0:
        raise InvalidInputError(f"fps must be positive, got {fps}")
    if not np.all(np.isfinite(poses)):
        raise InvalidInputError("poses contain non-finite coordinates")

    positions = skeleton.to_global(poses)
    n = positions.shape[0] - 1
    theta = facing_angles(positions)
    to_local = rotation_about_y(-theta)

    root = positions[:, 0]
    relative = positions.copy()
    relative[:, :, 0] -= root[:, None, 0]
    relative[:, :, 2] -= root[:, None, 2]
    local = np.einsum("tij,tkj->tki", to_local, relative)

    rest = skeleton.rest_joints()
    feats = np.zeros((n, FEATURE_DIM))
    feats[:, ROOT_ROT_VEL] = _wrap(theta[1:] - theta[:-1])[:, None] * fps
    root_step = np.einsum("tij,tj->ti", to_local[:-1], root[1:] - root[:-1])
    feats[:, ROOT_LIN_VEL] = root_step[:, [0, 2]] * fps
    feats[:, ROOT_HEIGHT] = root[:-1, 1:2] - skeleton.REST_ROOT_HEIGHT
    feats[:, LOCAL_POSITIONS] = (local[:-1, 1:] - rest[None, 1:]).reshape(n, -1)

    bones = local[:-1, 1:] - local[:-1, skeleton.PARENTS[1:]]
    rot = align_vectors(np.broadcast_to(skeleton.REST_OFFSETS[1:], bones.shape), bones)
    feats[:, LOCAL_ROTATIONS] = (rot6d_from_matrix(rot) - IDENTITY_6D).reshape(n, -1)

    steps = positions[1:] - positions[:-1]
    feats[:, JOINT_VELOCITIES] = np.einsum("tij,tkj->tki", to_local[:-1], steps).reshape(n, -1) * fps

    feet = skeleton.FOOT_JOINTS
    displacement_sq = np.sum(steps[:, feet] ** 2, axis=-1)
    low = positions[:-1, feet, 1] < rest[feet, 1] + CONTACT_HEIGHT
    feats[:, FOOT_CONTACTS] = ((displacement_sq < CONTACT_DISPLACEMENT_SQ) & low).astype(np.float64)
    return MotionSequence(feats, fps=fps)


def joints_from_features(motion):
    """
    Reconstruct the joint sequence from motion features.

    The first frame is placed at the origin facing +z. Frame t < T comes
    from the position channels of feature row t, the final frame T from the
    velocity channels of row T-1, so the result has T+1 frames.

    Args:
        motion (MotionSequence or np.ndarray): T feature rows

    Returns:
        np.ndarray: (T+1, 22, 3) Pose3D frames

    Raises:
        InvalidInputError: If the feature width is not 263
    """
    if isinstance(motion, MotionSequence):
        feats, fps = motion.frames.astype(np.float64), motion.fps
    else:
        feats, fps = np.asarray(motion, dtype=np.float64), skeleton.FPS
        if feats.ndim != 2 or feats.shape[1] != FEATURE_DIM:
            raise InvalidInputError(f"motion features must be (T, {FEATURE_DIM}), got {feats.shape}")
    n = feats.shape[0]
    if n == 0:
        raise InvalidInputError("motion has no frames")

    theta = np.concatenate([[0.0], np.cumsum(feats[:, 0] / fps)])
    to_world = rotation_about_y(theta[:n])

    step = np.zeros((n, 3))
    step[:, [0, 2]] = feats[:, ROOT_LIN_VEL] / fps
    world_step = np.einsum("tij,tj->ti", to_world, step)
    root_xz = np.concatenate([np.zeros((1, 3)), np.cumsum(world_step, axis=0)])

    rest = skeleton.rest_joints()
    local = np.zeros((n, skeleton.NUM_JOINTS, 3))
    local[:, 0, 1] = feats[:, 3] + skeleton.REST_ROOT_HEIGHT
    local[:, 1:] = feats[:, LOCAL_POSITIONS].reshape(n, -1, 3) + rest[None, 1:]

    positions = np.zeros((n + 1, skeleton.NUM_JOINTS, 3))
    positions[:n] = np.einsum("tij,tkj->tki", to_world, local)
    positions[:n, :, 0] += root_xz[:n, None, 0]
    positions[:n, :, 2] += root_xz[:n, None, 2]

    # last frame: joint motion relative to the root, root translation from the root channels
    velocity = feats[-1, JOINT_VELOCITIES].reshape(-1, 3) / fps
    velocity[:, [0, 2]] -= velocity[0, [0, 2]]
    positions[n] = positions[n - 1] + velocity @ to_world[-1].T + world_step[-1]
    return skeleton.to_root_relative(positions)


def project_joints(poses, center_x=None, extent=CAMERA_EXTENT, center_y=CAMERA_CENTER_Y):
    """
    Orthographic projection of a joint sequence onto the 18-joint 2D graph.

    Args:
        poses (np.ndarray): (T, 22, 3) Pose3D frames
        center_x (float): World x mapped to the image center; defaults to the
            root x of the first frame
        extent (float): World meters spanned by the unit image square
        center_y (float): World height mapped to the image center

    Returns:
        PoseSequence2D: Coordinates clamped to [0, 1]
    """
    positions = skeleton.to_global(poses)
    theta = facing_angles(positions)
    forward = np.stack([np.sin(theta), np.zeros_like(theta), np.cos(theta)], axis=-1)
    left = np.stack([np.cos(theta), np.zeros_like(theta), -np.sin(theta)], axis=-1)
    up = np.array([0.0, 1.0, 0.0])

    points = np.zeros((positions.shape[0], skeleton.NUM_JOINTS_2D, 3))
    for j2d, j3d in skeleton.BODY_MAP_2D.items():
        points[:, j2d] = positions[:, j3d]
    head = positions[:, skeleton.HEAD]
    for j2d, (f, l, u) in skeleton.FACE_OFFSETS_2D.items():
        points[:, j2d] = head + f * forward + l * left + u * up

    if center_x is None:
        center_x = positions[0, 0, 0]
    frames = np.empty(points.shape[:2] + (2,))
    frames[..., 0] = 0.5 + (points[..., 0] - center_x) / extent
    frames[..., 1] = 0.5 - (points[..., 1] - center_y) / extent
    return PoseSequence2D(np.clip(frames, 0.0, 1.0))
