"""Skeleton definitions: the 22-joint body and the 18-joint 2D pose graph."""
import numpy as np

NUM_JOINTS = 22
NUM_JOINTS_2D = 18
FPS = 20

JOINT_NAMES = [
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder",
    "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
]

PARENTS = np.array(
    [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19]
)

# Bone offsets from the parent joint in the rest T-pose, meters.
# +x is the body's left, +y up, +z forward.
REST_OFFSETS = np.array([
    [0.00, 0.00, 0.00],
    [0.06, -0.09, 0.00],
    [-0.06, -0.09, 0.00],
    [0.00, 0.11, -0.02],
    [0.04, -0.38, 0.00],
    [-0.04, -0.38, 0.00],
    [0.00, 0.13, 0.00],
    [-0.01, -0.40, -0.04],
    [0.01, -0.40, -0.04],
    [0.00, 0.05, 0.02],
    [0.02, -0.06, 0.12],
    [-0.02, -0.06, 0.12],
    [0.00, 0.21, -0.03],
    [0.08, 0.12, -0.01],
    [-0.08, 0.12, -0.01],
    [0.00, 0.09, 0.05],
    [0.12, 0.04, -0.01],
    [-0.12, 0.04, -0.01],
    [0.26, 0.00, -0.02],
    [-0.26, 0.00, -0.02],
    [0.25, 0.00, 0.00],
    [-0.25, 0.00, 0.00],
])

REST_ROOT_HEIGHT = 0.95

LEFT_HIP, RIGHT_HIP = 1, 2
LEFT_SHOULDER, RIGHT_SHOULDER = 16, 17
HEAD, NECK = 15, 12
FOOT_JOINTS = [7, 10, 8, 11]

# OpenPose body-18 ordering.
JOINT_NAMES_2D = [
    "nose", "neck", "right_shoulder", "right_elbow", "right_wrist",
    "left_shoulder", "left_elbow", "left_wrist", "right_hip", "right_knee",
    "right_ankle", "left_hip", "left_knee", "left_ankle", "right_eye",
    "left_eye", "right_ear", "left_ear",
]

PARENTS_2D = np.array([1, -1, 1, 2, 3, 1, 5, 6, 1, 8, 9, 1, 11, 12, 0, 0, 14, 15])
ROOT_2D = 1

# Body joints of the 2D graph taken directly from the 3D skeleton.
BODY_MAP_2D = {
    1: 12, 2: 17, 3: 19, 4: 21, 5: 16, 6: 18, 7: 20,
    8: 2, 9: 5, 10: 8, 11: 1, 12: 4, 13: 7,
}

# Face points placed relative to the head in its (forward, left, up) frame.
FACE_OFFSETS_2D = {
    0: (0.10, 0.00, -0.02),
    14: (0.08, -0.035, 0.03),
    15: (0.08, 0.035, 0.03),
    16: (0.00, -0.08, 0.01),
    17: (0.00, 0.08, 0.01),
}


def rest_joints():
    """
    Global joint positions of the rest pose.

    Returns:
        np.ndarray: (22, 3) positions; the pelvis sits at (0, REST_ROOT_HEIGHT, 0)
    """
    positions = np.zeros((NUM_JOINTS, 3))
    positions[0] = [0.0, REST_ROOT_HEIGHT, 0.0]
    for j in range(1, NUM_JOINTS):
        positions[j] = positions[PARENTS[j]] + REST_OFFSETS[j]
    return positions


def rest_pose():
    """Rest pose in the Pose3D convention (root global, others root-relative)."""
    return to_root_relative(rest_joints()[None])[0]


def to_global(poses):
    """
    Convert Pose3D arrays to global joint positions.

    Args:
        poses (np.ndarray): (..., 22, 3); joint 0 is global, the rest are
            offsets from joint 0

    Returns:
        np.ndarray: (..., 22, 3) global positions
    """
    poses = np.asarray(poses, dtype=np.float64)
    out = poses.copy()
    out[..., 1:, :] += poses[..., :1, :]
    return out


def to_root_relative(positions):
    """Inverse of :func:`to_global`."""
    positions = np.asarray(positions, dtype=np.float64)
    out = positions.copy()
    out[..., 1:, :] -= positions[..., :1, :]
    return out


def bone_lengths_2d(frames):
    """
    Bone lengths of 2D poses.

    Args:
        frames (np.ndarray): (..., 18, 2)

    Returns:
        np.ndarray: (..., 18); the root entry is 0
    """
    frames = np.asarray(frames, dtype=np.float64)
    lengths = np.zeros(frames.shape[:-1])
    for j in range(NUM_JOINTS_2D):
        p = PARENTS_2D[j]
        if p >= 0:
            lengths[..., j] = np.linalg.norm(frames[..., j, :] - frames[..., p, :], axis=-1)
    return lengths


def topological_order_2d():
    """Joint indices of the 2D graph ordered root outward."""
    order, frontier = [], [ROOT_2D]
    while frontier:
        j = frontier.pop(0)
        order.append(j)
        frontier.extend(int(c) for c in np.flatnonzero(PARENTS_2D == j))
    return order
