import numpy as np
import pytest

from versa_motion import skeleton
from versa_motion.datagen import FAMILIES, forward_kinematics, jitter_params
from versa_motion.errors import InsufficientLengthError, InvalidInputError
from versa_motion.motion import (
    FEATURE_DIM,
    FOOT_CONTACTS,
    JOINT_VELOCITIES,
    LOCAL_POSITIONS,
    LOCAL_ROTATIONS,
    MotionSequence,
    ROOT_LIN_VEL,
    PoseSequence2D,
    facing_angles,
    features_from_joints,
    joints_from_features,
    project_joints,
)
from versa_motion.utils import make_rng


def walk_poses(frames=40, seed=0):
    params = jitter_params(make_rng(seed))
    t = np.arange(frames + 1) / skeleton.FPS
    rotvecs, root = FAMILIES["walk_forward"][1](t, params)
    return skeleton.to_root_relative(forward_kinematics(rotvecs, root))


def test_rest_skeleton_faces_forward():
    assert facing_angles(skeleton.rest_joints()[None])[0] == pytest.approx(0.0)
    assert skeleton.topological_order_2d()[0] == skeleton.ROOT_2D
    assert sorted(skeleton.topological_order_2d()) == list(range(skeleton.NUM_JOINTS_2D))


def test_zero_features_decode_to_rest():
    poses = joints_from_features(MotionSequence(np.zeros((5, FEATURE_DIM))))
    assert poses.shape == (6, skeleton.NUM_JOINTS, 3)
    for frame in poses:
        np.testing.assert_allclose(frame, skeleton.rest_pose(), atol=1e-12)


def test_rest_pose_encodes_to_zero_positions():
    poses = np.repeat(skeleton.rest_pose()[None], 4, axis=0)
    motion = features_from_joints(poses)
    assert motion.T == 3
    np.testing.assert_allclose(motion.frames[:, :FOOT_CONTACTS.start], 0.0, atol=1e-6)
    # standing feet are in contact
    np.testing.assert_array_equal(motion.frames[:, FOOT_CONTACTS], 1.0)


def test_walk_round_trip_recovers_joints():
    poses = walk_poses()
    recovered = joints_from_features(features_from_joints(poses))
    assert recovered.shape == poses.shape
    np.testing.assert_allclose(skeleton.to_global(recovered), skeleton.to_global(poses), atol=1e-5)


def test_features_are_stable_under_decode_encode():
    motion = features_from_joints(walk_poses(seed=3))
    again = features_from_joints(joints_from_features(motion))
    np.testing.assert_allclose(again.frames[:, LOCAL_POSITIONS], motion.frames[:, LOCAL_POSITIONS], atol=1e-5)
    np.testing.assert_allclose(again.frames[:, LOCAL_ROTATIONS], motion.frames[:, LOCAL_ROTATIONS], atol=1e-4)


def test_features_are_invariant_to_heading_and_offset():
    poses = skeleton.to_global(walk_poses())
    turn = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
    moved = poses @ turn.T + np.array([3.0, 0.0, -2.0])
    a = features_from_joints(skeleton.to_root_relative(poses))
    b = features_from_joints(skeleton.to_root_relative(moved))
    np.testing.assert_allclose(a.frames, b.frames, atol=1e-5)


def test_features_need_two_frames():
    with pytest.raises(InsufficientLengthError):
        features_from_joints(skeleton.rest_pose()[None])


def test_features_reject_bad_input():
    with pytest.raises(InvalidInputError):
        features_from_joints(np.zeros((4, 21, 3)))
    poses = np.repeat(skeleton.rest_pose()[None], 3, axis=0)
    poses[1, 4, 0] = np.nan
    with pytest.raises(InvalidInputError):
        features_from_joints(poses)


def test_motion_sequence_validates_width():
    with pytest.raises(InvalidInputError):
        MotionSequence(np.zeros((3, 262)))
    motion = MotionSequence(np.zeros((3, FEATURE_DIM), dtype=np.float64))
    assert motion.frames.dtype == np.float32
    assert len(motion) == 3


def test_projection_of_rest_pose_is_upright_and_inside():
    poses = project_joints(np.repeat(skeleton.rest_pose()[None], 2, axis=0))
    assert isinstance(poses, PoseSequence2D)
    frame = poses.frames[0]
    assert np.all((frame >= 0.0) & (frame <= 1.0))
    # image y grows downward
    assert frame[0, 1] < frame[1, 1] < frame[8, 1] < frame[10, 1]
    assert frame[0, 0] == pytest.approx(0.5, abs=1e-9)
    np.testing.assert_allclose(poses.frames[1], frame)


def test_projection_clamps_far_points():
    poses = skeleton.to_global(walk_poses())
    poses[:, :, 0] += np.linspace(0.0, 10.0, poses.shape[0])[:, None]
    projected = project_joints(skeleton.to_root_relative(poses))
    assert projected.frames.min() >= 0.0
    assert projected.frames.max() == 1.0


def test_pose_sequence_clamped_keeps_provenance():
    seq = PoseSequence2D(np.full((2, 18, 2), 1.5), ["bank:0", "fallback"])
    out = seq.clamped()
    np.testing.assert_array_equal(out.frames, 1.0)
    assert out.provenance == ["bank:0", "fallback"]


def test_velocity_channels_are_scaled_finite_differences(rng):
    positions = np.repeat(skeleton.rest_joints()[None], 6, axis=0)
    positions += rng.uniform(-0.05, 0.05, (6, 1, 3))
    positions[:, 19:] += rng.uniform(-0.1, 0.1, (6, 3, 3))
    motion = features_from_joints(skeleton.to_root_relative(positions), fps=20)
    expected = np.diff(positions, axis=0) * 20
    np.testing.assert_allclose(motion.frames[:, JOINT_VELOCITIES].reshape(5, skeleton.NUM_JOINTS, 3),
                               expected, rtol=1e-5, atol=1e-5)
    np.testing.assert_allclose(motion.frames[:, ROOT_LIN_VEL], expected[:, 0, [0, 2]], rtol=1e-5, atol=1e-5)


def test_constant_root_velocity_integrates_linearly():
    v = np.array([0.3, 1.2])
    feats = np.zeros((10, FEATURE_DIM))
    feats[:, ROOT_LIN_VEL] = v
    poses = joints_from_features(MotionSequence(feats, fps=20))
    assert poses.shape[0] == 11
    root = poses[:, 0, [0, 2]]
    np.testing.assert_allclose(root[10] - root[0], 10 * v / 20, atol=1e-6)
    np.testing.assert_allclose(np.diff(root, axis=0), np.tile(v / 20, (10, 1)), atol=1e-6)
