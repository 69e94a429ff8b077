import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ude.errors import DimensionError, FormatError, MappingError, PreprocessingError
from ude.motion import (MotionSequence, Skeleton, bone_lengths, default_skeleton,
                        identity_mapping, load_motion, normalize_heading,
                        save_motion, unify_joints)


def _rest_pose_motion(t=5, fps=16.0):
    skel = default_skeleton()
    pose = np.zeros((skel.joint_count, 3))
    for j in range(skel.joint_count):
        parent = skel.parents[j]
        pose[j] = (pose[parent] if parent >= 0 else np.array([0.0, 1.0, 0.0])) + skel.offsets[j]
    frames = np.tile(pose.reshape(1, -1), (t, 1))
    return MotionSequence(fps, frames)


def _rotate_y(m: MotionSequence, theta: float, dx=0.0, dz=0.0) -> MotionSequence:
    pos = m.positions().copy()
    c, s = np.cos(theta), np.sin(theta)
    x, z = pos[:, :, 0].copy(), pos[:, :, 2].copy()
    pos[:, :, 0] = c * x + s * z + dx
    pos[:, :, 2] = -s * x + c * z + dz
    return MotionSequence(m.fps, pos.reshape(m.length, -1))


def _pairwise(m: MotionSequence) -> np.ndarray:
    pos = m.positions()
    diff = pos[:, :, None, :] - pos[:, None, :, :]
    return np.linalg.norm(diff, axis=-1)


class TestNormalizeHeading:
    def test_canonical_is_fixed_point(self):
        m = _rest_pose_motion()
        out = normalize_heading(m)
        assert np.abs(out.frames - m.frames).max() < 1e-9

    def test_inverts_known_rotation(self):
        m = _rest_pose_motion()
        rotated = _rotate_y(m, np.pi / 2, dx=2.0, dz=-1.0)
        out = normalize_heading(rotated)
        assert np.abs(out.frames - m.frames).max() < 1e-9

    def test_preserves_pairwise_distances(self, rng):
        m = _rest_pose_motion()
        rotated = _rotate_y(m, 1.234, dx=0.7, dz=0.3)
        out = normalize_heading(rotated)
        assert np.abs(_pairwise(out) - _pairwise(rotated)).max() < 1e-9

    @given(st.floats(-np.pi, np.pi), st.floats(-3, 3), st.floats(-3, 3))
    def test_idempotent(self, theta, dx, dz):
        m = _rotate_y(_rest_pose_motion(), theta, dx=dx, dz=dz)
        once = normalize_heading(m)
        twice = normalize_heading(once)
        assert np.abs(once.frames - twice.frames).max() < 1e-9

    def test_preserves_frame_displacements(self, rng):
        base = _rest_pose_motion(t=8)
        frames = base.frames + rng.normal(0, 0.05, base.frames.shape)
        m = _rotate_y(MotionSequence(base.fps, frames), 0.9, dx=1.0)
        out = normalize_heading(m)
        d_in = np.linalg.norm(np.diff(m.positions(), axis=0), axis=-1)
        d_out = np.linalg.norm(np.diff(out.positions(), axis=0), axis=-1)
        assert np.abs(d_in - d_out).max() < 1e-9

    def test_degenerate_hip_axis_rejected(self):
        m = _rest_pose_motion()
        pos = m.positions().copy()
        # stack both hips vertically above the root
        pos[0, 1] = pos[0, 0] + np.array([0.0, 0.1, 0.0])
        pos[0, 2] = pos[0, 0] + np.array([0.0, -0.1, 0.0])
        broken = MotionSequence(m.fps, pos.reshape(m.length, -1))
        with pytest.raises(PreprocessingError):
            normalize_heading(broken)


class TestUnifyJoints:
    def test_identity(self):
        m = _rest_pose_motion()
        skel = default_skeleton()
        out = unify_joints(m, skel, skel, identity_mapping(skel.joint_count))
        assert np.allclose(out.frames, m.frames)

    def test_midpoint_interpolation(self):
        m = _rest_pose_motion()
        src = default_skeleton()
        dst = Skeleton(("root", "mid"), (-1, 0), np.zeros((2, 3)))
        mapping = {0: [(0, 1.0)], 1: [(1, 0.5), (2, 0.5)]}
        out = unify_joints(m, src, dst, mapping)
        pos = m.positions()
        expected = (pos[:, 1] + pos[:, 2]) / 2
        assert np.allclose(out.positions()[:, 1], expected)

    def test_22_to_24_expansion(self, rng):
        def chain(j):
            offsets = np.zeros((j, 3))
            offsets[1:, 1] = 0.1
            return Skeleton(tuple(f"j{i}" for i in range(j)),
                            (-1,) + tuple(range(j - 1)), offsets)

        src, dst = chain(22), chain(24)
        m = MotionSequence(16.0, rng.standard_normal((4, 22 * 3)))
        mapping = {i: [(min(i, 21), 1.0)] for i in range(24)}
        out = unify_joints(m, src, dst, mapping)
        assert out.joint_count == 24

    def test_unmapped_joint_rejected(self):
        m = _rest_pose_motion()
        skel = default_skeleton()
        mapping = identity_mapping(skel.joint_count)
        del mapping[3]
        with pytest.raises(MappingError):
            unify_joints(m, skel, skel, mapping)


class TestMotionFiles:
    def test_round_trip(self, tmp_path, rng):
        m = MotionSequence(23.5, rng.standard_normal((7, 24)))
        path = tmp_path / "m.udem"
        save_motion(m, path)
        back = load_motion(path)
        assert back.fps == m.fps
        assert np.abs(back.frames - m.frames).max() < 1e-9

    def test_short_row_names_line(self, tmp_path):
        path = tmp_path / "bad.udem"
        path.write_text("UDEMOTION v1 fps=16.0 joints=2\n1 2 3 4 5\n")
        with pytest.raises(FormatError, match="line 2"):
            load_motion(path)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.udem"
        path.write_text("MOTION 1.0\n")
        with pytest.raises(FormatError, match="line 1"):
            load_motion(path)

    def test_fps_preserved_exactly(self, tmp_path):
        m = MotionSequence(23.976000000000003, np.zeros((2, 6)))
        save_motion(m, tmp_path / "m.udem")
        assert load_motion(tmp_path / "m.udem").fps == 23.976000000000003


class TestSkeleton:
    def test_default_is_a_tree(self):
        skel = default_skeleton()
        assert skel.joint_count == 8
        assert skel.parents[0] == -1

    def test_cyclic_parents_rejected(self):
        with pytest.raises(PreprocessingError):
            Skeleton(("a", "b"), (-1, 1), np.zeros((2, 3)))

    def test_bone_lengths_of_rest_pose(self):
        skel = default_skeleton()
        m = _rest_pose_motion()
        lengths = bone_lengths(m, skel)
        expected = np.linalg.norm(skel.offsets[1:], axis=-1)
        assert np.allclose(lengths, np.tile(expected, (m.length, 1)))
