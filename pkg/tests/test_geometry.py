import numpy as np
import pytest

from echosplat.geometry import (InvalidParameterError, ProbePose, SliceSpec,
                                pixel_grid_world, pixel_to_plane)
from conftest import random_pose


class TestProbePose:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(InvalidParameterError):
            ProbePose(np.eye(3) * 2.0, np.zeros(3))

    def test_rejects_reflection(self):
        with pytest.raises(InvalidParameterError):
            ProbePose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_compose_with_inverse_is_identity(self, rng):
        for _ in range(20):
            pose = random_pose(rng)
            ident = pose.compose(pose.inverse())
            assert np.abs(ident.rotation - np.eye(3)).max() < 1e-9
            assert np.abs(ident.translation).max() < 1e-9

    def test_orthonormality_invariant(self, rng):
        for _ in range(20):
            pose = random_pose(rng)
            assert np.abs(pose.rotation.T @ pose.rotation - np.eye(3)).max() < 1e-9
            assert abs(np.linalg.det(pose.rotation) - 1.0) < 1e-9

    def test_euler_round_trip(self):
        for angles in [(10, 20, 30), (-45, 5, 170), (0, 0, 0), (12.5, -60, 99)]:
            pose = ProbePose.from_euler_deg(*angles, 1.0, -2.0, 3.0)
            rx, ry, rz, tx, ty, tz = pose.to_euler_deg()
            back = ProbePose.from_euler_deg(rx, ry, rz, tx, ty, tz)
            assert np.abs(back.rotation - pose.rotation).max() < 1e-9
            assert np.abs(back.translation - pose.translation).max() < 1e-9


class TestPixelToPlane:
    def test_center_of_even_grid(self):
        spec = SliceSpec(width=160, height=160, spacing=0.6)
        x1, x2 = pixel_to_plane((160 - 1) / 2, (160 - 1) / 2, spec)
        assert x1 == 0.0 and x2 == 0.0

    def test_corner(self):
        spec = SliceSpec(width=160, height=160, spacing=0.6)
        assert pixel_to_plane(0, 0, spec) == pytest.approx((-47.7, -47.7))
        assert pixel_to_plane(159, 0, spec) == pytest.approx((47.7, -47.7))

    def test_out_of_range_rejected(self):
        spec = SliceSpec(width=16, height=16, spacing=1.0)
        with pytest.raises(InvalidParameterError):
            pixel_to_plane(16, 0, spec)
        with pytest.raises(InvalidParameterError):
            pixel_to_plane(0, -1, spec)

    def test_grid_world_matches_pose(self, rng):
        pose = random_pose(rng)
        spec = SliceSpec(width=7, height=5, spacing=0.8, pose=pose)
        grid = pixel_grid_world(spec)
        for u, v in [(0, 0), (6, 4), (3, 2)]:
            x1, x2 = pixel_to_plane(u, v, spec)
            expected = pose.apply(np.array([x1, x2, 0.0]))
            assert np.abs(grid[v, u] - expected).max() < 1e-9


class TestSliceSpec:
    def test_validation(self):
        with pytest.raises(InvalidParameterError):
            SliceSpec(width=0, height=4, spacing=1.0)
        with pytest.raises(InvalidParameterError):
            SliceSpec(width=4, height=4, spacing=0.0)
