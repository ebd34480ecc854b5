import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from echosplat.geometry import InvalidParameterError, ProbePose
from echosplat.model import (build_L, covariance_from_L, evaluate_opacity,
                             invert_lower_triangular, sample_gaussian,
                             to_probe_frame, SingularMatrixError)
from conftest import random_cloud, random_pose


def adjugate_inverse_3x3(A):
    """Independent 3x3 inverse via the cofactor formula."""
    c = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            m = np.delete(np.delete(A, i, axis=0), j, axis=1)
            c[i, j] = (-1) ** (i + j) * np.linalg.det(m)
    return c.T / np.linalg.det(A)


class TestBuildL:
    def test_unit_diagonal(self):
        L = build_L(np.array([1, 1, 1, 0, 0, 0.0]), beta=0.01)
        assert np.allclose(L, np.diag([1.01, 1.01, 1.01]))

    def test_zero_raw_leaves_beta(self):
        L = build_L(np.zeros(6), beta=0.01)
        assert np.allclose(L, np.diag([0.01, 0.01, 0.01]))

    def test_paper_variance_range(self):
        # raw diagonal 4 maps to a variance near the documented init range
        L = build_L(np.array([4, 4, 4, 0, 0, 0.0]), beta=0.01)
        var = np.diag(covariance_from_L(L))
        assert np.allclose(var, 1.0 / 16.01 ** 2)
        assert np.all((var > 1.5e-3) & (var < 4.5e-3))

    def test_off_diagonal_placement(self):
        L = build_L(np.array([0, 0, 0, 5, 6, 7.0]), beta=0.01)
        assert L[1, 0] == 5 and L[2, 0] == 6 and L[2, 1] == 7
        assert np.all(np.triu(L, 1) == 0)

    def test_beta_must_be_positive(self):
        with pytest.raises(InvalidParameterError):
            build_L(np.zeros(6), beta=0.0)

    # beta floors at the library default 0.01: smaller floors with large
    # off-diagonals push cond(L L^T) past 1/eps, where the matrix is PD in
    # exact arithmetic but no float64 Cholesky can certify it
    @given(st.lists(st.floats(-10, 10), min_size=6, max_size=6),
           st.floats(0.01, 1.0))
    @settings(max_examples=200, deadline=None)
    def test_always_positive_definite(self, raw, beta):
        L = build_L(np.array(raw), beta)
        np.linalg.cholesky(L @ L.T)  # raises if not PD
        assert np.linalg.det(L) >= beta ** 3 * (1 - 1e-12)


class TestInvertLowerTriangular:
    def test_hand_checkable(self):
        L = np.array([[2, 0, 0], [1, 2, 0], [0, 1, 2.0]])
        expected = np.array([[0.5, 0, 0], [-0.25, 0.5, 0], [0.125, -0.25, 0.5]])
        assert np.allclose(invert_lower_triangular(L), expected)

    def test_identity(self):
        assert np.allclose(invert_lower_triangular(np.eye(3)), np.eye(3))

    def test_residual_property(self, rng):
        raws = rng.uniform(-3, 3, size=(1000, 6))
        L = build_L(raws, beta=0.05)
        Linv = invert_lower_triangular(L)
        res = np.abs(L @ Linv - np.eye(3)).max()
        assert res <= 1e-12
        assert np.all(np.triu(Linv[:, :], 1)[:, np.triu_indices(3, 1)[0],
                                             np.triu_indices(3, 1)[1]] == 0)

    def test_singular_rejected(self):
        with pytest.raises(SingularMatrixError):
            invert_lower_triangular(np.diag([1.0, 0.0, 1.0]))


class TestCovarianceFromL:
    def test_diagonal(self):
        assert np.allclose(covariance_from_L(np.diag([2.0, 2, 2])),
                           np.diag([0.25, 0.25, 0.25]))

    def test_identity(self):
        assert np.allclose(covariance_from_L(np.eye(3)), np.eye(3))

    def test_matches_adjugate_oracle(self, rng):
        for _ in range(50):
            L = build_L(rng.uniform(-2, 2, 6), beta=0.05)
            cov = covariance_from_L(L)
            ref = adjugate_inverse_3x3(L @ L.T)
            scale = np.abs(ref).max()
            assert np.abs(cov - ref).max() / scale < 1e-12
            assert np.abs(cov @ (L @ L.T) - np.eye(3)).max() < 1e-8
            assert np.allclose(cov, cov.T)


class TestSampleGaussian:
    def test_zero_draw_returns_mean(self):
        mu = np.array([1.0, -2.0, 3.0])
        L = build_L(np.array([1, 0.5, 2, 0.1, 0, 0.3]), 0.01)
        assert np.array_equal(sample_gaussian(mu, L, np.zeros(3)), mu)

    def test_diagonal_scaling(self):
        out = sample_gaussian(np.zeros(3), np.diag([2.0, 2, 2]),
                              np.array([1.0, 0, 0]))
        assert np.allclose(out, [0.5, 0, 0])

    def test_empirical_covariance(self, rng):
        L = build_L(np.array([0.7, 0.5, 0.9, 0.2, -0.1, 0.15]), 0.01)
        z = rng.standard_normal((100_000, 3))
        samples = sample_gaussian(np.zeros(3), L, z)
        emp = np.cov(samples.T)
        ref = covariance_from_L(L)
        assert np.abs(emp - ref).max() / np.abs(ref).max() < 0.05


class TestToProbeFrame:
    def setup_method(self):
        self.mu = np.array([1.0, 2.0, -0.5])
        self.L = build_L(np.array([0.8, 0.6, 1.1, 0.2, 0.05, -0.1]), 0.01)

    def test_identity_pose(self):
        g = to_probe_frame(self.mu, self.L, ProbePose.identity())
        assert np.allclose(g.mean_probe, self.mu)
        assert np.allclose(g.precision_probe, self.L @ self.L.T)

    def test_pure_translation(self):
        t = np.array([3.0, -1.0, 2.0])
        g = to_probe_frame(self.mu, self.L, ProbePose(np.eye(3), t))
        assert np.allclose(g.mean_probe, self.mu - t)
        assert np.allclose(g.precision_probe, self.L @ self.L.T)

    def test_spectrum_invariance(self, rng):
        A = self.L @ self.L.T
        for _ in range(20):
            pose = random_pose(rng)
            g = to_probe_frame(self.mu, self.L, pose)
            ev1 = np.sort(np.linalg.eigvalsh(g.precision_probe))
            ev2 = np.sort(np.linalg.eigvalsh(A))
            assert np.abs(ev1 - ev2).max() < 1e-9
            assert np.allclose(g.precision_probe, g.l_probe @ g.l_probe.T,
                               atol=1e-9)
            det_ratio = np.linalg.det(g.precision_probe) / np.linalg.det(A)
            assert abs(det_ratio - 1.0) < 1e-6


class TestEvaluateOpacity:
    def test_zero_distance_returns_alpha(self):
        g = to_probe_frame(np.array([1.5, -0.5, 0.0]), np.eye(3),
                           ProbePose.identity())
        assert evaluate_opacity((1.5, -0.5), g, 0.73) == pytest.approx(0.73)

    def test_unit_offset_closed_form(self):
        g = to_probe_frame(np.zeros(3), np.eye(3), ProbePose.identity())
        val = evaluate_opacity((1.0, 0.0), g, 0.8)
        assert val == pytest.approx(0.8 * np.exp(-0.5), rel=1e-12)

    def test_out_of_plane_decay(self):
        g = to_probe_frame(np.array([0, 0, 10.0]), np.eye(3),
                           ProbePose.identity())
        val = evaluate_opacity((0.0, 0.0), g, 0.8)
        assert val <= 0.8 * np.exp(-50)

    def test_monotone_in_distance(self):
        g = to_probe_frame(np.zeros(3), np.eye(3), ProbePose.identity())
        vals = [evaluate_opacity((r, 0.0), g, 0.8) for r in np.linspace(0, 5, 30)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
        assert max(vals) <= 0.8
