import numpy as np
import pytest

from echosplat.geometry import ProbePose, SliceSpec, pixel_grid_world
from echosplat.model import GaussianCloud, build_L


def random_cloud(rng, n, extent=8.0, sigma_range=(0.8, 3.0), dtype=np.float32,
                 bg_opacity_raw=-4.0):
    """Random well-conditioned cloud for rendering tests (sigma in mm)."""
    sigma = rng.uniform(*sigma_range, size=(n, 3))
    beta = 0.01
    l_diag = np.sqrt(np.maximum(1.0 / sigma - beta, 1e-6))
    l_off = rng.uniform(-0.05, 0.05, size=(n, 3))
    return GaussianCloud(
        means=rng.uniform(-extent, extent, size=(n, 3)).astype(dtype),
        l_raw=np.concatenate([l_diag, l_off], axis=1).astype(dtype),
        intensity_raw=rng.normal(0.0, 1.0, n).astype(dtype),
        opacity_raw=rng.normal(1.0, 0.5, n).astype(dtype),
        bg_intensity_raw=float(rng.normal(0.0, 0.5)),
        bg_opacity_raw=bg_opacity_raw,
        beta=beta,
    )


def random_pose(rng, translate=5.0):
    from scipy.spatial.transform import Rotation
    quat = rng.standard_normal(4)
    R = Rotation.from_quat(quat / np.linalg.norm(quat)).as_matrix()
    return ProbePose(R, rng.uniform(-translate, translate, 3))


def naive_render(cloud, spec):
    """Reference renderer: every Gaussian at every pixel, no truncation.

    Works straight from the blend equations in 64-bit; independent of the
    bounded rasterizer's culling, footprints and kernels.
    """
    pts = pixel_grid_world(spec)  # (H, W, 3) world mm
    L = build_L(cloud.l_raw.astype(np.float64), cloud.beta)
    num = np.full(pts.shape[:2], cloud.bg_opacity * cloud.bg_intensity)
    den = np.full(pts.shape[:2], cloud.bg_opacity)
    colors = cloud.intensity.astype(np.float64)
    alphas = cloud.opacity.astype(np.float64)
    for g in range(cloud.n):
        e = pts - cloud.means[g].astype(np.float64)
        y = e @ L[g]
        q = np.sum(y * y, axis=-1)
        w = alphas[g] * np.exp(-0.5 * q)
        num += w * colors[g]
        den += w
    return num / den


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
