"""Forward slice rendering: cull, compact, rasterize, blend with background.

Rendering is intersection-based: each Gaussian is evaluated directly at pixel
points lifted onto the probe plane, so there is no depth sorting and the
per-pixel accumulation is order-independent.  A two-phase scheme keeps it
fast:

  Phase 1: per-Gaussian confidence-ellipsoid bounding boxes in the probe
           frame; reject boxes that do not straddle the plane (z = 0) or
           whose in-plane footprint misses the image rectangle, then compact
           the surviving indices.
  Phase 2: rasterize each accepted Gaussian only over the pixels inside its
           in-plane footprint, partitioned evenly across workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from . import _kernels
from .geometry import InvalidParameterError, SliceImage, SliceSpec, plane_axes
from .model import (GaussianCloud, ProbeFrameGaussian, build_L,
                    invert_lower_triangular)

DEFAULT_P_MASS = 0.95


@dataclass(frozen=True)
class BoundingBox3:
    """Axis-aligned probe-frame box around a confidence ellipsoid (mm)."""

    b_min: np.ndarray  # (3,)
    b_max: np.ndarray  # (3,)


@dataclass
class RenderBuffers:
    """Per-pixel accumulators plus the forward state the backward pass needs."""

    intensity_num: np.ndarray  # (H, W): sum of w_i * c_i plus background term
    opacity_sum: np.ndarray    # (H, W): sum of w_i plus alpha_BG
    accepted: np.ndarray       # indices of Gaussians that survived culling
    spec: SliceSpec
    p_mass: float

    @property
    def pixels(self) -> np.ndarray:
        return np.clip(self.intensity_num / self.opacity_sum, 0.0, 1.0)


def chi2_cutoff(p: float) -> float:
    """Squared-Mahalanobis cutoff enclosing mass fraction p (3 dof)."""
    if not 0.0 < p < 1.0:
        raise InvalidParameterError("mass fraction p must be in (0, 1)")
    return float(chi2.ppf(p, df=3))


def bounding_box(g: ProbeFrameGaussian, p: float = DEFAULT_P_MASS) -> BoundingBox3:
    """Tight axis-aligned box around the p-mass ellipsoid of one Gaussian.

    Half-width along axis j is sqrt(cutoff * Sigma_jj); the covariance
    diagonal comes straight from the rotated inverse factor, no 3x3 inversion.
    """
    cut = chi2_cutoff(p)
    # precision_probe = B B^T with B = R_W L, so Sigma = (B^-T)(B^-T)^T.
    # l_probe = R_W L is not triangular; recover B^-T = R_W L^-T from it is
    # not direct, so invert via the covariance relation instead.
    cov = np.linalg.inv(g.precision_probe)
    half = np.sqrt(cut * np.diag(cov))
    return BoundingBox3(b_min=g.mean_probe - half, b_max=g.mean_probe + half)


def _boxes_vectorized(mean_probe: np.ndarray, rows: np.ndarray, cut) -> tuple:
    """Boxes for all Gaussians; rows = R_W L^-T so Sigma_jj = ||rows[j]||^2."""
    half = np.sqrt(cut) * np.linalg.norm(rows, axis=2)
    return mean_probe - half, mean_probe + half


def cull(bboxes, spec: SliceSpec | None = None) -> np.ndarray:
    """Phase-1 mask: keep boxes that straddle the probe plane.

    Accepts a list of BoundingBox3 or a (b_min, b_max) array pair.  When a
    SliceSpec is given, boxes whose in-plane footprint lies entirely outside
    the image rectangle are rejected too.
    """
    if isinstance(bboxes, tuple):
        b_min, b_max = bboxes
    else:
        b_min = np.array([b.b_min for b in bboxes]).reshape(-1, 3)
        b_max = np.array([b.b_max for b in bboxes]).reshape(-1, 3)
    mask = (b_min[:, 2] <= 0.0) & (b_max[:, 2] >= 0.0)
    if spec is not None:
        x1_half = (spec.width - 1) / 2.0 * spec.spacing
        x2_half = (spec.height - 1) / 2.0 * spec.spacing
        mask &= (b_max[:, 0] >= -x1_half) & (b_min[:, 0] <= x1_half)
        mask &= (b_max[:, 1] >= -x2_half) & (b_min[:, 1] <= x2_half)
    return mask


def compact(mask: np.ndarray) -> np.ndarray:
    """Ascending indices of accepted entries."""
    return np.nonzero(np.asarray(mask))[0]


def _prepare(cloud: GaussianCloud, spec: SliceSpec, p: float):
    """Shared phase-1 work for the forward and backward passes.

    Returns (accepted, world_L, pixel windows, slice axes); windows are
    inclusive pixel index ranges clamped to the image.
    """
    dtype = cloud.means.dtype
    cut = chi2_cutoff(p)
    L = build_L(cloud.l_raw, cloud.beta)
    inv = spec.pose.inverse()
    Rw = inv.rotation.astype(dtype)
    mean_probe = cloud.means @ Rw.T + inv.translation.astype(dtype)
    Linv_T = np.swapaxes(invert_lower_triangular(L), -1, -2)
    rows = np.einsum("ij,njk->nik", Rw, Linv_T)
    b_min, b_max = _boxes_vectorized(mean_probe, rows, dtype.type(cut))
    accepted = compact(cull((b_min, b_max), spec))

    s = spec.spacing
    cx = (spec.width - 1) / 2.0
    cy = (spec.height - 1) / 2.0
    iu0 = np.maximum(np.ceil(b_min[accepted, 0] / s + cx), 0).astype(np.int64)
    iu1 = np.minimum(np.floor(b_max[accepted, 0] / s + cx), spec.width - 1).astype(np.int64)
    iv0 = np.maximum(np.ceil(b_min[accepted, 1] / s + cy), 0).astype(np.int64)
    iv1 = np.minimum(np.floor(b_max[accepted, 1] / s + cy), spec.height - 1).astype(np.int64)
    nonempty = (iu0 <= iu1) & (iv0 <= iv1)
    accepted = accepted[nonempty]
    windows = (iu0[nonempty], iu1[nonempty], iv0[nonempty], iv1[nonempty])
    origin, du, dv = plane_axes(spec, dtype)
    return accepted, L, windows, (origin, du, dv)


def rasterize(cloud: GaussianCloud, spec: SliceSpec,
              p: float = DEFAULT_P_MASS, workers: int = 1) -> RenderBuffers:
    """Render accumulators for one slice.

    workers=1 is the deterministic sequential mode; workers>1 splits the
    compacted Gaussian list into per-thread chunks with private accumulators
    (summed at the end, so results match sequential up to float reordering).
    """
    dtype = cloud.means.dtype
    h, w = spec.height, spec.width
    accepted, L, (iu0, iu1, iv0, iv1), (origin, du, dv) = _prepare(cloud, spec, p)

    means = np.ascontiguousarray(cloud.means[accepted])
    Ls = np.ascontiguousarray(L[accepted])
    colors = cloud.intensity[accepted].astype(dtype)
    alphas = cloud.opacity[accepted].astype(dtype)

    def run(sl):
        num = np.zeros((h, w), dtype=dtype)
        den = np.zeros((h, w), dtype=dtype)
        _kernels.forward_kernel(means[sl], Ls[sl], colors[sl], alphas[sl],
                                iu0[sl], iu1[sl], iv0[sl], iv1[sl],
                                origin, du, dv, num, den)
        return num, den

    if workers <= 1 or len(accepted) < 2 * workers:
        num, den = run(slice(None))
    else:
        chunks = [slice(b[0], b[-1] + 1) for b in
                  np.array_split(np.arange(len(accepted)), workers) if len(b)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, chunks))
        num = sum(p_[0] for p_ in parts)
        den = sum(p_[1] for p_ in parts)

    alpha_bg = dtype.type(cloud.bg_opacity)
    num += alpha_bg * dtype.type(cloud.bg_intensity)
    den += alpha_bg
    return RenderBuffers(intensity_num=num, opacity_sum=den,
                         accepted=accepted, spec=spec, p_mass=p)


def render_slice(cloud: GaussianCloud, spec: SliceSpec,
                 p: float = DEFAULT_P_MASS, workers: int = 1) -> SliceImage:
    """Render one slice image (pixel = intensity_num / opacity_sum in [0, 1])."""
    buffers = rasterize(cloud, spec, p=p, workers=workers)
    return SliceImage(pixels=buffers.pixels, spacing=spec.spacing, pose=spec.pose)
