"""Scalar volumes: raw+JSON file I/O, synthetic phantoms, trilinear sampling.

World convention: the volume is centered at the origin with axes aligned to
the world frame; voxels[iz, iy, ix] sits at world
((ix - (W-1)/2) * s, (iy - (H-1)/2) * s, (iz - (D-1)/2) * s) for isotropic
spacing s in mm.  Samples outside the voxel grid read as 0 (black).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .geometry import InvalidParameterError, SliceImage, SliceSpec, pixel_grid_world
from .model import GaussianCloud, build_L

FORMAT_VERSION = 1


class VolumeFormatError(ValueError):
    """Volume file pair is inconsistent or corrupt."""


@dataclass
class Volume:
    """D x H x W scalar grid in [0, 1] with isotropic voxel spacing (mm)."""

    voxels: np.ndarray  # (D, H, W) float32
    spacing: float

    def __post_init__(self):
        if not self.spacing > 0:
            raise InvalidParameterError("spacing must be > 0")
        if not np.all(np.isfinite(self.voxels)):
            raise VolumeFormatError("volume contains non-finite voxels")

    @property
    def dims(self) -> tuple:
        return self.voxels.shape

    @property
    def extent_mm(self) -> np.ndarray:
        """World extent per axis (x, y, z) in mm."""
        d, h, w = self.voxels.shape
        return np.array([w, h, d]) * self.spacing

    def world_bounds(self) -> np.ndarray:
        """(2, 3) min/max world coordinates of the volume box (x, y, z)."""
        half = self.extent_mm / 2.0
        return np.stack([-half, half])


def _paths(path) -> tuple:
    base = Path(path)
    if base.suffix in (".raw", ".json"):
        base = base.with_suffix("")
    return base.with_suffix(".raw"), base.with_suffix(".json")


def save_volume(volume: Volume, path) -> None:
    """Write `<path>.raw` (float32 LE) and `<path>.json` sidecar."""
    raw_path, json_path = _paths(path)
    voxels = np.ascontiguousarray(volume.voxels, dtype="<f4")
    raw_path.write_bytes(voxels.tobytes())
    meta = {"dims": list(volume.voxels.shape),
            "spacing": volume.spacing,
            "version": FORMAT_VERSION}
    json_path.write_text(json.dumps(meta, indent=2))


def load_volume(path) -> Volume:
    raw_path, json_path = _paths(path)
    try:
        meta = json.loads(json_path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise VolumeFormatError(f"cannot read sidecar {json_path}: {e}") from e
    if meta.get("version") != FORMAT_VERSION or "dims" not in meta:
        raise VolumeFormatError(f"unsupported sidecar contents in {json_path}")
    dims = tuple(int(x) for x in meta["dims"])
    payload = raw_path.read_bytes()
    expected = int(np.prod(dims)) * 4
    if len(payload) != expected:
        raise VolumeFormatError(
            f"payload size mismatch in {raw_path}: expected {expected} bytes, "
            f"got {len(payload)}")
    voxels = np.frombuffer(payload, dtype="<f4").reshape(dims)
    return Volume(voxels=voxels.copy(), spacing=float(meta["spacing"]))


def volume_info(volume: Volume) -> dict:
    d, h, w = volume.voxels.shape
    return {"dims": [d, h, w], "spacing": volume.spacing,
            "extent_mm": volume.extent_mm.tolist()}


def voxel_centers_world(dims, spacing, dtype=np.float64):
    """World coordinate axes (xs, ys, zs) of voxel centers."""
    d, h, w = dims
    xs = (np.arange(w, dtype=dtype) - (w - 1) / 2.0) * spacing
    ys = (np.arange(h, dtype=dtype) - (h - 1) / 2.0) * spacing
    zs = (np.arange(d, dtype=dtype) - (d - 1) / 2.0) * spacing
    return xs, ys, zs


def evaluate_cloud_on_grid(cloud: GaussianCloud, dims, spacing) -> np.ndarray:
    """Blend-equation value of a cloud at every voxel center (no truncation).

    This is the direct per-point evaluation of the rendering combination
    rule; the blobs phantom is generated with it, which makes that phantom
    exactly representable by the model.
    """
    d, h, w = dims
    xs, ys, zs = voxel_centers_world(dims, spacing)
    L = build_L(cloud.l_raw.astype(np.float64), cloud.beta)
    colors = cloud.intensity.astype(np.float64)
    alphas = cloud.opacity.astype(np.float64)
    out = np.empty(dims, dtype=np.float64)
    grid_xy = np.stack(np.meshgrid(xs, ys, indexing="xy"), axis=-1)  # (H, W, 2)
    for iz in range(d):
        num = np.full((h, w), cloud.bg_opacity * cloud.bg_intensity)
        den = np.full((h, w), cloud.bg_opacity)
        for g in range(cloud.n):
            e = np.empty((h, w, 3))
            e[..., :2] = grid_xy - cloud.means[g, :2].astype(np.float64)
            e[..., 2] = zs[iz] - float(cloud.means[g, 2])
            y = e @ L[g]  # (L^T e)^T rows
            q = np.sum(y * y, axis=-1)
            wgt = alphas[g] * np.exp(-0.5 * q)
            num += wgt * colors[g]
            den += wgt
        out[iz] = num / den
    return np.clip(out, 0.0, 1.0)


def blobs_cloud(dims, spacing, seed: int, k: int = 12) -> GaussianCloud:
    """Random anisotropic Gaussians used to generate the blobs phantom."""
    rng = np.random.default_rng(seed)
    d, h, w = dims
    half = np.array([w, h, d]) * spacing / 2.0
    means = rng.uniform(-0.55 * half, 0.55 * half, size=(k, 3))
    # diagonal raw values give sigma roughly 2.5-7 mm; small off-diagonals tilt
    sigma = rng.uniform(2.5, 7.0, size=(k, 3))
    beta = 0.01
    l_diag = np.sqrt(np.maximum(1.0 / sigma - beta, 1e-6))
    l_off = rng.uniform(-0.03, 0.03, size=(k, 3))
    l_raw = np.concatenate([l_diag, l_off], axis=1)
    c = rng.uniform(0.3, 0.95, size=k)
    a = rng.uniform(0.4, 0.85, size=k)
    logit = lambda p: np.log(p / (1.0 - p))
    return GaussianCloud(means=means.astype(np.float32),
                         l_raw=l_raw.astype(np.float32),
                         intensity_raw=logit(c).astype(np.float32),
                         opacity_raw=logit(a).astype(np.float32),
                         bg_intensity_raw=float(logit(0.05)),
                         bg_opacity_raw=-4.0,
                         beta=beta)


def _shells(dims, spacing, rng) -> np.ndarray:
    d, h, w = dims
    xs, ys, zs = voxel_centers_world(dims, spacing)
    half = np.array([w, h, d]) * spacing / 2.0
    zz, yy, xx = np.meshgrid(zs, ys, xs, indexing="ij")
    vol = np.full(dims, 0.08)
    # three nested ellipsoid shells with distinct intensities
    radii = np.array([0.85, 0.60, 0.35])[:, None] * half[None, :]
    thickness = np.array([0.10, 0.09, 0.30])
    levels = [0.55, 0.80, 0.40]
    axes_jitter = rng.uniform(0.9, 1.1, size=(3, 3))
    for r, th, lvl, jit in zip(radii, thickness, levels, axes_jitter):
        rr = np.sqrt((xx / (r[0] * jit[0])) ** 2
                     + (yy / (r[1] * jit[1])) ** 2
                     + (zz / (r[2] * jit[2])) ** 2)
        shell = np.exp(-0.5 * ((rr - 1.0) / th) ** 2) if th < 0.2 else (rr <= 1.0) * 1.0
        vol = np.maximum(vol, lvl * shell)
    vol = gaussian_filter(vol, sigma=1.0)
    # mild speckle-like multiplicative field, smoothed so it stays learnable
    speckle = gaussian_filter(rng.standard_normal(dims), sigma=2.0)
    speckle = 1.0 + 0.45 * speckle / max(np.std(speckle), 1e-9)
    return np.clip(vol * np.clip(speckle, 0.3, 1.7), 0.0, 1.0)


def _checker(dims, spacing, rng) -> np.ndarray:
    del spacing
    d, h, w = dims
    block = max(2, min(d, h, w) // 8)
    iz, iy, ix = np.meshgrid(np.arange(d) // block, np.arange(h) // block,
                             np.arange(w) // block, indexing="ij")
    parity = (iz + iy + ix) % 2
    lo, hi = rng.uniform(0.05, 0.2), rng.uniform(0.7, 0.95)
    return np.where(parity == 0, lo, hi).astype(np.float64)


def make_phantom(kind: str, dims, spacing: float, seed: int = 0) -> Volume:
    """Deterministic synthetic ground-truth volume.

    kinds: "shells" (nested smoothed ellipsoid shells with speckle),
    "blobs" (random Gaussians, exactly representable by the model),
    "checker" (axis-aligned contrast blocks).
    """
    if isinstance(dims, int):
        dims = (dims, dims, dims)
    dims = tuple(int(x) for x in dims)
    if min(dims) < 8:
        raise InvalidParameterError("phantom dims must be >= 8 per axis")
    rng = np.random.default_rng(seed)
    if kind == "blobs":
        cloud = blobs_cloud(dims, spacing, seed)
        voxels = evaluate_cloud_on_grid(cloud, dims, spacing)
    elif kind == "shells":
        voxels = _shells(dims, spacing, rng)
    elif kind == "checker":
        voxels = _checker(dims, spacing, rng)
    else:
        raise InvalidParameterError(f"unknown phantom kind {kind!r}")
    return Volume(voxels=voxels.astype(np.float32), spacing=float(spacing))


def sample_volume_at(volume: Volume, points: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of world-frame points (..., 3); outside -> 0."""
    d, h, w = volume.voxels.shape
    s = volume.spacing
    p = np.asarray(points, dtype=np.float64)
    fx = p[..., 0] / s + (w - 1) / 2.0
    fy = p[..., 1] / s + (h - 1) / 2.0
    fz = p[..., 2] / s + (d - 1) / 2.0

    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    z0 = np.floor(fz).astype(np.int64)
    tx = fx - x0
    ty = fy - y0
    tz = fz - z0

    out = np.zeros(p.shape[:-1], dtype=np.float64)
    vox = volume.voxels
    for dz in (0, 1):
        for dy in (0, 1):
            for dx in (0, 1):
                xi, yi, zi = x0 + dx, y0 + dy, z0 + dz
                valid = ((xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
                         & (zi >= 0) & (zi < d))
                val = np.where(valid,
                               vox[np.clip(zi, 0, d - 1),
                                   np.clip(yi, 0, h - 1),
                                   np.clip(xi, 0, w - 1)], 0.0)
                wgt = ((tx if dx else 1.0 - tx)
                       * (ty if dy else 1.0 - ty)
                       * (tz if dz else 1.0 - tz))
                out += wgt * val
    return out


def sample_slice(volume: Volume, spec: SliceSpec) -> SliceImage:
    """Ground-truth slice: every pixel lifted to the plane and interpolated."""
    points = pixel_grid_world(spec)
    pixels = sample_volume_at(volume, points)
    return SliceImage(pixels=pixels.astype(np.float32), spacing=spec.spacing,
                      pose=spec.pose)
