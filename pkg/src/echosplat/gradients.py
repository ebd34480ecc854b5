"""Analytic backward pass of slice rendering plus a finite-difference checker.

The backward pass re-iterates the same accepted footprints as the forward
pass, using only the retained per-pixel blend state (opacity sum and blended
intensity), so memory stays O(pixels) regardless of the Gaussian count.
Parallel mode partitions the compacted list across threads; every worker
writes disjoint per-Gaussian gradient rows, so no atomics are needed.
Gradients never flow to probe poses.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .geometry import InvalidParameterError, SliceSpec
from .model import GaussianCloud, build_L
from .rasterizer import RenderBuffers, _prepare, rasterize


@dataclass
class ParamGradients:
    """Loss gradients for every trainable parameter group (raw space)."""

    d_means: np.ndarray          # (N, 3)
    d_l_raw: np.ndarray          # (N, 6)
    d_intensity_raw: np.ndarray  # (N,)
    d_opacity_raw: np.ndarray    # (N,)
    d_bg_intensity_raw: float
    d_bg_opacity_raw: float


def backward(cloud: GaussianCloud, spec: SliceSpec, buffers: RenderBuffers,
             d_pixels: np.ndarray, workers: int = 1) -> ParamGradients:
    """Chain an upstream per-pixel gradient back to all raw parameters.

    `buffers` must come from rasterize() on the same cloud and spec; the
    accepted set and footprints are recomputed identically from them.
    """
    if buffers.spec is not spec and (buffers.spec.width != spec.width
                                     or buffers.spec.height != spec.height):
        raise InvalidParameterError("buffers were rendered with a different spec")
    if d_pixels.shape != (spec.height, spec.width):
        raise InvalidParameterError("d_pixels shape mismatch")
    dtype = cloud.means.dtype
    accepted, L, (iu0, iu1, iv0, iv1), (origin, du, dv) = _prepare(
        cloud, spec, buffers.p_mass)
    if not np.array_equal(accepted, buffers.accepted):
        raise InvalidParameterError("buffers do not match this cloud")

    n = cloud.n
    m = len(accepted)
    means = np.ascontiguousarray(cloud.means[accepted])
    Ls = np.ascontiguousarray(L[accepted])
    colors = cloud.intensity[accepted].astype(dtype)
    alphas = cloud.opacity[accepted].astype(dtype)
    ssum = buffers.opacity_sum
    chat = (buffers.intensity_num / ssum).astype(dtype)
    dpix = np.ascontiguousarray(d_pixels.astype(dtype))

    d_mu = np.zeros((m, 3), dtype=dtype)
    d_L = np.zeros((m, 3, 3), dtype=dtype)
    d_c = np.zeros(m, dtype=dtype)
    d_a = np.zeros(m, dtype=dtype)

    def run(sl):
        _kernels.backward_kernel(means[sl], Ls[sl], colors[sl], alphas[sl],
                                 iu0[sl], iu1[sl], iv0[sl], iv1[sl],
                                 origin, du, dv, chat, ssum, dpix,
                                 d_mu[sl], d_L[sl], d_c[sl], d_a[sl])

    if workers <= 1 or m < 2 * workers:
        run(slice(None))
    else:
        chunks = [slice(b[0], b[-1] + 1) for b in
                  np.array_split(np.arange(m), workers) if len(b)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, chunks))

    # chain through the raw parametrizations
    grads = ParamGradients(
        d_means=np.zeros((n, 3), dtype=dtype),
        d_l_raw=np.zeros((n, 6), dtype=dtype),
        d_intensity_raw=np.zeros(n, dtype=dtype),
        d_opacity_raw=np.zeros(n, dtype=dtype),
        d_bg_intensity_raw=0.0,
        d_bg_opacity_raw=0.0,
    )
    grads.d_means[accepted] = d_mu
    l_acc = cloud.l_raw[accepted]
    d_l = np.empty((m, 6), dtype=dtype)
    d_l[:, 0] = d_L[:, 0, 0] * 2.0 * l_acc[:, 0]   # diagonal: L_jj = l^2 + beta
    d_l[:, 1] = d_L[:, 1, 1] * 2.0 * l_acc[:, 1]
    d_l[:, 2] = d_L[:, 2, 2] * 2.0 * l_acc[:, 2]
    d_l[:, 3] = d_L[:, 1, 0]
    d_l[:, 4] = d_L[:, 2, 0]
    d_l[:, 5] = d_L[:, 2, 1]
    grads.d_l_raw[accepted] = d_l
    grads.d_intensity_raw[accepted] = d_c * colors * (1.0 - colors)
    grads.d_opacity_raw[accepted] = d_a * alphas * (1.0 - alphas)

    # background gradients touch every pixel of the image
    c_bg = cloud.bg_intensity
    a_bg = cloud.bg_opacity
    inv_s = 1.0 / ssum
    d_cbg = float(np.sum(dpix * a_bg * inv_s))
    d_abg = float(np.sum(dpix * (c_bg - chat) * inv_s))
    grads.d_bg_intensity_raw = d_cbg * c_bg * (1.0 - c_bg)
    grads.d_bg_opacity_raw = d_abg * a_bg * (1.0 - a_bg)
    return grads


def _loss_and_grad(cloud, spec, p):
    """Scalar probe loss (sum of squared pixels) and its pixel gradient."""
    buffers = rasterize(cloud, spec, p=p)
    pix = buffers.intensity_num / buffers.opacity_sum
    return float(np.sum(pix ** 2)), 2.0 * pix, buffers


def grad_check(cloud: GaussianCloud, spec: SliceSpec, seed: int = 0,
               h: float | tuple = (1e-5, 1e-4, 1e-3),
               p: float = 0.9999) -> dict:
    """Compare backward() against central finite differences in 64-bit.

    Uses the sum of squared rendered pixels as the scalar loss and reports
    the worst relative error per parameter group, skipping entries where
    |analytic| + |numeric| <= 1e-8.  Central differences are evaluated at
    each step size in `h` and the best agreement is kept per entry: the
    difference error is V-shaped in the step (roundoff below, truncation
    above), so no single step suits both large- and small-magnitude
    gradient entries.  Intended for small clouds (N <= 50).
    """
    del seed  # the check is deterministic; kept for harness symmetry
    steps = (h,) if np.isscalar(h) else tuple(h)
    cloud = cloud.astype(np.float64)
    _, dpix, buffers = _loss_and_grad(cloud, spec, p)
    grads = backward(cloud, spec, buffers, dpix)

    groups = {
        "means": (cloud.means, grads.d_means),
        "l_raw": (cloud.l_raw, grads.d_l_raw),
        "intensity_raw": (cloud.intensity_raw, grads.d_intensity_raw),
        "opacity_raw": (cloud.opacity_raw, grads.d_opacity_raw),
        "bg_intensity_raw": (None, grads.d_bg_intensity_raw),
        "bg_opacity_raw": (None, grads.d_bg_opacity_raw),
    }

    def loss_with(field, idx, value):
        c = cloud.copy()
        if field in ("bg_intensity_raw", "bg_opacity_raw"):
            setattr(c, field, value)
        else:
            getattr(c, field)[idx] = value
        return _loss_and_grad(c, spec, p)[0]

    def entry_error(field, idx, base, ana):
        best = None
        for step in steps:
            lp = loss_with(field, idx, base + step)
            lm = loss_with(field, idx, base - step)
            num = (lp - lm) / (2 * step)
            denom = abs(ana) + abs(num)
            err = abs(ana - num) / denom if denom > 1e-8 else 0.0
            best = err if best is None else min(best, err)
        return best

    report = {}
    for name, (arr, g) in groups.items():
        if arr is None:
            report[name] = entry_error(name, None, getattr(cloud, name), g)
            continue
        worst = 0.0
        for idx in np.ndindex(arr.shape):
            worst = max(worst, entry_error(name, idx, arr[idx], g[idx]))
        report[name] = worst
    return report
