"""Image-quality metrics (SSIM, PSNR) and orthogonal-view evaluation.

SSIM follows the standard Wang et al. formulation: 11x11 Gaussian window with
sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1.0, averaged over valid
(fully covered) windows only.  The analytic gradient of mean SSIM with
respect to the first image is available for the training loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .geometry import InvalidParameterError, SliceSpec
from .rasterizer import render_slice
from .volume import Volume, sample_slice
from .dataset import axial_pose
from .geometry import ProbePose

_WIN = 11
_PAD = _WIN // 2
_SIGMA = 1.5
_C1 = 0.01 ** 2
_C2 = 0.03 ** 2


def _window_1d() -> np.ndarray:
    x = np.arange(_WIN) - _PAD
    w = np.exp(-0.5 * (x / _SIGMA) ** 2)
    return w / w.sum()


_W1D = _window_1d()


def _filt(img: np.ndarray) -> np.ndarray:
    """Gaussian-window local mean over valid windows (output cropped by PAD)."""
    out = correlate1d(img, _W1D, axis=0, mode="constant")
    out = correlate1d(out, _W1D, axis=1, mode="constant")
    return out[_PAD:-_PAD, _PAD:-_PAD]


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidParameterError("image dimensions differ")
    return a, b


def _ssim_parts(x, y):
    mu_x = _filt(x)
    mu_y = _filt(y)
    sxx = _filt(x * x) - mu_x ** 2
    syy = _filt(y * y) - mu_y ** 2
    sxy = _filt(x * y) - mu_x * mu_y
    a1 = 2.0 * mu_x * mu_y + _C1
    a2 = 2.0 * sxy + _C2
    b1 = mu_x ** 2 + mu_y ** 2 + _C1
    b2 = sxx + syy + _C2
    s = (a1 * a2) / (b1 * b2)
    return s, (mu_x, mu_y, sxy, a1, a2, b1, b2)


def ssim(a, b) -> float:
    """Mean structural similarity of two range-[0,1] images."""
    x, y = _check_pair(a, b)
    if min(x.shape) < _WIN:
        raise InvalidParameterError(f"images must be at least {_WIN}x{_WIN}")
    s, _ = _ssim_parts(x, y)
    return float(np.mean(s))


def ssim_with_grad(a, b):
    """(mean SSIM, d meanSSIM / d a) with the same valid-window convention."""
    x, y = _check_pair(a, b)
    if min(x.shape) < _WIN:
        raise InvalidParameterError(f"images must be at least {_WIN}x{_WIN}")
    s, (mu_x, mu_y, sxy, a1, a2, b1, b2) = _ssim_parts(x, y)
    nv = s.size

    # partials of the per-window score wrt (mu_x, sigma_xx, sigma_xy)
    ds_dmu = (2.0 * mu_y * a2) / (b1 * b2) - (2.0 * mu_x * a1 * a2) / (b1 ** 2 * b2)
    ds_dsxx = -s / b2
    ds_dsxy = 2.0 * a1 / (b1 * b2)

    def back(field):
        full = np.zeros_like(x)
        full[_PAD:-_PAD, _PAD:-_PAD] = field
        out = correlate1d(full, _W1D, axis=0, mode="constant")
        return correlate1d(out, _W1D, axis=1, mode="constant")

    grad = (back(ds_dmu - 2.0 * mu_x * ds_dsxx - mu_y * ds_dsxy)
            + 2.0 * x * back(ds_dsxx) + y * back(ds_dsxy))
    return float(np.mean(s)), grad / nv


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for range-1 images; inf when equal."""
    x, y = _check_pair(a, b)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


@dataclass
class EvalReport:
    """Per-plane-family reconstruction quality statistics."""

    families: dict  # family -> {ssim_mean, ssim_std, psnr_mean, psnr_std, count, psnr_inf_count}
    timestamp: str

    def to_json_dict(self) -> dict:
        return {"families": {k: dict(sorted(v.items()))
                             for k, v in sorted(self.families.items())},
                "timestamp": self.timestamp}


def _family_poses(volume: Volume, family: str, n: int):
    d, h, w = volume.voxels.shape
    s = volume.spacing
    poses = []
    if family == "axial":
        for i in range(n):
            poses.append((axial_pose(volume, i * d / n), w, h))
    elif family == "coronal":
        # plane axes: x1 -> world x, x2 -> world z, normal -> -y (det +1)
        rot = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
        for i in range(n):
            y = (i * h / n - (h - 1) / 2.0) * s
            poses.append((ProbePose(rot, np.array([0.0, y, 0.0])), w, d))
    elif family == "sagittal":
        # plane axes: x1 -> world y, x2 -> world z, normal -> x
        rot = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        for i in range(n):
            x = (i * w / n - (w - 1) / 2.0) * s
            poses.append((ProbePose(rot, np.array([x, 0.0, 0.0])), h, d))
    else:
        raise InvalidParameterError(f"unknown family {family!r}")
    return [(p, SliceSpec(width=pw, height=ph, spacing=s, pose=p))
            for p, pw, ph in poses]


def evaluate_views(cloud, volume: Volume, n_per_axis: int,
                   p_mass: float = 0.95, workers: int = 1) -> EvalReport:
    """Render linearly spaced orthogonal views and score them against truth.

    For each of the axial/coronal/sagittal families, n_per_axis planes are
    rendered from the cloud and compared with trilinear ground-truth samples
    using SSIM and PSNR (mean and std per family).
    """
    import datetime
    families = {}
    for family in ("axial", "coronal", "sagittal"):
        ssims, psnrs, n_inf = [], [], 0
        for _, spec in _family_poses(volume, family, n_per_axis):
            pred = render_slice(cloud, spec, p=p_mass, workers=workers).pixels
            truth = sample_slice(volume, spec).pixels
            ssims.append(ssim(pred, truth))
            val = psnr(pred, truth)
            if math.isinf(val):
                n_inf += 1
            else:
                psnrs.append(val)
        families[family] = {
            "count": n_per_axis,
            "ssim_mean": float(np.mean(ssims)),
            "ssim_std": float(np.std(ssims)),
            "psnr_mean": float(np.mean(psnrs)) if psnrs else None,
            "psnr_std": float(np.std(psnrs)) if psnrs else None,
            "psnr_inf_count": n_inf,
        }
    stamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
    return EvalReport(families=families, timestamp=stamp)
