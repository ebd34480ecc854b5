"""Core Gaussian representation.

Each Gaussian stores its precision matrix (inverse covariance) through six raw
values of a lower-triangular factor L with Sigma^-1 = L L^T.  The diagonal of
L is l_jj^2 + beta with beta > 0, so the precision is positive-definite by
construction and no normalization step is needed.  The factor is cheap to
invert by forward substitution, which gives both the covariance
Sigma = (L^-1)^T L^-1 and Gaussian sampling y = mu + L^-T z for free.

Raw layout per Gaussian: (L11, L22, L33, L12, L13, L23), with the off-diagonal
entries at matrix positions (2,1), (3,1) and (3,2).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import InvalidParameterError, ProbePose


class SingularMatrixError(ValueError):
    """Triangular factor has a non-positive diagonal entry."""


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x)))


@dataclass
class GaussianCloud:
    """Arrays of per-Gaussian parameters plus the uniform background component.

    Raw intensity/opacity values are unconstrained; the materialized
    intensities c_i and opacities alpha_i go through a sigmoid so they stay
    inside (0, 1) under gradient updates.
    """

    means: np.ndarray           # (N, 3) mm, world frame
    l_raw: np.ndarray           # (N, 6)
    intensity_raw: np.ndarray   # (N,)
    opacity_raw: np.ndarray     # (N,)
    bg_intensity_raw: float
    bg_opacity_raw: float
    beta: float = 0.01

    def __post_init__(self):
        if not self.beta > 0:
            raise InvalidParameterError("beta must be > 0")
        n = self.means.shape[0]
        if self.means.shape != (n, 3) or self.l_raw.shape != (n, 6):
            raise InvalidParameterError("means must be (N,3) and l_raw (N,6)")
        if self.intensity_raw.shape != (n,) or self.opacity_raw.shape != (n,):
            raise InvalidParameterError("intensity_raw/opacity_raw must be (N,)")

    @property
    def n(self) -> int:
        return self.means.shape[0]

    @property
    def intensity(self) -> np.ndarray:
        return sigmoid(self.intensity_raw)

    @property
    def opacity(self) -> np.ndarray:
        return sigmoid(self.opacity_raw)

    @property
    def bg_intensity(self) -> float:
        return float(sigmoid(self.bg_intensity_raw))

    @property
    def bg_opacity(self) -> float:
        return float(sigmoid(self.bg_opacity_raw))

    def astype(self, dtype) -> "GaussianCloud":
        return replace(self,
                       means=self.means.astype(dtype),
                       l_raw=self.l_raw.astype(dtype),
                       intensity_raw=self.intensity_raw.astype(dtype),
                       opacity_raw=self.opacity_raw.astype(dtype))

    def copy(self) -> "GaussianCloud":
        return replace(self,
                       means=self.means.copy(),
                       l_raw=self.l_raw.copy(),
                       intensity_raw=self.intensity_raw.copy(),
                       opacity_raw=self.opacity_raw.copy())


@dataclass(frozen=True)
class ProbeFrameGaussian:
    """One Gaussian expressed in the probe coordinate frame."""

    mean_probe: np.ndarray      # (3,)
    l_probe: np.ndarray         # (3, 3) rotated factor R_W L; not triangular
    precision_probe: np.ndarray  # (3, 3) symmetric PD


def build_L(l_raw: np.ndarray, beta: float) -> np.ndarray:
    """Materialize lower-triangular factors from raw values.

    l_raw may be (6,) or (N, 6); the result is (3, 3) or (N, 3, 3).
    """
    if not beta > 0:
        raise InvalidParameterError("beta must be > 0")
    l = np.asarray(l_raw)
    single = l.ndim == 1
    l = np.atleast_2d(l)
    L = np.zeros(l.shape[:-1] + (3, 3), dtype=l.dtype)
    L[..., 0, 0] = l[..., 0] ** 2 + beta
    L[..., 1, 1] = l[..., 1] ** 2 + beta
    L[..., 2, 2] = l[..., 2] ** 2 + beta
    L[..., 1, 0] = l[..., 3]
    L[..., 2, 0] = l[..., 4]
    L[..., 2, 1] = l[..., 5]
    return L[0] if single else L


def invert_lower_triangular(L: np.ndarray) -> np.ndarray:
    """Invert 3x3 lower-triangular factors by forward substitution.

    Works on (3, 3) or (N, 3, 3) input; closed-form, no LAPACK round trip.
    """
    L = np.asarray(L)
    d = np.stack([L[..., 0, 0], L[..., 1, 1], L[..., 2, 2]], axis=-1)
    if np.any(d <= 0):
        raise SingularMatrixError("non-positive diagonal in triangular factor")
    inv = np.zeros_like(L)
    inv[..., 0, 0] = 1.0 / L[..., 0, 0]
    inv[..., 1, 1] = 1.0 / L[..., 1, 1]
    inv[..., 2, 2] = 1.0 / L[..., 2, 2]
    inv[..., 1, 0] = -L[..., 1, 0] * inv[..., 0, 0] * inv[..., 1, 1]
    inv[..., 2, 1] = -L[..., 2, 1] * inv[..., 1, 1] * inv[..., 2, 2]
    inv[..., 2, 0] = -(L[..., 2, 0] * inv[..., 0, 0]
                       + L[..., 2, 1] * inv[..., 1, 0]) * inv[..., 2, 2]
    return inv


def covariance_from_L(L: np.ndarray) -> np.ndarray:
    """Covariance Sigma = (L^-1)^T L^-1 for factors of the precision."""
    Linv = invert_lower_triangular(L)
    return np.swapaxes(Linv, -1, -2) @ Linv


def sample_gaussian(mean: np.ndarray, L: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Map a standard-normal draw z through the factor: y = mu + L^-T z."""
    Linv = invert_lower_triangular(L)
    z = np.asarray(z)
    return np.asarray(mean) + np.squeeze(
        np.swapaxes(Linv, -1, -2) @ z[..., None], axis=-1)


def to_probe_frame(mean: np.ndarray, L: np.ndarray, pose: ProbePose) -> ProbeFrameGaussian:
    """Express one world-frame Gaussian in the probe frame of `pose`.

    The translation only moves the mean; the precision rotates as
    R_W (L L^T) R_W^T with (R_W, t_W) the inverse (world -> probe) transform.
    """
    inv = pose.inverse()
    mean_probe = inv.rotation @ np.asarray(mean, dtype=np.float64) + inv.translation
    l_probe = inv.rotation @ np.asarray(L, dtype=np.float64)
    return ProbeFrameGaussian(mean_probe=mean_probe, l_probe=l_probe,
                              precision_probe=l_probe @ l_probe.T)


def evaluate_opacity(x, g: ProbeFrameGaussian, alpha: float) -> float:
    """Opacity of one Gaussian at in-plane point x = (x1, x2) mm.

    Lifts x to (x1, x2, 0) in the probe frame and evaluates
    alpha * exp(-0.5 * delta^T A delta) with A the probe-frame precision.
    """
    delta = np.array([x[0], x[1], 0.0]) - g.mean_probe
    q = float(delta @ g.precision_probe @ delta)
    return float(alpha * np.exp(-0.5 * q))
