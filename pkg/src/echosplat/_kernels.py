"""Numba inner loops for rasterization and its backward pass.

Both kernels iterate accepted Gaussians over their clamped pixel footprints
only.  They are compiled with nogil so the parallel path can run disjoint
chunks of the compacted Gaussian list on plain Python threads; each forward
worker owns its own accumulators, each backward worker writes disjoint
per-Gaussian gradient rows, so no atomics are needed.

All geometry is world-frame: the pixel (u, v) lifts to
origin + u*du + v*dv, and the Mahalanobis form is ||L^T (p - mu)||^2 with L
the world-frame factor of the precision (the quadratic form is invariant to
the rigid probe transform).
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True, fastmath=False)
def forward_kernel(means, Ls, colors, alphas, iu0, iu1, iv0, iv1,
                   origin, du, dv, num, den):
    m = means.shape[0]
    for g in range(m):
        mx, my, mz = means[g, 0], means[g, 1], means[g, 2]
        l00 = Ls[g, 0, 0]
        l10 = Ls[g, 1, 0]
        l11 = Ls[g, 1, 1]
        l20 = Ls[g, 2, 0]
        l21 = Ls[g, 2, 1]
        l22 = Ls[g, 2, 2]
        c = colors[g]
        a = alphas[g]
        for v in range(iv0[g], iv1[g] + 1):
            px = origin[0] + v * dv[0]
            py = origin[1] + v * dv[1]
            pz = origin[2] + v * dv[2]
            for u in range(iu0[g], iu1[g] + 1):
                e0 = px + u * du[0] - mx
                e1 = py + u * du[1] - my
                e2 = pz + u * du[2] - mz
                y0 = l00 * e0 + l10 * e1 + l20 * e2
                y1 = l11 * e1 + l21 * e2
                y2 = l22 * e2
                q = y0 * y0 + y1 * y1 + y2 * y2
                w = a * np.exp(-0.5 * q)
                num[v, u] += w * c
                den[v, u] += w


@njit(cache=True, nogil=True, fastmath=False)
def backward_kernel(means, Ls, colors, alphas, iu0, iu1, iv0, iv1,
                    origin, du, dv, chat, ssum, dpix,
                    d_mu, d_L, d_c, d_a):
    m = means.shape[0]
    for g in range(m):
        mx, my, mz = means[g, 0], means[g, 1], means[g, 2]
        l00 = Ls[g, 0, 0]
        l10 = Ls[g, 1, 0]
        l11 = Ls[g, 1, 1]
        l20 = Ls[g, 2, 0]
        l21 = Ls[g, 2, 1]
        l22 = Ls[g, 2, 2]
        c = colors[g]
        a = alphas[g]
        for v in range(iv0[g], iv1[g] + 1):
            px = origin[0] + v * dv[0]
            py = origin[1] + v * dv[1]
            pz = origin[2] + v * dv[2]
            for u in range(iu0[g], iu1[g] + 1):
                gpix = dpix[v, u]
                if gpix == 0.0:
                    continue
                e0 = px + u * du[0] - mx
                e1 = py + u * du[1] - my
                e2 = pz + u * du[2] - mz
                y0 = l00 * e0 + l10 * e1 + l20 * e2
                y1 = l11 * e1 + l21 * e2
                y2 = l22 * e2
                q = y0 * y0 + y1 * y1 + y2 * y2
                expq = np.exp(-0.5 * q)
                w = a * expq
                inv_s = 1.0 / ssum[v, u]
                # d loss / d c_i and d loss / d w_i through the normalized blend
                d_c[g] += gpix * w * inv_s
                dw = gpix * (c - chat[v, u]) * inv_s
                d_a[g] += dw * expq
                dq = -0.5 * w * dw
                # q = ||L^T e||^2: dq/d mu = -2 L y, dq/dL = 2 e y^T
                r0 = l00 * y0
                r1 = l10 * y0 + l11 * y1
                r2 = l20 * y0 + l21 * y1 + l22 * y2
                d_mu[g, 0] += -2.0 * dq * r0
                d_mu[g, 1] += -2.0 * dq * r1
                d_mu[g, 2] += -2.0 * dq * r2
                two_dq = 2.0 * dq
                d_L[g, 0, 0] += two_dq * e0 * y0
                d_L[g, 1, 0] += two_dq * e1 * y0
                d_L[g, 1, 1] += two_dq * e1 * y1
                d_L[g, 2, 0] += two_dq * e2 * y0
                d_L[g, 2, 1] += two_dq * e2 * y1
                d_L[g, 2, 2] += two_dq * e2 * y2
