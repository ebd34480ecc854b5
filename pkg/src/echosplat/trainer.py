"""Optimization loop: init, loss, Adam with per-group rates, heuristics.

All Gaussian parameters train with a shared Adam rate except the means,
which follow an exponential learning-rate decay from lr_means_start to
lr_means_final over the configured iteration budget.  Every
heuristic_interval iterations near-transparent Gaussians are pruned and
high-gradient ones are split (drawing child means from the parent
distribution) or cloned, with Adam moments resized consistently.
"""

from __future__ import annotations

import json
import os
import struct
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .dataset import SliceDataset
from .geometry import InvalidParameterError, SliceSpec
from .gradients import ParamGradients, backward
from .model import GaussianCloud, build_L, covariance_from_L, sample_gaussian
from .rasterizer import rasterize
from .metrics import ssim as ssim_metric
from .metrics import ssim_with_grad

CHECKPOINT_MAGIC = b"UGSC"
CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    def __init__(self, message, snapshot_path=None):
        super().__init__(message)
        self.snapshot_path = snapshot_path


class CheckpointFormatError(ValueError):
    pass


@dataclass
class TrainConfig:
    n_gaussians: int = 20000
    iterations: int = 3000
    lr_general: float = 0.05
    lr_general_final: float | None = None  # set -> exponential decay to this
    lr_means_start: float = 0.00016
    lr_means_final: float = 1.6e-6
    ssim_loss_weight: float = 0.2        # lambda in (1-l)*L1 + l*(1-SSIM)
    l2_loss: bool = False                # pure-L2 mode instead of L1+SSIM
    heuristic_interval: int = 100
    densify_grad_threshold: float | None = None  # None: 90th pct of 1st window
    prune_alpha_threshold: float = 0.01
    split_variance_factor: float = 1.6
    split_scale_fraction: float = 0.01   # of scene extent; above -> split
    p_mass: float = 0.95
    seed: int = 0
    batch: int = 1
    workers: int = 1
    eval_interval: int = 100
    l_init_low: float = 4.0
    l_init_high: float = 5.0
    beta: float = 0.01

    def __post_init__(self):
        if self.n_gaussians < 1:
            raise InvalidParameterError("n_gaussians must be >= 1")
        if not 0.0 <= self.ssim_loss_weight <= 1.0:
            raise InvalidParameterError("ssim_loss_weight must be in [0, 1]")
        for name in ("lr_general", "lr_means_start", "lr_means_final"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be > 0")


@dataclass
class AdamState:
    """First/second moment accumulators per parameter group."""

    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15

    @staticmethod
    def for_cloud(cloud: GaussianCloud) -> "AdamState":
        shapes = {"means": cloud.means.shape, "l_raw": cloud.l_raw.shape,
                  "intensity_raw": cloud.intensity_raw.shape,
                  "opacity_raw": cloud.opacity_raw.shape, "bg": (2,)}
        return AdamState(m={k: np.zeros(s, np.float32) for k, s in shapes.items()},
                         v={k: np.zeros(s, np.float32) for k, s in shapes.items()})

    def take_rows(self, index):
        """Keep only the given Gaussian rows (after pruning)."""
        for k in ("means", "l_raw", "intensity_raw", "opacity_raw"):
            self.m[k] = self.m[k][index]
            self.v[k] = self.v[k][index]

    def append_rows(self, count):
        """Zero-initialized moments for newly created Gaussians."""
        for k in ("means", "l_raw", "intensity_raw", "opacity_raw"):
            pad = np.zeros((count,) + self.m[k].shape[1:], np.float32)
            self.m[k] = np.concatenate([self.m[k], pad])
            self.v[k] = np.concatenate([self.v[k], pad])


def init_cloud(config: TrainConfig, bounds: np.ndarray) -> GaussianCloud:
    """Uniform-random means inside `bounds` ((2, 3) mm box), default raws."""
    bounds = np.asarray(bounds, dtype=np.float64)
    if bounds.shape != (2, 3) or np.any(bounds[1] <= bounds[0]):
        raise InvalidParameterError("bounds must be a non-degenerate (2,3) box")
    rng = np.random.default_rng(config.seed)
    n = config.n_gaussians
    means = rng.uniform(bounds[0], bounds[1], size=(n, 3))
    l_raw = rng.uniform(config.l_init_low, config.l_init_high, size=(n, 6))
    return GaussianCloud(
        means=means.astype(np.float32),
        l_raw=l_raw.astype(np.float32),
        intensity_raw=np.zeros(n, np.float32),          # sigmoid -> 0.5
        opacity_raw=np.full(n, 1.0, np.float32),        # sigmoid -> 0.7311
        bg_intensity_raw=0.0,
        bg_opacity_raw=-4.0,                            # sigmoid -> 0.018
        beta=config.beta,
    )


def loss(pred: np.ndarray, target: np.ndarray, lam: float, l2: bool = False):
    """Scalar training loss and its per-pixel gradient.

    Default: (1 - lam) * L1 + lam * (1 - SSIM).  l2=True switches to plain
    mean squared error.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise InvalidParameterError("prediction/target dimensions differ")
    diff = pred - target
    npx = pred.size
    if l2:
        return float(np.mean(diff ** 2)), 2.0 * diff / npx
    l1 = float(np.mean(np.abs(diff)))
    d = (1.0 - lam) * np.sign(diff) / npx
    total = (1.0 - lam) * l1
    if lam > 0.0:
        s, ds = ssim_with_grad(pred, target)
        total += lam * (1.0 - s)
        d = d - lam * ds
    return total, d


def mean_lr(config: TrainConfig, t: int) -> float:
    """Exponentially decayed mean learning rate at step t of the budget."""
    frac = min(t / max(config.iterations, 1), 1.0)
    return config.lr_means_start * (config.lr_means_final
                                    / config.lr_means_start) ** frac


def general_lr(config: TrainConfig, t: int) -> float:
    """Shared rate for non-mean groups; constant unless a final value is set."""
    if config.lr_general_final is None:
        return config.lr_general
    frac = min(t / max(config.iterations, 1), 1.0)
    return config.lr_general * (config.lr_general_final
                                / config.lr_general) ** frac


def adam_step(state: AdamState, cloud: GaussianCloud, grads: ParamGradients,
              lrs: dict) -> GaussianCloud:
    """One in-place Adam update with bias correction; returns the cloud."""
    state.t += 1
    t = state.t
    groups = {
        "means": (cloud.means, grads.d_means),
        "l_raw": (cloud.l_raw, grads.d_l_raw),
        "intensity_raw": (cloud.intensity_raw, grads.d_intensity_raw),
        "opacity_raw": (cloud.opacity_raw, grads.d_opacity_raw),
        "bg": (None, np.array([grads.d_bg_intensity_raw,
                               grads.d_bg_opacity_raw], np.float32)),
    }
    for name, (param, g) in groups.items():
        m = state.m[name]
        v = state.v[name]
        if m.shape != np.shape(g):
            raise InvalidParameterError(f"moment/gradient shape mismatch for {name}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g.astype(np.float64) ** 2
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        update = lrs[name] * m_hat / (np.sqrt(v_hat) + state.eps)
        if name == "bg":
            cloud.bg_intensity_raw = float(cloud.bg_intensity_raw - update[0])
            cloud.bg_opacity_raw = float(cloud.bg_opacity_raw - update[1])
        else:
            param -= update.astype(param.dtype)
    return cloud


def densify_prune_resample(cloud: GaussianCloud, grad_norm_avg: np.ndarray,
                           state: AdamState, config: TrainConfig,
                           rng: np.random.Generator, scene_extent: float,
                           threshold: float, max_total: int):
    """Prune transparent Gaussians, split/clone high-gradient ones.

    Split children draw their means from the parent distribution and carry
    a variance shrunk by split_variance_factor per axis; clones are exact
    copies.  Total count is capped at max_total; Adam moments follow.
    """
    keep = cloud.opacity >= config.prune_alpha_threshold
    idx = np.nonzero(keep)[0]
    cloud = GaussianCloud(means=cloud.means[idx], l_raw=cloud.l_raw[idx],
                          intensity_raw=cloud.intensity_raw[idx],
                          opacity_raw=cloud.opacity_raw[idx],
                          bg_intensity_raw=cloud.bg_intensity_raw,
                          bg_opacity_raw=cloud.bg_opacity_raw, beta=cloud.beta)
    state.take_rows(idx)
    grad_norm_avg = grad_norm_avg[idx]

    budget = max_total - cloud.n
    cand = np.nonzero(grad_norm_avg > threshold)[0]
    if budget <= 0 or len(cand) == 0:
        return cloud, state
    if len(cand) > budget:
        order = np.argsort(grad_norm_avg[cand])[::-1]
        cand = cand[order[:budget]]

    L = build_L(cloud.l_raw[cand].astype(np.float64), cloud.beta)
    max_var = np.max(np.diagonal(covariance_from_L(L), axis1=-2, axis2=-1), axis=-1)
    split_mask = np.sqrt(max_var) > config.split_scale_fraction * scene_extent

    new_rows = {k: [] for k in ("means", "l_raw", "intensity_raw", "opacity_raw")}

    def add(means, l_raw, c_raw, a_raw):
        new_rows["means"].append(means)
        new_rows["l_raw"].append(l_raw)
        new_rows["intensity_raw"].append(c_raw)
        new_rows["opacity_raw"].append(a_raw)

    f = config.split_variance_factor
    for j, gi in enumerate(cand):
        if split_mask[j]:
            # shrink variance by f per axis: L scales by sqrt(f)
            l = cloud.l_raw[gi].astype(np.float64)
            l_new = np.empty(6)
            l_new[:3] = np.sqrt(f * (l[:3] ** 2 + cloud.beta) - cloud.beta)
            l_new[3:] = np.sqrt(f) * l[3:]
            parent_mean = cloud.means[gi].astype(np.float64)
            parent_L = build_L(l, cloud.beta)
            child_mean = sample_gaussian(parent_mean, parent_L,
                                         rng.standard_normal(3))
            child2 = sample_gaussian(parent_mean, parent_L,
                                     rng.standard_normal(3))
            # parent becomes the first child in place
            cloud.means[gi] = child_mean.astype(np.float32)
            cloud.l_raw[gi] = l_new.astype(np.float32)
            add(child2.astype(np.float32), l_new.astype(np.float32),
                cloud.intensity_raw[gi], cloud.opacity_raw[gi])
        else:
            add(cloud.means[gi].copy(), cloud.l_raw[gi].copy(),
                cloud.intensity_raw[gi], cloud.opacity_raw[gi])

    if new_rows["means"]:
        cloud = GaussianCloud(
            means=np.concatenate([cloud.means, np.stack(new_rows["means"])]),
            l_raw=np.concatenate([cloud.l_raw, np.stack(new_rows["l_raw"])]),
            intensity_raw=np.concatenate([cloud.intensity_raw,
                                          np.array(new_rows["intensity_raw"],
                                                   np.float32)]),
            opacity_raw=np.concatenate([cloud.opacity_raw,
                                        np.array(new_rows["opacity_raw"],
                                                 np.float32)]),
            bg_intensity_raw=cloud.bg_intensity_raw,
            bg_opacity_raw=cloud.bg_opacity_raw, beta=cloud.beta)
        state.append_rows(len(new_rows["means"]))
    return cloud, state


def dataset_bounds(dataset: SliceDataset, margin: float = 0.0) -> np.ndarray:
    """World-frame box covering every slice corner of the dataset."""
    corners = []
    for img in dataset.slices:
        h, w = img.pixels.shape
        x1 = (w - 1) / 2.0 * img.spacing
        x2 = (h - 1) / 2.0 * img.spacing
        local = np.array([[sx, sy, 0.0] for sx in (-x1, x1) for sy in (-x2, x2)])
        corners.append(img.pose.apply(local))
    pts = np.concatenate(corners)
    return np.stack([pts.min(axis=0) - margin, pts.max(axis=0) + margin])


def save_checkpoint(cloud: GaussianCloud, path, config: TrainConfig | None = None,
                    iteration: int = 0) -> None:
    """Binary checkpoint (little-endian) plus JSON trailer; atomic write."""
    trailer = json.dumps({"config": asdict(config) if config else None,
                          "iteration": iteration}).encode()
    parts = [CHECKPOINT_MAGIC,
             struct.pack("<II", CHECKPOINT_VERSION, cloud.n),
             np.ascontiguousarray(cloud.means, "<f4").tobytes(),
             np.ascontiguousarray(cloud.l_raw, "<f4").tobytes(),
             np.ascontiguousarray(cloud.intensity_raw, "<f4").tobytes(),
             np.ascontiguousarray(cloud.opacity_raw, "<f4").tobytes(),
             struct.pack("<fff", cloud.bg_intensity_raw, cloud.bg_opacity_raw,
                         cloud.beta),
             struct.pack("<I", len(trailer)),
             trailer]
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


def load_checkpoint(path):
    """Returns (cloud, meta dict with 'config' and 'iteration')."""
    blob = open(path, "rb").read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"bad magic in {path}")
    version, n = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    off = 12

    def take(count):
        nonlocal off
        arr = np.frombuffer(blob, "<f4", count=count, offset=off).copy()
        off += count * 4
        return arr

    means = take(n * 3).reshape(n, 3)
    l_raw = take(n * 6).reshape(n, 6)
    intensity_raw = take(n)
    opacity_raw = take(n)
    bg_c, bg_a, beta = struct.unpack_from("<fff", blob, off)
    off += 12
    (tlen,) = struct.unpack_from("<I", blob, off)
    off += 4
    if off + tlen != len(blob):
        raise CheckpointFormatError(
            f"trailer size mismatch in {path}: expected {off + tlen} bytes, "
            f"file has {len(blob)}")
    meta = json.loads(blob[off:off + tlen].decode())
    cloud = GaussianCloud(means=means, l_raw=l_raw, intensity_raw=intensity_raw,
                          opacity_raw=opacity_raw, bg_intensity_raw=float(bg_c),
                          bg_opacity_raw=float(bg_a), beta=float(beta))
    return cloud, meta


def train(dataset: SliceDataset, config: TrainConfig,
          bounds: np.ndarray | None = None, checkpoint_path=None,
          log_path=None, snapshot_path=None, time_budget_s: float | None = None):
    """Full optimization run over the dataset's training slices.

    Returns (cloud, log) where log is a list of dicts
    {iter, wall_ms, loss, train_ssim} emitted every eval_interval.  A NaN
    loss aborts with a diagnostic snapshot checkpoint.  time_budget_s stops
    early once the wall clock budget is spent.
    """
    train_slices = dataset.subset("train")
    if not train_slices:
        raise InvalidParameterError("dataset has no training slices")
    if bounds is None:
        bounds = dataset_bounds(dataset)
    rng = np.random.default_rng(config.seed)
    cloud = init_cloud(config, bounds)
    state = AdamState.for_cloud(cloud)
    scene_extent = float(np.linalg.norm(bounds[1] - bounds[0]))
    max_total = 2 * config.n_gaussians
    threshold = config.densify_grad_threshold

    grad_sum = np.zeros(cloud.n, np.float32)
    grad_cnt = np.zeros(cloud.n, np.int64)
    order = rng.permutation(len(train_slices))
    cursor = 0
    log = []
    t0 = time.perf_counter()

    for it in range(1, config.iterations + 1):
        if cursor >= len(order):
            order = rng.permutation(len(train_slices))
            cursor = 0
        img = train_slices[order[cursor]]
        cursor += 1
        spec = img.spec

        buffers = rasterize(cloud, spec, p=config.p_mass, workers=config.workers)
        pred = buffers.intensity_num / buffers.opacity_sum
        loss_val, dpix = loss(pred, img.pixels, config.ssim_loss_weight,
                              l2=config.l2_loss)
        if not np.isfinite(loss_val):
            snap = snapshot_path or (str(checkpoint_path or "echosplat") + ".diverged")
            save_checkpoint(cloud, snap, config, it)
            raise TrainingDivergedError(
                f"non-finite loss at iteration {it}; snapshot at {snap}", snap)
        grads = backward(cloud, spec, buffers, dpix, workers=config.workers)

        norms = np.linalg.norm(grads.d_means, axis=1)
        grad_sum[buffers.accepted] += norms[buffers.accepted]
        grad_cnt[buffers.accepted] += 1

        lr_g = general_lr(config, it)
        lrs = {"means": mean_lr(config, it), "l_raw": lr_g,
               "intensity_raw": lr_g, "opacity_raw": lr_g, "bg": lr_g}
        cloud = adam_step(state, cloud, grads, lrs)

        if config.heuristic_interval > 0 and it % config.heuristic_interval == 0:
            avg = grad_sum / np.maximum(grad_cnt, 1)
            if threshold is None:
                threshold = float(np.quantile(avg, 0.9))
            cloud, state = densify_prune_resample(
                cloud, avg, state, config, rng, scene_extent, threshold, max_total)
            grad_sum = np.zeros(cloud.n, np.float32)
            grad_cnt = np.zeros(cloud.n, np.int64)

        if it % config.eval_interval == 0 or it == config.iterations:
            entry = {"iter": it,
                     "wall_ms": (time.perf_counter() - t0) * 1000.0,
                     "loss": loss_val,
                     "train_ssim": float(ssim_metric(np.clip(pred, 0, 1),
                                                     img.pixels))}
            log.append(entry)
            if log_path is not None:
                with open(log_path, "a") as fh:
                    fh.write(json.dumps(entry) + "\n")

        if (time_budget_s is not None
                and time.perf_counter() - t0 >= time_budget_s):
            break

    if checkpoint_path is not None:
        save_checkpoint(cloud, checkpoint_path, config, config.iterations)
    return cloud, log
