"""Slice datasets: sweep construction, train/test splits, directory I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import InvalidParameterError, ProbePose, SliceImage, SliceSpec
from .volume import Volume, sample_slice

MANIFEST_VERSION = 1


@dataclass
class SliceDataset:
    slices: list  # of SliceImage
    split: list = field(default_factory=list)  # "train" | "test" per slice

    def __post_init__(self):
        if not self.split:
            self.split = ["train"] * len(self.slices)
        if len(self.split) != len(self.slices):
            raise InvalidParameterError("split labels must match slice count")

    def subset(self, label: str) -> list:
        return [s for s, lab in zip(self.slices, self.split) if lab == label]


def _rot_x(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _rot_y(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def axial_pose(volume: Volume, plane_index: float,
               theta_x: float = 0.0, theta_y: float = 0.0) -> ProbePose:
    """Pose of an axial plane at (possibly fractional) voxel plane index.

    Optional rotations about the in-plane x and y axes tilt the plane around
    its own center.
    """
    d = volume.voxels.shape[0]
    z = (plane_index - (d - 1) / 2.0) * volume.spacing
    rot = _rot_x(theta_x) @ _rot_y(theta_y)
    return ProbePose(rot, np.array([0.0, 0.0, z]))


def make_axial_stack(volume: Volume, n: int, perturb_deg: float = 0.0,
                     seed: int = 0) -> SliceDataset:
    """n linearly spaced axial slices sampled from the volume.

    Plane indices step by D/n voxel planes, so n = D hits every plane and
    n = D/2 exactly every other one.  perturb_deg > 0 adds independent
    U(-perturb, +perturb) degree tilts about the in-plane x and y axes per
    slice, mimicking an unsteady freehand sweep.
    """
    if n < 1:
        raise InvalidParameterError("need at least one slice")
    if perturb_deg < 0:
        raise InvalidParameterError("perturb_deg must be >= 0")
    rng = np.random.default_rng(seed)
    d, h, w = volume.voxels.shape
    slices = []
    for i in range(n):
        tx = ty = 0.0
        if perturb_deg > 0:
            tx, ty = np.deg2rad(rng.uniform(-perturb_deg, perturb_deg, size=2))
        pose = axial_pose(volume, i * d / n, tx, ty)
        spec = SliceSpec(width=w, height=h, spacing=volume.spacing, pose=pose)
        slices.append(sample_slice(volume, spec))
    return SliceDataset(slices=slices)


def split_dataset(dataset: SliceDataset, train_fraction: float,
                  seed: int = 0) -> SliceDataset:
    """Random train/test partition, deterministic per seed (floor for test)."""
    if not 0.0 < train_fraction < 1.0:
        raise InvalidParameterError("train_fraction must be in (0, 1)")
    n = len(dataset.slices)
    if n < 2:
        raise InvalidParameterError("need at least 2 slices to split")
    # tiny epsilon so e.g. 10 * (1 - 0.8) = 1.9999... still floors to 2
    n_test = int(np.floor(n * (1.0 - train_fraction) + 1e-9))
    perm = np.random.default_rng(seed).permutation(n)
    split = ["train"] * n
    for idx in perm[:n_test]:
        split[idx] = "test"
    return SliceDataset(slices=list(dataset.slices), split=split)


def save_dataset(dataset: SliceDataset, directory) -> None:
    """Write slice_%04d.raw files plus manifest.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (img, label) in enumerate(zip(dataset.slices, dataset.split)):
        name = f"slice_{i:04d}.raw"
        pixels = np.ascontiguousarray(img.pixels, dtype="<f4")
        (directory / name).write_bytes(pixels.tobytes())
        entries.append({
            "file": name,
            "pose": {"rotation": img.pose.rotation.reshape(-1).tolist(),
                     "translation": img.pose.translation.tolist()},
            "spacing": img.spacing,
            "dims": list(img.pixels.shape),
            "split": label,
        })
    manifest = {"version": MANIFEST_VERSION, "slices": entries}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_dataset(directory) -> SliceDataset:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    slices, split = [], []
    for entry in manifest["slices"]:
        h, w = entry["dims"]
        payload = (directory / entry["file"]).read_bytes()
        pixels = np.frombuffer(payload, dtype="<f4").reshape(h, w).copy()
        pose = ProbePose(np.array(entry["pose"]["rotation"]).reshape(3, 3),
                         np.array(entry["pose"]["translation"]))
        slices.append(SliceImage(pixels=pixels, spacing=float(entry["spacing"]),
                                 pose=pose))
        split.append(entry["split"])
    return SliceDataset(slices=slices, split=split)
