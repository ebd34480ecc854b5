"""Render cross-sections of a hand-built Gaussian cloud.

Builds the random-blobs cloud, slices it along the three cardinal
directions plus one oblique pose, and writes the images as PGM files
next to this script.  Run:  python3 demos/01_render_slices.py
"""

from pathlib import Path

import numpy as np

from echosplat.cli import write_pgm
from echosplat.geometry import ProbePose, SliceSpec
from echosplat.rasterizer import render_slice
from echosplat.volume import blobs_cloud

OUT = Path(__file__).parent

cloud = blobs_cloud((64, 64, 64), spacing=0.6, seed=3)
print(f"cloud of {cloud.n} Gaussians, background intensity "
      f"{cloud.bg_intensity:.3f}")

views = {
    "axial": ProbePose.identity(),
    "coronal": ProbePose(np.array([[1., 0., 0.], [0., 0., -1.], [0., 1., 0.]]),
                         np.zeros(3)),
    "sagittal": ProbePose(np.array([[0., 0., 1.], [1., 0., 0.], [0., 1., 0.]]),
                          np.zeros(3)),
    "oblique": ProbePose.from_euler_deg(25.0, -15.0, 40.0, 3.0, -2.0, 5.0),
}

for name, pose in views.items():
    spec = SliceSpec(width=160, height=160, spacing=0.6, pose=pose)
    img = render_slice(cloud, spec, workers=4)
    path = OUT / f"slice_{name}.pgm"
    write_pgm(img.pixels, path)
    print(f"{name:9s} -> {path}  (mean {img.pixels.mean():.3f}, "
          f"max {img.pixels.max():.3f})")
