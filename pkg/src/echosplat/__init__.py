"""Differentiable Gaussian splatting for ultrasound slice-to-volume reconstruction."""

from .geometry import ProbePose, SliceImage, SliceSpec, pixel_to_plane
from .model import (GaussianCloud, ProbeFrameGaussian, build_L,
                    covariance_from_L, evaluate_opacity,
                    invert_lower_triangular, sample_gaussian, to_probe_frame)
from .rasterizer import (BoundingBox3, RenderBuffers, bounding_box, compact,
                         cull, rasterize, render_slice)
from .gradients import ParamGradients, backward, grad_check
from .volume import Volume, load_volume, make_phantom, sample_slice, save_volume
from .dataset import SliceDataset, make_axial_stack, split_dataset
from .metrics import EvalReport, evaluate_views, psnr, ssim
from .trainer import (AdamState, TrainConfig, adam_step, init_cloud,
                      load_checkpoint, loss, save_checkpoint, train)

__version__ = "0.1.0"
