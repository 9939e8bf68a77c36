"""roger: a desk-scale robust RGB-D splatting SLAM engine."""

from .core import (CameraPose, Frame, Gaussian3D, GaussianMap, ImagePyramid,
                   Intrinsics, compose_pose, covariance, inverse_pose)
from .rasterizer import (ProjectedGaussian, RasterConfig, RenderOutput, project,
                         render, render_backward, render_pyramid, render_reference)
from .densify import DensifyConfig, densify_mask, importance_score, insert_gaussians, prune
from .fusion import (FusionWeights, MappingConfig, MappingLossReport, fuse,
                     map_step, mapping_loss, minmax_norm, sobel_edges)
from .tracking import TrackerConfig, adaptive_weights, init_pose, track, tracking_loss
from .degradation import DegradationReport, NoiseParams, add_lowlight_noise, \
    add_sensor_noise, decide, judge
from .enhance import EnhancerBinding, classical_enhance, maybe_enhance
from .metrics import Trajectory, ate_rmse, psnr, ssim
from .dataset import (SequenceManifest, SyntheticScene, degrade_sequence,
                      desk_scene, generate_scene, load_tum)
from .pipeline import PipelineConfig, RunResult, ablate, run

__version__ = "0.1.0"
