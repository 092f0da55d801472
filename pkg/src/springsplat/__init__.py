"""Spring-mass dynamics for objects represented by Gaussian kernels.

Anchors sampled from a point cloud are linked by directed nearest-neighbor
springs; the kernels follow the anchors by inverse-distance interpolation.
The package simulates such systems, fits their physical parameters to
observed trajectories, renders the kernels and scores the results.
"""

from .dynamics import Boundary, PhysicalParams, SimState, SimulationError, rollout, simulate, step
from .geometry import AnchorSystem, BindingTable, PointCloud, SpringTopology, bind_kernels, build_topology, volume_sample
from .gradients import LossSpec, ParamGradient, finite_diff_gradient, grad_rollout
from .identification import IdentConfig, IdentificationError, IdentResult, estimate_v0, identify, trajectory_loss
from .metrics import MetricReport, chamfer, emd, psnr, ssim
from .registration import RegistrationConfig, Similarity, apply_similarity, register
from .render import Camera, GaussianCloud, rasterize, render_silhouette
from .trajectory import Trajectory

__version__ = "0.1.0"
