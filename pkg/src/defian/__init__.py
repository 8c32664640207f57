"""Detail-fidelity attention network for single-image super-resolution, in numpy."""

from .autograd import DiffNode, backward, default_dtype, get_dtype, set_dtype
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ModelConfig, RunConfig, TrainConfig, defian_l, defian_s, load_config
from .hessian import bench_eigen, eig_oracle, max_eigenvalue, mshf, scaled_hessian_filter
from .metrics import luminance, psnr, ssim
from .model import DeFiAN, build_model, count_flops, count_params

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "ConfigError",
    "DeFiAN",
    "DiffNode",
    "ModelConfig",
    "RunConfig",
    "TrainConfig",
    "backward",
    "bench_eigen",
    "build_model",
    "count_flops",
    "count_params",
    "default_dtype",
    "defian_l",
    "defian_s",
    "eig_oracle",
    "get_dtype",
    "load_checkpoint",
    "load_config",
    "luminance",
    "max_eigenvalue",
    "mshf",
    "psnr",
    "save_checkpoint",
    "scaled_hessian_filter",
    "set_dtype",
    "ssim",
]
