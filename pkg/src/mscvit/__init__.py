"""Multi-scale convolutional vision transformer on a small numpy autodiff engine."""

from .blocks import LMSSA, CFF, LFE, FFN, MSCBlock, lmssa_forward, spatial_reduce
from .model import (
    ConfigError,
    ModelConfig,
    MSCViT,
    StageConfig,
    build_model,
    complexity_ffn,
    complexity_lmssa,
    complexity_mhsa,
    count_params,
    estimate_flops,
    variant_config,
)
from .tensor import Tensor, no_grad
from .train import TrainConfig, evaluate_top1, train_epochs
from .wavelet import haar_dwt2d, haar_idwt2d, wtconv

__version__ = "0.1.0"
