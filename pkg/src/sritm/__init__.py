"""Joint super-resolution and inverse tone-mapping pipeline.

Subpackages:
    tensor          autodiff engine (conv, relu, elementwise, shuffle, resize)
    optim           Adam with split weight/bias learning rates, Xavier init
    decomposition   guided-filter base/detail split of the network input
    network         architecture builder, forward pass, weight store
    weights_io      binary weight/checkpoint files
    colorimetry     transfer functions, gamut/YCbCr matrices, frame files
    metrics         PSNR / mPSNR / SSIM / MS-SSIM and directory evaluation
    dataset         synthetic scene pairs, patch extraction, shards
    trainer         two-stage training schedule
    cli             command-line entry point
"""

__version__ = "0.1.0"

from .network import Network, NetworkConfig, build_network, build_toy, extract_modulation_maps
from .tensor import Tensor
from .trainer import TrainConfig, Trainer, train

__all__ = [
    "Network",
    "NetworkConfig",
    "Tensor",
    "TrainConfig",
    "Trainer",
    "build_network",
    "build_toy",
    "extract_modulation_maps",
    "train",
    "__version__",
]
