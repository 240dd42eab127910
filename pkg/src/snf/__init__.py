"""Streamable neural fields: width-growing sine MLPs whose width prefixes are runnable sub-networks."""
from snf.net import (
    ActivationConfig,
    StreamableNet,
    backward,
    build_net,
    forward,
    forward_residual,
    grow,
    init_siren,
    new_net,
    param_count,
)
from snf.tensor_core import Rng, matmul

__version__ = "0.1.0"
