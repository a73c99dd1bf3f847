"""Minimal differentiable-network toolkit (conv, batch-norm, dense, LSTM) in numpy."""
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .network import Network, NetSpec, angle_net_spec, forward, gradient, network, recurrent_spec
from .optim import AdamState, adam_update

__all__ = [
    "AdamState", "Checkpoint", "NetSpec", "Network", "adam_update", "angle_net_spec", "forward",
    "gradient", "load_checkpoint", "network", "recurrent_spec", "save_checkpoint",
]
