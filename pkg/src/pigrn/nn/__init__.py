"""From-scratch recurrent network: GRU stack, BPTT, Adam."""

from .adam import AdamState, adam_step, clip_grad_norm, global_grad_norm
from .backend import active_backend, available_backends, select_backend, set_backend
from .gru import (
    ForwardCache,
    GruCellParams,
    GruNetwork,
    NetworkGrads,
    gru_cell_forward,
    init_network,
    iter_params,
    network_backward,
    network_forward,
    zero_grads,
)

__all__ = [
    "AdamState",
    "adam_step",
    "clip_grad_norm",
    "global_grad_norm",
    "active_backend",
    "available_backends",
    "select_backend",
    "set_backend",
    "ForwardCache",
    "GruCellParams",
    "GruNetwork",
    "NetworkGrads",
    "gru_cell_forward",
    "init_network",
    "iter_params",
    "network_backward",
    "network_forward",
    "zero_grads",
]
