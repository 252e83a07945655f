"""Minimal neural-network substrate with exact analytic gradients."""

from .layers import LSTM, TDNN, BatchNorm, Dense, Layer, ReLU, Sigmoid, Softmax, StatsPool, layer_from_config
from .network import Network, add_grads, gradient_check, load_network, loss_noise, save_network, sgd_step, spec_digest

__all__ = [
    "LSTM",
    "TDNN",
    "BatchNorm",
    "Dense",
    "Layer",
    "Network",
    "ReLU",
    "Sigmoid",
    "Softmax",
    "StatsPool",
    "add_grads",
    "gradient_check",
    "layer_from_config",
    "load_network",
    "loss_noise",
    "save_network",
    "sgd_step",
    "spec_digest",
]
