"""Multi-path learnable wavelet neural network.

Wavelet neurons decompose images with a six-tap orthogonal filter bank whose
taps are a function of two learnable angles; parallel paths of such neurons
feed a small dense head.
"""

from .filters import FilterPair, WaveletParams, check_qmf, fit_params_to_filter, make_filters
from .layers import NetworkConfig, WaveletNetwork, param_count
from .trainer import TrainConfig, evaluate, train

__all__ = [
    "FilterPair",
    "NetworkConfig",
    "TrainConfig",
    "WaveletNetwork",
    "WaveletParams",
    "check_qmf",
    "evaluate",
    "fit_params_to_filter",
    "make_filters",
    "param_count",
    "train",
]
__version__ = "0.1.0"
