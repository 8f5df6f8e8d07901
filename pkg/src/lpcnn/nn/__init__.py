from .layers import (Conv2D, Dense, Dropout, Flatten, Layer, MaxPool2D, ReLU, ShapeMismatch,
                     Softmax)
from .network import Network, build_cnn, forward, loss_and_grad, network_from_architecture
from .training import (Divergence, EpochStats, TrainConfig, TrainReport, evaluate, train)
from .weights import ArchMismatch, CorruptFile, load_weights, save_weights

__all__ = [
    "ArchMismatch", "Conv2D", "CorruptFile", "Dense", "Divergence", "Dropout", "EpochStats",
    "Flatten", "Layer", "MaxPool2D", "Network", "ReLU", "ShapeMismatch", "Softmax",
    "TrainConfig", "TrainReport", "build_cnn", "evaluate", "forward", "load_weights",
    "loss_and_grad", "network_from_architecture", "save_weights", "train",
]
