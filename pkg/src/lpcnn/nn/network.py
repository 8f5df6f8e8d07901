from __future__ import annotations

import hashlib

import numpy as np

from .layers import (Conv2D, Dense, Dropout, Flatten, Layer, MaxPool2D, ReLU,
                     ShapeMismatch, Softmax, layer_from_config)

N_CLASSES = 10


class Network:
    """Ordered stack of layers ending in a softmax over the digit classes.

    ``input_shape`` is (h, w, channels). The network owns a numpy Generator,
    seeded from ``rng_seed``, that drives dropout masks.
    """

    def __init__(self, layers: list[Layer], input_shape, rng_seed: int = 0, dtype=np.float32):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.dtype = np.dtype(dtype)
        self.mode = "eval"
        self.meta: dict = {}
        self.reseed(rng_seed)
        self.output_shape()  # validates the chain

    def reseed(self, seed: int):
        self.rng_seed = int(seed)
        self.rng = np.random.default_rng(self.rng_seed)

    def train(self):
        self.mode = "train"
        return self

    def eval(self):
        self.mode = "eval"
        return self

    def output_shape(self):
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def architecture(self) -> dict:
        return {"input_shape": list(self.input_shape),
                "layers": [layer.config() for layer in self.layers]}

    def parameters(self):
        """(layer index, name, array) in declaration order."""
        for i, layer in enumerate(self.layers):
            for name in sorted(layer.params):
                yield i, name, layer.params[name]

    def n_parameters(self) -> int:
        return sum(p.size for _, _, p in self.parameters())

    def checksum(self) -> str:
        h = hashlib.sha256()
        for _, _, p in self.parameters():
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()

    def astype(self, dtype):
        self.dtype = np.dtype(dtype)
        for layer in self.layers:
            layer.astype(self.dtype)
        return self

    def _prepare(self, batch) -> np.ndarray:
        x = np.asarray(batch, dtype=self.dtype)
        # (N, h, w) is accepted for single-channel networks
        if self.input_shape[-1] == 1 and x.shape[1:] == self.input_shape[:-1]:
            x = x[..., None]
        if x.shape[1:] != self.input_shape:
            raise ShapeMismatch(f"network expects (N, {', '.join(map(str, self.input_shape))}),"
                                f" got {x.shape}")
        return x

    def forward(self, batch) -> np.ndarray:
        x = self._prepare(batch)
        train = self.mode == "train"
        for layer in self.layers:
            x = layer.forward(x, train=train, rng=self.rng)
        return x

    def backward(self, dout, skip_softmax=False):
        layers = self.layers[:-1] if skip_softmax else self.layers
        for i in range(len(layers) - 1, -1, -1):
            dout = layers[i].backward(dout, need_input_grad=i > 0)
        return dout

    def predict(self, images, batch_size=256) -> np.ndarray:
        mode, self.mode = self.mode, "eval"
        try:
            out = [self.forward(images[i:i + batch_size]).argmax(axis=1)
                   for i in range(0, len(images), batch_size)]
        finally:
            self.mode = mode
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def forward(net: Network, batch) -> np.ndarray:
    return net.forward(batch)


def loss_and_grad(net: Network, batch, labels) -> float:
    """Mean categorical cross-entropy; fills every layer's ``grads``.

    The softmax and cross-entropy gradients are fused: d loss / d logits is
    (p - onehot) / N.
    """
    labels = np.asarray(labels)
    probs = net.forward(batch)
    n = len(probs)
    if labels.shape != (n,):
        raise ShapeMismatch(f"{n} predictions but labels shaped {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ValueError("labels must lie in 0..9")
    p_true = probs[np.arange(n), labels]
    tiny = np.finfo(probs.dtype).tiny
    loss = float(-np.mean(np.log(np.maximum(p_true, tiny), dtype=np.float64)))
    d = probs.copy()
    d[np.arange(n), labels] -= 1
    d /= n
    if isinstance(net.layers[-1], Softmax):
        net.backward(d, skip_softmax=True)
    else:
        raise ValueError("loss_and_grad needs a network ending in softmax")
    return loss


def build_cnn(input_shape=(28, 28, 1), rng_seed: int = 0, dtype=np.float32,
              conv_channels=(32, 64), hidden=128, dropout=(0.25, 0.5)) -> Network:
    """conv3x3 -> relu -> conv3x3 -> relu -> maxpool2 -> dropout -> flatten
    -> dense -> relu -> dropout -> dense(10) -> softmax, with seeded init."""
    h, w, c = input_shape
    c1, c2 = conv_channels
    layers = [Conv2D(c, c1, 3, dtype), ReLU(), Conv2D(c1, c2, 3, dtype), ReLU(),
              MaxPool2D(2), Dropout(dropout[0]), Flatten()]
    shape = tuple(input_shape)
    for layer in layers:
        shape = layer.output_shape(shape)
    layers += [Dense(shape[0], hidden, dtype), ReLU(), Dropout(dropout[1]),
               Dense(hidden, N_CLASSES, dtype), Softmax()]
    net = Network(layers, input_shape, rng_seed, dtype)
    init_parameters(net, rng_seed)
    return net


def init_parameters(net: Network, seed: int):
    """Gaussian weights with std sqrt(2 / fan_in) ahead of a relu, zero biases.

    The layer feeding the softmax gets std 0.1 / sqrt(fan_in) so an untrained
    network starts close to the uniform distribution.
    """
    rng = np.random.default_rng([seed, 1])
    for i, layer in enumerate(net.layers):
        if "W" not in layer.params:
            continue
        W = layer.params["W"]
        fan_in = int(np.prod(W.shape[:-1]))
        nxt = net.layers[i + 1] if i + 1 < len(net.layers) else None
        gain = 2.0 if isinstance(nxt, ReLU) else 0.01
        layer.params["W"] = (rng.standard_normal(W.shape) * np.sqrt(gain / fan_in)).astype(net.dtype)
        layer.params["b"] = np.zeros_like(layer.params["b"])


def network_from_architecture(arch: dict, rng_seed: int = 0, dtype=np.float32) -> Network:
    layers = [layer_from_config(cfg, dtype) for cfg in arch["layers"]]
    return Network(layers, arch["input_shape"], rng_seed, dtype)


__all__ = ["Network", "build_cnn", "forward", "loss_and_grad", "network_from_architecture",
           "Conv2D", "Dense", "Dropout", "Flatten", "MaxPool2D", "ReLU", "Softmax"]
