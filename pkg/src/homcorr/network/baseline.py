"""Non-equivariant baseline: an MLP on flattened grid samples."""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np

from . import autodiff as ad
from .model import FullyConnected, Layer, Model, ReLU


class Flatten(Layer):
    name = "flatten"

    def __call__(self, x, train):
        return ad.reshape(x, (x.shape[0], -1))


class MLP(Model):
    """``flatten -> [fc -> relu]* -> fc``; shares the training interface of :class:`Model`."""

    def __init__(self, input_bandwidth: int, input_channels: int, hidden, n_classes: int,
                 seed: int = 0):
        rng = np.random.default_rng(seed)
        self.spec = SimpleNamespace(input_bandwidth=input_bandwidth,
                                    input_channels=input_channels, n_classes=n_classes)
        width = input_channels * (2 * input_bandwidth) ** 2
        self.layers = [Flatten()]
        for h in hidden:
            self.layers += [FullyConnected(width, h, rng), ReLU()]
            width = h
        self.layers.append(FullyConnected(width, n_classes, rng))
