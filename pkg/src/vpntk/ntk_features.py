"""Empirical-NTK feature map: normalized parameter gradient of a frozen random MLP.

Gradients are written out layer by layer (closed-form backprop) instead of
using autograd, so the feature map itself stays an ordinary differentiable
function of its input. That is what lets prompt gradients flow through it.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import torch

from . import _rng
from .exceptions import DegenerateFeatureError, InvalidArgumentError

DEGENERATE_NORM = 1e-12
ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class NTKConfig:
    input_dim: int
    hidden_widths: tuple = (512,)
    output_dim: int = 1
    init_seed: int = 0
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1 or self.output_dim < 1:
            raise InvalidArgumentError("input_dim and output_dim must be positive")
        if not self.hidden_widths or any(w < 1 for w in self.hidden_widths):
            raise InvalidArgumentError(f"hidden widths must be positive, got {self.hidden_widths}")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgumentError(f"activation must be one of {ACTIVATIONS}")


def _act(z, kind):
    return torch.tanh(z) if kind == "tanh" else torch.relu(z)


def _act_prime(z, a, kind):
    if kind == "tanh":
        return 1.0 - a * a
    return (z > 0).to(z.dtype)


class NTKFeatureMap:
    """Frozen network ``f(x; theta)`` and its normalized gradient features.

    Parameters are drawn once from ``config.init_seed`` (weights ~ N(0, 1/fan_in),
    biases ~ N(0, 0.1^2)) and never change. Feature layout is, per layer,
    the row-major weight gradient followed by the bias gradient.
    """

    def __init__(self, config: NTKConfig):
        self.config = config
        dims = [config.input_dim, *config.hidden_widths, config.output_dim]
        self.weights = []
        self.biases = []
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            w = _rng.normal(config.init_seed, "ntk.weight", (fan_out, fan_in), i, std=1.0 / np.sqrt(fan_in))
            b = _rng.normal(config.init_seed, "ntk.bias", (fan_out,), i, std=0.1)
            self.weights.append(w)
            self.biases.append(b)
        self.feature_dim = sum(w.numel() + b.numel() for w, b in zip(self.weights, self.biases))

    @property
    def input_dim(self):
        return self.config.input_dim

    def parameter_vector(self) -> torch.Tensor:
        return torch.cat([t for w, b in zip(self.weights, self.biases) for t in (w.flatten(), b)])

    def checksum(self) -> str:
        return hashlib.sha256(self.parameter_vector().numpy().tobytes()).hexdigest()

    def output(self, x, params=None) -> torch.Tensor:
        """Scalar network output (summed over output units) for a batch ``x``."""
        x = self._as_batch(x)
        weights, biases = self.weights, self.biases
        if params is not None:
            weights, biases = self._unflatten(params)
        a = x
        for w, b in zip(weights[:-1], biases[:-1]):
            a = _act(a @ w.T + b, self.config.activation)
        return (a @ weights[-1].T + biases[-1]).sum(dim=1)

    def _unflatten(self, params):
        weights, biases, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(params[pos:pos + w.numel()].reshape(w.shape))
            pos += w.numel()
            biases.append(params[pos:pos + b.numel()])
            pos += b.numel()
        return weights, biases

    def _as_batch(self, x):
        x = torch.as_tensor(x, dtype=torch.float64)
        if x.dim() == 1:
            x = x.unsqueeze(0)
        if x.dim() != 2 or x.shape[1] != self.config.input_dim:
            raise InvalidArgumentError(
                f"expected inputs of dimension {self.config.input_dim}, got shape {tuple(x.shape)}")
        return x

    def _backprop(self, x):
        """Per-layer (output-gradient, input-activation) pairs for a batch."""
        kind = self.config.activation
        inputs, pre, post = [x], [], []
        a = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = a @ w.T + b
            a = _act(z, kind)
            pre.append(z)
            post.append(a)
            inputs.append(a)
        e = torch.ones(x.shape[0], self.config.output_dim, dtype=x.dtype)
        grads = [None] * len(self.weights)
        grads[-1] = e
        for layer in range(len(self.weights) - 2, -1, -1):
            e = (e @ self.weights[layer + 1]) * _act_prime(pre[layer], post[layer], kind)
            grads[layer] = e
        return list(zip(grads, inputs))

    def _sq_norms(self, pairs):
        return sum((e * e).sum(1) * ((a * a).sum(1) + 1.0) for e, a in pairs)

    def _inverse_norms(self, pairs):
        sq = self._sq_norms(pairs)
        bad = torch.nonzero(sq < DEGENERATE_NORM ** 2).flatten()
        if bad.numel():
            i = int(bad[0])
            raise DegenerateFeatureError(f"gradient norm below {DEGENERATE_NORM} for input {i}", index=i)
        return torch.rsqrt(sq)

    def raw_gradients(self, x) -> torch.Tensor:
        """Unnormalized parameter gradients, one row per input."""
        pairs = self._backprop(self._as_batch(x))
        blocks = []
        for e, a in pairs:
            blocks.append((e.unsqueeze(2) * a.unsqueeze(1)).flatten(1))
            blocks.append(e)
        return torch.cat(blocks, dim=1)

    def features(self, x) -> torch.Tensor:
        pairs = self._backprop(self._as_batch(x))
        return self.raw_gradients(x) * self._inverse_norms(pairs).unsqueeze(1)

    def class_mean(self, x, labels, num_classes: int, denom: float) -> torch.Tensor:
        """``sum_i phi(x_i) onehot(y_i)^T / denom`` as a [feature_dim x num_classes] matrix.

        Computed from the per-layer factors without materializing per-sample
        features; differentiable in ``x``.
        """
        x = self._as_batch(x)
        labels = torch.as_tensor(labels, dtype=torch.long)
        pairs = self._backprop(x)
        weight = self._inverse_norms(pairs) / denom
        onehot = torch.nn.functional.one_hot(labels, num_classes).to(x.dtype) * weight.unsqueeze(1)
        blocks = []
        for e, a in pairs:
            w_block = torch.einsum("bc,bo,bi->coi", onehot, e, a).reshape(num_classes, -1)
            blocks.append(w_block)
            blocks.append(onehot.T @ e)
        return torch.cat(blocks, dim=1).T


def build_feature_map(config: NTKConfig) -> NTKFeatureMap:
    return NTKFeatureMap(config)


def ntk_feature(fmap: NTKFeatureMap, x) -> torch.Tensor:
    """Unit-norm NTK feature of a single input vector."""
    x = torch.as_tensor(x, dtype=torch.float64)
    if x.dim() != 1:
        raise InvalidArgumentError("ntk_feature expects a single input vector")
    if not torch.isfinite(x).all():
        raise InvalidArgumentError("input contains non-finite values")
    return fmap.features(x)[0]
