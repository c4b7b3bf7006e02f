"""True, perturbed and synthetic per-class mean embeddings."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import _rng
from .exceptions import InvalidArgumentError, InvalidStateError

KINDS = ("true_clean", "true_noisy", "synthetic")
UNIT_TOL = 1e-6


@dataclass
class MeanEmbedding:
    matrix: torch.Tensor  # [feature_dim x num_classes]
    kind: str
    count: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown embedding kind {self.kind!r}")

    @property
    def shape(self):
        return tuple(self.matrix.shape)

    def detached(self):
        return MeanEmbedding(self.matrix.detach().clone(), self.kind, self.count)


def _check_labels(labels, num_classes, m):
    labels = torch.as_tensor(labels, dtype=torch.long).reshape(-1)
    if labels.numel() != m:
        raise InvalidArgumentError(f"{labels.numel()} labels for {m} records")
    if m and (labels.min() < 0 or labels.max() >= num_classes):
        raise InvalidArgumentError(f"labels must lie in [0, {num_classes})")
    return labels


def true_mean_embedding(features, labels, num_classes: int) -> MeanEmbedding:
    """``(1/m) sum_i phi_i onehot(y_i)^T`` from precomputed unit-norm features."""
    features = torch.as_tensor(features, dtype=torch.float64)
    if features.dim() != 2 or features.shape[0] == 0:
        raise InvalidArgumentError("need a non-empty [m x feature_dim] feature matrix")
    m = features.shape[0]
    labels = _check_labels(labels, num_classes, m)
    norms = features.norm(dim=1)
    if (norms - 1).abs().max() > UNIT_TOL:
        raise InvalidArgumentError("features must be unit-norm")
    onehot = torch.nn.functional.one_hot(labels, num_classes).to(torch.float64)
    return MeanEmbedding(features.T @ onehot / m, "true_clean", m)


def embedding_from_inputs(featmap, inputs, labels, num_classes: int, kind="true_clean") -> MeanEmbedding:
    """Same statistic computed straight from NTK inputs, without materializing per-record features."""
    inputs = torch.as_tensor(inputs, dtype=torch.float64)
    m = inputs.shape[0]
    if m == 0:
        raise InvalidArgumentError("empty input")
    labels = _check_labels(labels, num_classes, m)
    return MeanEmbedding(featmap.class_mean(inputs, labels, num_classes, float(m)), kind, m)


def perturb_embedding(emb: MeanEmbedding, sigma: float, m: int, rng_seed: int) -> MeanEmbedding:
    """Add i.i.d. N(0, (2 sigma / m)^2) noise to every entry."""
    if emb.kind != "true_clean":
        raise InvalidStateError(f"only a true_clean embedding can be perturbed, got {emb.kind}")
    if sigma < 0:
        raise InvalidArgumentError("sigma must be nonnegative")
    if m < 1:
        raise InvalidArgumentError("m must be positive")
    clean = emb.matrix.detach()
    if sigma == 0:
        return MeanEmbedding(clean.clone(), "true_noisy", emb.count)
    noise = _rng.normal(rng_seed, "embedding.noise", tuple(clean.shape), std=2.0 * sigma / m)
    return MeanEmbedding(clean + noise, "true_noisy", emb.count)


def balanced_plan(n: int, num_classes: int) -> np.ndarray:
    """Class labels for ``n`` samples, as even as possible, in class-major order."""
    if n < 1 or num_classes < 1:
        raise InvalidArgumentError("n and num_classes must be positive")
    base, extra = divmod(n, num_classes)
    counts = [base + (1 if c < extra else 0) for c in range(num_classes)]
    return np.repeat(np.arange(num_classes), counts)


def synthetic_inputs(gen, fe, bank, mapping, label_plan, rng_seed: int, step: int = 0) -> torch.Tensor:
    """Prompted NTK inputs for the synthetic samples of one draw.

    Feature space: ``FE(G(z, map(y))) + kappa * delta_y``.
    Pixel space: ``FE(G(z, map(y)) + kappa * delta_y)``, where FE is usually the identity.
    """
    label_plan = torch.as_tensor(np.asarray(label_plan), dtype=torch.long)
    if int(label_plan.max()) >= len(mapping) or int(label_plan.min()) < 0:
        raise InvalidStateError("label mapping is undefined for some planned class")
    z = _rng.normal(rng_seed, "latents", (label_plan.numel(), gen.latent_dim), step)
    images = gen(z, mapping(label_plan))
    if bank is None:
        return fe(images)
    if bank.space == "feature":
        return bank.apply(fe(images), label_plan)
    flat = bank.apply(images.flatten(1), label_plan)
    return fe(flat.reshape(images.shape))


def synthetic_mean_embedding(gen, fe, bank, mapping, featmap, n: int, label_plan=None,
                             rng_seed: int = 0, step: int = 0) -> MeanEmbedding:
    """``(1/n) sum_i phi(prompted x'_i) onehot(y'_i)^T``; differentiable in the prompts."""
    num_classes = len(mapping)
    if label_plan is None:
        label_plan = balanced_plan(n, num_classes)
    label_plan = np.asarray(label_plan)
    if n < 1 or len(label_plan) != n:
        raise InvalidArgumentError("label plan must assign exactly n >= 1 samples")
    inputs = synthetic_inputs(gen, fe, bank, mapping, label_plan, rng_seed, step)
    matrix = featmap.class_mean(inputs, label_plan, num_classes, float(n))
    return MeanEmbedding(matrix, "synthetic", n)
