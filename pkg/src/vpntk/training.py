"""Single private release plus post-processing optimization.

The private records are reachable only through ``AccessGuard.read``, which
allows exactly one read and then seals. Everything after that (prompt or
generator training, synthesis, evaluation) sees only the noisy embedding, so
the whole pipeline inherits the release's (epsilon, delta) guarantee.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .embeddings import (
    MeanEmbedding,
    balanced_plan,
    embedding_from_inputs,
    perturb_embedding,
    synthetic_mean_embedding,
)
from .exceptions import DivergenceError, InvalidArgumentError, InvalidStateError, PrivacyViolationError
from .losses import LossConfig, total_loss
from .vprompt import LabelMapping

CHUNK = 1024


class PrivateDataset:
    """Private images and labels, readable only through an ``AccessGuard``."""

    def __init__(self, images, labels, num_classes: int):
        images = np.asarray(images, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if images.shape[0] != labels.shape[0]:
            raise InvalidArgumentError("images and labels differ in length")
        self.__images = images
        self.__labels = labels
        self.num_classes = int(num_classes)

    def __len__(self):
        return self.__labels.shape[0]

    def _open(self):
        return self.__images, self.__labels


class AccessGuard:
    def __init__(self):
        self.private_read_count = 0
        self.sealed = False

    def read(self, dataset: PrivateDataset):
        if self.sealed or self.private_read_count:
            raise PrivacyViolationError(
                f"private data already read {self.private_read_count} time(s); guard is sealed")
        self.private_read_count += 1
        return dataset._open()

    def seal(self):
        self.sealed = True

    def require_sealed(self):
        if not self.sealed or self.private_read_count != 1:
            raise PrivacyViolationError("training requires exactly one sealed private release")


def release_private_embedding(dataset: PrivateDataset, featmap, fe, privacy, guard: AccessGuard,
                              noise_seed: int = 0) -> MeanEmbedding:
    """One pass over the private data: FE, NTK features, class means, Gaussian noise. Seals the guard."""
    if guard.sealed:
        raise PrivacyViolationError("guard already sealed; the private embedding was released")
    images, labels = guard.read(dataset)
    try:
        m = labels.shape[0]
        if m == 0:
            raise InvalidArgumentError("private dataset is empty")
        if m != privacy.m:
            raise InvalidArgumentError(f"privacy calibrated for m={privacy.m}, dataset has {m} records")
        with torch.no_grad():
            inputs = torch.cat([fe(torch.from_numpy(images[i:i + CHUNK])) for i in range(0, m, CHUNK)])
            clean = embedding_from_inputs(featmap, inputs, labels, dataset.num_classes)
            noisy = perturb_embedding(clean, privacy.sigma, m, noise_seed)
            clean.matrix.zero_()
            del clean, inputs
    finally:
        guard.seal()
    return noisy


@dataclass
class TrainState:
    eta: float
    max_steps: int
    rng_seed: int
    step: int = 0
    loss_trace: list = field(default_factory=list)

    def __post_init__(self):
        if not self.eta > 0:
            raise InvalidArgumentError("learning rate must be positive")
        if self.max_steps < 0:
            raise InvalidArgumentError("max_steps must be nonnegative")


def _optimize(params, loss_fn, state, optimizer):
    opt = torch.optim.Adam(params, lr=state.eta) if optimizer == "adam" else None
    if optimizer not in ("gd", "adam"):
        raise InvalidArgumentError(f"unknown optimizer {optimizer!r}")
    for step in range(state.max_steps):
        loss = loss_fn(step)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise DivergenceError(step, state.eta, value)
        grads = torch.autograd.grad(loss, params)
        if any(not torch.isfinite(g).all() for g in grads):
            raise DivergenceError(step, state.eta, float("nan"))
        if opt is None:
            with torch.no_grad():
                for p, g in zip(params, grads):
                    p -= state.eta * g
        else:
            for p, g in zip(params, grads):
                p.grad = g
            opt.step()
        state.loss_trace.append(value)
        state.step = step + 1
    return state


def train_prompts(mu_noisy: MeanEmbedding, gen, fe, featmap, bank, mapping: LabelMapping, *,
                  loss_cfg: LossConfig = LossConfig(), eta: float = 1e-2, max_steps: int = 200,
                  n_per_class: int = 64, seed: int = 0, optimizer: str = "gd",
                  fixed_latents: bool = False, private: bool = True):
    """Fit the prompt bank to the released embedding; only the prompts change.

    Each step draws fresh latents (unless ``fixed_latents``), rebuilds the
    synthetic embedding and takes one step of size ``eta``.
    """
    if not (gen.frozen and fe.frozen):
        raise InvalidStateError("backbones must be frozen for prompt training")
    if bank.num_classes != len(mapping):
        raise InvalidArgumentError("prompt bank and label mapping disagree on class count")
    state = TrainState(eta=eta, max_steps=max_steps, rng_seed=seed)
    trained = bank.copy()
    if max_steps == 0:
        return trained, state
    before = (gen.checksum(), fe.checksum())
    plan = balanced_plan(n_per_class * len(mapping), len(mapping))
    target = mu_noisy.detached()

    def loss_fn(step):
        mu_q = synthetic_mean_embedding(gen, fe, trained, mapping, featmap, len(plan), plan,
                                        rng_seed=seed, step=0 if fixed_latents else step)
        return total_loss(loss_cfg, target, mu_q, trained, private=private)

    _optimize([trained.prompts], loss_fn, state, optimizer)
    if (gen.checksum(), fe.checksum()) != before:
        raise InvalidStateError("frozen backbone parameters changed during prompt training")
    return trained, state


def train_generator_dpntk(mu_noisy: MeanEmbedding, gen, featmap, fe, *, eta: float = 1e-2,
                          max_steps: int = 500, n_per_class: int = 64, seed: int = 0,
                          loss_cfg: LossConfig = LossConfig(mode="mmd", alpha=0.0),
                          optimizer: str = "gd", fixed_latents: bool = False, private: bool = True):
    """DP-NTK baseline: gradient descent on the generator's own parameters.

    ``gen`` is a trainable generator whose source classes are the private classes.
    Returns a trained copy and the trace; the input generator is not modified.
    """
    from .backbones import ConditionalGenerator

    num_classes = mu_noisy.matrix.shape[1]
    if gen.num_source_classes != num_classes:
        raise InvalidArgumentError("baseline generator must have one condition per private class")
    trained = ConditionalGenerator(gen.params, gen.latent_dim, gen.num_source_classes,
                                   gen.image_shape, gen.embed_dim, frozen=False)
    state = TrainState(eta=eta, max_steps=max_steps, rng_seed=seed)
    if max_steps == 0:
        return trained, state
    mapping = LabelMapping(tuple(range(num_classes)), seed, num_classes)
    plan = balanced_plan(n_per_class * num_classes, num_classes)
    target = mu_noisy.detached()

    def loss_fn(step):
        mu_q = synthetic_mean_embedding(trained, fe, None, mapping, featmap, len(plan), plan,
                                        rng_seed=seed, step=0 if fixed_latents else step)
        return total_loss(loss_cfg, target, mu_q, None, private=private)

    _optimize(trained.parameters(), loss_fn, state, optimizer)
    return trained, state
