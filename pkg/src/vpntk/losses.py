"""Embedding-matching objectives: empirical MMD, cosine, prompt-norm penalty."""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .exceptions import DegenerateInputError, InvalidArgumentError, PrivacyViolationError

MODES = ("mmd", "cosine", "mixed")


@dataclass(frozen=True)
class LossConfig:
    mode: str = "mixed"
    alpha: float = 0.05
    mix_weights: tuple = (1.0, 1.0)
    per_column_cosine: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidArgumentError(f"loss mode must be one of {MODES}")
        if self.alpha < 0 or min(self.mix_weights) < 0:
            raise InvalidArgumentError("alpha and mix weights must be nonnegative")
        object.__setattr__(self, "mix_weights", tuple(float(w) for w in self.mix_weights))


def _matrix(e):
    return e.matrix if hasattr(e, "matrix") else torch.as_tensor(e, dtype=torch.float64)


def _same_shape(a, b):
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def mmd_loss(mu_p, mu_q) -> torch.Tensor:
    """Squared Frobenius distance between two mean embeddings."""
    a, b = _matrix(mu_p), _matrix(mu_q)
    _same_shape(a, b)
    return ((a - b) ** 2).sum()


def cosine_loss(mu_p, mu_q, per_column: bool = False) -> torch.Tensor:
    """``1 - cos`` between the flattened embeddings (or the mean over columns)."""
    a, b = _matrix(mu_p), _matrix(mu_q)
    _same_shape(a, b)
    if per_column:
        na, nb = a.norm(dim=0), b.norm(dim=0)
        if (na == 0).any() or (nb == 0).any():
            raise DegenerateInputError("cosine loss of a zero column is undefined")
        return (1 - (a * b).sum(0) / (na * nb)).mean()
    na, nb = a.norm(), b.norm()
    if na == 0 or nb == 0:
        raise DegenerateInputError("cosine loss of a zero embedding is undefined")
    return 1 - (a * b).sum() / (na * nb)


def prompt_penalty(bank) -> torch.Tensor:
    """Sum of squared prompt-row norms."""
    return (bank.prompts ** 2).sum()


def total_loss(cfg: LossConfig, mu_p, mu_q, bank=None, private: bool = True) -> torch.Tensor:
    """Configured matching loss plus ``alpha * prompt_penalty``.

    With ``private=True`` the target must be the noisy release; a clean
    embedding is accepted only when privacy is explicitly disabled.
    """
    kind = getattr(mu_p, "kind", None)
    if kind != "true_noisy" and not (kind == "true_clean" and not private):
        raise PrivacyViolationError(f"loss target must be the noisy release, got kind {kind!r}")
    w_mmd, w_cos = cfg.mix_weights
    if cfg.mode == "mmd":
        loss = w_mmd * mmd_loss(mu_p, mu_q)
    elif cfg.mode == "cosine":
        loss = w_cos * cosine_loss(mu_p, mu_q, cfg.per_column_cosine)
    else:
        loss = w_mmd * mmd_loss(mu_p, mu_q) + w_cos * cosine_loss(mu_p, mu_q, cfg.per_column_cosine)
    if bank is not None:
        loss = loss + cfg.alpha * prompt_penalty(bank)
    return loss
