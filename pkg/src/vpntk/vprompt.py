"""Per-class trainable prompts and the fixed random label mapping."""
from __future__ import annotations

from dataclasses import dataclass

import torch

from . import _rng
from .backbones import read_checkpoint, write_checkpoint
from .exceptions import CheckpointKindError, InvalidArgumentError

SPACES = ("feature", "pixel")
INIT_STD = 1e-2


@dataclass(frozen=True)
class LabelMapping:
    """Private class ``c`` is generated with source condition ``table[c]``."""

    table: tuple
    seed: int
    num_source_classes: int

    def __call__(self, private_classes):
        idx = torch.as_tensor(private_classes, dtype=torch.long)
        table = torch.as_tensor(self.table, dtype=torch.long)
        return table[idx]

    def __len__(self):
        return len(self.table)

    @property
    def injective(self):
        return len(set(self.table)) == len(self.table)


def random_label_mapping(num_private_classes: int, num_source_classes: int, seed: int) -> LabelMapping:
    """Seeded draw of source conditions; without replacement whenever there are enough source classes.

    Takes only class counts and a seed, so it cannot depend on private data.
    """
    if num_private_classes < 1 or num_source_classes < 1:
        raise InvalidArgumentError("class counts must be positive")
    rng = _rng.stream(seed, "label_mapping")
    replace = num_source_classes < num_private_classes
    table = rng.choice(num_source_classes, size=num_private_classes, replace=replace)
    return LabelMapping(tuple(int(t) for t in table), int(seed), int(num_source_classes))


class PromptBank:
    """One prompt row per private class, scaled by ``kappa`` when applied."""

    kind = "prompts"

    def __init__(self, prompts, kappa: float, space: str = "feature"):
        if space not in SPACES:
            raise InvalidArgumentError(f"prompt space must be one of {SPACES}")
        if kappa < 0:
            raise InvalidArgumentError("kappa must be nonnegative")
        self.prompts = torch.as_tensor(prompts, dtype=torch.float64).detach().clone().requires_grad_(True)
        if self.prompts.dim() != 2:
            raise InvalidArgumentError("prompts must be a [classes x prompt_dim] matrix")
        self.kappa = float(kappa)
        self.space = space

    @property
    def num_classes(self):
        return self.prompts.shape[0]

    @property
    def prompt_dim(self):
        return self.prompts.shape[1]

    def apply(self, raw, private_classes) -> torch.Tensor:
        """Batched ``raw + kappa * prompts[class]``."""
        raw = torch.as_tensor(raw, dtype=torch.float64)
        if raw.shape[-1] != self.prompt_dim:
            raise InvalidArgumentError(f"raw dimension {raw.shape[-1]} != prompt_dim {self.prompt_dim}")
        return raw + self.kappa * self.prompts[torch.as_tensor(private_classes, dtype=torch.long)]

    def copy(self):
        return PromptBank(self.prompts.detach().clone(), self.kappa, self.space)

    def meta(self):
        return {"kappa": self.kappa, "space": self.space}

    @property
    def params(self):
        return {"prompts": self.prompts}

    def save(self, path):
        write_checkpoint(path, self.kind, self.meta(), self.params)

    @classmethod
    def load(cls, path):
        kind, meta, tensors = read_checkpoint(path)
        if kind != cls.kind:
            raise CheckpointKindError(f"{path}: expected a prompts checkpoint, found {kind!r}")
        return cls(tensors["prompts"], meta["kappa"], meta["space"])


def init_prompts(num_private_classes: int, prompt_dim: int, space: str, kappa: float, seed: int) -> PromptBank:
    if num_private_classes < 1 or prompt_dim < 1:
        raise InvalidArgumentError("prompt bank dimensions must be positive")
    rows = _rng.normal(seed, "prompts.init", (num_private_classes, prompt_dim), std=INIT_STD)
    return PromptBank(rows, kappa, space)


def apply_prompt(bank: PromptBank, raw, private_class: int) -> torch.Tensor:
    raw = torch.as_tensor(raw, dtype=torch.float64)
    if raw.dim() != 1 or raw.shape[0] != bank.prompt_dim:
        raise InvalidArgumentError(f"raw vector must have {bank.prompt_dim} entries")
    if not 0 <= int(private_class) < bank.num_classes:
        raise InvalidArgumentError(f"class {private_class} out of range")
    return raw + bank.kappa * bank.prompts[int(private_class)]
