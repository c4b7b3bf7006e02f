"""Named, seeded random streams. Nothing in the package draws unseeded entropy."""
from __future__ import annotations

import zlib

import numpy as np
import torch


def stream(seed: int, label: str, *extra: int) -> np.random.Generator:
    """Independent generator for ``(seed, label, *extra)``.

    The label is hashed with crc32 so stream identity is stable across processes.
    """
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(label.encode("utf-8"))] + [int(e) for e in extra]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


def normal(seed: int, label: str, shape, *extra: int, std: float = 1.0) -> torch.Tensor:
    return torch.from_numpy(stream(seed, label, *extra).standard_normal(shape) * std)


def f32_exact(t: torch.Tensor) -> torch.Tensor:
    """Round a float64 tensor to float32-representable values (kept as float64)."""
    return t.to(torch.float32).to(torch.float64)
