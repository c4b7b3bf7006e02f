"""Frozen source models: a class-conditional generator and a feature extractor.

Both are written functionally over an ordered dict of float64 tensors so they
can be checksummed, serialized, and driven without touching torch's global RNG.
Built-in toy parameters are rounded to float32-representable values, which
makes the float32 checkpoint format lossless for them.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np
import torch
import torch.nn.functional as F

from . import _rng
from .exceptions import (
    CheckpointFormatError,
    CheckpointKindError,
    CheckpointMissingError,
    CheckpointShapeError,
    InvalidArgumentError,
)

MAGIC = b"VPNTKCKP"
FORMAT_VERSION = 1
KINDS = ("generator", "extractor", "prompts")


def _checksum(params: dict) -> str:
    h = hashlib.sha256()
    for name, t in params.items():
        h.update(name.encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.detach().numpy().tobytes())
    return h.hexdigest()


class _Backbone:
    kind = None

    def __init__(self, params: dict, frozen: bool = True):
        self.params = {k: v.detach().clone().to(torch.float64) for k, v in params.items()}
        self.frozen = bool(frozen)
        for t in self.params.values():
            t.requires_grad_(not self.frozen)
        self._check_shapes()

    def _check_shapes(self):
        expected = self.expected_shapes()
        if set(expected) != set(self.params):
            raise CheckpointShapeError(f"parameter names {sorted(self.params)} != {sorted(expected)}")
        for name, shape in expected.items():
            if tuple(self.params[name].shape) != tuple(shape):
                raise CheckpointShapeError(
                    f"{name}: shape {tuple(self.params[name].shape)} != expected {tuple(shape)}")

    def parameters(self):
        return list(self.params.values())

    def checksum(self) -> str:
        return _checksum(self.params)


class ConditionalGenerator(_Backbone):
    """``G(z, y)``: latent plus class embedding, a dense layer, two transposed convolutions.

    A fixed per-class template is added before the output sigmoid, so pixel
    values are in [0, 1] and classes stay distinguishable even with random weights.
    """

    kind = "generator"

    def __init__(self, params, latent_dim, num_source_classes, image_shape, embed_dim=16, frozen=True):
        self.latent_dim = int(latent_dim)
        self.num_source_classes = int(num_source_classes)
        self.image_shape = tuple(int(s) for s in image_shape)
        self.embed_dim = int(embed_dim)
        super().__init__(params, frozen)

    def meta(self):
        return {"latent_dim": self.latent_dim, "num_source_classes": self.num_source_classes,
                "image_shape": list(self.image_shape), "embed_dim": self.embed_dim}

    def expected_shapes(self):
        c, h, w = self.image_shape
        k = self.num_source_classes
        return {
            "embed": (k, self.embed_dim),
            "fc_w": (32 * (h // 4) * (w // 4), self.latent_dim + self.embed_dim),
            "fc_b": (32 * (h // 4) * (w // 4),),
            "dc1_w": (32, 16, 4, 4),
            "dc1_b": (16,),
            "dc2_w": (16, c, 4, 4),
            "dc2_b": (c,),
            "templates": (k, c, h, w),
        }

    def forward(self, z, classes) -> torch.Tensor:
        p = self.params
        c, h, w = self.image_shape
        z = torch.as_tensor(z, dtype=torch.float64)
        if z.dim() == 1:
            z = z.unsqueeze(0)
        classes = torch.as_tensor(classes, dtype=torch.long).reshape(-1)
        if z.shape != (classes.shape[0], self.latent_dim):
            raise InvalidArgumentError(f"latents must have shape (n, {self.latent_dim}), got {tuple(z.shape)}")
        if not torch.isfinite(z).all():
            raise InvalidArgumentError("latent vector contains non-finite values")
        if classes.numel() and (classes.min() < 0 or classes.max() >= self.num_source_classes):
            raise InvalidArgumentError(f"source class out of range [0, {self.num_source_classes})")
        hid = torch.tanh(torch.cat([z, p["embed"][classes]], dim=1) @ p["fc_w"].T + p["fc_b"])
        hid = hid.reshape(-1, 32, h // 4, w // 4)
        hid = torch.tanh(F.conv_transpose2d(hid, p["dc1_w"], p["dc1_b"], stride=2, padding=1))
        out = F.conv_transpose2d(hid, p["dc2_w"], p["dc2_b"], stride=2, padding=1)
        return torch.sigmoid(out + p["templates"][classes])

    __call__ = forward

    @classmethod
    def toy(cls, seed=0, latent_dim=32, num_source_classes=10, image_shape=(1, 16, 16), frozen=True):
        c, h, w = image_shape
        if h % 4 or w % 4:
            raise InvalidArgumentError("toy generator needs image height and width divisible by 4")
        embed_dim = 16
        gen = cls.__new__(cls)
        gen.latent_dim, gen.num_source_classes = latent_dim, num_source_classes
        gen.image_shape, gen.embed_dim = tuple(image_shape), embed_dim
        params = {}
        for name, shape in gen.expected_shapes().items():
            if name == "templates":
                continue
            if name.endswith("_b"):
                params[name] = torch.zeros(shape, dtype=torch.float64)
            elif name == "embed":
                params[name] = _rng.normal(seed, "gen.embed", shape)
            else:
                fan_in = shape[1] if name == "fc_w" else shape[0] * 4
                params[name] = _rng.normal(seed, f"gen.{name}", shape, std=1.0 / np.sqrt(fan_in))
        coarse = _rng.normal(seed, "gen.templates", (num_source_classes, c, h // 4, w // 4), std=2.0)
        params["templates"] = F.interpolate(coarse, size=(h, w), mode="bilinear", align_corners=False)
        params = {k: _rng.f32_exact(v) for k, v in params.items()}
        return cls(params, latent_dim, num_source_classes, image_shape, embed_dim, frozen=frozen)


class FeatureExtractor(_Backbone):
    """Two strided tanh convolutions and a dense tanh layer; the output is the penultimate representation."""

    kind = "extractor"

    def __init__(self, params, image_shape, feat_dim=64, frozen=True):
        self.image_shape = tuple(int(s) for s in image_shape)
        self.feat_dim = int(feat_dim)
        super().__init__(params, frozen)

    def meta(self):
        return {"image_shape": list(self.image_shape), "feat_dim": self.feat_dim}

    def expected_shapes(self):
        c, h, w = self.image_shape
        return {
            "conv1_w": (8, c, 3, 3),
            "conv1_b": (8,),
            "conv2_w": (16, 8, 3, 3),
            "conv2_b": (16,),
            "fc_w": (self.feat_dim, 16 * (h // 4) * (w // 4)),
            "fc_b": (self.feat_dim,),
        }

    def forward(self, images) -> torch.Tensor:
        p = self.params
        images = torch.as_tensor(images, dtype=torch.float64)
        if images.dim() == len(self.image_shape):
            images = images.unsqueeze(0)
        if tuple(images.shape[1:]) != self.image_shape:
            raise InvalidArgumentError(
                f"image shape {tuple(images.shape[1:])} does not match extractor shape {self.image_shape}")
        hid = torch.tanh(F.conv2d(images, p["conv1_w"], p["conv1_b"], stride=2, padding=1))
        hid = torch.tanh(F.conv2d(hid, p["conv2_w"], p["conv2_b"], stride=2, padding=1))
        return torch.tanh(hid.flatten(1) @ p["fc_w"].T + p["fc_b"])

    __call__ = forward

    @classmethod
    def toy(cls, seed=0, image_shape=(1, 16, 16), feat_dim=64):
        fe = cls.__new__(cls)
        fe.image_shape, fe.feat_dim = tuple(image_shape), feat_dim
        params = {}
        for name, shape in fe.expected_shapes().items():
            if name.endswith("_b"):
                params[name] = _rng.normal(seed, f"fe.{name}", shape, std=0.1)
            else:
                fan_in = int(np.prod(shape[1:]))
                params[name] = _rng.normal(seed, f"fe.{name}", shape, std=1.0 / np.sqrt(fan_in))
        params = {k: _rng.f32_exact(v) for k, v in params.items()}
        return cls(params, image_shape, feat_dim)


class IdentityExtractor:
    """Pixel mode: images are flattened and passed through unchanged."""

    kind = "identity"
    frozen = True

    def __init__(self, image_shape):
        self.image_shape = tuple(image_shape)
        self.feat_dim = int(np.prod(self.image_shape))

    def forward(self, images):
        images = torch.as_tensor(images, dtype=torch.float64)
        if images.dim() == len(self.image_shape):
            images = images.unsqueeze(0)
        if tuple(images.shape[1:]) != self.image_shape:
            raise InvalidArgumentError("image shape mismatch")
        return images.flatten(1)

    __call__ = forward

    def checksum(self):
        return "identity"


def generate(g: ConditionalGenerator, z, source_class: int) -> torch.Tensor:
    """Single image ``G(z, source_class)`` of shape ``g.image_shape``."""
    if not 0 <= int(source_class) < g.num_source_classes:
        raise InvalidArgumentError(f"source class {source_class} out of range")
    return g.forward(torch.as_tensor(z, dtype=torch.float64).reshape(1, -1), [int(source_class)])[0]


def extract(fe, image) -> torch.Tensor:
    image = torch.as_tensor(image, dtype=torch.float64)
    if tuple(image.shape) != tuple(fe.image_shape):
        raise InvalidArgumentError(f"image shape {tuple(image.shape)} != {tuple(fe.image_shape)}")
    return fe.forward(image.unsqueeze(0))[0]


# -- checkpoint file format ---------------------------------------------------
#
#   8s   magic "VPNTKCKP"
#   <I   format version
#   <H   kind tag length, then utf-8 kind tag
#   <I   metadata length, then utf-8 JSON metadata
#   <I   tensor count; per tensor: <H name length, name, <B ndim, ndim x <I dims
#   row-major little-endian float32 data for every tensor, in table order


def write_checkpoint(path, kind: str, meta: dict, tensors: dict):
    if kind not in KINDS:
        raise InvalidArgumentError(f"unknown checkpoint kind {kind!r}")
    out = bytearray(MAGIC)
    out += struct.pack("<I", FORMAT_VERSION)
    tag = kind.encode()
    out += struct.pack("<H", len(tag)) + tag
    blob = json.dumps(meta, sort_keys=True).encode()
    out += struct.pack("<I", len(blob)) + blob
    out += struct.pack("<I", len(tensors))
    for name, t in tensors.items():
        raw = name.encode()
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", t.dim())
        out += struct.pack(f"<{t.dim()}I", *t.shape)
    for t in tensors.values():
        out += t.detach().to(torch.float64).numpy().astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def read_checkpoint(path):
    """Parse a checkpoint into ``(kind, meta, tensors)``."""
    if not os.path.exists(path):
        raise CheckpointMissingError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise CheckpointFormatError(f"{path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, data, pos)
        pos += size
        return vals

    def take_bytes(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointFormatError(f"{path}: truncated checkpoint")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take_bytes(len(MAGIC)) != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic, not a checkpoint")
    (version,) = take("<I")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported format version {version}")
    try:
        kind = take_bytes(take("<H")[0]).decode()
        meta = json.loads(take_bytes(take("<I")[0]).decode())
        (count,) = take("<I")
        table = []
        for _ in range(count):
            name = take_bytes(take("<H")[0]).decode()
            (ndim,) = take("<B")
            table.append((name, take(f"<{ndim}I")))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: unparseable header ({exc})") from exc
    tensors = {}
    for name, shape in table:
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(take_bytes(4 * n), dtype="<f4").reshape(shape)
        tensors[name] = torch.from_numpy(arr.astype(np.float64))
    if pos != len(data):
        raise CheckpointFormatError(f"{path}: {len(data) - pos} trailing bytes")
    return kind, meta, tensors


def save_checkpoint(model, path):
    write_checkpoint(path, model.kind, model.meta(), model.params)


def load_checkpoint(path, kind: str):
    """Load a generator or extractor; the result is always frozen."""
    if kind not in ("generator", "extractor"):
        raise InvalidArgumentError(f"kind must be 'generator' or 'extractor', got {kind!r}")
    found, meta, tensors = read_checkpoint(path)
    if found != kind:
        raise CheckpointKindError(f"{path}: expected a {kind} checkpoint, found {found!r}")
    try:
        if kind == "generator":
            return ConditionalGenerator(tensors, meta["latent_dim"], meta["num_source_classes"],
                                        meta["image_shape"], meta.get("embed_dim", 16), frozen=True)
        return FeatureExtractor(tensors, meta["image_shape"], meta["feat_dim"])
    except KeyError as exc:
        raise CheckpointFormatError(f"{path}: metadata missing {exc}") from exc
