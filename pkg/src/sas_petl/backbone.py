"""Small ViT-style encoder that exposes every block input."""
from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Rng, Tensor

# hook(z, layer) -> adjustment with z's shape, added to the block input
BlockHook = Callable[[Tensor, int], Optional[Tensor]]


@dataclass(frozen=True)
class BackboneConfig:
    image_side: int = 16
    channels: int = 1
    patch: int = 4
    d: int = 32
    L: int = 12
    heads: int = 4
    mlp_ratio: int = 4
    num_classes_pretrain: int = 3

    def __post_init__(self):
        for name in ("image_side", "channels", "patch", "d", "L", "heads", "mlp_ratio",
                     "num_classes_pretrain"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"backbone.{name} must be >= 1")
        if self.image_side % self.patch:
            raise ConfigError(f"patch {self.patch} does not divide image_side {self.image_side}")
        if self.d % self.heads:
            raise ConfigError(f"d={self.d} is not divisible by heads={self.heads}")

    @property
    def num_patches(self) -> int:
        return (self.image_side // self.patch) ** 2

    @property
    def num_tokens(self) -> int:
        return self.num_patches + 1

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch * self.patch

    def to_dict(self) -> dict:
        return asdict(self)


class Linear:
    """y = x @ W + b with W stored (in, out)."""

    def __init__(self, rng: Rng, fan_in: int, fan_out: int, std=0.02, zero=False):
        w = np.zeros((fan_in, fan_out)) if zero else rng.normal((fan_in, fan_out), std=std)
        self.weight = Tensor(w.astype(np.float32), requires_grad=True)
        self.bias = Tensor(np.zeros(fan_out, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias

    def parameters(self):
        return [self.weight, self.bias]


class LayerNorm:
    def __init__(self, d: int):
        self.gamma = Tensor(np.ones(d, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(d, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta)

    def parameters(self):
        return [self.gamma, self.beta]


class Block:
    """Pre-norm transformer block: x + MHA(LN1 x), then + FFN(LN2 .)."""

    def __init__(self, rng: Rng, cfg: BackboneConfig):
        d = cfg.d
        self.heads = cfg.heads
        self.ln1 = LayerNorm(d)
        self.q = Linear(rng, d, d)
        self.k = Linear(rng, d, d)
        self.v = Linear(rng, d, d)
        self.o = Linear(rng, d, d)
        self.ln2 = LayerNorm(d)
        self.fc1 = Linear(rng, d, cfg.mlp_ratio * d)
        self.fc2 = Linear(rng, cfg.mlp_ratio * d, d)

    def _split(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        return x.reshape(b, n, self.heads, d // self.heads).transpose(0, 2, 1, 3)

    def attention(self, x: Tensor, return_weights=False):
        b, n, d = x.shape
        q, k, v = self._split(self.q(x)), self._split(self.k(x)), self._split(self.v(x))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(d // self.heads))
        weights = T.softmax(scores, axis=-1)
        ctx = (weights @ v).transpose(0, 2, 1, 3).reshape(b, n, d)
        out = self.o(ctx)
        return (out, weights) if return_weights else out

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attention(self.ln1(x))
        return x + self.fc2(T.gelu(self.fc1(self.ln2(x))))

    def named_parameters(self):
        for name in ("ln1", "q", "k", "v", "o", "ln2", "fc1", "fc2"):
            mod = getattr(self, name)
            for pname, p in zip(_PNAMES[type(mod)], mod.parameters()):
                yield f"{name}.{pname}", p


_PNAMES = {Linear: ("weight", "bias"), LayerNorm: ("gamma", "beta")}


class Head:
    """Linear classifier d -> num_classes. Zero-initialised, always trainable."""

    def __init__(self, d: int, num_classes: int):
        self.num_classes = num_classes
        self.weight = Tensor(np.zeros((d, num_classes), dtype=np.float32), requires_grad=True)
        self.bias = Tensor(np.zeros(num_classes, dtype=np.float32), requires_grad=True)

    def __call__(self, features: Tensor) -> Tensor:
        return features @ self.weight + self.bias

    def named_parameters(self):
        yield "weight", self.weight
        yield "bias", self.bias

    def parameters(self):
        return [self.weight, self.bias]


class Backbone:
    def __init__(self, config: BackboneConfig, rng: Rng):
        cfg = self.config = config
        self.patch_embed_w = Tensor(
            rng.normal((cfg.patch_dim, cfg.d), std=math.sqrt(1.0 / cfg.patch_dim)).astype(np.float32),
            requires_grad=True)
        self.patch_embed_b = Tensor(np.zeros(cfg.d, dtype=np.float32), requires_grad=True)
        self.cls_token = Tensor(rng.normal((1, cfg.d), std=0.02).astype(np.float32), requires_grad=True)
        self.pos_embed = Tensor(rng.normal((cfg.num_tokens, cfg.d), std=0.02).astype(np.float32),
                                requires_grad=True)
        self.blocks = [Block(rng.spawn(i), cfg) for i in range(cfg.L)]
        self.norm = LayerNorm(cfg.d)
        self.frozen = False

    def named_parameters(self):
        yield "patch_embed.weight", self.patch_embed_w
        yield "patch_embed.bias", self.patch_embed_b
        yield "cls_token", self.cls_token
        yield "pos_embed", self.pos_embed
        for i, blk in enumerate(self.blocks):
            for name, p in blk.named_parameters():
                yield f"blocks.{i}.{name}", p
        yield "norm.gamma", self.norm.gamma
        yield "norm.beta", self.norm.beta

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def embed(self, images) -> Tensor:
        return patch_embed(images, self)

    def __call__(self, images, hook: BlockHook | None = None) -> Tensor:
        features, _ = backbone_forward(patch_embed(images, self), self, hook)
        return features


def patchify(images: np.ndarray, cfg: BackboneConfig) -> np.ndarray:
    """(B, C, H, W) -> (B, num_patches, C*p*p), patches in row-major order."""
    b, c, hgt, wid = images.shape
    p = cfg.patch
    g = cfg.image_side // p
    x = images.reshape(b, c, g, p, g, p).transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(b, g * g, c * p * p)


def patch_embed(image, backbone: Backbone) -> Tensor:
    """Tokenise an image (C, H, W) or batch (B, C, H, W) into (…, n, d) tokens."""
    cfg = backbone.config
    arr = image.data if isinstance(image, Tensor) else np.asarray(image)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    expected = (cfg.channels, cfg.image_side, cfg.image_side)
    if arr.ndim != 4 or arr.shape[1:] != expected:
        raise DimensionError(f"patch_embed: expected image shape {expected}, got {np.shape(image)}")
    b = arr.shape[0]
    patches = Tensor(patchify(arr.astype(backbone.patch_embed_w.dtype, copy=False), cfg))
    tokens = patches @ backbone.patch_embed_w + backbone.patch_embed_b
    cls = T.broadcast_to(backbone.cls_token.reshape(1, 1, cfg.d), (b, 1, cfg.d))
    tokens = T.concat([cls, tokens], axis=1) + backbone.pos_embed
    return tokens[0] if single else tokens


def backbone_forward(tokens: Tensor, backbone: Backbone, hook: BlockHook | None = None):
    """Run all blocks, optionally adjusting each block input via ``hook``.

    Block i receives z_i + hook(z_i, i). Returns the final-LN class-token
    feature and the list of block inputs z_1..z_L as seen before adjustment.
    """
    cfg = backbone.config
    if tokens.shape[-1] != cfg.d:
        raise DimensionError(f"token width {tokens.shape[-1]} != backbone width {cfg.d}")
    single = tokens.ndim == 2
    z = tokens.reshape(1, *tokens.shape) if single else tokens
    intermediates = []
    for i, blk in enumerate(backbone.blocks):
        intermediates.append(z[0] if single else z)
        if hook is not None:
            delta = hook(z, i)
            if delta is not None:
                if delta.shape != z.shape:
                    raise DimensionError(
                        f"hook output for layer {i} has shape {delta.shape}, expected {z.shape}")
                z = z + delta
        z = blk(z)
    out = backbone.norm(z)
    features = out[:, 0, :]
    return (features[0] if single else features), intermediates


def freeze_all(backbone: Backbone) -> None:
    for p in backbone.parameters():
        p.requires_grad = False
        p.grad = None
    backbone.frozen = True


def unfreeze_all(backbone: Backbone) -> None:
    for p in backbone.parameters():
        p.requires_grad = True
    backbone.frozen = False
