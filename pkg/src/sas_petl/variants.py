"""PETL ablation ladder behind one model interface.

Every variant freezes the backbone, trains a fresh linear head, and
adds (possibly nothing) to each block input:

    linear_probe       nothing
    bias_only          b_i
    shared_only        shared(z)
    shared_plus_bias   shared(z) + b_i
    specific_only      specific_i(z)
    full_sas           shared(z) + specific_i(z)
"""
from __future__ import annotations

from enum import Enum

import numpy as np

from . import tensor as T
from .backbone import Backbone, Head, backbone_forward, patch_embed
from .errors import ConfigError
from .sas import SasConfig, SasParams, init_sas, layer_specific_forward, shared_forward
from .tensor import Rng, Tensor


class VariantKind(str, Enum):
    LINEAR_PROBE = "linear_probe"
    BIAS_ONLY = "bias_only"
    SHARED_ONLY = "shared_only"
    SHARED_PLUS_BIAS = "shared_plus_bias"
    SPECIFIC_ONLY = "specific_only"
    FULL_SAS = "full_sas"

    @classmethod
    def parse(cls, value) -> "VariantKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"linearprobe": "linear_probe", "biasonly": "bias_only",
                   "sharedonly": "shared_only", "sharedplusbias": "shared_plus_bias",
                   "specificonly": "specific_only", "fullsas": "full_sas", "sas": "full_sas"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ConfigError(f"unknown variant {value!r}; expected one of {names}") from None

    @property
    def uses_shared(self) -> bool:
        return self in (VariantKind.SHARED_ONLY, VariantKind.SHARED_PLUS_BIAS, VariantKind.FULL_SAS)

    @property
    def uses_specific(self) -> bool:
        return self in (VariantKind.SPECIFIC_ONLY, VariantKind.FULL_SAS)

    @property
    def uses_bias(self) -> bool:
        return self in (VariantKind.BIAS_ONLY, VariantKind.SHARED_PLUS_BIAS)


def default_sas_config(backbone: Backbone, **overrides) -> SasConfig:
    cfg = backbone.config
    fields = dict(d=cfg.d, L=cfg.L, d_prime=8, r=4, r_prime=8, M=min(6, cfg.L))
    fields.update(overrides)
    return SasConfig(**fields)


class VariantModel:
    def __init__(self, kind: VariantKind, backbone: Backbone, head: Head,
                 sas: SasParams | None = None, biases: list | None = None):
        self.kind = kind
        self.backbone = backbone
        self.head = head
        self.sas = sas
        self.biases = biases

    @property
    def sas_config(self) -> SasConfig | None:
        return self.sas.config if self.sas is not None else None

    def hook(self, z: Tensor, layer: int):
        delta = None
        if self.kind.uses_shared:
            delta = shared_forward(z, self.sas.shared, self.sas.config.activation)
        if self.kind.uses_specific:
            g = layer_specific_forward(z, layer, self.sas)
            delta = g if delta is None else delta + g
        if self.biases is not None:
            b = T.broadcast_to(self.biases[layer], z.shape)
            delta = b if delta is None else delta + b
        return delta

    def features(self, images) -> Tensor:
        hook = None if self.kind is VariantKind.LINEAR_PROBE else self.hook
        feats, _ = backbone_forward(patch_embed(images, self.backbone), self.backbone, hook)
        return feats

    def forward(self, images) -> Tensor:
        return self.head(self.features(images))

    __call__ = forward

    def named_adapter_parameters(self):
        if self.sas is not None:
            for name, p in self.sas.named_parameters():
                if name.startswith("shared.") and not self.kind.uses_shared:
                    continue
                if not name.startswith("shared.") and not self.kind.uses_specific:
                    continue
                yield f"sas.{name}", p
        if self.biases is not None:
            for i, b in enumerate(self.biases):
                yield f"bias.{i}", b

    def adapter_parameters(self) -> list:
        return [p for _, p in self.named_adapter_parameters()]

    def head_parameters(self) -> list:
        return self.head.parameters()

    def trainable_parameters(self) -> list:
        return [p for p in self.adapter_parameters() + self.head_parameters() if p.requires_grad]


def build_variant(kind, backbone: Backbone, rng: Rng, num_classes: int,
                  sas_config: SasConfig | None = None, head: Head | None = None) -> VariantModel:
    """Attach a fresh adapter of the requested kind to a frozen backbone.

    ``head`` lets callers share one head initialisation across variants;
    its tensors are copied, not aliased.
    """
    kind = VariantKind.parse(kind)
    if not backbone.frozen:
        raise ConfigError("build_variant needs a frozen backbone; call freeze_all first")
    cfg = backbone.config
    if head is None:
        new_head = Head(cfg.d, num_classes)
    else:
        new_head = Head(cfg.d, head.num_classes)
        new_head.weight.data = head.weight.data.copy()
        new_head.bias.data = head.bias.data.copy()
    sas = None
    if kind.uses_shared or kind.uses_specific:
        sc = sas_config or default_sas_config(backbone)
        if (sc.d, sc.L) != (cfg.d, cfg.L):
            raise ConfigError(f"adapter (d={sc.d}, L={sc.L}) does not match backbone (d={cfg.d}, L={cfg.L})")
        sas = init_sas(sc, rng)
    biases = None
    if kind.uses_bias:
        biases = [Tensor(np.zeros(cfg.d, dtype=np.float32), requires_grad=True) for _ in range(cfg.L)]
    return VariantModel(kind, backbone, new_head, sas, biases)


def trainable_params(model: VariantModel) -> tuple[int, int]:
    """(adapter scalars, head scalars), counted by enumeration."""
    adapter = sum(p.size for p in model.adapter_parameters() if p.requires_grad)
    head = sum(p.size for p in model.head_parameters() if p.requires_grad)
    return adapter, head


def adapter_param_formula(kind, sas_config: SasConfig | None, d: int, L: int) -> int:
    """Closed-form adapter size for each kind (head excluded)."""
    kind = VariantKind.parse(kind)
    total = 0
    c = sas_config
    if kind.uses_shared:
        total += 2 * c.d_prime * c.d
    if kind.uses_specific:
        total += 2 * (c.M * c.r * c.d + c.L * c.r_prime * c.r)
    if kind.uses_bias:
        total += L * d
    return total
