"""Shared bottleneck + hypernetwork-generated layer-specific adapters.

For block input z of layer i the adjustment is

    shared(z)   = act(z @ W_down.T @ W_up)              W_down, W_up: (d', d)
    specific(z) = z @ (c_down H_down).T @ (c_up H_up)   c: (r', r), H: (r, d)
    adjust(z)   = shared(z) + specific(z)

and the block computes B_i(z + adjust(z)). One (H_down, H_up) pair serves
each contiguous group of layers; every layer owns its (c_down, c_up).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Rng, Tensor, kaiming_normal

ACTIVATIONS = {"gelu": T.gelu, "relu": T.relu}
C_INIT = 1e-5


@dataclass(frozen=True)
class SasConfig:
    d: int = 768
    L: int = 12
    d_prime: int = 8
    r: int = 4
    r_prime: int = 8
    M: int = 6
    activation: str = "gelu"

    def __post_init__(self):
        for name in ("d", "L", "d_prime", "r", "r_prime"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"sas.{name} must be >= 1, got {getattr(self, name)}")
        if not 1 <= self.M <= self.L:
            raise ConfigError(f"need 1 <= M <= L, got M={self.M}, L={self.L}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}; choose from {sorted(ACTIVATIONS)}")

    def to_dict(self) -> dict:
        return asdict(self)


def assign_layers(L: int, M: int) -> list[int]:
    """Map each layer to a hypernet index in contiguous groups.

    The first ``L % M`` groups take ceil(L/M) layers, the rest floor(L/M).
    """
    if M < 1 or M > L:
        raise ConfigError(f"need 1 <= M <= L, got M={M}, L={L}")
    base, extra = divmod(L, M)
    out = []
    for g in range(M):
        out.extend([g] * (base + (1 if g < extra else 0)))
    return out


def param_count(config: SasConfig) -> int:
    c = config
    return 2 * (c.d_prime * c.d + c.M * c.r * c.d + c.L * c.r_prime * c.r)


@dataclass
class SharedModule:
    W_down: Tensor
    W_up: Tensor


@dataclass
class HyperNet:
    H_down: Tensor
    H_up: Tensor


@dataclass
class LayerInputs:
    c_down: Tensor
    c_up: Tensor


@dataclass
class SasParams:
    config: SasConfig
    shared: SharedModule
    hypernets: list
    inputs: list
    assignment: list = field(default_factory=list)

    def named_parameters(self):
        yield "shared.W_down", self.shared.W_down
        yield "shared.W_up", self.shared.W_up
        for m, hn in enumerate(self.hypernets):
            yield f"hypernets.{m}.H_down", hn.H_down
            yield f"hypernets.{m}.H_up", hn.H_up
        for i, li in enumerate(self.inputs):
            yield f"inputs.{i}.c_down", li.c_down
            yield f"inputs.{i}.c_up", li.c_up

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_trainable(self) -> int:
        return sum(p.size for p in self.parameters() if p.requires_grad)

    def hook(self, z: Tensor, layer: int) -> Tensor:
        return adapt_output(z, layer, self)


def _param(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float32), requires_grad=True)


def init_sas(config: SasConfig, rng: Rng) -> SasParams:
    """Zero-output initialisation: Kaiming-normal down-projections (fan_in=d),
    zero up-projections, and hypernet inputs filled with 1e-5."""
    c = config
    shared = SharedModule(
        W_down=_param(kaiming_normal(rng.spawn(0), c.d_prime, c.d, fan_in=c.d).data),
        W_up=_param(np.zeros((c.d_prime, c.d))),
    )
    hypernets = [
        HyperNet(H_down=_param(kaiming_normal(rng.spawn(1000 + m), c.r, c.d, fan_in=c.d).data),
                 H_up=_param(np.zeros((c.r, c.d))))
        for m in range(c.M)
    ]
    inputs = [
        LayerInputs(c_down=_param(np.full((c.r_prime, c.r), C_INIT)),
                    c_up=_param(np.full((c.r_prime, c.r), C_INIT)))
        for _ in range(c.L)
    ]
    return SasParams(c, shared, hypernets, inputs, assign_layers(c.L, c.M))


def _check_width(z: Tensor, d: int):
    if z.shape[-1] != d:
        raise DimensionError(f"feature width {z.shape[-1]} does not match adapter width {d}")


def shared_forward(z: Tensor, shared: SharedModule, activation: str = "gelu") -> Tensor:
    _check_width(z, shared.W_down.shape[1])
    return ACTIVATIONS[activation]((z @ shared.W_down.T) @ shared.W_up)


def hypernet_generate(c: Tensor, H: Tensor) -> Tensor:
    """(r', r) @ (r, d) -> (r', d) projection for one layer."""
    if c.ndim != 2 or H.ndim != 2 or c.shape[1] != H.shape[0]:
        raise DimensionError(f"hypernet: input {c.shape} incompatible with weights {H.shape}")
    return c @ H


def layer_specific_forward(z: Tensor, layer: int, params: SasParams) -> Tensor:
    """Linear per-layer corrector built from the layer's generated projections."""
    if not 0 <= layer < params.config.L:
        raise IndexError(f"layer {layer} out of range for L={params.config.L}")
    _check_width(z, params.config.d)
    hn = params.hypernets[params.assignment[layer]]
    li = params.inputs[layer]
    w_down = hypernet_generate(li.c_down, hn.H_down)
    w_up = hypernet_generate(li.c_up, hn.H_up)
    return (z @ w_down.T) @ w_up


def adapt_output(z: Tensor, layer: int, params: SasParams) -> Tensor:
    return (shared_forward(z, params.shared, params.config.activation)
            + layer_specific_forward(z, layer, params))
