"""Experiment config files.

INI-style sections; every key is optional and falls back to the defaults
below, but unknown sections or keys are rejected::

    [meta]
    version = 1

    [backbone]            ; BackboneConfig fields
    image_side = 16
    channels = 1
    patch = 4
    d = 32
    L = 12
    heads = 4
    mlp_ratio = 4
    num_classes_pretrain = 3

    [sas]                 ; SasConfig fields except d and L (taken from [backbone])
    d_prime = 8
    r = 4
    r_prime = 8
    M = 6
    activation = gelu

    [train]               ; TrainConfig fields
    lr = 0.001
    beta1 = 0.9
    beta2 = 0.999
    weight_decay = 0.0001
    warmup_frac = 0.1
    epochs = 100
    batch_size = 32
    seed = 0
    precision = float32

    [data]
    classes = 3
    per_class = 100
    test_per_class = 100
    noise = 0.5
    template_seed = 0
    smooth = 2
    mean_shift = 0.0
    contrast_scale = 1.0
    label_permutation =            ; e.g. 2,0,1
    seed = 0
    shots =                        ; few-shot k per class for the train split
    idx_images =                   ; IDX files replace the synthetic source
    idx_labels =
    idx_test_images =
    idx_test_labels =
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .backbone import BackboneConfig
from .data import Dataset, DatasetSpec, IdxSource, ShiftSpec, SyntheticSource, few_shot_sample, synth_generate
from .errors import ConfigError
from .sas import SasConfig
from .training import TrainConfig

CONFIG_VERSION = 1


@dataclass(frozen=True)
class DataConfig:
    classes: int = 3
    per_class: int = 100
    test_per_class: int = 100
    noise: float = 0.5
    template_seed: int = 0
    smooth: int = 2
    mean_shift: float = 0.0
    contrast_scale: float = 1.0
    label_permutation: tuple | None = None
    seed: int = 0
    shots: int | None = None
    idx_images: str | None = None
    idx_labels: str | None = None
    idx_test_images: str | None = None
    idx_test_labels: str | None = None

    def spec(self, split: str, image_side: int = 16, channels: int = 1) -> DatasetSpec:
        if self.idx_images:
            if split == "test":
                if not self.idx_test_images:
                    raise ConfigError("IDX data needs idx_test_images/idx_test_labels for the test split")
                return DatasetSpec(IdxSource(self.idx_test_images, self.idx_test_labels), split, self.seed)
            return DatasetSpec(IdxSource(self.idx_images, self.idx_labels), split, self.seed)
        per_class = self.per_class if split == "train" else self.test_per_class
        src = SyntheticSource(classes=self.classes, per_class=per_class, image_side=image_side,
                              channels=channels, noise=self.noise, template_seed=self.template_seed,
                              smooth=self.smooth,
                              shift=ShiftSpec(self.mean_shift, self.contrast_scale, self.label_permutation))
        return DatasetSpec(src, split, self.seed)

    def load(self, split: str, image_side: int = 16, channels: int = 1) -> Dataset:
        ds = synth_generate(self.spec(split, image_side, channels))
        if split == "train" and self.shots:
            ds = few_shot_sample(ds, self.shots, self.seed)
        return ds


@dataclass(frozen=True)
class ExperimentConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    sas: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    version: int = CONFIG_VERSION

    def sas_config(self) -> SasConfig:
        fields = {"M": min(6, self.backbone.L), **self.sas}
        return SasConfig(d=self.backbone.d, L=self.backbone.L, **fields)

    def load_data(self, split: str) -> Dataset:
        return self.data.load(split, self.backbone.image_side, self.backbone.channels)


@dataclass(frozen=True)
class _Typed:
    type: str


_SAS_FIELDS = {f.name: f for f in dataclasses.fields(SasConfig) if f.name not in ("d", "L")}


def _coerce(section: str, key: str, raw: str, typ):
    raw = raw.strip()
    try:
        if raw == "" and ("None" in str(typ)):
            return None
        typ = str(typ)
        if typ.startswith("int"):
            return int(raw)
        if typ.startswith("float"):
            return float(raw)
        if "tuple" in typ:
            return tuple(int(x) for x in raw.split(","))
        return raw
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {typ}") from None


def _section(cp, name: str, fields: dict) -> dict:
    if not cp.has_section(name):
        return {}
    out = {}
    for key, raw in cp.items(name):
        if key not in fields:
            known = ", ".join(sorted(fields))
            raise ConfigError(f"unknown key {key!r} in [{name}] (known: {known})")
        out[key] = _coerce(name, key, raw, fields[key].type)
    return out


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str  # keys are case-sensitive (L, M)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    allowed = {"meta", "backbone", "sas", "train", "data"}
    for name in cp.sections():
        if name not in allowed:
            raise ConfigError(f"unknown section [{name}]")
    meta = _section(cp, "meta", {"version": _Typed("int")})
    version = int(meta.get("version", CONFIG_VERSION))
    if version != CONFIG_VERSION:
        raise ConfigError(f"config version {version} is not supported (expected {CONFIG_VERSION})")

    def fields_of(cls):
        return {f.name: f for f in dataclasses.fields(cls)}

    bb = _section(cp, "backbone", fields_of(BackboneConfig))
    sas = _section(cp, "sas", _SAS_FIELDS)
    tr = _section(cp, "train", fields_of(TrainConfig))
    data = _section(cp, "data", fields_of(DataConfig))
    try:
        return ExperimentConfig(BackboneConfig(**bb), sas, TrainConfig(**tr), DataConfig(**data), version)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text())
