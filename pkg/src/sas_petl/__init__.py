"""Shared + layer-specific (hypernetwork) adapters for frozen ViT-style backbones."""
from .backbone import Backbone, BackboneConfig, Head, backbone_forward, freeze_all, patch_embed
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, DatasetSpec, ShiftSpec, SyntheticSource, few_shot_sample, load_idx, synth_generate
from .estimator import BackboneFeatures, SaSClassifier
from .harness import RunResult, emit_results, finetune, ppt_score, pretrain_toy, read_results
from .sas import (SasConfig, SasParams, adapt_output, assign_layers, hypernet_generate, init_sas,
                  layer_specific_forward, param_count, shared_forward)
from .tensor import Rng, Tensor, backward, finite_diff_check, kaiming_normal
from .training import TrainConfig, evaluate_top1
from .variants import VariantKind, VariantModel, build_variant, trainable_params

__all__ = [
    "Backbone",
    "BackboneConfig",
    "Head",
    "backbone_forward",
    "freeze_all",
    "patch_embed",
    "load_checkpoint",
    "save_checkpoint",
    "Dataset",
    "DatasetSpec",
    "ShiftSpec",
    "SyntheticSource",
    "few_shot_sample",
    "load_idx",
    "synth_generate",
    "BackboneFeatures",
    "SaSClassifier",
    "RunResult",
    "emit_results",
    "finetune",
    "ppt_score",
    "pretrain_toy",
    "read_results",
    "SasConfig",
    "SasParams",
    "adapt_output",
    "assign_layers",
    "hypernet_generate",
    "init_sas",
    "layer_specific_forward",
    "param_count",
    "shared_forward",
    "Rng",
    "Tensor",
    "backward",
    "finite_diff_check",
    "kaiming_normal",
    "TrainConfig",
    "evaluate_top1",
    "VariantKind",
    "VariantModel",
    "build_variant",
    "trainable_params",
]

__version__ = "0.1.0"
