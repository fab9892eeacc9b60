"""Experiment protocols: toy pretraining, fine-tuning runs, PPT, results files."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .backbone import Backbone, BackboneConfig, Head, freeze_all
from .data import Dataset, few_shot_sample
from .errors import ConfigError, DataError, TrainingError
from .estimator import SaSClassifier
from .sas import SasConfig
from .tensor import Rng
from .training import TrainConfig, evaluate_top1, train_loop
from .variants import VariantKind, adapter_param_formula

PPT_SCALE = 1e7
RESULT_COLUMNS = ("variant", "adapter_params", "top1", "ppt", "seed", "config_hash", "wall_time")


def ppt_score(top1: float, adapter_params: int) -> float:
    """Accuracy discounted by size: (top1/100) * exp(-log10(1 + P / 1e7))."""
    if not 0.0 <= top1 <= 100.0:
        raise ValueError(f"top1 must be a percentage in [0, 100], got {top1}")
    if adapter_params < 0:
        raise ValueError(f"adapter_params must be >= 0, got {adapter_params}")
    return (top1 / 100.0) * math.exp(-math.log10(1.0 + adapter_params / PPT_SCALE))


@dataclass
class RunResult:
    variant: str
    adapter_params: int
    top1: float
    seed: int
    config_hash: str
    wall_time: float = 0.0
    ppt: float = field(init=False)

    def __post_init__(self):
        self.ppt = ppt_score(self.top1, self.adapter_params)

    def row(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in RESULT_COLUMNS}


def config_hash(*parts) -> str:
    blob = json.dumps(parts, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def pretrain_toy(backbone_config: BackboneConfig, dataset: Dataset, train_config: TrainConfig) -> Backbone:
    """Train a backbone plus throwaway head on the source task, then freeze it.

    The returned backbone carries ``pretrain_accuracy`` (final train top-1)
    and ``pretrain_losses``.
    """
    if len(dataset) == 0:
        raise DataError("pretraining dataset is empty")
    rng = Rng(train_config.seed)
    backbone = Backbone(backbone_config, rng.spawn(0))
    head = Head(backbone_config.d, max(dataset.num_classes, backbone_config.num_classes_pretrain))

    def forward(x):
        return head(backbone(x))

    params = backbone.parameters() + head.parameters()
    losses = train_loop(forward, params, dataset.images, dataset.labels, train_config, stream=1)
    backbone.pretrain_accuracy = evaluate_top1(forward, dataset)
    backbone.pretrain_losses = losses
    freeze_all(backbone)
    return backbone


def finetune(variant, backbone: Backbone, train: Dataset, test: Dataset, train_config: TrainConfig,
             sas_config: SasConfig | None = None, record_time: bool = True, return_model: bool = False):
    """Fit one variant on ``train``, score top-1 on ``test``.

    Raises TrainingError if the backbone changed during the run.
    """
    kind = VariantKind.parse(variant)
    if not backbone.frozen:
        raise ConfigError("finetune needs a frozen backbone")
    if len(train) == 0 or len(test) == 0:
        raise DataError("finetune needs non-empty train and test sets")
    sc = sas_config or SasConfig(d=backbone.config.d, L=backbone.config.L, M=min(6, backbone.config.L))
    before = backbone.checksum()
    t0 = time.perf_counter()
    est = SaSClassifier(
        backbone=backbone, variant=kind.value, d_prime=sc.d_prime, r=sc.r, r_prime=sc.r_prime,
        M=sc.M, activation=sc.activation, lr=train_config.lr, beta1=train_config.beta1,
        beta2=train_config.beta2, weight_decay=train_config.weight_decay,
        warmup_frac=train_config.warmup_frac, epochs=train_config.epochs,
        batch_size=train_config.batch_size, precision=train_config.precision,
        random_state=train_config.seed)
    missing = sorted(set(range(train.num_classes)) - set(np.unique(train.labels).tolist()))
    if missing:
        raise DataError(f"training split has no examples of classes {missing}")
    est.fit(train.images, train.labels)
    top1 = 100.0 * float(np.mean(est.predict(test.images) == test.labels))
    wall = time.perf_counter() - t0 if record_time else 0.0
    if backbone.checksum() != before:
        raise TrainingError("backbone parameters changed during fine-tuning")
    h = config_hash(kind.value, sc.to_dict() if kind.uses_shared or kind.uses_specific else None,
                    train_config.to_dict(), before, len(train), len(test))
    result = RunResult(kind.value, est.n_adapter_params_, top1, train_config.seed, h, wall)
    return (result, est) if return_model else result


def expected_adapter_params(variant, backbone: Backbone, sas_config: SasConfig | None) -> int:
    cfg = backbone.config
    return adapter_param_formula(variant, sas_config, cfg.d, cfg.L)


def few_shot_sweep(backbone: Backbone, train: Dataset, test: Dataset, train_config: TrainConfig,
                   shots=(1, 2, 4, 8, 16), seeds=(0, 1, 2, 3, 4), variant="full_sas",
                   sas_config: SasConfig | None = None, record_time=True) -> list[RunResult]:
    """One run per (k, seed): sample k shots per class with that seed, then fine-tune."""
    out = []
    for k in shots:
        for s in seeds:
            subset = few_shot_sample(train, k, seed=s)
            cfg = TrainConfig(**{**train_config.to_dict(), "seed": s})
            res = finetune(variant, backbone, subset, test, cfg, sas_config, record_time)
            res.variant = f"{res.variant}@k={k}"
            out.append(res)
    return out


# -- results files -----------------------------------------------------

def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def emit_results(results, path) -> Path:
    """Write ``path`` as CSV and a sibling ``.jsonl`` log; returns the log path."""
    path = Path(path)
    log_path = path.with_suffix(".jsonl")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in results:
            row = r.row()
            w.writerow([_fmt(row[c]) for c in RESULT_COLUMNS])
    with log_path.open("w") as fh:
        for r in results:
            fh.write(json.dumps(r.row()) + "\n")
    return log_path


def read_results(path) -> list[RunResult]:
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            r = RunResult(row["variant"], int(row["adapter_params"]), float(row["top1"]),
                          int(row["seed"]), row["config_hash"], float(row["wall_time"]))
            if r.ppt != float(row["ppt"]):
                raise DataError(f"ppt column {row['ppt']} disagrees with recomputed {r.ppt!r}")
            out.append(r)
    return out
