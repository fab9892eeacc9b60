"""Command-line entry point: ``sas-petl <command> ...``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric/training error.
"""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import tensor as T
from .backbone import Backbone, BackboneConfig, freeze_all
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config
from .data import load_idx
from .errors import ConfigError, DataError, SasError
from .harness import emit_results, finetune, ppt_score, pretrain_toy
from .sas import SasConfig, param_count
from .tensor import Rng
from .training import TrainConfig, evaluate_top1
from .variants import VariantKind, VariantModel, build_variant

log = logging.getLogger("sas_petl")

GRADCHECK_TOL = 1e-4


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from None


def cmd_params(args) -> int:
    ms = _int_list(args.m_list) if args.m_list else [args.M]
    print(f"{'M':>3}  {'params':>8}  {'#p (M)':>7}")
    for m in ms:
        cfg = SasConfig(d=args.d, L=args.L, d_prime=args.d_prime, r=args.r, r_prime=args.r_prime, M=m)
        n = param_count(cfg)
        print(f"{m:>3}  {n:>8}  {n / 1e6:>7.3f}")
    return 0


def cmd_ppt(args) -> int:
    print(f"{ppt_score(args.acc, args.params):.4f}")
    return 0


def gradcheck_model(seed: int = 0, d=16, L=3, d_prime=4, r=2, r_prime=2, M=2, batch=2,
                    num_classes=3, activation="gelu") -> dict:
    """Finite-difference check of every trainable scalar on a tiny FullSaS model.

    Adapter and head weights are perturbed away from the zero init so that
    every gradient path is active. Returns max error per parameter name.
    """
    rng = Rng(seed)
    bb = Backbone(BackboneConfig(image_side=8, channels=1, patch=4, d=d, L=L, heads=2,
                                 mlp_ratio=2, num_classes_pretrain=num_classes), rng.spawn(0))
    freeze_all(bb)
    sc = SasConfig(d=d, L=L, d_prime=d_prime, r=r, r_prime=r_prime, M=M, activation=activation)
    model = build_variant(VariantKind.FULL_SAS, bb, rng.spawn(1), num_classes, sc)
    perturb = rng.spawn(2)
    for _, p in list(model.named_adapter_parameters()) + list(model.head.named_parameters()):
        p.data = (p.data + perturb.normal(p.shape, std=0.3)).astype(np.float32)
    images = perturb.normal((batch, 1, 8, 8))
    labels = np.arange(batch) % num_classes
    named = list(model.named_adapter_parameters()) + [(f"head.{n}", p) for n, p in model.head.named_parameters()]

    def loss_fn(*_):
        return T.softmax_cross_entropy(model(images), labels)

    errors = {}
    for name, p in named:
        T.zero_grad([q for _, q in named])  # the other tensors also collect grads each pass
        errors[name] = T.finite_diff_check(loss_fn, [p])
    return errors


def cmd_gradcheck(args) -> int:
    errors = gradcheck_model(seed=args.seed)
    worst = max(errors.values())
    for name, err in errors.items():
        print(f"{name:<28} {err:.3e}")
    print(f"max relative error {worst:.3e} (tolerance {GRADCHECK_TOL:.0e})")
    return 0 if worst < GRADCHECK_TOL else 4


def cmd_pretrain(args) -> int:
    cfg = load_config(args.config)
    data = cfg.load_data("train")
    bb = pretrain_toy(cfg.backbone, data, cfg.train)
    save_checkpoint(bb, args.out)
    print(f"pretrained backbone: train top-1 {bb.pretrain_accuracy:.2f}% -> {args.out}")
    return 0


def _load_backbone(path) -> Backbone:
    model = load_checkpoint(path)
    if isinstance(model, VariantModel):
        model = model.backbone
    if not model.frozen:
        freeze_all(model)
    return model


def cmd_finetune(args) -> int:
    cfg = load_config(args.config)
    bb = _load_backbone(args.backbone)
    if bb.config != cfg.backbone:
        log.warning("config [backbone] differs from checkpoint; using the checkpoint's")
        cfg = ExperimentConfig(bb.config, cfg.sas, cfg.train, cfg.data, cfg.version)
    train, test = cfg.load_data("train"), cfg.load_data("test")
    seeds = _int_list(args.seeds) if args.seeds else [cfg.train.seed]
    results, model = [], None
    for s in seeds:
        tc = TrainConfig(**{**cfg.train.to_dict(), "seed": s})
        res, est = finetune(args.variant, bb, train, test, tc, cfg.sas_config(),
                            record_time=not args.no_timing, return_model=True)
        results.append(res)
        model = est.model_
        print(f"{res.variant} seed={s} top1={res.top1:.2f} adapter_params={res.adapter_params} ppt={res.ppt:.4f}")
    emit_results(results, args.out)
    if args.save_model:
        save_checkpoint(model, args.save_model)
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.model)
    if not isinstance(model, VariantModel):
        raise ConfigError("eval needs a fine-tuned model checkpoint (finetune --save-model)")
    if args.data.startswith("idx:"):
        parts = args.data[4:].split(",")
        if len(parts) != 2:
            raise ConfigError("--data idx:<images>,<labels>")
        data = load_idx(*parts)
    else:
        cfg = load_config(args.data)
        bc = model.backbone.config
        data = cfg.data.load("test", bc.image_side, bc.channels)
    if data.num_classes > model.head.num_classes:
        raise DataError(f"data has {data.num_classes} classes, model head has {model.head.num_classes}")
    print(f"top1 {evaluate_top1(model, data):.2f}")
    return 0


def cmd_ablate_m(args) -> int:
    cfg = load_config(args.config)
    bb = _load_backbone(args.backbone)
    train, test = cfg.load_data("train"), cfg.load_data("test")
    results = []
    print(f"{'M':>3}  {'toy params':>10}  {'ViT-B #p (M)':>12}  {'top1':>6}  {'ppt':>6}")
    for m in _int_list(args.m_list):
        sc = SasConfig(**{**cfg.sas_config().to_dict(), "M": m})
        res = finetune("full_sas", bb, train, test, cfg.train, sc, record_time=not args.no_timing)
        res.variant = f"full_sas@M={m}"
        results.append(res)
        vit_b_count = param_count(SasConfig(d=768, L=12, d_prime=sc.d_prime, r=sc.r, r_prime=sc.r_prime, M=m))
        print(f"{m:>3}  {res.adapter_params:>10}  {vit_b_count / 1e6:>12.4f}  {res.top1:>6.2f}  {res.ppt:>6.4f}")
    if args.out:
        emit_results(results, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sas-petl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("params", help="adapter parameter counts (optionally an M sweep)")
    s.add_argument("--d", type=int, default=768)
    s.add_argument("--L", type=int, default=12)
    s.add_argument("--d-prime", type=int, default=8)
    s.add_argument("--r", type=int, default=4)
    s.add_argument("--r-prime", type=int, default=8)
    s.add_argument("--M", type=int, default=6)
    s.add_argument("--m-list", help="comma-separated M values, e.g. 1,3,4,6")
    s.set_defaults(func=cmd_params)

    s = sub.add_parser("ppt", help="performance-parameter trade-off score")
    s.add_argument("acc", type=float, help="top-1 accuracy in percent")
    s.add_argument("params", type=int, help="adapter parameter count")
    s.set_defaults(func=cmd_ppt)

    s = sub.add_parser("gradcheck", help="finite-difference check of a tiny SaS model")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("pretrain", help="train and freeze a toy foundation backbone")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("finetune", help="fine-tune one variant on a frozen backbone")
    s.add_argument("--variant", required=True, choices=[k.value for k in VariantKind])
    s.add_argument("--backbone", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="results CSV (a .jsonl log is written beside it)")
    s.add_argument("--seeds", help="comma-separated seeds (default: [train] seed)")
    s.add_argument("--save-model", help="write the last fine-tuned model checkpoint here")
    s.add_argument("--no-timing", action="store_true", help="record wall_time as 0 for byte-stable results")
    s.set_defaults(func=cmd_finetune)

    s = sub.add_parser("eval", help="top-1 of a fine-tuned model checkpoint")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True, help="config file ([data] test split) or idx:<images>,<labels>")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate-m", help="FullSaS accuracy and size for several hypernet counts M")
    s.add_argument("--m-list", default="1,3,4,6")
    s.add_argument("--backbone", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.add_argument("--no-timing", action="store_true")
    s.set_defaults(func=cmd_ablate_m)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SasError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except (ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
