"""Checkpoint files: a text manifest followed by one float32 little-endian blob.

Layout::

    SAS-PETL-CHECKPOINT
    format_version 1
    kind backbone|variant
    config {...json...}
    meta {...json...}
    tensor <name> shape=<a,b,...> offset=<byte offset> count=<elements>
    ...
    blob_bytes <n>
    end
    <n bytes>

Tensor names are namespaced: ``backbone/``, ``head/``, ``adapter/``.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .backbone import Backbone, BackboneConfig, freeze_all
from .errors import CheckpointError, CheckpointLengthError, CheckpointMissingError, CheckpointVersionError
from .sas import SasConfig
from .tensor import Rng
from .variants import VariantKind, build_variant

MAGIC = "SAS-PETL-CHECKPOINT"
FORMAT_VERSION = 1
_END = b"\nend\n"
_LE_F32 = np.dtype("<f4")


def _named_tensors(model):
    if isinstance(model, Backbone):
        for name, p in model.named_parameters():
            yield f"backbone/{name}", p
        return
    for name, p in model.backbone.named_parameters():
        yield f"backbone/{name}", p
    for name, p in model.head.named_parameters():
        yield f"head/{name}", p
    for name, p in model.named_adapter_parameters():
        yield f"adapter/{name}", p


def _describe(model) -> tuple[str, dict, dict]:
    if isinstance(model, Backbone):
        meta = {}
        if hasattr(model, "pretrain_accuracy"):
            meta["pretrain_accuracy"] = model.pretrain_accuracy
        return "backbone", {"backbone": model.config.to_dict(), "frozen": model.frozen}, meta
    sc = model.sas_config
    config = {
        "backbone": model.backbone.config.to_dict(),
        "variant": model.kind.value,
        "sas": sc.to_dict() if sc is not None else None,
        "num_classes": model.head.num_classes,
    }
    return "variant", config, {}


def save_checkpoint(model, path, meta: dict | None = None) -> None:
    kind, config, auto_meta = _describe(model)
    auto_meta.update(meta or {})
    lines = [MAGIC, f"format_version {FORMAT_VERSION}", f"kind {kind}",
             "config " + json.dumps(config, sort_keys=True),
             "meta " + json.dumps(auto_meta, sort_keys=True)]
    chunks = []
    offset = 0
    for name, p in _named_tensors(model):
        arr = np.ascontiguousarray(p.data, dtype=_LE_F32)
        shape = ",".join(str(s) for s in arr.shape)
        lines.append(f"tensor {name} shape={shape} offset={offset} count={arr.size}")
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    lines.append(f"blob_bytes {offset}")
    header = ("\n".join(lines)).encode("ascii") + _END
    Path(path).write_bytes(header + b"".join(chunks))


def read_manifest(path) -> tuple[dict, bytes]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointMissingError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    cut = raw.find(_END)
    if not raw.startswith(MAGIC.encode()) or cut < 0:
        raise CheckpointError(f"{path}: not a checkpoint file (missing header)")
    manifest = {"tensors": []}
    for line in raw[:cut].decode("ascii").splitlines()[1:]:
        key, _, rest = line.partition(" ")
        if key == "tensor":
            name, shape, off, count = rest.split(" ")
            dims = shape.removeprefix("shape=")
            manifest["tensors"].append({
                "name": name,
                "shape": tuple(int(s) for s in dims.split(",")) if dims else (),
                "offset": int(off.removeprefix("offset=")),
                "count": int(count.removeprefix("count=")),
            })
        elif key in ("config", "meta"):
            manifest[key] = json.loads(rest)
        elif key in ("format_version", "blob_bytes"):
            manifest[key] = int(rest)
        else:
            manifest[key] = rest
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {manifest.get('format_version')} != supported {FORMAT_VERSION}")
    blob = raw[cut + len(_END):]
    if len(blob) != manifest.get("blob_bytes"):
        raise CheckpointLengthError(
            f"{path}: manifest declares {manifest.get('blob_bytes')} blob bytes, file holds {len(blob)}")
    for t in manifest["tensors"]:
        if t["offset"] + 4 * t["count"] > len(blob) or int(np.prod(t["shape"])) != t["count"]:
            raise CheckpointLengthError(f"{path}: tensor {t['name']} exceeds blob or shape/count disagree")
    return manifest, blob


def load_checkpoint(path):
    """Rebuild a Backbone or VariantModel saved by :func:`save_checkpoint`."""
    manifest, blob = read_manifest(path)
    cfg = manifest["config"]
    backbone = Backbone(BackboneConfig(**cfg["backbone"]), Rng(0))
    if manifest["kind"] == "backbone":
        model = backbone
        if cfg.get("frozen", True):
            freeze_all(backbone)
        if "pretrain_accuracy" in manifest.get("meta", {}):
            backbone.pretrain_accuracy = manifest["meta"]["pretrain_accuracy"]
    elif manifest["kind"] == "variant":
        freeze_all(backbone)
        sc = SasConfig(**cfg["sas"]) if cfg.get("sas") else None
        model = build_variant(VariantKind.parse(cfg["variant"]), backbone, Rng(0), cfg["num_classes"], sc)
    else:
        raise CheckpointError(f"{path}: unknown checkpoint kind {manifest['kind']!r}")

    targets = dict(_named_tensors(model))
    names = [t["name"] for t in manifest["tensors"]]
    if sorted(names) != sorted(targets):
        missing = sorted(set(targets) - set(names))
        extra = sorted(set(names) - set(targets))
        raise CheckpointError(f"{path}: tensor set mismatch (missing {missing}, unexpected {extra})")
    for t in manifest["tensors"]:
        arr = np.frombuffer(blob, dtype=_LE_F32, count=t["count"], offset=t["offset"])
        p = targets[t["name"]]
        if p.shape != t["shape"]:
            raise CheckpointError(f"{path}: {t['name']} has shape {t['shape']}, model expects {p.shape}")
        p.data = arr.reshape(t["shape"]).astype(np.float32)
    return model
