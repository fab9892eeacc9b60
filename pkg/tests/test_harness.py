import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sas_petl.backbone import BackboneConfig
from sas_petl.data import DatasetSpec, SyntheticSource, synth_generate
from sas_petl.errors import ConfigError, DataError
from sas_petl.harness import (RESULT_COLUMNS, RunResult, emit_results, few_shot_sweep, finetune, ppt_score,
                              pretrain_toy, read_results)
from sas_petl.sas import SasConfig
from sas_petl.training import TrainConfig

TINY = BackboneConfig(image_side=8, channels=1, patch=4, d=8, L=2, heads=2, mlp_ratio=2)
SC = SasConfig(d=8, L=2, d_prime=2, r=2, r_prime=2, M=2)
FAST = TrainConfig(lr=1e-2, epochs=2, batch_size=8)


def _data(split, classes=3, per_class=6, seed=0):
    return synth_generate(DatasetSpec(SyntheticSource(classes=classes, per_class=per_class, image_side=8),
                                      split, seed))


@pytest.fixture(scope="module")
def tiny_backbone():
    return pretrain_toy(TINY, _data("train"), FAST)


# -- ppt ---------------------------------------------------------------

def test_ppt_zero_params_is_accuracy():
    assert ppt_score(80.0, 0) == pytest.approx(0.8)


def test_ppt_at_scale():
    assert ppt_score(100.0, 90_000_000) == pytest.approx(math.exp(-1))


@pytest.mark.parametrize("acc, params, expected", [
    (71.44, 160_000, 0.709), (62.05, 100_000, 0.617), (71.70, 2_380_000, 0.653),
    (74.89, 40_000, 0.747), (75.20, 50_000, 0.750)])
def test_ppt_published_vtab_rows(acc, params, expected):
    assert ppt_score(acc, params) == pytest.approx(expected, abs=2e-3)


@given(st.floats(0.1, 100), st.integers(0, 10**9), st.integers(1, 10**8))
def test_ppt_monotone(acc, p, extra):
    assert ppt_score(acc, p + extra) < ppt_score(acc, p)
    assert ppt_score(acc, p) <= ppt_score(min(100.0, acc + 1), p)


@pytest.mark.parametrize("acc, p", [(-1, 0), (101, 0), (50, -1)])
def test_ppt_rejects_bad_input(acc, p):
    with pytest.raises(ValueError):
        ppt_score(acc, p)


# -- results files -----------------------------------------------------

def test_emit_read_round_trip(tmp_path):
    rows = [RunResult("full_sas", 49920, 73.4, 0, "abc", 0.0), RunResult("linear_probe", 0, 1 / 3, 1, "d", 1.5)]
    log = emit_results(rows, tmp_path / "r.csv")
    back = read_results(tmp_path / "r.csv")
    assert [(r.variant, r.adapter_params, r.top1, r.ppt) for r in back] == \
        [(r.variant, r.adapter_params, r.top1, r.ppt) for r in rows]
    assert log.suffix == ".jsonl" and len(log.read_text().splitlines()) == 2


def test_empty_results_header_only(tmp_path):
    emit_results([], tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == ",".join(RESULT_COLUMNS) + "\n"
    assert read_results(tmp_path / "e.csv") == []


def test_read_rejects_inconsistent_ppt(tmp_path):
    emit_results([RunResult("x", 10, 50.0, 0, "h")], tmp_path / "r.csv")
    text = (tmp_path / "r.csv").read_text().replace("0.49", "0.51")
    (tmp_path / "r.csv").write_text(text)
    with pytest.raises(DataError):
        read_results(tmp_path / "r.csv")


# -- protocols ---------------------------------------------------------

def test_pretrain_freezes_and_reports(tiny_backbone):
    assert tiny_backbone.frozen
    assert 0 <= tiny_backbone.pretrain_accuracy <= 100
    assert len(tiny_backbone.pretrain_losses) == 2 * 3


def test_finetune_counts_and_checksum(tiny_backbone):
    before = tiny_backbone.checksum()
    res = finetune("full_sas", tiny_backbone, _data("train", 4), _data("test", 4), FAST, SC)
    assert res.adapter_params == 2 * (2 * 8 + 2 * 2 * 8 + 2 * 2 * 2)
    assert res.ppt == ppt_score(res.top1, res.adapter_params)
    assert tiny_backbone.checksum() == before


def test_finetune_zero_epochs_is_chance_level_head(tiny_backbone):
    res = finetune("linear_probe", tiny_backbone, _data("train"), _data("test"),
                   TrainConfig(epochs=0), SC)
    # zero head -> all logits tie -> class 0 everywhere
    assert res.top1 == pytest.approx(100 / 3)


def test_finetune_is_deterministic(tiny_backbone):
    kw = dict(record_time=False)
    a = finetune("full_sas", tiny_backbone, _data("train"), _data("test"), FAST, SC, **kw)
    b = finetune("full_sas", tiny_backbone, _data("train"), _data("test"), FAST, SC, **kw)
    assert a.row() == b.row()


def test_finetune_missing_class(tiny_backbone):
    train = _data("train")
    train = train.subset(np.flatnonzero(train.labels != 1))
    with pytest.raises(DataError, match=r"\[1\]"):
        finetune("linear_probe", tiny_backbone, train, _data("test"), FAST)


def test_finetune_needs_frozen_backbone(tiny_backbone):
    from sas_petl.backbone import unfreeze_all, freeze_all
    unfreeze_all(tiny_backbone)
    try:
        with pytest.raises(ConfigError):
            finetune("linear_probe", tiny_backbone, _data("train"), _data("test"), FAST)
    finally:
        freeze_all(tiny_backbone)


def test_few_shot_sweep_labels_runs(tiny_backbone):
    res = few_shot_sweep(tiny_backbone, _data("train"), _data("test"), FAST, shots=(1, 2), seeds=(0,),
                         sas_config=SC, record_time=False)
    assert [r.variant for r in res] == ["full_sas@k=1", "full_sas@k=2"]
