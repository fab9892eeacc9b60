import csv
import subprocess
import sys

import pytest

from sas_petl.cli import gradcheck_model, main

TINY = """
[backbone]
image_side = 8
patch = 4
d = 8
L = 2
heads = 2
mlp_ratio = 2
[sas]
d_prime = 2
r = 2
r_prime = 2
M = 2
[train]
lr = 0.01
epochs = 2
batch_size = 8
[data]
classes = 3
per_class = 6
test_per_class = 4
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "tiny.ini").write_text(TINY)
    assert main(["pretrain", "--config", str(d / "tiny.ini"), "--out", str(d / "bb.ckpt")]) == 0
    return d


def test_params_sweep(capsys):
    assert main(["params", "--m-list", "1,3,4,6"]) == 0
    out = capsys.readouterr().out
    for n in ("19200", "31488", "37632", "49920"):
        assert n in out


def test_params_invalid_m(capsys):
    assert main(["params", "--M", "13"]) == 2
    assert "error" in capsys.readouterr().err


def test_ppt(capsys):
    assert main(["ppt", "75.2", "49920"]) == 0
    assert capsys.readouterr().out.strip() == "0.7504"


def test_ppt_bad_accuracy():
    assert main(["ppt", "120", "10"]) == 2


def test_gradcheck_model_passes():
    errs = gradcheck_model()
    assert max(errs.values()) < 1e-4
    assert any(n.startswith("head.") for n in errs) and any("c_down" in n for n in errs)


def test_finetune_eval_round_trip(workdir, capsys):
    d = workdir
    args = ["finetune", "--variant", "full_sas", "--backbone", str(d / "bb.ckpt"), "--config", str(d / "tiny.ini"),
            "--out", str(d / "r.csv"), "--seeds", "0,1", "--save-model", str(d / "m.ckpt"), "--no-timing"]
    assert main(args) == 0
    rows = list(csv.DictReader((d / "r.csv").open()))
    assert [r["seed"] for r in rows] == ["0", "1"] and all(r["wall_time"] == "0.0" for r in rows)
    first = (d / "r.csv").read_bytes()
    assert main(args) == 0
    assert (d / "r.csv").read_bytes() == first
    capsys.readouterr()
    assert main(["eval", "--model", str(d / "m.ckpt"), "--data", str(d / "tiny.ini")]) == 0
    assert capsys.readouterr().out.startswith("top1 ")


def test_ablate_m(workdir, capsys):
    d = workdir
    assert main(["ablate-m", "--m-list", "1,2", "--backbone", str(d / "bb.ckpt"), "--config", str(d / "tiny.ini"),
                 "--out", str(d / "abl.csv"), "--no-timing"]) == 0
    rows = list(csv.DictReader((d / "abl.csv").open()))
    assert [r["variant"] for r in rows] == ["full_sas@M=1", "full_sas@M=2"]
    assert int(rows[1]["adapter_params"]) - int(rows[0]["adapter_params"]) == 2 * 2 * 8


def test_eval_rejects_backbone_checkpoint(workdir):
    assert main(["eval", "--model", str(workdir / "bb.ckpt"), "--data", str(workdir / "tiny.ini")]) == 2


def test_missing_checkpoint_exit_code(workdir):
    assert main(["finetune", "--variant", "linear_probe", "--backbone", str(workdir / "nope.ckpt"),
                 "--config", str(workdir / "tiny.ini"), "--out", str(workdir / "x.csv")]) == 3


def test_missing_config_exit_code(workdir):
    assert main(["pretrain", "--config", str(workdir / "nope.ini"), "--out", str(workdir / "x.ckpt")]) == 2


def test_bad_config_key_exit_code(workdir):
    (workdir / "bad.ini").write_text("[train]\nbogus = 1\n")
    assert main(["pretrain", "--config", str(workdir / "bad.ini"), "--out", str(workdir / "x.ckpt")]) == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "sas_petl", "ppt", "50", "0"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip() == "0.5000"
