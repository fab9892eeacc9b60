import numpy as np
import pytest

from sas_petl.backbone import Backbone, BackboneConfig, freeze_all
from sas_petl.tensor import Rng

SMALL = BackboneConfig(image_side=8, channels=1, patch=4, d=16, L=3, heads=2, mlp_ratio=2,
                       num_classes_pretrain=3)


@pytest.fixture
def small_backbone():
    bb = Backbone(SMALL, Rng(0))
    freeze_all(bb)
    return bb


@pytest.fixture
def small_images():
    return Rng(1).normal((4, 1, 8, 8)).astype(np.float32)


# -- acceptance report -------------------------------------------------
# test_acceptance.py records one line per criterion; they are printed in the
# terminal summary so they show up even when output capture is on.

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} :: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
