from __future__ import annotations

import numpy as np
import pytest

from tonemeter.color import lab_to_srgb
from tonemeter.estimators import PatchTensor


def uniform_image(lab, size=64) -> np.ndarray:
    rgb, clamped = lab_to_srgb(lab)
    assert not clamped
    return np.broadcast_to(np.asarray(rgb), (size, size, 3)).copy()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def skin_patch():
    return PatchTensor(uniform_image((70.0, 5.0, 20.0)))


#: one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
