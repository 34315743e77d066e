from __future__ import annotations

import numpy as np
import pytest

from poseverify.geometry import Intrinsics
from poseverify.synth import SceneConfig, gen_scene


_ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for the acceptance summary and return the outcome."""
    def record(tag: str, ok: bool, detail: str) -> bool:
        line = f"{tag:<4} {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def k100():
    """100x100 camera, focal 100, principal point (50, 50)."""
    return Intrinsics(100.0, 100.0, 50.0, 50.0, 100, 100)


@pytest.fixture(scope="session")
def small_scene():
    return gen_scene(SceneConfig(n_queries=3, seed=11))


@pytest.fixture(scope="session")
def two_scan_scene():
    return gen_scene(SceneConfig(n_scans=2, partition=True, n_queries=2, seed=21))


@pytest.fixture(scope="session")
def busy_scene():
    """Scene with transient churn, people and gain changes."""
    return gen_scene(SceneConfig(n_queries=3, churn_prob=0.5, n_people=2, n_transient=4,
                                 gain_range=(0.7, 1.4), seed=31))
