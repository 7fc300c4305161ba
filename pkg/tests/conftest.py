from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from aurk.geometry.faces import random_face
from aurk.geometry.landmarks import template_landmarks
from aurk.partition import load_partition_table

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def bp4d():
    return load_partition_table("bp4d")


@pytest.fixture(scope="session")
def disfa():
    return load_partition_table("disfa")


@pytest.fixture(scope="session")
def synthetic_table():
    return load_partition_table("synthetic")


@pytest.fixture(scope="session")
def template():
    return template_landmarks()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def faces(n, size=256, seed=0):
    rng = np.random.default_rng(seed)
    return [random_face(rng, size, size, frame_id=f"f{i}") for i in range(n)]


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
