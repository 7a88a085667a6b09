"""Shared pytest configuration for the gamma-calc test suite.

Sets env defaults BEFORE the engine's settings module is imported, so a
developer's shell (a stray ``.env``, ``GAMMA_CALC_THREADS=8``) cannot change
tolerances or seeds underneath the numerical assertions.
"""

from __future__ import annotations

import os

import numpy as np
import pytest


def _ensure_test_env() -> None:
    # Quiet, reproducible runs; tests that need other values override
    # via monkeypatch.setenv or Settings.with_overrides.
    os.environ.setdefault("SEED", "0")
    os.environ.setdefault("GAMMA_CALC_THREADS", "1")
    os.environ.setdefault("LOG_LEVEL", "WARNING")
    os.environ.setdefault("LOG_FORMAT", "json")
    os.environ.setdefault("LOG_DIR", "")


_ensure_test_env()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def path3():
    from src.gamma_calc.core.builders import path

    return path(3)


@pytest.fixture
def cycle8():
    from src.gamma_calc.core.builders import cycle

    return cycle(8)
