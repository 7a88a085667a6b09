"""Import-smoke and settings tests.

Every engine module must import without side effects beyond loading the
settings; renames and deletions surface here first.
"""

from __future__ import annotations

import importlib

import pytest


_MODULES = [
    "src.gamma_calc",
    "src.gamma_calc.cli",
    "src.gamma_calc.core.config",
    "src.gamma_calc.core.errors",
    "src.gamma_calc.core.logging",
    "src.gamma_calc.core.space",
    "src.gamma_calc.core.builders",
    "src.gamma_calc.utils.formatters",
    "src.gamma_calc.utils.helpers",
    "src.gamma_calc.utils.linalg",
    "src.gamma_calc.utils.validators",
    "src.gamma_calc.modules",
    "src.gamma_calc.modules.bundle",
    "src.gamma_calc.modules.exterior",
    "src.gamma_calc.modules.pullback",
    "src.gamma_calc.modules.submodule",
    "src.gamma_calc.calculus",
    "src.gamma_calc.calculus.first_order",
    "src.gamma_calc.calculus.second_order",
    "src.gamma_calc.calculus.hodge",
    "src.gamma_calc.calculus.ricci",
    "src.gamma_calc.calculus.flows",
    "src.gamma_calc.verification",
    "src.gamma_calc.verification.rules",
    "src.gamma_calc.verification.study",
    "src.gamma_calc.verification.acceptance",
    "src.gamma_calc.schemas.requests",
    "src.gamma_calc.schemas.responses",
]


@pytest.mark.parametrize("module", _MODULES)
def test_module_imports_cleanly(module: str) -> None:
    importlib.import_module(module)


def test_settings_loads_with_defaults() -> None:
    from src.gamma_calc.core.config import settings

    assert settings.SEED == 0
    assert settings.THREADS == 1
    assert settings.TOL_EXACT_RULE == pytest.approx(1e-8)
    assert set(settings.tolerances()) >= {"identity", "rank", "spectral", "exact_rule", "span"}


def test_threads_read_from_prefixed_env(monkeypatch: pytest.MonkeyPatch) -> None:
    from src.gamma_calc.core.config import Settings

    monkeypatch.setenv("GAMMA_CALC_THREADS", "4")
    assert Settings().THREADS == 4


def test_refuses_nonpositive_tolerances(monkeypatch: pytest.MonkeyPatch) -> None:
    """Loading must fail loud and name every bad setting."""
    from src.gamma_calc.core.config import Settings

    monkeypatch.setenv("TOL_RANK", "0")
    monkeypatch.setenv("GAP_FACTOR", "0.5")
    monkeypatch.setenv("LOG_FORMAT", "yaml")

    with pytest.raises(Exception) as exc_info:
        Settings()

    msg = str(exc_info.value)
    assert "TOL_RANK" in msg
    assert "GAP_FACTOR" in msg
    assert "LOG_FORMAT" in msg


def test_with_overrides_validates_and_rejects_unknown_keys() -> None:
    from src.gamma_calc.core.config import settings

    tuned = settings.with_overrides(TOL_RANK=1e-6, SEED=7)
    assert tuned.TOL_RANK == pytest.approx(1e-6)
    assert tuned.SEED == 7
    # The shared instance is untouched.
    assert settings.SEED == 0

    with pytest.raises(ValueError, match="unknown settings keys"):
        settings.with_overrides(TOL_RANKK=1e-6)
    with pytest.raises(ValueError):
        settings.with_overrides(TOL_IDENTITY=-1.0)
