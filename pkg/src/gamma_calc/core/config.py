"""
Engine Settings.

Loaded from environment variables via `pydantic-settings`. Every numerical
threshold the engine uses lives here so a run can be reproduced from its
echoed configuration alone. Loading is hard-stopped on non-positive
tolerances or an unknown log format so a broken environment fails at import
instead of producing silently wrong residuals.
"""

from __future__ import annotations

from typing import Any

from pydantic import Field, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


_KNOWN_LOG_FORMATS: frozenset[str] = frozenset({"json", "text"})


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
        populate_by_name=True,
    )

    # ------------------------------------------------------------------ App
    APP_NAME: str = "gamma-calc"
    APP_VERSION: str = "0.1.0"
    SCHEMA_VERSION: str = "1.0"

    # -------------------------------------------------------------- Logging
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "json"
    # Empty string disables the rotating file handler.
    LOG_DIR: str = ""

    # ------------------------------------------------ Determinism / threads
    SEED: int = 0
    THREADS: int = Field(default=1, validation_alias="GAMMA_CALC_THREADS")

    # ----------------------------------------------------------- Tolerances
    # Algebraic identities (adjointness, module axioms), relative.
    TOL_IDENTITY: float = 1e-10
    # Singular values below TOL_RANK * largest count as zero.
    TOL_RANK: float = 1e-8
    # Spectral decisions on normalized operators, absolute.
    TOL_SPECTRAL: float = 1e-8
    # Exact-class verification rules must pass at this scaled residual.
    TOL_EXACT_RULE: float = 1e-8
    # Relative |df|^2 defect tolerated before a function counts as unspanned.
    SPAN_TOL: float = 1e-8
    # Embedded mesh backends: frame directions whose singular value falls
    # below this fraction of the largest are second-order stencil content
    # and are not part of the resolved cotangent fiber.
    RESOLVED_RANK_TOL: float = 0.5
    RESOLVED_SPAN_TOL: float = 0.5
    # Floor used when normalizing residuals by a scale.
    RESIDUAL_FLOOR: float = 1e-14

    # ------------------------------------------------------------ Size caps
    SPECTRAL_MAX_POINTS: int = 5000
    CURVATURE_MAX_POINTS: int = 2000
    DENSE_EIG_MAX: int = 3000
    EIGSH_MAX_ITER: int = 20000
    # Largest near-kernel the sparse rank Betti count resolves before giving up.
    RANK_KERNEL_MAX: int = 256

    # ----------------------------------------------------------- Hodge gaps
    # Eigenvalues below HARMONIC_GAP_TOL * lambda_ref count as harmonic;
    # a (first above) / (last below) ratio under GAP_FACTOR is inconclusive.
    HARMONIC_GAP_TOL: float = 0.1
    GAP_FACTOR: float = 10.0

    # ------------------------------------------------------ Generator frames
    # 0 = auto: min(n - 1, 3 * expected_dim + 2).
    GENERATOR_COUNT: int = 0

    # --------------------------------------------------------------- Views

    def tolerances(self) -> dict[str, float]:
        """Tolerance block echoed into every report."""
        return {
            "identity": self.TOL_IDENTITY,
            "rank": self.TOL_RANK,
            "spectral": self.TOL_SPECTRAL,
            "exact_rule": self.TOL_EXACT_RULE,
            "span": self.SPAN_TOL,
            "resolved_rank": self.RESOLVED_RANK_TOL,
            "resolved_span": self.RESOLVED_SPAN_TOL,
        }

    def with_overrides(self, **overrides: Any) -> "Settings":
        """Return a validated copy with ``overrides`` applied.

        Keys are the upper-case field names; unknown keys are rejected so a
        typo in a ``--config`` file is not silently ignored.
        """
        unknown = sorted(k for k in overrides if k not in type(self).model_fields)
        if unknown:
            raise ValueError(f"unknown settings keys: {unknown}")
        data = self.model_dump()
        data.update(overrides)
        return type(self).model_validate(data)

    # --------------------------------------------------------- Validators

    @model_validator(mode="after")
    def _validate_numbers(self) -> "Settings":
        """Refuse to load with tolerances or caps that cannot be meaningful."""
        problems: list[str] = []

        for name in (
            "TOL_IDENTITY",
            "TOL_RANK",
            "TOL_SPECTRAL",
            "TOL_EXACT_RULE",
            "SPAN_TOL",
            "RESOLVED_RANK_TOL",
            "RESOLVED_SPAN_TOL",
            "RESIDUAL_FLOOR",
            "HARMONIC_GAP_TOL",
        ):
            value = getattr(self, name)
            if not value > 0:
                problems.append(f"{name}={value!r} must be positive")

        if not self.RESOLVED_RANK_TOL < 1:
            problems.append("RESOLVED_RANK_TOL must be < 1")
        if self.GAP_FACTOR <= 1:
            problems.append(f"GAP_FACTOR={self.GAP_FACTOR!r} must exceed 1")
        for name in ("SPECTRAL_MAX_POINTS", "CURVATURE_MAX_POINTS", "DENSE_EIG_MAX", "RANK_KERNEL_MAX", "THREADS"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.GENERATOR_COUNT < 0:
            problems.append("GENERATOR_COUNT must be >= 0 (0 = auto)")
        if self.LOG_FORMAT.lower() not in _KNOWN_LOG_FORMATS:
            problems.append(
                f"LOG_FORMAT={self.LOG_FORMAT!r} is invalid; "
                f"choose one of {sorted(_KNOWN_LOG_FORMATS)}"
            )

        if problems:
            joined = "\n  - ".join(problems)
            raise ValueError("Refusing to load invalid configuration:\n  - " + joined)
        return self


settings = Settings()
