"""
Run configuration schema.

The resolved configuration of one command: what the user asked for after
merging ``--config`` under the command-line flags. It is echoed into every
report so a run can be repeated from the report alone.
"""

from __future__ import annotations

from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.gamma_calc.core.config import Settings


class GeneratorSpec(BaseModel):
    """Generator-frame request"""

    model_config = ConfigDict(extra="forbid")

    # None = the builder's default frame (GENERATOR_COUNT / auto).
    count: Optional[int] = Field(default=None, ge=1)
    mode: Literal["auto", "exact", "resolved"] = "auto"


class RunConfig(BaseModel):
    """Resolved configuration of a single command"""

    model_config = ConfigDict(extra="forbid")

    space: Optional[str] = None
    generators: GeneratorSpec = Field(default_factory=GeneratorSpec)
    tolerances: Dict[str, float] = {}
    outputs: Dict[str, str] = {}
    threads: int = Field(default=1, ge=1)
    seed: int = 0
    params: Dict[str, Any] = {}

    @field_validator("tolerances")
    @classmethod
    def _positive_known_tolerances(cls, value: Dict[str, float]) -> Dict[str, float]:
        known = Settings.model_fields
        problems: List[str] = []
        for name, tol in value.items():
            if name not in known:
                problems.append(f"unknown setting {name!r}")
            elif not tol > 0:
                problems.append(f"{name} must be positive, got {tol}")
        if problems:
            raise ValueError("; ".join(problems))
        return dict(sorted(value.items()))

    def settings(self, base: Settings) -> Settings:
        """``base`` with this run's overrides, seed and thread count applied."""
        return base.with_overrides(**self.tolerances, SEED=self.seed, THREADS=self.threads)
