"""
Report Schemas
Pydantic models for every report the CLI emits
"""

from __future__ import annotations

from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field

from src.gamma_calc.core.config import settings
from src.gamma_calc.schemas.requests import RunConfig

SCHEMA_VERSION = settings.SCHEMA_VERSION


class BaseReport(BaseModel):
    """Base report schema"""

    # inf and nan survive as JSON constants instead of turning into null.
    model_config = ConfigDict(ser_json_inf_nan="constants")

    schema_version: str = SCHEMA_VERSION
    command: str
    seed: int = 0
    config: RunConfig = Field(default_factory=RunConfig)
    tolerances: Dict[str, float] = {}


class SpaceReport(BaseReport):
    """Space construction report schema"""

    space: Dict[str, Any]
    n: int
    total_mass: float
    components: int


class DimLocReport(BaseReport):
    """Dimensional decomposition report schema"""

    mode: str
    generators: List[str]
    dim_loc: List[int]
    histogram: Dict[str, int]
    classes: Dict[str, List[int]] = {}


class DifferentialReport(BaseReport):
    """Pointwise first/second order quantity report schema"""

    quantity: str
    cotangent: Dict[str, Any]
    fields: Dict[str, List[float]]
    residual_max: float = 0.0
    span_defect_max: float = 0.0
    span_defect_points: List[int] = []
    scalars: Dict[str, float] = {}


class HodgeDegree(BaseModel):
    """Harmonic spectrum of one degree"""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    degree: int
    form_dim: int
    betti_eigen: Optional[int]
    betti_rank: Optional[int]
    eigenvalues: List[float]
    threshold: Optional[float]
    gap_ratio: Optional[float]
    conclusive: bool
    d2_defect: float
    note: str = ""


class HodgeReport(BaseReport):
    """Hodge / de Rham report schema"""

    betti_eigen: List[Optional[int]]
    betti_rank: List[Optional[int]]
    gap_ratio: List[Optional[float]]
    degrees: List[HodgeDegree]


class CurvatureReport(BaseReport):
    """Pointwise curvature-dimension report schema"""

    mode: str
    N: Optional[float] = None
    K_star: float
    bound_kind: str
    k_field: List[float]


class RicciFieldBound(BaseModel):
    """Per-field Ricci bounds"""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    field: str
    K_ric: float
    violation_points: List[int]
    violation_mass: float
    tv: float
    tv_bound: float
    E_H: float
    E_C: float
    ehec_slack: float
    l2_sq: float
    total_residual: float
    trace_defect_max: Optional[float] = None


class RicciReport(BaseReport):
    """Ricci curvature report schema"""

    K: float
    N: Optional[float] = None
    K_ric: float
    violation_points: List[int]
    fields: List[RicciFieldBound]


class FlowReport(BaseReport):
    """Density transport report schema"""

    T: float
    steps: int
    dt: float
    mass_drift: float
    min_density: float
    compression: List[float]
    compression_bound: List[float]
    compression_slack: float
    derivative_residual: Optional[float] = None
    snapshots: Dict[str, List[float]] = {}


class RuleResult(BaseModel):
    """One verification rule outcome"""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    rule: str
    rule_class: str
    identity: str
    norms: Dict[str, float]
    scale: float
    relative: float
    passed: Optional[bool]
    metrics: Dict[str, float] = {}
    note: str = ""


class DiagnosticReport(BaseReport):
    """Verification report schema"""

    space: str
    rules: List[RuleResult]
    all_exact_passed: bool


class StudyRow(BaseModel):
    """Convergence of one rule over a refinement family"""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    rule: str
    rule_class: str
    values: List[float]
    order: Union[float, str]
    note: str = ""


class StudyTable(BaseReport):
    """Convergence study schema"""

    family: str
    resolutions: List[int]
    rows: List[StudyRow]


class CriterionResult(BaseModel):
    """One acceptance criterion"""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    name: str
    passed: bool
    details: Dict[str, Any] = {}


class AcceptanceReport(BaseReport):
    """Acceptance suite schema"""

    suite: str
    criteria: List[CriterionResult]
    passed: bool


REPORT_MODELS: Dict[str, type[BaseReport]] = {
    "space": SpaceReport,
    "dimloc": DimLocReport,
    "differential": DifferentialReport,
    "hodge": HodgeReport,
    "curvature": CurvatureReport,
    "ricci": RicciReport,
    "flow": FlowReport,
    "diagnostic": DiagnosticReport,
    "study": StudyTable,
    "acceptance": AcceptanceReport,
}


def report_schema_emit() -> Dict[str, Dict[str, Any]]:
    """JSON schema of every report, keyed by report kind."""
    return {
        kind: {"schema_version": SCHEMA_VERSION, "schema": model.model_json_schema()}
        for kind, model in REPORT_MODELS.items()
    }
