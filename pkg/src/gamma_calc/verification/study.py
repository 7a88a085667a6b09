"""
Convergence studies over refinement families.

Each resolution of a builder family is one independent task: build the
space, evaluate the selected rules with a fresh context, keep the
scale-normalized L² residual. Tasks run in a thread pool bounded by
``THREADS``; results are collected in resolution order so the table does
not depend on scheduling.

The order of a rule is ``−slope`` of the least-squares fit of
``log(residual)`` against ``log(res)``. A sequence already at the noise
floor is reported as ``"exact"``; a sequence that does not decrease
strictly gets ``nan`` and a note, with the raw values kept.
"""

from __future__ import annotations

import contextvars
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from src.gamma_calc.core.builders import build_space, refinement_family
from src.gamma_calc.core.config import Settings, settings as default_settings
from src.gamma_calc.core.errors import GammaCalcError, UsageError
from src.gamma_calc.verification.rules import RULES, RuleContext, rule_residual

logger = logging.getLogger(__name__)

STUDY_COLUMNS = ("rule", "rule_class", "order", "values", "note")


@dataclass(frozen=True)
class StudyRow:
    rule: str
    rule_class: str
    values: list[float]
    order: float | str
    note: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "rule": self.rule,
            "rule_class": self.rule_class,
            "values": self.values,
            "order": self.order,
            "note": self.note,
        }


def fitted_order(resolutions: Sequence[int], values: Sequence[float], floor: float) -> tuple[float | str, str]:
    """Order of decay of ``values`` in ``resolutions`` and a note."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return math.nan, "need at least two resolutions"
    if not np.all(np.isfinite(v)):
        return math.nan, "non-finite residuals"
    if np.all(v <= floor):
        return "exact", "at noise floor"
    if np.any(v <= 0) or not np.all(np.diff(v) < 0):
        return math.nan, "non-monotone residuals"
    slope = np.polyfit(np.log(np.asarray(resolutions, dtype=float)), np.log(v), 1)[0]
    return float(-slope), ""


def _one_resolution(
    spec: str, rules: Sequence[str], params: Mapping[str, Any], cfg: Settings
) -> dict[str, tuple[float, str]]:
    space = build_space(spec)
    ctx = RuleContext(space=space, params=dict(params), cfg=cfg)
    out: dict[str, tuple[float, str]] = {}
    for rule in rules:
        try:
            res = rule_residual(rule, space, context=ctx)
            out[rule] = (res.norms["l2"] / max(res.scale, cfg.RESIDUAL_FLOOR), "")
        except GammaCalcError as exc:
            # One failing rule must not sink the rest of the table.
            logger.warning("rule failed during study", extra={"rule": rule, "space": spec, "error": str(exc)})
            out[rule] = (math.nan, type(exc).__name__)
    logger.info("study resolution done", extra={"space": spec, "rules": len(rules)})
    return out


def convergence_study(
    rules: Sequence[str],
    family: str,
    resolutions: Sequence[int],
    *,
    params: Optional[Mapping[str, Any]] = None,
    cfg: Optional[Settings] = None,
    threads: Optional[int] = None,
) -> list[StudyRow]:
    """Fitted residual order of every rule over ``family`` at ``resolutions``."""
    cfg = cfg or default_settings
    if len(resolutions) < 3:
        raise UsageError("a convergence study needs at least 3 resolutions")
    unknown = [r for r in rules if r not in RULES]
    if unknown:
        raise UsageError(f"unknown rules: {unknown}")
    specs = refinement_family(family, resolutions)
    workers = max(1, min(threads or cfg.THREADS, len(specs)))
    # Tasks run in copies of the caller's context, run id included.
    contexts = [contextvars.copy_context() for _ in specs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        per_res = list(
            pool.map(lambda c, s: c.run(_one_resolution, s, rules, params or {}, cfg), contexts, specs)
        )

    rows: list[StudyRow] = []
    for rule in rules:
        values = [r[rule][0] for r in per_res]
        failures = sorted({r[rule][1] for r in per_res if r[rule][1]})
        order, note = fitted_order(resolutions, values, cfg.TOL_EXACT_RULE)
        if failures:
            note = "; ".join(filter(None, [note, "failed: " + ",".join(failures)]))
        rows.append(StudyRow(rule=rule, rule_class=RULES[rule].rule_class, values=values, order=order, note=note))
    return rows
