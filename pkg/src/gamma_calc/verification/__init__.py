"""Rule catalog, convergence studies and acceptance suites."""

from .acceptance import run_acceptance
from .rules import RULES, rule_residual, run_rules, select_rules
from .study import convergence_study

__all__ = ["RULES", "convergence_study", "rule_residual", "run_acceptance", "run_rules", "select_rules"]
