"""
Error hierarchy.

Library code raises these; `cli.dispatch` maps them onto exit codes
(``exit_code``) and prints the message. Diagnostics never raise, they
report residuals instead.
"""

from __future__ import annotations

from typing import Iterable, Optional, Sequence


class GammaCalcError(Exception):
    """Base class for every computation error the engine raises."""

    exit_code: int = 1


class UsageError(GammaCalcError):
    """Malformed command line, config file or field file."""

    exit_code = 2


class SpaceError(GammaCalcError):
    """A space violates the metric measure space invariants."""


class BuilderError(SpaceError):
    """Invalid builder parameters or an unreadable space file."""

    exit_code = 2

    def __init__(self, message: str, *, line: Optional[int] = None) -> None:
        self.line = line
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)


class SpaceMismatchError(GammaCalcError):
    """Operands live on different spaces or bundles."""


def _preview(points: Sequence[int], limit: int = 12) -> str:
    shown = ", ".join(str(p) for p in points[:limit])
    if len(points) > limit:
        shown += f", … ({len(points)} total)"
    return shown


class _PointListError(GammaCalcError):
    hint: str = ""

    def __init__(self, message: str, points: Iterable[int] = ()) -> None:
        self.points = [int(p) for p in points]
        text = message
        if self.points:
            text += f" at points [{_preview(self.points)}]"
        if self.hint:
            text += f"; {self.hint}"
        super().__init__(text)


class SpanError(_PointListError):
    """A function's differential is not determined by the generator frame."""

    hint = "add generators (--generators N) or use a finer space"


class ReconstructionError(_PointListError):
    """A pointwise least-squares reconstruction is rank deficient."""

    hint = "the generator frame does not span the fiber there"


class SizeCapError(GammaCalcError):
    """A dense solve was refused because the space exceeds a size cap."""

    def __init__(self, what: str, n: int, cap: int, setting: str) -> None:
        self.n = n
        self.cap = cap
        super().__init__(f"{what} refused: n={n} exceeds {setting}={cap}")


class CFLError(GammaCalcError):
    """Explicit transport step violates the CFL bound."""

    def __init__(self, dt: float, dt_max: float, required_steps: int) -> None:
        self.dt = dt
        self.dt_max = dt_max
        self.required_steps = required_steps
        super().__init__(
            f"time step {dt:.3e} exceeds the CFL bound {dt_max:.3e}; "
            f"use at least {required_steps} steps"
        )


class InsufficientInputsError(GammaCalcError):
    """A verification rule was called without the inputs it needs."""


class ConvergenceError(GammaCalcError):
    """An iterative solver hit its iteration cap."""
