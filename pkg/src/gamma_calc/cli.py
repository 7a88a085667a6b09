"""
gamma-calc command line.

Every subcommand resolves a `RunConfig` (the ``--config`` JSON file merged
under the command-line flags), runs one computation and writes a JSON
report to ``--out`` (stdout when omitted). Status lines go to stderr
through rich; logs go to stderr as JSON lines tagged with the run id.

Exit codes: 0 success, 1 computation error (or a failed exact rule /
acceptance criterion), 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Optional, Sequence

import numpy as np
from pydantic import ValidationError
from rich.console import Console

from src.gamma_calc.calculus.first_order import (
    CotangentBundle,
    build_cotangent,
    differential,
    divergence,
    sobolev_norm,
    span_defect,
)
from src.gamma_calc.calculus.flows import cfl_bound, flow_derivative_check, lagrangian_flow
from src.gamma_calc.calculus.hodge import HodgeComplex, harmonic_basis, hodge_energy
from src.gamma_calc.calculus.ricci import ricci_bound_report, ricci_n, ricci_total_check
from src.gamma_calc.calculus.second_order import (
    covariant_derivative,
    covariant_energy,
    curvature_estimate,
    gamma2,
    hessian,
)
from src.gamma_calc.core.builders import build_space, to_document
from src.gamma_calc.core.config import Settings, settings
from src.gamma_calc.core.errors import GammaCalcError, UsageError
from src.gamma_calc.core.logging import configure_logging, run_id_var
from src.gamma_calc.core.space import FiniteMMSpace
from src.gamma_calc.schemas.requests import RunConfig
from src.gamma_calc.schemas.responses import (
    AcceptanceReport,
    CurvatureReport,
    DiagnosticReport,
    DifferentialReport,
    DimLocReport,
    FlowReport,
    HodgeDegree,
    HodgeReport,
    RicciFieldBound,
    RicciReport,
    RuleResult,
    SpaceReport,
    StudyRow,
    StudyTable,
    report_schema_emit,
)
from src.gamma_calc.utils.formatters import read_field, read_json, section_from_document, write_csv, write_json
from src.gamma_calc.utils.helpers import generate_run_id, merge_config
from src.gamma_calc.utils.validators import optional_float, parse_int_list, validate_nonnegative
from src.gamma_calc.verification.acceptance import STUDY_RULES, run_acceptance
from src.gamma_calc.verification.rules import RULE_IDS, RuleContext, run_rules, select_rules
from src.gamma_calc.verification.study import STUDY_COLUMNS, convergence_study

logger = logging.getLogger(__name__)
console = Console(stderr=True, highlight=False)

# Flags that shape the RunConfig itself; everything else lands in ``params``.
_CONFIG_FLAGS = frozenset(
    {
        "command", "config", "space", "out", "csv", "space_out", "seed",
        "threads", "generators", "mode", "tol", "log_level", "log_format",
    }
)
_FUNCTION_INPUTS = ("f", "g", "h")
_SECTION_INPUTS = {"x": "X", "y": "Y"}


# ------------------------------------------------------------------ config


def _prune(value: Any) -> Any:
    if isinstance(value, dict):
        pruned = {k: _prune(v) for k, v in value.items() if v is not None}
        return {k: v for k, v in pruned.items() if v != {}}
    return value


def _parse_tolerances(items: Optional[Sequence[str]]) -> dict[str, float]:
    out: dict[str, float] = {}
    for item in items or []:
        name, sep, raw = item.partition("=")
        if not sep:
            raise UsageError(f"--tol expects NAME=VALUE, got {item!r}")
        try:
            out[name.strip()] = float(raw)
        except ValueError as exc:
            raise UsageError(f"--tol {name}: {raw!r} is not a number") from exc
    return out


def resolve_config(args: argparse.Namespace, base: Settings = settings) -> RunConfig:
    """``--config`` file merged under the flags, validated."""
    file_cfg: dict[str, Any] = {}
    if args.config:
        file_cfg = read_json(args.config, what="config file")
        if not isinstance(file_cfg, dict):
            raise UsageError(f"config file {args.config!r} must hold a JSON object")
    params = {k: v for k, v in vars(args).items() if k not in _CONFIG_FLAGS}
    out, csv = args.out, getattr(args, "csv", None)
    if args.command == "study" and csv is None and out and out.lower().endswith(".csv"):
        out, csv = None, out
    flags = _prune(
        {
            "space": args.space,
            "generators": {"count": args.generators, "mode": getattr(args, "mode", None)},
            "tolerances": _parse_tolerances(args.tol),
            "outputs": {"report": out, "csv": csv, "space": getattr(args, "space_out", None)},
            "threads": args.threads,
            "seed": args.seed,
            "params": params,
        }
    )
    merged = merge_config({"seed": base.SEED, "threads": base.THREADS, **file_cfg}, flags)
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as exc:
        problems = "; ".join(f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in exc.errors())
        raise UsageError(f"invalid configuration: {problems}") from exc


# ------------------------------------------------------------------- runs


@dataclass(eq=False)
class Run:
    """One command: its resolved configuration and lazily built inputs."""

    command: str
    config: RunConfig
    cfg: Settings
    params: dict[str, Any] = field(default_factory=dict)

    @cached_property
    def space(self) -> FiniteMMSpace:
        if not self.config.space:
            raise UsageError(f"{self.command} needs --space (or 'space' in the config file)")
        return build_space(self.config.space)

    @cached_property
    def ct(self) -> CotangentBundle:
        gens = self.config.generators
        return build_cotangent(self.space, count=gens.count, mode=gens.mode, cfg=self.cfg)

    @cached_property
    def cx(self) -> HodgeComplex:
        return HodgeComplex(self.ct)

    @cached_property
    def context(self) -> RuleContext:
        loaded: dict[str, Any] = {"cotangent": self.ct}
        for name in _FUNCTION_INPUTS:
            if self.params.get(name):
                loaded[name] = read_field(self.params[name], self.space.n, what=f"field {name}")
        for flag, name in _SECTION_INPUTS.items():
            if self.params.get(flag):
                doc = read_json(self.params[flag], what=f"vector field {name}")
                loaded[name] = section_from_document(self.ct.bundle, doc, what=f"vector field {name}")
        params: dict[str, Any] = {"seed": self.config.seed}
        if self.params.get("K") is not None:
            params["K"] = self.params["K"]
        return RuleContext(
            space=self.space,
            inputs=loaded,
            params=params,
            cfg=self.cfg,
            allow_auto=not (self.params.get("strict_inputs") or self.params.get("fields") == "inputs"),
        )

    def header(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "seed": self.config.seed,
            "config": self.config,
            "tolerances": self.cfg.tolerances(),
        }

    def number(self, name: str, default: Optional[float] = None) -> Optional[float]:
        value = self.params.get(name, default)
        if value is None or isinstance(value, (int, float)):
            return value
        return optional_float(str(value))

    def ints(self, name: str, default: Sequence[int], *, minimum: int = 1) -> list[int]:
        value = self.params.get(name)
        if value is None:
            return list(default)
        if isinstance(value, list):
            return parse_int_list(",".join(str(v) for v in value), minimum=minimum, what=name)
        return parse_int_list(str(value), minimum=minimum, what=name)

    def curvature_k(self) -> float:
        K = self.number("K")
        if K is not None:
            return float(K)
        k = curvature_estimate(self.space, cfg=self.cfg).k_global
        return k if math.isfinite(k) else 0.0


Outcome = tuple[Any, int]


# --------------------------------------------------------------- commands


def cmd_build(run: Run) -> Outcome:
    space = run.space
    if run.config.outputs.get("space"):
        write_json(to_document(space), run.config.outputs["space"])
    report = SpaceReport(
        **run.header(),
        space=space.describe(),
        n=space.n,
        total_mass=space.total_mass,
        components=int(space.components.max()) + 1,
    )
    return report, 0


def cmd_d(run: Run) -> Outcome:
    space, ct = run.space, run.ct
    f = run.context.function("f")
    df = differential(ct, f, strict=bool(run.params.get("strict")))
    defect = span_defect(ct, f)
    tol = run.cfg.SPAN_TOL if ct.mode == "exact" else run.cfg.RESOLVED_SPAN_TOL
    report = DifferentialReport(
        **run.header(),
        quantity="d",
        cotangent=ct.describe(),
        fields={
            "f": f.tolist(),
            "gamma": space.gamma(f, f).tolist(),
            "laplacian": space.apply(f).tolist(),
            "df_norm": df.norm().tolist(),
            "span_defect": defect.tolist(),
        },
        residual_max=float(defect.max(initial=0.0)),
        span_defect_max=float(defect.max(initial=0.0)),
        span_defect_points=np.flatnonzero(defect > tol).tolist(),
        scalars={"dirichlet_energy": space.dirichlet_energy(f), "sobolev_norm": sobolev_norm(space, f)},
    )
    return report, 0


def cmd_dimloc(run: Run) -> Outcome:
    ct = run.ct
    dec = ct.decomposition()
    report = DimLocReport(
        **run.header(),
        mode=ct.mode,
        generators=list(ct.names),
        dim_loc=dec.dim_loc.tolist(),
        histogram={str(k): v for k, v in dec.histogram().items()},
        classes={str(k): v for k, v in sorted(dec.classes.items())},
    )
    return report, 0


def cmd_hessian(run: Run) -> Outcome:
    space, ct = run.space, run.ct
    f = run.context.function("f")
    H = hessian(ct, f, strict=bool(run.params.get("strict")))
    hs = H.hs_norm_sq()
    report = DifferentialReport(
        **run.header(),
        quantity="hessian",
        cotangent=ct.describe(),
        fields={
            "hs_norm_sq": hs.tolist(),
            "gamma2": gamma2(space, f, f).tolist(),
            "reconstruction_residual": H.residual.tolist(),
        },
        residual_max=float(H.residual.max(initial=0.0)),
        scalars={"hs_integral": float(space.integrate(hs))},
    )
    return report, 0


def cmd_covd(run: Run) -> Outcome:
    space, ct = run.space, run.ct
    X = run.context.vector_field("X")
    strict = bool(run.params.get("strict"))
    nabla = covariant_derivative(ct, X, strict=strict)
    div = divergence(ct, X, strict=strict)
    trace = nabla.trace()
    report = DifferentialReport(
        **run.header(),
        quantity="covd",
        cotangent=ct.describe(),
        fields={
            "hs_norm_sq": nabla.hs_norm_sq().tolist(),
            "trace": trace.tolist(),
            "divergence": div.tolist(),
            "trace_defect": (trace - div).tolist(),
            "reconstruction_residual": nabla.residual.tolist(),
        },
        residual_max=float(nabla.residual.max(initial=0.0)),
        scalars={"covariant_energy": covariant_energy(ct, X), "hodge_energy": hodge_energy(run.cx, X, 1)},
    )
    return report, 0


def cmd_hodge(run: Run) -> Outcome:
    cx = run.cx
    degrees = run.ints("degrees", range(cx.top_degree + 1), minimum=0)
    hint = int(run.params.get("count_hint") or 3)
    rows = [HodgeDegree(**harmonic_basis(cx, k, hint).report.to_dict()) for k in degrees]
    report = HodgeReport(
        **run.header(),
        betti_eigen=[r.betti_eigen for r in rows],
        betti_rank=[r.betti_rank for r in rows],
        gap_ratio=[r.gap_ratio for r in rows],
        degrees=rows,
    )
    return report, 0


def cmd_ricci(run: Run) -> Outcome:
    cx = run.cx
    K = run.curvature_k()
    N = run.number("N")
    fields = {"X": run.context.vector_field("X"), "Y": run.context.vector_field("Y")}
    bounds = ricci_bound_report(cx, list(fields.values()), K)
    rows = []
    for (name, X), bound in zip(fields.items(), bounds):
        trace_max = None
        if N is not None:
            trace_max = float(np.abs(ricci_n(cx, X, X, N).trace_defect_x).max(initial=0.0))
        rows.append(
            RicciFieldBound(
                field=name,
                **bound.to_dict(),
                total_residual=ricci_total_check(cx, X, X).residual,
                trace_defect_max=trace_max,
            )
        )
    report = RicciReport(
        **run.header(),
        K=K,
        N=N,
        K_ric=min(r.K_ric for r in rows),
        violation_points=sorted({p for r in rows for p in r.violation_points}),
        fields=rows,
    )
    return report, 0


def cmd_curvature(run: Run) -> Outcome:
    raw = run.params.get("curv_mode") or "cd_infty"
    mode = _CURVATURE_MODES.get(raw, raw)
    est = curvature_estimate(
        run.space,
        mode,
        N=run.number("N"),
        restrict=run.params.get("restrict"),
        cfg=run.cfg,
    )
    report = CurvatureReport(
        **run.header(),
        mode=est.mode,
        N=est.N,
        K_star=est.k_global,
        bound_kind=est.bound_kind,
        k_field=est.k_field.tolist(),
    )
    return report, 0


def cmd_flow(run: Run) -> Outcome:
    space, ct = run.space, run.ct
    X = run.context.vector_field("X")
    if run.params.get("rho0"):
        rho0 = validate_nonnegative(read_field(run.params["rho0"], space.n, what="rho0"), what="rho0")
    else:
        f = run.context.function("f")
        rho0 = 1.0 + 0.5 * f / max(float(np.abs(f).max()), run.cfg.RESIDUAL_FLOOR)
    T = float(run.number("T", 0.1))
    steps = run.params.get("steps")
    if steps is None:
        dt_max = cfl_bound(ct, X)
        steps = 1 if math.isinf(dt_max) else max(1, int(math.ceil(T / dt_max)))
    curve = lagrangian_flow(ct, X, rho0, T, int(steps))
    residual = flow_derivative_check(curve, run.context.function("g")).max_residual if curve.steps >= 2 else None
    report = FlowReport(
        **run.header(),
        **curve.to_dict(every=int(run.params.get("snapshot_every") or 0)),
        derivative_residual=residual,
    )
    return report, 0


def cmd_verify(run: Run) -> Outcome:
    rules = select_rules(run.params.get("rules") or "all")
    ctx = run.context
    outcomes = run_rules(
        rules,
        run.space,
        inputs=ctx.inputs,
        params=ctx.params,
        cfg=run.cfg,
        allow_auto=ctx.allow_auto,
    )
    all_exact = all(o.passed is not False for o in outcomes)
    report = DiagnosticReport(
        **run.header(),
        space=run.space.name,
        rules=[RuleResult(**o.to_dict()) for o in outcomes],
        all_exact_passed=all_exact,
    )
    return report, 0 if all_exact else 1


def cmd_study(run: Run) -> Outcome:
    spec = run.params.get("rules") or ",".join(STUDY_RULES)
    rules = select_rules(spec)
    family = run.params.get("family") or "torus"
    resolutions = run.ints("resolutions", (8, 16, 32), minimum=2)
    rows = convergence_study(
        rules, family, resolutions, params={"seed": run.config.seed}, cfg=run.cfg, threads=run.config.threads
    )
    write_csv([r.to_dict() for r in rows], STUDY_COLUMNS, run.config.outputs.get("csv"))
    report = StudyTable(
        **run.header(),
        family=family,
        resolutions=resolutions,
        rows=[StudyRow(**r.to_dict()) for r in rows],
    )
    return report, 0


def cmd_accept(run: Run) -> Outcome:
    suite = run.params.get("suite") or "primary"
    criteria = run_acceptance(suite, cfg=run.cfg, threads=run.config.threads)
    passed = all(c.passed for c in criteria)
    report = AcceptanceReport(**run.header(), suite=suite, criteria=criteria, passed=passed)
    return report, 0 if passed else 1


def cmd_schema(run: Run) -> Outcome:
    return report_schema_emit(), 0


COMMANDS: dict[str, Callable[[Run], Outcome]] = {
    "build": cmd_build,
    "d": cmd_d,
    "dimloc": cmd_dimloc,
    "hessian": cmd_hessian,
    "covd": cmd_covd,
    "hodge": cmd_hodge,
    "ricci": cmd_ricci,
    "curvature": cmd_curvature,
    "flow": cmd_flow,
    "verify": cmd_verify,
    "study": cmd_study,
    "accept": cmd_accept,
    "schema": cmd_schema,
}


# ----------------------------------------------------------------- parser


def _common_parser(*, fiber_mode: bool = True) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--space", help="builder spec, e.g. grid_torus:2,32,1.0,1.0 or file:space.json")
    p.add_argument("--config", help="JSON run configuration merged under the flags")
    p.add_argument("--out", "--report", dest="out", help="report path (stdout when omitted)")
    p.add_argument("--seed", type=int, help="seed of every random choice")
    p.add_argument("--threads", type=int, help="worker threads for refinement studies")
    p.add_argument("--generators", type=int, help="extra generator functions (default: auto frame)")
    if fiber_mode:
        p.add_argument("--mode", choices=["auto", "exact", "resolved"], help="fiber rank mode")
    else:
        p.add_argument("--fiber-mode", dest="mode", choices=["auto", "exact", "resolved"], help="fiber rank mode")
    p.add_argument("--tol", action="append", metavar="NAME=VALUE", help="tolerance override, repeatable")
    p.add_argument("--log-level", type=str.upper, choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="log level (default from LOG_LEVEL)")
    p.add_argument("--log-format", choices=["json", "text"], help="log format (default from LOG_FORMAT)")
    return p


def _inputs(p: argparse.ArgumentParser, *names: str) -> None:
    for name in names:
        if name in _FUNCTION_INPUTS:
            p.add_argument(f"--{name}", help=f"field file for {name} (default: a generator function)")
        else:
            p.add_argument(f"--{name}", help=f"section file for vector field {name.upper()} (default: built from f, g, h)")


_CURVATURE_MODES = {"cd_infty": "cd_infty", "cdinf": "cd_infty", "cd_n": "cd_n", "cdn": "cd_n"}


def _dump_every(text: str) -> int:
    """``every=K`` (or a bare ``K``) for the snapshot stride."""
    _, _, raw = text.rpartition("=")
    try:
        value = int(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected every=K, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"snapshot stride must be >= 1, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="gamma-calc",
        description="Differential calculus on finite metric measure spaces.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.APP_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("build", parents=[common], help="build a space and summarize it")
    p.add_argument("--space-out", help="also write the space in the JSON interchange format")

    p = sub.add_parser("d", parents=[common], help="differential, carré du champ and Laplacian of f")
    _inputs(p, "f")
    p.add_argument("--strict", action="store_true", default=None, help="fail when df is not spanned")

    sub.add_parser("dimloc", parents=[common], help="dimensional decomposition of the cotangent bundle")

    p = sub.add_parser("hessian", parents=[common], help="Hessian of f")
    _inputs(p, "f")
    p.add_argument("--strict", action="store_true", default=None, help="fail where the generator pairs do not determine it")

    p = sub.add_parser("covd", parents=[common], help="covariant derivative of a vector field")
    _inputs(p, "f", "g", "h", "x")
    p.add_argument("--strict", action="store_true", default=None, help="fail where the generator pairs do not determine it")

    p = sub.add_parser("hodge", parents=[common], help="harmonic forms and Betti numbers")
    p.add_argument("--k", "--degrees", dest="degrees", help="comma-separated form degrees (default: all)")
    p.add_argument("--count-hint", type=int, help="expected harmonic count per degree")

    p = sub.add_parser("ricci", parents=[common], help="Ricci curvature bounds of vector fields")
    _inputs(p, "f", "g", "h", "x", "y")
    p.add_argument(
        "--fields",
        choices=["auto", "inputs"],
        help="auto: X and Y built from f, g, h unless given; inputs: require --x and --y",
    )
    p.add_argument("--K", type=float, help="lower curvature bound (default: pointwise K*)")
    p.add_argument("--N", help="dimension bound for the N-Ricci trace defect")

    p = sub.add_parser("curvature", parents=[_common_parser(fiber_mode=False)], help="pointwise curvature-dimension bound")
    p.add_argument(
        "--mode",
        "--curv-mode",
        dest="curv_mode",
        choices=sorted(_CURVATURE_MODES),
        help="curvature-dimension condition (cdn is cd_n)",
    )
    p.add_argument("--N", help="dimension bound for cd_n")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--restrict", dest="restrict", action="store_true", default=None, help="generator-restricted pencil")
    group.add_argument("--no-restrict", dest="restrict", action="store_false", help="refuse above CURVATURE_MAX_POINTS")

    p = sub.add_parser("flow", parents=[common], help="transport a density along a vector field")
    _inputs(p, "f", "g", "h")
    p.add_argument("--field", "--x", dest="x", help="section file for the vector field X (default: built from f, g, h)")
    p.add_argument("--rho0", help="field file of the initial density")
    p.add_argument("--T", type=float, help="final time (default 0.1)")
    p.add_argument("--steps", type=int, help="time steps (default: smallest stable count)")
    p.add_argument(
        "--dump",
        "--snapshot-every",
        dest="snapshot_every",
        type=_dump_every,
        metavar="every=K",
        help="keep every K-th density in the report",
    )

    p = sub.add_parser("verify", parents=[common], help="evaluate verification rules")
    _inputs(p, "f", "g", "h", "x", "y")
    p.add_argument("--rules", help=f"all, exact, diffusion or a comma list of: {', '.join(RULE_IDS)}")
    p.add_argument("--K", type=float, help="curvature bound used by curvature rules")
    p.add_argument("--strict-inputs", action="store_true", default=None, help="fail instead of auto-generating inputs")

    p = sub.add_parser("study", parents=[common], help="convergence study over a refinement family")
    p.add_argument("--rules", help="rules to study (default: the diffusion acceptance list)")
    p.add_argument("--family", choices=["torus", "sphere", "cycle", "cone"], help="refinement family")
    p.add_argument("--res", "--resolutions", dest="resolutions", help="comma-separated resolutions, at least three")
    p.add_argument("--csv", help="also write the table as CSV (an --out path ending in .csv does the same)")

    p = sub.add_parser("accept", parents=[common], help="run an acceptance suite")
    p.add_argument("--suite", choices=["primary", "quick"], help="suite to run (default primary)")

    sub.add_parser("schema", parents=[common], help="print the JSON schema of every report")
    return parser


# --------------------------------------------------------------- dispatch


def _emit(result: Any, path: Optional[str]) -> None:
    text = write_json(result, path)
    if path is None:
        sys.stdout.write(text)
        sys.stdout.flush()


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command line; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    configure_logging(
        level=args.log_level or settings.LOG_LEVEL,
        fmt=args.log_format or settings.LOG_FORMAT,
        log_dir=settings.LOG_DIR or None,
    )
    token = run_id_var.set(generate_run_id())
    try:
        config = resolve_config(args)
        try:
            cfg = config.settings(settings)
        except (ValueError, ValidationError) as exc:
            raise UsageError(f"invalid tolerances: {exc}") from exc
        params = dict(config.params)
        run = Run(command=args.command, config=config, cfg=cfg, params=params)
        logger.info("command started", extra={"command": args.command, "space": config.space})
        result, code = COMMANDS[args.command](run)
        _emit(result, config.outputs.get("report"))
        logger.info("command finished", extra={"command": args.command, "exit_code": code})
        style = "green" if code == 0 else "yellow"
        console.print(f"[{style}]{args.command}[/{style}] finished with exit code {code}")
        return code
    except GammaCalcError as exc:
        logger.error("command failed", extra={"command": args.command, "error": str(exc)})
        console.print(f"[red]error:[/red] {exc}")
        return exc.exit_code
    finally:
        run_id_var.reset(token)


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
