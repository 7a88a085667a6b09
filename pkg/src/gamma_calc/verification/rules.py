"""
Rule catalog.

Every identity of the calculus that the engine can check is a named rule.
A rule evaluates both sides of its identity on a space and returns a
residual: a pointwise field where the identity is pointwise, a number where
it is integrated or global. Residuals are normalized by a scale (the larger
side, floor ``RESIDUAL_FLOOR``) and aggregated in the m-weighted L¹, L²
and L∞ norms.

Each rule has a fixed class:

* ``exact``: forced by finite linear algebra (adjointness, definitions of
  Γ, composition of pullbacks, the integrated Ricci formula). Must hold at
  ``TOL_EXACT_RULE`` on every valid input.
* ``diffusion``: holds in the smooth limit only. Reported, never asserted;
  refinement studies measure its convergence order.

Inputs are named functions (``f``, ``g``, ``h``), vector fields (``X``,
``Y``) and point maps (``phi``, ``psi``). Missing inputs are generated from
the generator frame unless the caller disables it.

Adding a rule:

1. Add its name to `RuleId`.
2. Write ``_rule_<name>(ctx) -> RuleEvaluation`` and decorate it with
   ``@register("<name>", "<class>", "<identity>")``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Literal, Mapping, Optional, Sequence, get_args

import numpy as np

from src.gamma_calc.calculus.first_order import (
    CotangentBundle,
    FormRepresentation,
    apply_form,
    build_cotangent,
    differential,
    divergence,
    map_pullback_forms,
    pullback_lipschitz_ratio,
)
from src.gamma_calc.calculus.flows import cfl_bound, flow_derivative_check, lagrangian_flow
from src.gamma_calc.calculus.hodge import HodgeComplex, harmonic_basis
from src.gamma_calc.calculus.ricci import key_lemma_report, ricci, ricci_bound_report, ricci_n, ricci_total_check
from src.gamma_calc.calculus.second_order import (
    covariant_derivative,
    curvature_estimate,
    gamma2,
    gradient_estimate,
    hessian,
    lie_bracket,
    vector_action,
)
from src.gamma_calc.core.config import Settings, settings as default_settings
from src.gamma_calc.core.errors import InsufficientInputsError, UsageError
from src.gamma_calc.core.space import FiniteMMSpace
from src.gamma_calc.modules.bundle import Section
from src.gamma_calc.modules.exterior import wedge, wedge_forms
from src.gamma_calc.modules.pullback import PointMap
from src.gamma_calc.utils.linalg import field_norms

logger = logging.getLogger(__name__)

RuleId = Literal[
    "chain_rule",
    "leibniz_d",
    "locality_d",
    "div_leibniz",
    "bakry_emery",
    "weak_max",
    "hess_leibniz",
    "hess_chain",
    "grad_product",
    "metric_compat",
    "torsion_free",
    "cov_leibniz",
    "d_squared",
    "wedge_leibniz",
    "hodge_sign",
    "functoriality_pullback",
    "bochner_pointwise",
    "key_integrated",
    "ricci_tensoriality",
    "ricci_total",
    "ricci_tv",
    "eh_ec",
    "parteac1",
    "rn_trace",
    "betti_bound",
    "laplacian_leibniz",
    "adjointness",
    "flow_derivative",
    "harmonic_parallel",
]
RuleClass = Literal["exact", "diffusion"]

RULE_IDS: tuple[str, ...] = get_args(RuleId)


# ------------------------------------------------------------ evaluation


@dataclass(frozen=True)
class RuleEvaluation:
    # Pointwise field of length n, or a single number for global rules.
    residual: np.ndarray | float
    scale: float
    metrics: dict[str, float] = field(default_factory=dict)
    note: str = ""


def _linf(a: np.ndarray | float) -> float:
    return float(np.abs(np.asarray(a, dtype=float)).max(initial=0.0))


def _pointwise(a: np.ndarray) -> np.ndarray:
    """Fiber norm of padded coefficients, ``(n, ...) → (n,)``."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        return np.abs(arr)
    flat = arr.reshape(arr.shape[0], -1)
    return np.sqrt(np.einsum("ij,ij->i", flat, flat))


def difference(lhs: np.ndarray | float, rhs: np.ndarray | float, **metrics: float) -> RuleEvaluation:
    """Residual of ``lhs = rhs``, pointwise fiber norm for tensor-valued sides."""
    lhs_a, rhs_a = np.asarray(lhs, dtype=float), np.asarray(rhs, dtype=float)
    if lhs_a.ndim == 0:
        return RuleEvaluation(abs(float(lhs_a - rhs_a)), max(abs(float(lhs_a)), abs(float(rhs_a))), dict(metrics))
    return RuleEvaluation(
        residual=_pointwise(lhs_a - rhs_a),
        scale=max(_linf(_pointwise(lhs_a)), _linf(_pointwise(rhs_a))),
        metrics=dict(metrics),
    )


def excess(lhs: np.ndarray | float, rhs: np.ndarray | float, **metrics: float) -> RuleEvaluation:
    """Residual of ``lhs ≤ rhs``: the positive part of ``lhs − rhs``."""
    lhs_a, rhs_a = np.asarray(lhs, dtype=float), np.asarray(rhs, dtype=float)
    gap = np.clip(lhs_a - rhs_a, 0.0, None)
    scale = max(_linf(lhs_a), _linf(rhs_a))
    if gap.ndim == 0:
        return RuleEvaluation(float(gap), scale, dict(metrics))
    return RuleEvaluation(gap, scale, dict(metrics))


@dataclass(frozen=True)
class RuleSpec:
    name: str
    rule_class: RuleClass
    identity: str
    evaluate: Callable[["RuleContext"], RuleEvaluation]


RULES: dict[str, RuleSpec] = {}


def register(name: str, rule_class: RuleClass, identity: str) -> Callable:
    if name not in RULE_IDS:
        raise ValueError(f"unknown rule id {name!r}")

    def deco(fn: Callable[["RuleContext"], RuleEvaluation]) -> Callable[["RuleContext"], RuleEvaluation]:
        RULES[name] = RuleSpec(name=name, rule_class=rule_class, identity=identity, evaluate=fn)
        return fn

    return deco


def rule_class(name: str) -> RuleClass:
    return RULES[name].rule_class


def select_rules(spec: str | Sequence[str]) -> list[str]:
    """``all``, ``exact``, ``diffusion`` or a comma list of rule names, in catalog order."""
    tokens = [t.strip() for t in (spec.split(",") if isinstance(spec, str) else spec) if t.strip()]
    if not tokens:
        raise UsageError("no rules selected")
    chosen: set[str] = set()
    for tok in tokens:
        if tok == "all":
            chosen.update(RULES)
        elif tok in ("exact", "diffusion"):
            chosen.update(n for n, r in RULES.items() if r.rule_class == tok)
        elif tok in RULES:
            chosen.add(tok)
        else:
            raise UsageError(f"unknown rule {tok!r}; known: {', '.join(RULE_IDS)}")
    return [n for n in RULE_IDS if n in chosen]


# --------------------------------------------------------------- context


@dataclass(eq=False)
class RuleContext:
    """Inputs and lazily built structures shared by the rules of one run."""

    space: FiniteMMSpace
    inputs: Mapping[str, Any] = field(default_factory=dict)
    params: Mapping[str, Any] = field(default_factory=dict)
    cfg: Settings = field(default_factory=lambda: default_settings)
    allow_auto: bool = True
    current: str = ""

    @cached_property
    def ct(self) -> CotangentBundle:
        given = self.inputs.get("cotangent")
        if isinstance(given, CotangentBundle):
            return given
        return build_cotangent(
            self.space,
            count=self.params.get("generators"),
            mode=self.params.get("mode", "auto"),
            cfg=self.cfg,
        )

    @cached_property
    def cx(self) -> HodgeComplex:
        return HodgeComplex(self.ct)

    @cached_property
    def curvature_k(self) -> float:
        """K from the pointwise curvature estimate of this space (0 when unbounded)."""
        if "K" in self.params:
            return float(self.params["K"])
        est = curvature_estimate(self.space, cfg=self.cfg)
        k = est.k_global
        return k if math.isfinite(k) else 0.0

    @cached_property
    def rng(self) -> np.random.Generator:
        return np.random.default_rng(int(self.params.get("seed", self.cfg.SEED)))

    def _missing(self, name: str) -> None:
        if not self.allow_auto:
            raise InsufficientInputsError(f"rule {self.current or '?'} needs input {name!r}")

    def function(self, name: str) -> np.ndarray:
        if name in self.inputs:
            return self.space.check_field(self.inputs[name], name)
        self._missing(name)
        G = self.ct.generators
        slot = {"f": 0, "g": 1, "h": 2}.get(name, 0)
        return G[:, slot % G.shape[1]].copy()

    def vector_field(self, name: str) -> Section:
        given = self.inputs.get(name)
        if isinstance(given, Section):
            return given
        if given is not None:
            return Section(self.ct.bundle, np.asarray(given, dtype=float))
        self._missing(name)
        f, g, h = self.function("f"), self.function("g"), self.function("h")
        df, dg, dh = (differential(self.ct, u, strict=False) for u in (f, g, h))
        if name == "Y":
            return dg - dh.scale(f)
        return df + dg.scale(h)

    def point_map(self, name: str) -> PointMap:
        given = self.inputs.get(name)
        if isinstance(given, PointMap):
            return given
        if given is not None:
            return PointMap(self.space, self.space, np.asarray(given))
        self._missing(name)
        return PointMap(self.space, self.space, self.rng.integers(0, self.space.n, self.space.n))


# ------------------------------------------------------------------ d


@register("chain_rule", "diffusion", "d(φ∘f) = φ'(f) df with φ(t) = t²")
def _rule_chain_rule(ctx: RuleContext) -> RuleEvaluation:
    f = ctx.function("f")
    lhs = differential(ctx.ct, f * f, strict=False).coeffs
    rhs = 2.0 * f[:, None] * differential(ctx.ct, f, strict=False).coeffs
    return difference(lhs, rhs)


@register("leibniz_d", "diffusion", "d(fg) = f dg + g df")
def _rule_leibniz_d(ctx: RuleContext) -> RuleEvaluation:
    f, g = ctx.function("f"), ctx.function("g")
    ct = ctx.ct
    lhs = differential(ct, f * g, strict=False).coeffs
    rhs = f[:, None] * differential(ct, g, strict=False).coeffs + g[:, None] * differential(ct, f, strict=False).coeffs
    return difference(lhs, rhs)


@register("locality_d", "diffusion", "df = 0 on {f = c}")
def _rule_locality_d(ctx: RuleContext) -> RuleEvaluation:
    g = ctx.function("g")
    level = float(np.median(g))
    f = np.maximum(g, level)
    df = _pointwise(differential(ctx.ct, f, strict=False).coeffs)
    on = np.isclose(f, level)
    return RuleEvaluation(
        residual=np.where(on, df, 0.0),
        scale=_linf(df),
        metrics={"level_set_mass": float(np.dot(on, ctx.space.m))},
    )


@register("div_leibniz", "diffusion", "div(fX) = f div X + df(X)")
def _rule_div_leibniz(ctx: RuleContext) -> RuleEvaluation:
    f, X = ctx.function("f"), ctx.vector_field("X")
    ct = ctx.ct
    lhs = divergence(ct, X.scale(f))
    rhs = f * divergence(ct, X) + apply_form(ct, f, X)
    return difference(lhs, rhs)


@register("bakry_emery", "diffusion", "Γ(h_t f) ≤ e^{−2Kt} h_t Γ(f)")
def _rule_bakry_emery(ctx: RuleContext) -> RuleEvaluation:
    f = ctx.function("f")
    t = float(ctx.params.get("t", 0.01))
    est = gradient_estimate(ctx.space, f, t, ctx.curvature_k)
    return excess(est.lhs, est.rhs, K=ctx.curvature_k, t=t)


@register("weak_max", "exact", "0 ≤ f ≤ c implies 0 ≤ h_t f ≤ c")
def _rule_weak_max(ctx: RuleContext) -> RuleEvaluation:
    f = ctx.function("f")
    t = float(ctx.params.get("t", 0.01))
    u = ctx.space.heat_flow(f, t, cfg=ctx.cfg)
    lo, hi = float(f.min()), float(f.max())
    residual = np.clip(lo - u, 0.0, None) + np.clip(u - hi, 0.0, None)
    return RuleEvaluation(residual=residual, scale=max(abs(lo), abs(hi)), metrics={"t": t})


# ------------------------------------------------------- second order


@register("hess_leibniz", "diffusion", "Hess(fg) = f Hess g + g Hess f + df⊗dg + dg⊗df")
def _rule_hess_leibniz(ctx: RuleContext) -> RuleEvaluation:
    f, g = ctx.function("f"), ctx.function("g")
    ct = ctx.ct
    df = differential(ct, f, strict=False).coeffs
    dg = differential(ct, g, strict=False).coeffs
    lhs = hessian(ct, f * g).coeffs
    rhs = (
        f[:, None, None] * hessian(ct, g).coeffs
        + g[:, None, None] * hessian(ct, f).coeffs
        + np.einsum("nk,nl->nkl", df, dg)
        + np.einsum("nk,nl->nkl", dg, df)
    )
    return difference(lhs, rhs)


@register("hess_chain", "diffusion", "Hess(φ∘f) = φ'(f) Hess f + φ''(f) df⊗df with φ(t) = t³")
def _rule_hess_chain(ctx: RuleContext) -> RuleEvaluation:
    f = ctx.function("f")
    ct = ctx.ct
    df = differential(ct, f, strict=False).coeffs
    lhs = hessian(ct, f**3).coeffs
    rhs = 3.0 * (f * f)[:, None, None] * hessian(ct, f).coeffs + 6.0 * f[:, None, None] * np.einsum(
        "nk,nl->nkl", df, df
    )
    return difference(lhs, rhs)


@register("grad_product", "diffusion", "d⟨∇f,∇g⟩ = Hess f(∇g, ·) + Hess g(∇f, ·)")
def _rule_grad_product(ctx: RuleContext) -> RuleEvaluation:
    f, g = ctx.function("f"), ctx.function("g")
    ct = ctx.ct
    df = differential(ct, f, strict=False)
    dg = differential(ct, g, strict=False)
    lhs = differential(ct, df.inner(dg), strict=False).coeffs
    rhs = np.einsum("nkl,nl->nk", hessian(ct, f).coeffs, dg.coeffs) + np.einsum(
        "nkl,nl->nk", hessian(ct, g).coeffs, df.coeffs
    )
    return difference(lhs, rhs)


@register("metric_compat", "diffusion", "d⟨X,Y⟩(Z) = ⟨∇_Z X, Y⟩ + ⟨X, ∇_Z Y⟩")
def _rule_metric_compat(ctx: RuleContext) -> RuleEvaluation:
    X, Y = ctx.vector_field("X"), ctx.vector_field("Y")
    ct = ctx.ct
    TX, TY = covariant_derivative(ct, X).coeffs, covariant_derivative(ct, Y).coeffs
    lhs = differential(ct, X.inner(Y), strict=False).coeffs
    rhs = np.einsum("nzk,nk->nz", TX, Y.coeffs) + np.einsum("nzk,nk->nz", TY, X.coeffs)
    return difference(lhs, rhs)


@register("torsion_free", "diffusion", "[X,Y](f) = X(Y f) − Y(X f)")
def _rule_torsion_free(ctx: RuleContext) -> RuleEvaluation:
    f = ctx.function("f")
    X, Y = ctx.vector_field("X"), ctx.vector_field("Y")
    ct = ctx.ct
    lhs = vector_action(ct, lie_bracket(ct, X, Y), f)
    rhs = vector_action(ct, X, vector_action(ct, Y, f)) - vector_action(ct, Y, vector_action(ct, X, f))
    return difference(lhs, rhs)


@register("cov_leibniz", "diffusion", "∇(gX) = dg⊗X + g∇X")
def _rule_cov_leibniz(ctx: RuleContext) -> RuleEvaluation:
    g, X = ctx.function("g"), ctx.vector_field("X")
    ct = ctx.ct
    lhs = covariant_derivative(ct, X.scale(g)).coeffs
    dg = differential(ct, g, strict=False).coeffs
    rhs = np.einsum("nz,ny->nzy", dg, X.coeffs) + g[:, None, None] * covariant_derivative(ct, X).coeffs
    return difference(lhs, rhs)


# ------------------------------------------------------------- forms


@register("d_squared", "diffusion", "d(dω) = 0")
def _rule_d_squared(ctx: RuleContext) -> RuleEvaluation:
    f = ctx.function("f")
    cx = ctx.cx
    d0f = cx.d(0) @ f
    dd = cx.space(2).to_padded(cx.d(1) @ d0f)
    df = cx.space(1).to_padded(d0f)
    return RuleEvaluation(
        residual=_pointwise(dd),
        scale=_linf(_pointwise(df)),
        metrics={"d2_defect": cx.d2_defect(0)},
    )


def _padded_d(cx: HodgeComplex, k: int, coeffs: np.ndarray) -> np.ndarray:
    return cx.space(k + 1).to_padded(cx.d(k) @ cx.space(k).to_vector(coeffs))


def _wedge(cx: HodgeComplex, a: np.ndarray, p: int, b: np.ndarray, q: int) -> np.ndarray:
    if p == 0:
        return a[:, :1] * b
    if q == 0:
        return a * b[:, :1]
    left, right = Section(cx.space(p).ext.bundle, a), Section(cx.space(q).ext.bundle, b)
    return wedge_forms(left, p, right, q, cx.space(p + q).ext).coeffs


def _sample_form(ctx: RuleContext, k: int, weight: np.ndarray, start: int) -> np.ndarray:
    """``weight·du₁∧…∧du_k`` over the cycle g, h, f; not closed for nonconstant weights."""
    if k == 0:
        return weight[:, None].copy()
    funcs = [ctx.function(name) for name in ("g", "h", "f")]
    factors = [differential(ctx.ct, funcs[(start + j) % 3], strict=False) for j in range(k)]
    return weight[:, None] * wedge(ctx.cx.space(k).ext, factors).coeffs


@register("wedge_leibniz", "diffusion", "d(ω∧η) = dω∧η + (−1)^p ω∧dη")
def _rule_wedge_leibniz(ctx: RuleContext) -> RuleEvaluation:
    f, g = ctx.function("f"), ctx.function("g")
    cx = ctx.cx
    top = min(cx.top_degree, 3)
    floor = ctx.cfg.RESIDUAL_FLOOR
    residual = np.zeros(ctx.space.n)
    scale = 0.0
    metrics: dict[str, float] = {}
    for p, q in ((0, 1), (1, 0), (1, 1), (0, 2), (2, 0)):
        if p + q + 1 > top:
            continue
        omega, eta = _sample_form(ctx, p, f, 0), _sample_form(ctx, q, g, 1)
        lhs = _padded_d(cx, p + q, _wedge(cx, omega, p, eta, q))
        rhs = _wedge(cx, _padded_d(cx, p, omega), p + 1, eta, q) + (-1) ** p * _wedge(
            cx, omega, p, _padded_d(cx, q, eta), q + 1
        )
        part = difference(lhs, rhs)
        residual = np.maximum(residual, part.residual)
        scale = max(scale, part.scale)
        metrics[f"relative_{p}_{q}"] = _linf(part.residual) / max(part.scale, floor)
    note = "" if metrics else "fibers too small for 2-forms"
    return RuleEvaluation(residual=residual, scale=scale, metrics=metrics, note=note)


@register("hodge_sign", "diffusion", "Δ_H f = −Lf on functions")
def _rule_hodge_sign(ctx: RuleContext) -> RuleEvaluation:
    f = ctx.function("f")
    lhs = ctx.cx.laplacian(0) @ f
    rhs = -ctx.space.apply(f)
    return difference(lhs, rhs)


@register("functoriality_pullback", "exact", "(φ∘ψ)* = ψ*φ* on 1-forms")
def _rule_functoriality(ctx: RuleContext) -> RuleEvaluation:
    ct = ctx.ct
    phi, psi = ctx.point_map("phi"), ctx.point_map("psi")
    omega = ctx.vector_field("X")
    rep = FormRepresentation.from_section(ct, omega)
    lhs = rep.pullback(phi.compose(psi)).evaluate(ct).coeffs
    rhs = rep.pullback(phi).pullback(psi).evaluate(ct).coeffs
    out = difference(lhs, rhs)

    # d commutes with pullback: φ*(df) = d(f∘φ).
    f = ctx.function("f")
    pulled = map_pullback_forms(phi, ct, ct, differential(ct, f, strict=False)).coeffs
    direct = differential(ct, phi.pull_function(f), strict=False).coeffs
    gap = _linf(_pointwise(pulled - direct)) / max(_linf(_pointwise(direct)), ctx.cfg.RESIDUAL_FLOOR)
    out.metrics["functd_relative"] = gap
    out.metrics["compression"] = phi.compression
    # |φ*ω| ≤ Lip(φ)·|ω|∘φ, a diagnostic when both distance tables exist.
    ratio = pullback_lipschitz_ratio(phi, ct, ct, differential(ct, f, strict=False))
    if ratio is not None:
        out.metrics["lipschitz_ratio"] = ratio
    return out


@register("adjointness", "exact", "⟨δω, η⟩ = ⟨ω, dη⟩ and ∫Γ(f,g) dm = −∫f Lg dm")
def _rule_adjointness(ctx: RuleContext) -> RuleEvaluation:
    cx = ctx.cx
    worst = 0.0
    metrics: dict[str, float] = {}
    for k in range(min(cx.top_degree, 2)):
        lo, hi = cx.space(k), cx.space(k + 1)
        if hi.size == 0:
            continue
        omega = ctx.rng.standard_normal(hi.size)
        eta = ctx.rng.standard_normal(lo.size)
        d_eta = cx.d(k) @ eta
        delta_omega = cx.delta(k) @ omega
        lhs = lo.inner(delta_omega, eta)
        rhs = hi.inner(omega, d_eta)
        scale = lo.norm(delta_omega) * lo.norm(eta) + hi.norm(omega) * hi.norm(d_eta)
        rel = abs(lhs - rhs) / max(scale, ctx.cfg.RESIDUAL_FLOOR)
        metrics[f"degree_{k}"] = rel
        worst = max(worst, rel)
    f, g = ctx.function("f"), ctx.function("g")
    space = ctx.space
    a = space.integrate(space.gamma(f, g))
    b = -space.inner(f, space.apply(g))
    scale = float(space.integrate(np.abs(space.gamma(f, g)))) + float(space.integrate(np.abs(f * space.apply(g))))
    rel = abs(a - b) / max(scale, ctx.cfg.RESIDUAL_FLOOR)
    metrics["gamma_by_parts"] = rel
    worst = max(worst, rel)
    return RuleEvaluation(residual=worst, scale=1.0, metrics=metrics)


@register("laplacian_leibniz", "exact", "L(fg) = f Lg + g Lf + 2Γ(f,g)")
def _rule_laplacian_leibniz(ctx: RuleContext) -> RuleEvaluation:
    f, g = ctx.function("f"), ctx.function("g")
    space = ctx.space
    terms = [space.apply(f * g), f * space.apply(g), g * space.apply(f), 2.0 * space.gamma(f, g)]
    out = difference(terms[0], terms[1] + terms[2] + terms[3])
    return RuleEvaluation(out.residual, max(_linf(t) for t in terms), out.metrics)


# ------------------------------------------------------------ curvature


@register("bochner_pointwise", "diffusion", "Γ₂(f) ≥ KΓ(f) + |Hess f|²")
def _rule_bochner_pointwise(ctx: RuleContext) -> RuleEvaluation:
    f = ctx.function("f")
    K = ctx.curvature_k
    lhs = K * ctx.space.gamma(f, f) + hessian(ctx.ct, f).hs_norm_sq()
    rhs = gamma2(ctx.space, f, f)
    return excess(lhs, rhs, K=K)


@register("key_integrated", "diffusion", "∫|Hess f|² dm ≤ ∫(Lf)² − KΓ(f) dm")
def _rule_key_integrated(ctx: RuleContext) -> RuleEvaluation:
    f = ctx.function("f")
    space, K = ctx.space, ctx.curvature_k
    lhs = float(space.integrate(hessian(ctx.ct, f).hs_norm_sq()))
    Lf = space.apply(f)
    rhs = float(space.integrate(Lf * Lf - K * space.gamma(f, f)))
    return excess(lhs, rhs, K=K)


@register("ricci_tensoriality", "diffusion", "Ric(fX, Y) = f Ric(X, Y)")
def _rule_ricci_tensoriality(ctx: RuleContext) -> RuleEvaluation:
    f = ctx.function("f")
    X, Y = ctx.vector_field("X"), ctx.vector_field("Y")
    lhs = ricci(ctx.cx, X.scale(f), Y)
    rhs = ricci(ctx.cx, X, Y)
    # Ric vanishes on flat inputs; both sides are measured against the terms that cancel in them.
    return RuleEvaluation(
        residual=np.abs(lhs.density - f * rhs.density),
        scale=max(_linf(lhs.term_size), _linf(f * rhs.term_size)),
    )


@register("ricci_total", "exact", "∫Ric(X,Y) dm = ∫⟨dX,dY⟩ + δXδY − ∇X:∇Y dm")
def _rule_ricci_total(ctx: RuleContext) -> RuleEvaluation:
    X, Y = ctx.vector_field("X"), ctx.vector_field("Y")
    tot = ricci_total_check(ctx.cx, X, Y)
    return RuleEvaluation(
        residual=tot.residual,
        scale=1.0,
        metrics={"integral": tot.integral, "formula": tot.formula},
    )


@register("ricci_tv", "diffusion", "‖Ric(X,X)‖_TV ≤ 2(E_H(X) + K⁻‖X‖²)")
def _rule_ricci_tv(ctx: RuleContext) -> RuleEvaluation:
    X = ctx.vector_field("X")
    fb = ricci_bound_report(ctx.cx, [X], ctx.curvature_k)[0]
    return excess(fb.tv, fb.tv_bound, K=ctx.curvature_k, K_ric=fb.k_ric)


@register("eh_ec", "diffusion", "E_C(X) ≤ E_H(X) − K/2 ‖X‖²")
def _rule_eh_ec(ctx: RuleContext) -> RuleEvaluation:
    X = ctx.vector_field("X")
    K = ctx.curvature_k
    fb = ricci_bound_report(ctx.cx, [X], K)[0]
    return excess(fb.e_c, fb.e_h - 0.5 * K * fb.l2_sq, K=K, E_H=fb.e_h, E_C=fb.e_c)


@register("parteac1", "diffusion", "|Σ Γ(f,h)Γ(g,h) + g H[f](h,h)|² ≤ ρ Σ Γ(h,h')²")
def _rule_parteac1(ctx: RuleContext) -> RuleEvaluation:
    f, g, h = ctx.function("f"), ctx.function("g"), ctx.function("h")
    K = ctx.curvature_k
    rep = key_lemma_report(ctx.cx, [f], [g], [h], K)
    out = excess(rep.lhs, rep.rhs, K=K)
    out.metrics["violation_mass"] = float(np.dot(rep.lhs > rep.rhs, ctx.space.m))
    return out


@register("rn_trace", "diffusion", "tr ∇X = div X on {dim_loc = N}")
def _rule_rn_trace(ctx: RuleContext) -> RuleEvaluation:
    X = ctx.vector_field("X")
    ct = ctx.ct
    N = float(ctx.params.get("N", ct.width))
    rn = ricci_n(ctx.cx, X, X, N)
    on = ct.rank == N
    tr = covariant_derivative(ct, X).trace()
    div = divergence(ct, X)
    return RuleEvaluation(
        residual=np.where(on, np.abs(rn.trace_defect_x), 0.0),
        scale=max(_linf(tr), _linf(div)),
        metrics={"N": N, "min_inequality_slack": float(rn.inequality_slack.min(initial=0.0))},
    )


@register("betti_bound", "diffusion", "dim H¹ ≤ min dim_loc")
def _rule_betti_bound(ctx: RuleContext) -> RuleEvaluation:
    hb = harmonic_basis(ctx.cx, 1, count_hint=int(ctx.params.get("count_hint", 3)))
    b1 = hb.report.harmonic_dim
    min_dim = int(ctx.ct.rank.min()) if ctx.ct.rank.size else 0
    out = excess(float(b1), float(min_dim), betti_1=float(b1), min_dim_loc=float(min_dim))
    if out.residual and "K" not in ctx.params:
        k = ctx.curvature_k
        if k >= 0:
            logger.warning(
                "betti bound violated on a nonnegatively curved input",
                extra={"space": ctx.space.name, "betti_1": b1, "min_dim_loc": min_dim, "K": k},
            )
    return RuleEvaluation(out.residual, max(out.scale, 1.0), out.metrics, "" if hb.report.conclusive else "gap inconclusive")


@register("harmonic_parallel", "diffusion", "harmonic 1-forms are parallel when K ≥ 0")
def _rule_harmonic_parallel(ctx: RuleContext) -> RuleEvaluation:
    hb = harmonic_basis(ctx.cx, 1, count_hint=int(ctx.params.get("count_hint", 3)))
    ct = ctx.ct
    acc = np.zeros(ct.n)
    size = np.zeros(ct.n)
    for j in range(hb.forms.shape[1]):
        w = Section(ct.bundle, hb.space.to_padded(hb.forms[:, j]))
        acc += covariant_derivative(ct, w).hs_norm_sq()
        size += w.norm_sq()
    return RuleEvaluation(
        residual=np.sqrt(acc),
        scale=_linf(np.sqrt(size)),
        metrics={"harmonic_forms": float(hb.forms.shape[1]), "K": ctx.curvature_k},
    )


# ------------------------------------------------------------- flows


@register("flow_derivative", "diffusion", "d/dt ∫f ρ_t dm = ∫df(X) ρ_t dm")
def _rule_flow_derivative(ctx: RuleContext) -> RuleEvaluation:
    f, g, h = ctx.function("f"), ctx.function("g"), ctx.function("h")
    ct = ctx.ct
    # A field with a df component keeps d/dt ∫f ρ dm away from zero.
    X = differential(ct, f, strict=False) + differential(ct, g, strict=False) * 0.5
    T = float(ctx.params.get("T", 0.05))
    dt_max = cfl_bound(ct, X)
    steps = max(4, int(math.ceil(2.0 * T / dt_max))) if math.isfinite(dt_max) else 4
    spread = max(_linf(h), ctx.cfg.RESIDUAL_FLOOR)
    rho0 = 1.0 + 0.5 * h / spread
    curve = lagrangian_flow(ct, X, rho0, T, steps)
    chk = flow_derivative_check(curve, f)
    return RuleEvaluation(
        residual=chk.max_residual,
        scale=max(_linf(chk.lhs), _linf(chk.rhs)),
        metrics={"steps": float(steps), "mass_drift": curve.max_mass_drift, "compression_slack": curve.compression_slack},
    )


# ------------------------------------------------------------- running


@dataclass(frozen=True)
class RuleOutcome:
    rule: str
    rule_class: RuleClass
    identity: str
    norms: dict[str, float]
    scale: float
    relative: float
    passed: Optional[bool]
    metrics: dict[str, float]
    note: str
    residual_field: Optional[np.ndarray] = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "rule": self.rule,
            "rule_class": self.rule_class,
            "identity": self.identity,
            "norms": self.norms,
            "scale": self.scale,
            "relative": self.relative,
            "passed": self.passed,
            "metrics": self.metrics,
            "note": self.note,
        }
        return out


def _outcome(spec: RuleSpec, ev: RuleEvaluation, space: FiniteMMSpace, cfg: Settings) -> RuleOutcome:
    if isinstance(ev.residual, np.ndarray) and ev.residual.shape == (space.n,):
        norms = field_norms(space, ev.residual)
        field_out: Optional[np.ndarray] = ev.residual
    else:
        r = abs(float(ev.residual))
        norms = {"l1": r, "l2": r, "linf": r}
        field_out = None
    relative = norms["linf"] / max(ev.scale, cfg.RESIDUAL_FLOOR)
    passed = bool(relative <= cfg.TOL_EXACT_RULE) if spec.rule_class == "exact" else None
    return RuleOutcome(
        rule=spec.name,
        rule_class=spec.rule_class,
        identity=spec.identity,
        norms=norms,
        scale=float(ev.scale),
        relative=float(relative),
        passed=passed,
        metrics={k: float(v) for k, v in ev.metrics.items()},
        note=ev.note,
        residual_field=field_out,
    )


def rule_residual(
    rule: str,
    space: FiniteMMSpace,
    inputs: Optional[Mapping[str, Any]] = None,
    params: Optional[Mapping[str, Any]] = None,
    *,
    cfg: Optional[Settings] = None,
    allow_auto: bool = True,
    context: Optional[RuleContext] = None,
) -> RuleOutcome:
    """Evaluate one rule on ``space``."""
    if rule not in RULES:
        raise UsageError(f"unknown rule {rule!r}")
    spec = RULES[rule]
    ctx = context or RuleContext(
        space=space,
        inputs=dict(inputs or {}),
        params=dict(params or {}),
        cfg=cfg or default_settings,
        allow_auto=allow_auto,
    )
    ctx.current = rule
    ev = spec.evaluate(ctx)
    out = _outcome(spec, ev, space, ctx.cfg)
    logger.debug("rule evaluated", extra={"rule": rule, "relative": out.relative, "passed": out.passed})
    if out.passed is False:
        logger.warning("exact rule failed", extra={"rule": rule, "relative": out.relative, "space": space.name})
    return out


def run_rules(
    rules: Sequence[str],
    space: FiniteMMSpace,
    inputs: Optional[Mapping[str, Any]] = None,
    params: Optional[Mapping[str, Any]] = None,
    *,
    cfg: Optional[Settings] = None,
    allow_auto: bool = True,
) -> list[RuleOutcome]:
    """Evaluate ``rules`` in order, sharing one context."""
    ctx = RuleContext(
        space=space,
        inputs=dict(inputs or {}),
        params=dict(params or {}),
        cfg=cfg or default_settings,
        allow_auto=allow_auto,
    )
    return [rule_residual(r, space, context=ctx) for r in rules]
