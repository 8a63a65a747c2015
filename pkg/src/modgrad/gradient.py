"""Upper gradients along curves and the minimal p-weak upper gradient.

In this model a curve family is p-exceptional exactly when each of its curves
meets an edge of zero measure, so "p-almost every curve" means "every curve
avoiding null edges".  At edge granularity the minimal weak gradient of f is
the absolute slope on positive edges and 0 on null ones; at star granularity
the maximum over positive incident edges is used as a surrogate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

from .mmspace import (EDGE, STAR, BudgetExceeded, Connector, Curve, CurveFamily,
                      MetricGraph, SpaceError, enumerate_curves)
from .modulus import mod_p
from .plans import (Disintegration, Plan, PlanError, Traversal, combine_plans,
                    barycenter, disintegrate, dual_plan, reverse)

VIOLATION_MAX_STEPS = 20
VIOLATION_MAX_CURVES = 100_000


def _val(x, exact):
    return Fraction(x) if exact else float(x)


def slopes(graph: MetricGraph, f: Mapping[str, float], exact: bool = False) -> dict[str, float | Fraction]:
    """(f(v) - f(u)) / len(e) in the stored orientation of each edge."""
    out = {}
    for eid, e in graph.edges.items():
        out[eid] = (_val(f[e.v], exact) - _val(f[e.u], exact)) / _val(e.length, exact)
    return out


def signed_ratio(t: Traversal, slope: Mapping[str, float]) -> float:
    """(f o g)'_t / |g'_t| on the traversed step."""
    return t.orientation * slope[t.edge]


@dataclass
class WeakGradient:
    granularity: str
    values: dict[str, float | Fraction]
    exceptional: frozenset[str]
    surrogate: bool = False

    def __getitem__(self, x):
        return self.values[x]

    def support(self) -> list[str]:
        return [x for x, v in self.values.items() if v > 0]


def minimal_weak_gradient(graph: MetricGraph, f: Mapping[str, float], p: float = 2,
                          granularity: str = EDGE, exact: bool = False) -> WeakGradient:
    s = slopes(graph, f, exact)
    zero = Fraction(0) if exact else 0.0
    if granularity == EDGE:
        vals = {e: (abs(s[e]) if graph.measure(e) > 0 else zero) for e in graph.edge_ids}
        exc = frozenset(graph.null_edges())
        return WeakGradient(EDGE, vals, exc)
    if granularity == STAR:
        vals, exc = {}, set()
        for v in graph.vertices:
            pos = [abs(s[e]) for e in graph.incident(v) if graph.measure(e) > 0]
            vals[v] = max(pos, default=zero)
            if not pos:
                exc.add(v)
        return WeakGradient(STAR, vals, frozenset(exc), surrogate=True)
    raise SpaceError(f"unknown granularity {granularity!r}")


def is_upper_gradient_along(graph: MetricGraph, f, g_edge: Mapping[str, float], curve: Curve,
                            exact: bool = False) -> bool:
    a, b = curve.endpoints(graph)
    lhs = abs(_val(f[b], exact) - _val(f[a], exact))
    rhs = sum((_val(g_edge[e], exact) * _val(graph.length(e), exact) for e, _ in curve.steps),
              Fraction(0) if exact else 0.0)
    return lhs <= rhs


def eta_upper_gradient(graph: MetricGraph, f: Mapping[str, float], plan: Plan,
                       granularity: str = EDGE, dis: Disintegration | None = None) -> WeakGradient:
    """Essential sup of |(f o g)'|/|g'| over the conditional measure at each location."""
    exact = plan.exact
    s = slopes(graph, f, exact)
    if dis is None:
        dis = disintegrate(plan, graph, granularity)
    zero = Fraction(0) if exact else 0.0
    keys = graph.edge_ids if granularity == EDGE else graph.vertices
    vals = {x: zero for x in keys}
    for x, px in dis.conditional.items():
        vals[x] = max((abs(s[t.edge]) for t, m in px.items() if m > 0), default=zero)
    return WeakGradient(granularity, vals, frozenset(x for x in keys if x not in dis.conditional))


# --------------------------------------------------------- representing plans

@dataclass
class RepresentingPlan:
    plan: Plan
    disintegration: Disintegration
    support: list[str]  # D = {g_f > 0}
    gradient: WeakGradient
    esssup: dict[str, float | Fraction]
    absolutely_continuous: bool  # mu|_D << plan#
    identity: bool  # esssup ratio == g_f on D
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.absolutely_continuous and self.identity


def representing_plan(graph: MetricGraph, f: Mapping[str, float], p: float = 2,
                      families: Mapping[str, CurveFamily] | None = None,
                      exact: bool = False) -> RepresentingPlan:
    """Plan whose conditional measures realise g_f as an essential supremum.

    For every positive edge in D the dual plan of the single-edge family (or
    of ``families[e]``) is taken; the plans are combined with weights
    2^-n / a_n and symmetrised by reversal.
    """
    grad = minimal_weak_gradient(graph, f, p, EDGE, exact)
    D = [e for e in graph.edge_ids if grad[e] > 0]
    parts = []
    for e in D:
        fam = (families or {}).get(e) or CurveFamily.of_curves([Curve(((e, 1),))])
        sol = mod_p(graph, fam, p, exact=exact)
        if sol.zero:
            raise PlanError(f"edge {e!r} of D lies on no curve family of positive modulus")
        parts.append(dual_plan(sol, graph)[0])
    plan = reverse(combine_plans(parts, graph, p), symmetrize=True) if parts else Plan()
    dis = disintegrate(plan, graph, EDGE)
    s = slopes(graph, f, exact)
    bary = barycenter(plan, graph)
    failures = []
    ac = True
    for e in D:
        if not bary.mass[e] > 0:
            ac = False
            failures.append(f"{e}: no barycenter mass")
    esssup = {}
    identity = True
    for e in D:
        px = dis.conditional.get(e)
        if not px:
            identity = False
            failures.append(f"{e}: no conditional measure")
            continue
        esssup[e] = max(signed_ratio(t, s) for t, m in px.items() if m > 0)
        if esssup[e] != grad[e]:
            identity = False
            failures.append(f"{e}: esssup {esssup[e]} != g_f {grad[e]}")
    return RepresentingPlan(plan, dis, D, grad, esssup, ac, identity, failures)


@dataclass
class ProductiveSet:
    members: set[tuple[str, Traversal]]  # (location, traversal) pairs
    verdicts: dict[str, bool]
    mass: dict[str, float | Fraction]

    @property
    def ok(self) -> bool:
        return all(self.verdicts.values())

    def at(self, x: str) -> list[Traversal]:
        return sorted(t for y, t in self.members if y == x)


def epsilon_productive_set(graph: MetricGraph, f: Mapping[str, float], plan: Plan, eps: float,
                           granularity: str = EDGE, p: float = 2) -> ProductiveSet:
    """Traversals whose signed ratio at x lies in [(1 - eps) g_f(x), g_f(x)].

    At star granularity a traversal sits at both endpoint stars, so membership
    is recorded per location.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if not plan.is_reversal_closed():
        raise PlanError("the plan must be reversal-closed (symmetrise it first)")
    exact = plan.exact
    s = slopes(graph, f, exact)
    grad = minimal_weak_gradient(graph, f, p, granularity, exact)
    dis = disintegrate(plan, graph, granularity)
    lo_factor = 1 - (Fraction(eps) if exact else eps)
    members: set[tuple[str, Traversal]] = set()
    for x, px in dis.conditional.items():
        gx = grad[x]
        for t in px:
            if lo_factor * gx <= signed_ratio(t, s) <= gx:
                members.add((x, t))
    verdicts, masses = {}, {}
    for x in grad.support():
        m = dis.measure_of(x, [t for y, t in members if y == x]) if x in dis.conditional else 0
        masses[x] = m
        verdicts[x] = m > 0
    return ProductiveSet(members, verdicts, masses)


# ------------------------------------------------------------ falsification

def _edge_gradient(graph: MetricGraph, g: Mapping[str, float], granularity: str, exact: bool):
    if granularity == EDGE:
        return {e: _val(g[e], exact) for e in graph.edge_ids}
    half = Fraction(1, 2) if exact else 0.5
    return {e: (_val(g[x.u], exact) + _val(g[x.v], exact)) * half for e, x in graph.edges.items()}


@dataclass
class ViolationSearch:
    plan: Plan | None
    violators: list[Curve]
    null_violators: list[Curve]  # violators meeting a null edge: a zero-modulus family
    examined: int
    exhausted: bool


def search_violations(graph: MetricGraph, f: Mapping[str, float], g: Mapping[str, float], p: float = 2,
                      granularity: str = EDGE, max_steps: int = VIOLATION_MAX_STEPS,
                      max_curves: int = VIOLATION_MAX_CURVES, exact: bool = False) -> ViolationSearch:
    """Scan simple paths for |f(end) - f(start)| > int_g g ds."""
    ge = _edge_gradient(graph, g, granularity, exact)
    conn = Connector(graph.vertices, graph.vertices, True, max_steps)
    fam = CurveFamily(connector=conn)
    try:
        curves = enumerate_curves(graph, fam, max_curves)
        exhausted = False
    except BudgetExceeded:
        curves = _first_curves(graph, fam, max_curves)
        exhausted = True
    viol, null_viol = [], []
    for c in curves:
        a, b = c.endpoints(graph)
        lhs = abs(_val(f[b], exact) - _val(f[a], exact))
        rhs = sum((ge[e] * _val(graph.length(e), exact) for e, _ in c.steps),
                  Fraction(0) if exact else 0.0)
        if lhs > rhs:
            if any(graph.measure(e) == 0 for e, _ in c.steps):
                null_viol.append(c)
            else:
                viol.append(c)
    plan = None
    if viol:
        sol = mod_p(graph, CurveFamily.of_curves(viol), p)
        plan = dual_plan(sol, graph)[0]
    return ViolationSearch(plan, viol, null_viol, len(curves), exhausted)


def _first_curves(graph, fam, k):
    from .mmspace import iter_curves
    out = []
    for c in iter_curves(graph, fam):
        out.append(c)
        if len(out) >= k:
            break
    return out


def violating_plan(graph: MetricGraph, f: Mapping[str, float], g: Mapping[str, float], p: float = 2,
                   granularity: str = EDGE, max_steps: int = VIOLATION_MAX_STEPS,
                   max_curves: int = VIOLATION_MAX_CURVES, exact: bool = False) -> Plan | None:
    """Dual plan of the positive-modulus violators of the upper-gradient inequality.

    Returns None when no such violator exists among all simple paths; raises
    BudgetExceeded when the budget ran out before any violator was found.
    """
    res = search_violations(graph, f, g, p, granularity, max_steps, max_curves, exact)
    if res.plan is None and res.exhausted:
        raise BudgetExceeded(f"no violator among the first {res.examined} curves; search incomplete",
                             res.examined)
    return res.plan


# ---------------------------------------------------------- Young stability

def young_h(t: float, p: float) -> float:
    q = p / (p - 1)
    return t / p + t ** (-q / p) / q


def young_gap(eps: float, p: float) -> float:
    """min(h(1-eps), h(1+eps)) - 1: how far h rises above its minimum at distance eps."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if not p > 1:
        raise ValueError("p must exceed 1 (the conjugate exponent is undefined at p = 1)")
    return min(young_h(1 - eps, p), young_h(1 + eps, p)) - 1


def young_delta(eps: float, p: float) -> float:
    """delta with: a^p/p + b^q/q <= ab/(1-delta)  implies  |a^(p/q)/b - 1| < eps.

    The hypothesis bounds h(t) - 1 by delta/(1-delta), with t = a^(p/q)/b, so
    delta solves delta/(1-delta) = young_gap(eps, p).  The conclusion only
    degenerates to equality on the ray t = 1 +- eps where h(t) - 1 equals the
    gap exactly.
    """
    m = young_gap(eps, p)
    return m / (1 + m)


def young_implication(a: float, b: float, p: float, eps: float, delta: float) -> bool:
    """False only for a counterexample to the stability implication."""
    q = p / (p - 1)
    if not a ** p / p + b ** q / q <= a * b / (1 - delta):
        return True
    return abs(a ** (p / q) / b - 1) < eps
