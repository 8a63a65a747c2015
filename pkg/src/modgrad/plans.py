"""Finitely supported plans on curves.

A plan is a finite list of (curve, weight) atoms.  With constant-speed
curves, each traversal of an edge e by an atom of weight w carries
speed-weighted mass w * len(e); this mass defines the barycenter and the
disintegration over locations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, NamedTuple

from .mmspace import EDGE, STAR, Curve, MetricGraph, SpaceError
from .modulus import ModulusSolution


class PlanError(ValueError):
    pass


def _exact(x) -> bool:
    return isinstance(x, (Fraction, int)) and not isinstance(x, bool)


class Plan:
    """Finite nonnegative measure on curves with distinct atoms."""

    def __init__(self, atoms: Iterable[tuple[Curve, float | Fraction]] = ()):
        merged: dict[Curve, float | Fraction] = {}
        order: list[Curve] = []
        for c, w in atoms:
            if not w > 0:
                raise PlanError(f"atom weights must be positive, got {w!r}")
            if c in merged:
                raise PlanError("repeated curve in plan; use Plan.merged")
            merged[c] = w
            order.append(c)
        self.atoms: tuple[tuple[Curve, float | Fraction], ...] = tuple((c, merged[c]) for c in order)

    @classmethod
    def merged(cls, atoms: Iterable[tuple[Curve, float | Fraction]]) -> "Plan":
        acc: dict[Curve, float | Fraction] = {}
        for c, w in atoms:
            acc[c] = acc[c] + w if c in acc else w
        return cls((c, w) for c, w in acc.items() if w > 0)

    def __len__(self):
        return len(self.atoms)

    def __iter__(self):
        return iter(self.atoms)

    def __eq__(self, other):
        return isinstance(other, Plan) and dict(self.atoms) == dict(other.atoms)

    def __repr__(self):
        return f"Plan({len(self.atoms)} atoms, mass={float(self.mass()):.6g})"

    @property
    def exact(self) -> bool:
        return all(_exact(w) for _, w in self.atoms)

    def mass(self):
        if self.exact:
            return sum((w for _, w in self.atoms), Fraction(0))
        return math.fsum(float(w) for _, w in self.atoms)

    def weight(self, c: Curve):
        return dict(self.atoms).get(c, 0)

    def curves(self) -> list[Curve]:
        return [c for c, _ in self.atoms]

    def scaled(self, factor) -> "Plan":
        return Plan((c, w * factor) for c, w in self.atoms)

    def is_reversal_closed(self) -> bool:
        d = dict(self.atoms)
        return all(d.get(c.reversed()) == w for c, w in self.atoms)

    def speed_mass(self, graph: MetricGraph):
        """Total mass of |g'| dt d(plan), i.e. sum of w * Len."""
        if self.exact:
            return sum((w * c.length(graph, exact=True) for c, w in self.atoms), Fraction(0))
        return math.fsum(float(w) * c.length(graph) for c, w in self.atoms)

    def to_json(self) -> dict:
        return {"atoms": [{"curve": c.to_json(), "w": float(w)} for c, w in self.atoms]}

    @classmethod
    def from_json(cls, doc, graph: MetricGraph) -> "Plan":
        try:
            return cls((Curve.of(graph, [tuple(s) for s in a["curve"]]), float(a["w"]))
                       for a in doc["atoms"])
        except (KeyError, TypeError) as exc:
            raise SpaceError(f"malformed plan document: {exc}") from None


# ----------------------------------------------------------------- barycenter

@dataclass
class Barycenter:
    mass: dict[str, float | Fraction]
    density: dict[str, float | Fraction]  # only on edges of positive measure
    absolutely_continuous: bool

    def q_norm(self, graph: MetricGraph, q: float) -> float | Fraction:
        """L^q(mu) norm of the density; q = inf gives the max."""
        vals = [(graph.measure(e), d) for e, d in self.density.items()]
        if math.isinf(q):
            return max((d for _, d in vals), default=0)
        if q == 1:
            return sum((Fraction(s) * d if _exact(d) else s * d for s, d in vals), 0)
        return math.fsum(s * float(d) ** q for s, d in vals) ** (1.0 / q)


def barycenter(plan: Plan, graph: MetricGraph) -> Barycenter:
    exact = plan.exact
    zero = Fraction(0) if exact else 0.0
    mass = {e: zero for e in graph.edge_ids}
    for c, w in plan.atoms:
        for e, _ in c.steps:
            ln = Fraction(graph.length(e)) if exact else graph.length(e)
            mass[e] += w * ln
    density = {}
    ac = True
    for e, m in mass.items():
        s = graph.measure(e)
        if s > 0:
            density[e] = m / (Fraction(s) if exact else s)
        elif m > 0:
            ac = False
    return Barycenter(mass, density, ac)


def conjugate(p: float) -> float:
    return math.inf if p == 1 else p / (p - 1)


# ---------------------------------------------------------------- dual plans

@dataclass
class QCertificate:
    q: float
    norm: float | Fraction
    absolutely_continuous: bool
    kkt_residual: float | Fraction
    lagrange_mass: float | Fraction


def dual_plan(sol: ModulusSolution, graph: MetricGraph) -> tuple[Plan, QCertificate]:
    """Normalised multipliers of a modulus solution, with their q-certificate.

    The barycenter density equals p * rho^(p-1) / sum(lambda) on every edge of
    positive measure (for p = 1 it is bounded by sigma / sum(lambda) there).
    """
    if sol.zero or sol.value == 0:
        raise PlanError("zero modulus: the family carries no dual plan")
    total = sum((l for _, l in sol.active), Fraction(0) if sol.exact else 0.0)
    if not total > 0:
        raise PlanError("no positive multipliers")
    plan = Plan((c, l / total) for c, l in sol.active if l > 0)
    bary = barycenter(plan, graph)
    p = sol.p
    q = conjugate(p)
    resid = Fraction(0) if sol.exact else 0.0
    for e, d in bary.density.items():
        r = sol.density[e]
        if p == 1:
            # stationarity is an inequality: lambda-usage <= sigma, equality where rho > 0
            over = d * total - 1
            gap = max(over, 0) if r == 0 else abs(over)
        elif p == 2:
            gap = abs(d * total - 2 * r)
        else:
            gap = abs(float(d) * float(total) - p * float(r) ** (p - 1))
        resid = max(resid, gap)
    return plan, QCertificate(q, bary.q_norm(graph, q), bary.absolutely_continuous, resid, total)


# ----------------------------------------------------------- combine, reverse

def _upper_rational(x: float) -> Fraction:
    return Fraction(math.nextafter(math.nextafter(float(x), math.inf), math.inf))


def normaliser(plan: Plan, graph: MetricGraph, p: float):
    """1 + mass + ||d plan#/d mu||_q + speed-weighted mass."""
    q = conjugate(p)
    norm = barycenter(plan, graph).q_norm(graph, q)
    if plan.exact and not _exact(norm):
        norm = _upper_rational(norm)  # any upper bound keeps the tail summable
    return 1 + plan.mass() + norm + plan.speed_mass(graph)


def combine_plans(plans: list[Plan], graph: MetricGraph, p: float) -> Plan:
    """sum_n 2^-n a_n^-1 plan_n with a_n from ``normaliser``; atoms merged by curve."""
    atoms = []
    for n, pl in enumerate(plans, start=1):
        if not barycenter(pl, graph).absolutely_continuous:
            raise PlanError(f"plan {n} charges an edge of zero measure")
        a = normaliser(pl, graph, p)
        f = Fraction(1, 2 ** n) / a if pl.exact else 2.0 ** -n / float(a)
        atoms += [(c, w * f) for c, w in pl.atoms]
    return Plan.merged(atoms)


def reverse(plan: Plan, symmetrize: bool = False) -> Plan:
    rev = [(c.reversed(), w) for c, w in plan.atoms]
    if symmetrize:
        return Plan.merged(list(plan.atoms) + rev)
    return Plan.merged(rev)


# ------------------------------------------------------------- disintegration

class Traversal(NamedTuple):
    atom: int
    step: int
    edge: str
    orientation: int


@dataclass
class Disintegration:
    granularity: str
    reference: dict[str, float | Fraction]  # e_* pi per location
    conditional: dict[str, dict[Traversal, float | Fraction]]  # pi_x
    plan: Plan = field(repr=False, default=None)

    def support(self, x: str) -> list[Traversal]:
        return list(self.conditional.get(x, {}))

    def measure_of(self, x: str, traversals) -> float | Fraction:
        px = self.conditional.get(x, {})
        chosen = set(traversals)
        vals = [m for t, m in px.items() if t in chosen]
        return sum(vals, Fraction(0)) if all(_exact(v) for v in vals) else math.fsum(vals)

    def total(self, traversals) -> float | Fraction:
        """Reconstruct pi(B) by integrating pi_x(B) against e_* pi."""
        vals = [self.reference[x] * self.measure_of(x, traversals) for x in self.reference]
        return sum(vals, Fraction(0)) if all(_exact(v) for v in vals) else math.fsum(vals)


def traversal_mass(plan: Plan, graph: MetricGraph, traversals) -> float | Fraction:
    """pi(B) computed directly from the atoms."""
    exact = plan.exact
    out = Fraction(0) if exact else 0.0
    for t in traversals:
        w = plan.atoms[t.atom][1]
        out += w * (Fraction(graph.length(t.edge)) if exact else graph.length(t.edge))
    return out


def traversals(plan: Plan) -> list[Traversal]:
    return [Traversal(i, k, e, o) for i, (c, _) in enumerate(plan.atoms)
            for k, (e, o) in enumerate(c.steps)]


def disintegrate(plan: Plan, graph: MetricGraph, granularity: str = EDGE) -> Disintegration:
    exact = plan.exact
    raw: dict[str, dict[Traversal, float | Fraction]] = {}
    for t in traversals(plan):
        w = plan.atoms[t.atom][1]
        m = w * (Fraction(graph.length(t.edge)) if exact else graph.length(t.edge))
        if granularity == EDGE:
            targets = [(t.edge, m)]
        elif granularity == STAR:
            e = graph.edges[t.edge]
            targets = [(e.u, m / 2), (e.v, m / 2)]
        else:
            raise SpaceError(f"unknown granularity {granularity!r}")
        for x, mm in targets:
            slot = raw.setdefault(x, {})
            slot[t] = slot.get(t, 0) + mm
    reference, conditional = {}, {}
    for x in sorted(raw):
        vals = raw[x]
        tot = sum(vals.values(), Fraction(0)) if exact else math.fsum(vals.values())
        if tot > 0:
            reference[x] = tot
            conditional[x] = {t: m / tot for t, m in vals.items()}
    return Disintegration(granularity, reference, conditional, plan)
