"""Charts, canonical minimal gradients and differentials at star granularity.

For a coordinate map phi: V -> R^N each edge e at a star x has a direction
w_e = (phi(v) - phi(u)) / len(e).  The canonical minimal gradient at x is the
polyhedral seminorm Phi^x(xi) = max |xi . w_e| over the positive-measure
edges at x (all edges for the Cheeger structure).  A chart is a location set
where this seminorm is a norm, i.e. where the directions span R^N.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from . import rational
from .mmspace import (Curve, CurveFamily, MetricGraph, ParseError, SpaceError, save_space,
                      space_from_obj)
from .modulus import mod_zero_check
from .plans import Plan

P_STRUCTURE = "p"
CHEEGER = "cheeger"


def _exact_values(values: Mapping) -> bool:
    return all(isinstance(v, (int, Fraction)) and not isinstance(v, bool)
               for vec in values.values() for v in (vec if isinstance(vec, tuple) else (vec,)))


def _num(x, exact):
    return Fraction(x) if exact else float(x)


@dataclass(frozen=True)
class ChartCandidate:
    names: tuple[str, ...]
    values: Mapping[str, tuple]  # vertex -> coordinates

    @classmethod
    def from_components(cls, components: Mapping[str, Mapping[str, float]],
                        names: Sequence[str] | None = None) -> "ChartCandidate":
        names = tuple(names if names is not None else components)
        verts = next(iter(components.values())).keys() if components else ()
        return cls(names, {v: tuple(components[n][v] for n in names) for v in verts})

    @property
    def dim(self) -> int:
        return len(self.names)

    @property
    def exact(self) -> bool:
        return _exact_values(self.values)

    def component(self, k: int) -> dict:
        return {v: c[k] for v, c in self.values.items()}

    def compose(self, xi) -> dict:
        """The function xi . phi."""
        return {v: sum((a * b for a, b in zip(xi, c)), 0) for v, c in self.values.items()}


def edge_support(graph: MetricGraph, x: str, structure: str = P_STRUCTURE,
                 plan: Plan | None = None) -> list[str]:
    edges = graph.incident(x)
    if structure == P_STRUCTURE:
        edges = [e for e in edges if graph.measure(e) > 0]
    elif structure != CHEEGER:
        raise SpaceError(f"unknown structure {structure!r}")
    if plan is not None:
        used = {e for c, _ in plan.atoms for e, _ in c.steps}
        edges = [e for e in edges if e in used]
    return edges


def directions(graph: MetricGraph, phi: ChartCandidate, edges: Sequence[str], exact: bool):
    out = []
    for eid in edges:
        e = graph.edges[eid]
        ln = _num(e.length, exact)
        out.append(tuple((_num(b, exact) - _num(a, exact)) / ln
                         for a, b in zip(phi.values[e.u], phi.values[e.v])))
    return out


@dataclass
class CanonicalGradient:
    structure: str
    edges: dict[str, list[str]]
    W: dict[str, list[tuple]]
    exact: bool

    def __call__(self, x: str, xi) -> float | Fraction:
        return seminorm(self.W[x], xi)

    def lipschitz_bound(self, x: str) -> float:
        """Constant L with |Phi^x(xi) - Phi^x(zeta)| <= L |xi - zeta|_2."""
        if not self.W[x]:
            return 0.0
        n = len(self.W[x][0])
        return math.fsum(max(abs(float(w[k])) for w in self.W[x]) for k in range(n))


def seminorm(W, xi):
    if not W:
        return Fraction(0) if isinstance(xi[0], Fraction) else 0.0
    return max(abs(sum((a * b for a, b in zip(w, xi)), 0)) for w in W)


def canonical_gradient(graph: MetricGraph, phi: ChartCandidate, plan: Plan | None = None,
                       structure: str = P_STRUCTURE, locations: Sequence[str] | None = None) -> CanonicalGradient:
    exact = phi.exact
    locs = graph.vertices if locations is None else locations
    edges = {x: edge_support(graph, x, structure, plan) for x in locs}
    W = {x: directions(graph, phi, edges[x], exact) for x in locs}
    return CanonicalGradient(structure, edges, W, exact)


# ----------------------------------------------------------- independence

def unit_ball_vertices(W, n: int) -> list[np.ndarray]:
    """Vertices of {xi : |xi . w| <= 1 for w in W}; assumes rank(W) = n."""
    rows = []
    for w in W:
        w = tuple(float(a) for a in w)
        if any(w) and not any(np.allclose(w, r) or np.allclose(w, tuple(-a for a in r)) for r in rows):
            rows.append(w)
    A = np.array(rows)
    verts = []
    for idx in itertools.combinations(range(len(rows)), n):
        M = A[list(idx)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        for signs in itertools.product((1.0, -1.0), repeat=n):
            xi = np.linalg.solve(M, np.array(signs))
            if np.max(np.abs(A @ xi)) <= 1 + 1e-9:
                if not any(np.allclose(xi, v, atol=1e-12) for v in verts):
                    verts.append(xi)
    return verts


def direction_rank(W) -> int:
    return rational.rank(W) if W else 0


def independence_index(graph: MetricGraph, phi: ChartCandidate, structure: str = P_STRUCTURE,
                       locations: Sequence[str] | None = None) -> dict[str, float]:
    """min over unit xi of Phi^x(xi); exact zero when the directions do not span."""
    if phi.dim < 1:
        raise ValueError("independence needs N >= 1")
    cg = canonical_gradient(graph, phi, None, structure, locations)
    out = {}
    for x, W in cg.W.items():
        if direction_rank(W) < phi.dim:
            out[x] = 0.0
            continue
        verts = unit_ball_vertices(W, phi.dim)
        out[x] = 1.0 / math.sqrt(max(float(v @ v) for v in verts))
    return out


def gamma_plus(graph: MetricGraph, U) -> CurveFamily:
    """Single-edge curves through the stars of U.

    Every curve spending positive length in U contains one of them, so this
    subfamily has the same modulus as the whole family.
    """
    edges = sorted({e for x in U for e in graph.incident(x)})
    return CurveFamily.of_curves(Curve(((e, 1),)) for e in edges)


def zero_chart_check(graph: MetricGraph, U) -> bool:
    """(U, 0) is a 0-dimensional chart iff every edge meeting U has zero measure."""
    result = all(graph.measure(e) == 0 for x in U for e in graph.incident(x))
    fam = gamma_plus(graph, U)
    if fam.explicit:
        assert result == mod_zero_check(graph, fam).zero
    return result


# ------------------------------------------------------------------ charts

@dataclass
class Chart:
    U: tuple[str, ...]
    phi: ChartCandidate
    index: dict[str, float]
    structure: str = P_STRUCTURE
    gradient: CanonicalGradient | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.phi.dim

    def norm(self, x: str, xi):
        if self.dim == 0:
            return 0
        return self.gradient(x, xi)

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "components": list(self.phi.names),
            "structure": self.structure,
            "U": list(self.U),
            "phi": {v: [float(c) for c in self.phi.values[v]] for v in sorted(self.phi.values)},
            "W": {x: [[float(a) for a in w] for w in self.gradient.W[x]] for x in self.U} if self.dim else {},
            "I": {x: self.index[x] for x in self.U},
        }


def make_chart(graph: MetricGraph, phi: ChartCandidate, U: Sequence[str] | None = None,
               structure: str = P_STRUCTURE) -> Chart:
    """Chart on U (default: every star of positive measure where phi is independent)."""
    if phi.dim == 0:
        U = tuple(U if U is not None else graph.vertices)
        return Chart(U, phi, {x: 0.0 for x in U}, structure)
    cand = [x for x in graph.vertices if graph.star_measure(x) > 0] if U is None else list(U)
    I = independence_index(graph, phi, structure, cand)
    if U is None:
        U = [x for x in cand if I[x] > 0]
    else:
        bad = [x for x in U if not I[x] > 0]
        if bad:
            raise SpaceError(f"phi is not independent at {bad[:5]}")
    U = tuple(U)
    return Chart(U, phi, {x: I[x] for x in U}, structure,
                 canonical_gradient(graph, phi, None, structure, U))


@dataclass
class Atlas:
    charts: list[Chart]
    p: float
    structure: str = P_STRUCTURE
    ceiling: dict[str, int] = field(default_factory=dict)
    achieved: dict[str, int] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    pool: dict[str, dict] = field(default_factory=dict, repr=False)

    @property
    def dims(self) -> list[int]:
        return [c.dim for c in self.charts]

    def chart_at(self, x: str) -> tuple[int, Chart] | None:
        for i, c in enumerate(self.charts):
            if x in c.U:
                return i, c
        return None

    def locations(self) -> list[str]:
        seen = []
        for c in self.charts:
            seen += [x for x in c.U if x not in seen]
        return seen

    def to_json(self) -> dict:
        return {"p": self.p, "structure": self.structure, "dims": self.dims,
                "charts": [c.to_json() for c in self.charts],
                "ceiling": self.ceiling, "achieved": self.achieved, "warnings": self.warnings}


def coordinate_pool(graph: MetricGraph) -> dict[str, dict[str, float]]:
    if not graph.coords:
        return {}
    n = min(len(c) for c in graph.coords.values())
    names = "xyzw"[:n] if n <= 4 else [f"x{k}" for k in range(n)]
    return {name: {v: graph.coords[v][k] for v in graph.vertices} for k, name in enumerate(names)}


def discrete_ceiling(graph: MetricGraph, x: str, structure: str = P_STRUCTURE) -> int:
    """Largest rank any vertex map can realise at x: distinct neighbours through admissible edges."""
    return len({graph.edges[e].other(x) for e in edge_support(graph, x, structure)})


def build_atlas(graph: MetricGraph, p: float = 2, pool: Mapping[str, Mapping[str, float]] | None = None,
                structure: str = P_STRUCTURE) -> Atlas:
    """Greedy atlas in descending dimension over combinations of pool functions.

    Maximality is relative to the pool: a location is carved at the largest N
    for which some N-subset of the pool spans its directions.
    """
    pool = dict(pool) if pool else coordinate_pool(graph)
    if not pool:
        raise ValueError("empty candidate pool and no generator coordinates")
    names = list(pool)
    if structure == P_STRUCTURE:
        live = [x for x in graph.vertices if graph.star_measure(x) > 0]
    else:
        live = [x for x in graph.vertices if graph.incident(x)]
    dead = [x for x in graph.vertices if x not in live]
    ceiling = {x: discrete_ceiling(graph, x, structure) for x in graph.vertices}
    remaining = list(live)
    charts, achieved, warnings = [], {}, []
    rank_cache: dict[tuple, dict[str, int]] = {}

    def ranks(combo):
        if combo not in rank_cache:
            phi = ChartCandidate.from_components(pool, combo)
            cg = canonical_gradient(graph, phi, None, structure, live)
            rank_cache[combo] = {x: direction_rank(cg.W[x]) for x in live}
        return rank_cache[combo]

    top = min(len(names), max((ceiling[x] for x in live), default=0))
    while remaining:
        best = None
        for n in range(top, 0, -1):
            for combo in itertools.combinations(names, n):
                r = ranks(combo)
                cover = [x for x in remaining if r[x] == n]
                if cover and (best is None or len(cover) > len(best[1])):
                    best = (combo, cover)
            if best is not None:
                break
        if best is None:
            for x in remaining:
                achieved[x] = 0
                warnings.append(f"{x}: pool reaches dimension 0, ceiling {ceiling[x]}")
            break
        combo, cover = best
        phi = ChartCandidate.from_components(pool, combo)
        charts.append(make_chart(graph, phi, cover, structure))
        for x in cover:
            achieved[x] = len(combo)
        remaining = [x for x in remaining if x not in set(cover)]
    if dead:
        assert zero_chart_check(graph, dead) or structure != P_STRUCTURE
        charts.append(make_chart(graph, ChartCandidate((), {v: () for v in graph.vertices}), dead, structure))
        for x in dead:
            achieved[x] = 0
    for x in live:
        if achieved.get(x, 0) < ceiling[x]:
            warnings.append(f"{x}: achieved {achieved.get(x, 0)} below discrete ceiling {ceiling[x]}")
    return Atlas(charts, p, structure, ceiling, achieved, warnings, pool)


# ----------------------------------------------------------- differentials

def chebyshev(W, s) -> tuple[list[Fraction], Fraction]:
    """Lexicographically least minimiser of max_e |xi . w_e - s_e|, exactly."""
    W = rational.as_fraction_matrix(W)
    s = [Fraction(v) for v in s]
    m, n = len(W), len(W[0])
    exact = rational.solve(W, s)
    if exact is not None:
        return exact, Fraction(0)
    # variables: xi+ (n), xi- (n), t, slacks (2m)
    nv = 2 * n + 1 + 2 * m
    A, b = [], []
    for i in range(m):
        row = W[i] + [-a for a in W[i]] + [Fraction(-1)] + [Fraction(int(k == i)) for k in range(2 * m)]
        A.append(row)
        b.append(s[i])
        row = [-a for a in W[i]] + W[i] + [Fraction(-1)] + [Fraction(int(k == m + i)) for k in range(2 * m)]
        A.append(row)
        b.append(-s[i])
    c = [Fraction(0)] * nv
    c[2 * n] = Fraction(1)
    x, t = rational.simplex(c, A, b)
    A.append(c)
    b.append(t)
    for k in range(n):
        obj = [Fraction(0)] * nv
        obj[k], obj[n + k] = Fraction(1), Fraction(-1)
        x, val = rational.simplex(obj, A, b)
        A.append(obj)
        b.append(val)
    return [x[k] - x[n + k] for k in range(n)], t


@dataclass
class Differential:
    values: dict[str, tuple]
    residual: dict[str, float | Fraction]
    norm: dict[str, float | Fraction]  # |d_x f|_x
    gradient: dict[str, float | Fraction]  # g_f(x) at star granularity

    @property
    def exact_locations(self) -> list[str]:
        return [x for x, r in self.residual.items() if r == 0]

    def __getitem__(self, x):
        return self.values[x]


def _slopes_at(graph, f, edges, exact):
    return [(_num(f[graph.edges[e].v], exact) - _num(f[graph.edges[e].u], exact)) / _num(graph.length(e), exact)
            for e in edges]


def differential(graph: MetricGraph, f: Mapping[str, float], chart: Chart,
                 exact: bool | None = None) -> Differential:
    """Chebyshev differential of f in the chart, with its residual per location."""
    if exact is None:
        exact = chart.phi.exact and _exact_values({k: (v,) for k, v in f.items()})
    vals, res, nrm, grad = {}, {}, {}, {}
    for x in chart.U:
        edges = chart.gradient.edges[x] if chart.dim else edge_support(graph, x, chart.structure)
        s = _slopes_at(graph, f, edges, exact)
        g = max((abs(v) for v in s), default=_num(0, exact))
        if chart.dim == 0:
            vals[x], res[x], nrm[x], grad[x] = (), g, _num(0, exact), g
            continue
        W = chart.gradient.W[x]
        xi, t = chebyshev(W, s)
        if not exact:
            xi, t = [float(a) for a in xi], float(t)
        vals[x] = tuple(xi)
        res[x] = t
        nrm[x] = seminorm(W if exact else [tuple(float(a) for a in w) for w in W], xi)
        grad[x] = g
    return Differential(vals, res, nrm, grad)


# --------------------------------------------------------------- calculus

@dataclass
class CalculusReport:
    leibniz: dict[str, dict]
    locality: dict[str, bool]
    chain: dict[str, dict] = field(default_factory=dict)
    pushforward_constant: float | None = None

    @property
    def ok(self) -> bool:
        return (all(d["within_bound"] for d in self.leibniz.values())
                and all(self.locality.values())
                and all(d["within_bound"] for d in self.chain.values()))


class MeasureCompatibilityError(ValueError):
    pass


def _map_edges(g1: MetricGraph, g2: MetricGraph, F: Mapping[str, str]):
    """Image edge of every edge of g1 under the vertex map F (None if collapsed)."""
    out = {}
    for eid, e in g1.edges.items():
        a, b = F[e.u], F[e.v]
        if a == b:
            out[eid] = None
            continue
        img = g2.edge_between(a, b)
        if img is None:
            raise MeasureCompatibilityError(f"edge {eid!r} maps to the non-edge ({a!r}, {b!r})")
        out[eid] = img
    return out


def pushforward_constant(g1: MetricGraph, g2: MetricGraph, F: Mapping[str, str]) -> float:
    """Smallest C with F_* mu <= C nu, by counting edge images."""
    img = _map_edges(g1, g2, F)
    acc: dict[str, float] = {}
    for e, t in img.items():
        if t is not None:
            acc[t] = acc.get(t, 0.0) + g1.measure(e)
    C = 0.0
    for t, m in acc.items():
        if m == 0:
            continue
        if g2.measure(t) == 0:
            src = sorted(e for e, tt in img.items() if tt == t and g1.measure(e) > 0)
            raise MeasureCompatibilityError(f"edge {src[0]!r} pushes mass onto null edge {t!r}")
        C = max(C, m / g2.measure(t))
    return C


def _max_abs(v):
    return max((abs(a) for a in v), default=0)


def verify_calculus(graph: MetricGraph, chart: Chart, f: Mapping, g: Mapping,
                    mapping: Mapping[str, str] | None = None, target: MetricGraph | None = None,
                    target_chart: Chart | None = None, h: Mapping | None = None) -> CalculusReport:
    """Leibniz rule, locality and (optionally) the chain rule through a graph map."""
    exact = chart.phi.exact and all(isinstance(v, (int, Fraction)) for v in list(f.values()) + list(g.values()))
    fg = {v: _num(f[v], exact) * _num(g[v], exact) for v in graph.vertices}
    df = differential(graph, f, chart, exact)
    dg = differential(graph, g, chart, exact)
    dfg = differential(graph, fg, chart, exact)
    leib = {}
    for x in chart.U:
        fx, gx = _num(f[x], exact), _num(g[x], exact)
        combo = tuple(fx * b + gx * a for a, b in zip(df[x], dg[x]))
        defect = tuple(a - b for a, b in zip(dfg[x], combo))
        edges = chart.gradient.edges[x] if chart.dim else []
        # second-order term of the discrete product rule
        quad = max((abs((_num(f[graph.edges[e].other(x)], exact) - fx)
                        * (_num(g[graph.edges[e].other(x)], exact) - gx)) / _num(graph.length(e), exact)
                    for e in edges), default=0)
        bound = dfg.residual[x] + abs(fx) * dg.residual[x] + abs(gx) * df.residual[x] + quad
        size = chart.norm(x, defect) if chart.dim else 0
        leib[x] = {"defect": _max_abs(defect), "norm": size, "bound": bound,
                   "within_bound": size <= bound + (0 if exact else 1e-12)}
    loc = {}
    for x in chart.U:
        star = {x} | {graph.edges[e].other(x) for e in graph.incident(x)}
        if all(f[v] == g[v] for v in star):
            loc[x] = df[x] == dg[x]
    rep = CalculusReport(leib, loc)
    if mapping is not None:
        rep.pushforward_constant = pushforward_constant(graph, target, mapping)
        hF = {v: h[mapping[v]] for v in graph.vertices}
        dh_target = differential(target, h, target_chart, exact)
        dhF = differential(graph, hF, chart, exact)
        comps = [differential(graph, {v: target_chart.phi.values[mapping[v]][k] for v in graph.vertices},
                              chart, exact) for k in range(target_chart.dim)]
        for x in chart.U:
            y = mapping[x]
            if y not in dh_target.values:
                continue
            DF = [comps[k][x] for k in range(target_chart.dim)]  # M x N
            pulled = tuple(sum((dh_target[y][k] * DF[k][j] for k in range(target_chart.dim)), 0)
                           for j in range(chart.dim))
            diff = tuple(a - b for a, b in zip(dhF[x], pulled))
            rr = dhF.residual[x] + dh_target.residual[y] + sum((c.residual[x] for c in comps), 0)
            rep.chain[x] = {"defect": _max_abs(diff), "residuals": rr,
                            "within_bound": _max_abs(diff) == 0 if rr == 0 and exact
                            else _max_abs(diff) <= 1e-9 if rr == 0 else True}
    return rep


# ---------------------------------------------------------------------- io

def atlas_to_json(atlas: Atlas, graph: MetricGraph) -> dict:
    """Atlas document with the space embedded, so it can be reloaded alone."""
    doc = atlas.to_json()
    doc["space"] = json.loads(save_space(graph))
    doc["pool"] = {n: {v: float(c) for v, c in sorted(vals.items())} for n, vals in sorted(atlas.pool.items())}
    return doc


def atlas_from_json(doc) -> tuple[MetricGraph, Atlas]:
    if not isinstance(doc, dict) or "space" not in doc or "charts" not in doc:
        raise ParseError("$", "atlas document needs 'space' and 'charts'")
    graph = space_from_obj(doc["space"])
    charts = []
    for k, c in enumerate(doc["charts"]):
        where = f"$.charts[{k}]"
        try:
            names = tuple(c["components"])
            U = tuple(c["U"])
            vals = {v: tuple(Fraction(float(a)) for a in c["phi"][v]) for v in graph.vertices} if names \
                else {v: () for v in graph.vertices}
            structure = c.get("structure", P_STRUCTURE)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(where, f"malformed chart: {exc}") from None
        missing = [x for x in U if x not in graph.adj]
        if missing:
            raise ParseError(f"{where}.U", f"unknown location {missing[0]!r}")
        charts.append(make_chart(graph, ChartCandidate(names, vals), U, structure))
    pool = {n: {v: Fraction(float(a)) for v, a in vals.items()} for n, vals in doc.get("pool", {}).items()}
    atlas = Atlas(charts, float(doc.get("p", 2)), doc.get("structure", P_STRUCTURE),
                  doc.get("ceiling", {}), doc.get("achieved", {}), list(doc.get("warnings", [])), pool)
    return graph, atlas
