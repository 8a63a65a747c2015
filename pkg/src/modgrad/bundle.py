"""Cotangent bundle over an atlas: transitions, sections, p/q and Cheeger comparisons.

Convention: a covector in chart j is a coefficient vector xi meaning
sum_k xi_k d phi^j_k.  With D_ij the matrix whose rows are the chart-i
differentials of the chart-j coordinates, the same covector has chart-i
coefficients xi @ D_ij.  Consequently D_ik = D_jk @ D_ij on triple overlaps.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

from . import rational
from .charts import (CHEEGER, P_STRUCTURE, Atlas, Chart, ChartCandidate, build_atlas,
                     differential, edge_support, make_chart, seminorm, unit_ball_vertices)
from .mmspace import MetricGraph, SpaceError


class SectionError(ValueError):
    pass


def _vecmat(xi, M):
    if not M:
        return ()
    return tuple(sum((xi[k] * M[k][j] for k in range(len(M))), 0) for j in range(len(M[0])))


def _matmul(A, B):
    return [list(_vecmat(row, B)) for row in A]


def _maxdiff(A, B) -> float:
    return max((abs(float(a) - float(b)) for ra, rb in zip(A, B) for a, b in zip(ra, rb)), default=0.0)


def coordinate_matrix(graph: MetricGraph, source: Chart, target_phi: ChartCandidate, exact: bool | None = None):
    """Rows: differentials of the target coordinates in the source chart, per location."""
    diffs = [differential(graph, target_phi.component(k), source, exact) for k in range(target_phi.dim)]
    mats, resid = {}, {}
    for x in source.U:
        mats[x] = [list(d[x]) for d in diffs]
        resid[x] = max((d.residual[x] for d in diffs), default=0)
    return mats, resid


def _same_norm(graph, x, M, src: Chart, dst: Chart):
    """Exact certificate that xi -> xi @ M carries |.|_dst onto |.|_src at x.

    M maps every source direction to the matching destination direction, so
    the two maxima range over identical sets of numbers.
    """
    if src.gradient.edges[x] != dst.gradient.edges[x]:
        return None
    for ws, wd in zip(src.gradient.W[x], dst.gradient.W[x]):
        img = tuple(sum((M[k][j] * ws[j] for j in range(len(ws))), 0) for k in range(len(M)))
        if any(a != b for a, b in zip(img, wd)):
            return False
    return True


def _vertex_norm_check(x, M, src: Chart, dst: Chart, tol=1e-9) -> tuple[bool, bool]:
    """(1-Lipschitz, isometric) on the vertices of the destination unit ball."""
    Wd = [tuple(float(a) for a in w) for w in dst.gradient.W[x]]
    Ws = [tuple(float(a) for a in w) for w in src.gradient.W[x]]
    Mf = [[float(a) for a in r] for r in M]
    vals = [seminorm(Ws, _vecmat(tuple(v), Mf)) for v in unit_ball_vertices(Wd, dst.dim)]
    return all(v <= 1 + tol for v in vals), all(abs(v - 1) <= tol for v in vals)


# --------------------------------------------------------------- transitions

@dataclass
class TransitionMap:
    i: int
    j: int
    matrices: dict[str, list[list]]  # x -> D_ij (rows: d^i phi^j_k)
    residual: dict[str, float | Fraction]
    isometry: dict[str, bool]
    approximate: list[str] = field(default_factory=list)

    def apply(self, x: str, xi) -> tuple:
        """Chart-j coefficients to chart-i coefficients."""
        return _vecmat(tuple(xi), self.matrices[x])


@dataclass
class CocycleReport:
    triples: dict[tuple[int, int, int], dict[str, float]]

    @property
    def max_error(self) -> float:
        return max((e for d in self.triples.values() for e in d.values()), default=0.0)


@dataclass
class TransitionBundle:
    maps: dict[tuple[int, int], TransitionMap]
    cocycle: CocycleReport

    def __getitem__(self, key):
        return self.maps[key]


def transition(graph: MetricGraph, atlas: Atlas, i: int, j: int) -> TransitionMap:
    ci, cj = atlas.charts[i], atlas.charts[j]
    overlap = [x for x in ci.U if x in set(cj.U) and graph.star_measure(x) > 0]
    if overlap and ci.dim != cj.dim:
        raise SpaceError(f"charts {i} and {j} overlap at {overlap[0]!r} with dimensions {ci.dim} != {cj.dim}")
    sub = Chart(tuple(overlap), ci.phi, {x: ci.index[x] for x in overlap}, ci.structure, ci.gradient)
    mats, resid = coordinate_matrix(graph, sub, cj.phi)
    iso, approx = {}, []
    for x in overlap:
        if resid[x] != 0:
            approx.append(x)
            continue
        cert = _same_norm(graph, x, mats[x], ci, cj)
        if cert is None:
            lip, eq = _vertex_norm_check(x, mats[x], ci, cj)
            cert = eq
        iso[x] = bool(cert)
    return TransitionMap(i, j, mats, resid, iso, approx)


def transitions(graph: MetricGraph, atlas: Atlas) -> TransitionBundle:
    """All transition maps between overlapping charts, with the cocycle check."""
    n = len(atlas.charts)
    maps = {}
    for i, j in itertools.product(range(n), repeat=2):
        if set(atlas.charts[i].U) & set(atlas.charts[j].U) and atlas.charts[i].dim:
            maps[i, j] = transition(graph, atlas, i, j)
    triples = {}
    for i, j, k in itertools.permutations(range(n), 3):
        if (i, j) in maps and (j, k) in maps and (i, k) in maps:
            common = set(maps[i, j].matrices) & set(maps[j, k].matrices) & set(maps[i, k].matrices)
            errs = {x: _maxdiff(_matmul(maps[j, k].matrices[x], maps[i, j].matrices[x]), maps[i, k].matrices[x])
                    for x in sorted(common)}
            if errs:
                triples[i, j, k] = errs
    return TransitionBundle(maps, CocycleReport(triples))


def reparametrize(graph: MetricGraph, chart: Chart, A, names: Sequence[str] | None = None) -> Chart:
    """The chart with coordinates A @ phi on the same location set."""
    k = len(A)
    names = tuple(names or (f"{chart.phi.names[0]}'{r}" for r in range(k)))
    vals = {v: tuple(sum((A[r][c] * phi[c] for c in range(len(phi))), 0) for r in range(k))
            for v, phi in chart.phi.values.items()}
    return make_chart(graph, ChartCandidate(names, vals), chart.U, chart.structure)


# ------------------------------------------------------------------ sections

@dataclass
class Section:
    atlas: Atlas
    omega: dict[int, dict[str, tuple]]  # chart index -> location -> coefficients
    residual: dict[str, float | Fraction] = field(default_factory=dict)

    def home(self, x: str) -> int:
        for i, c in enumerate(self.atlas.charts):
            if x in c.U and x in self.omega.get(i, {}):
                return i
        raise KeyError(x)

    def locations(self) -> list[str]:
        return self.atlas.locations()

    def pointwise_norm(self, x: str):
        i = self.home(x)
        return self.atlas.charts[i].norm(x, self.omega[i][x])

    @property
    def exact_locations(self) -> list[str]:
        return [x for x, r in self.residual.items() if r == 0]


def check_compatible(graph: MetricGraph, section: Section, bundle: TransitionBundle | None = None,
                     tol: float = 0.0) -> None:
    bundle = bundle or transitions(graph, section.atlas)
    for (i, j), tm in bundle.maps.items():
        for x in tm.matrices:
            if x in section.omega.get(i, {}) and x in section.omega.get(j, {}):
                if x not in tm.isometry:
                    continue  # approximate overlap: no exact claim
                mapped = tm.apply(x, section.omega[j][x])
                if max((abs(a - b) for a, b in zip(mapped, section.omega[i][x])), default=0) > tol:
                    raise SectionError(f"section incompatible between charts {i} and {j} at {x!r}")


def _lp_sum(terms, p):
    """sum mu * n^p, exact when everything is rational and p is an integer."""
    if all(isinstance(m, (int, Fraction)) and isinstance(n, (int, Fraction)) for m, n in terms) \
            and float(p).is_integer():
        return sum((Fraction(m) * Fraction(n) ** int(p) for m, n in terms), Fraction(0))
    return math.fsum(float(m) * float(n) ** p for m, n in terms)


def section_norm(graph: MetricGraph, section: Section, p: float, root: bool = True, check: bool = True):
    """(sum_x mu(x) |omega(x)|_x^p)^(1/p); with root=False the p-th power."""
    if check:
        check_compatible(graph, section)
    terms = [(graph.star_measure(x, exact=True), section.pointwise_norm(x)) for x in section.locations()]
    s = _lp_sum(terms, p)
    return float(s) ** (1.0 / p) if root else s


def lp_decomposition(graph: MetricGraph, section: Section, p: float, levels: int = 8) -> list:
    """p-th power norms over the rings U_j = {I >= 1/j} minus U_{j-1}, plus the I = 0 rest."""
    pieces: list = []
    seen: set[str] = set()
    index = {}
    for c in section.atlas.charts:
        for x in c.U:
            index.setdefault(x, c.index.get(x, 0.0))
    locs = section.locations()
    for j in range(1, levels + 1):
        ring = [x for x in locs if x not in seen and index[x] >= 1.0 / j]
        seen.update(ring)
        pieces.append(_lp_sum([(graph.star_measure(x, exact=True), section.pointwise_norm(x)) for x in ring], p))
    rest = [x for x in locs if x not in seen]
    pieces.append(_lp_sum([(graph.star_measure(x, exact=True), section.pointwise_norm(x)) for x in rest], p))
    return pieces


def differential_section(graph: MetricGraph, f: Mapping[str, float], atlas: Atlas) -> Section:
    omega, resid = {}, {}
    for i, c in enumerate(atlas.charts):
        d = differential(graph, f, c)
        omega[i] = dict(d.values)
        for x in c.U:
            resid[x] = max(resid.get(x, 0), d.residual[x])
    sec = Section(atlas, omega, resid)
    check_compatible(graph, sec)
    return sec


def gradient_norm(graph: MetricGraph, f: Mapping[str, float], p: float, root: bool = True):
    """||g_f||_{L^p} at star granularity."""
    from .gradient import minimal_weak_gradient
    from .mmspace import STAR
    exact = all(isinstance(v, (int, Fraction)) for v in f.values())
    g = minimal_weak_gradient(graph, f, p, STAR, exact)
    s = _lp_sum([(graph.star_measure(x, exact=True), g.values[x]) for x in graph.vertices], p)
    return float(s) ** (1.0 / p) if root else s


@dataclass
class NormIdentity:
    section_norm: float | Fraction  # p-th power, exact locations only
    gradient_norm: float | Fraction
    exact_locations: list[str]
    pointwise: dict[str, bool]

    @property
    def ok(self) -> bool:
        return self.section_norm == self.gradient_norm and all(self.pointwise.values())


def norm_identity(graph: MetricGraph, f: Mapping[str, float], atlas: Atlas, p: float) -> NormIdentity:
    """Compare |df|_x with g_f(x) and their L^p aggregates over exact locations."""
    from .gradient import minimal_weak_gradient
    from .mmspace import STAR
    exact = all(isinstance(v, (int, Fraction)) for v in f.values())
    sec = differential_section(graph, f, atlas)
    g = minimal_weak_gradient(graph, f, p, STAR, exact)
    locs = [x for x in sec.locations() if sec.residual.get(x, 0) == 0]
    pw = {x: sec.pointwise_norm(x) == g.values[x] for x in locs}
    lhs = _lp_sum([(graph.star_measure(x, exact=True), sec.pointwise_norm(x)) for x in locs], p)
    rhs = _lp_sum([(graph.star_measure(x, exact=True), g.values[x]) for x in locs], p)
    return NormIdentity(lhs, rhs, locs, pw)


# ---------------------------------------------------------- p/q comparison

@dataclass
class BundleComparison:
    p: float
    q: float
    matrices: dict[str, list[list]]  # x -> M, rows d^p psi_k of the q-coordinates
    lipschitz: dict[str, bool]
    surjective: dict[str, bool]
    preimages: dict[str, list[tuple]]
    naturality: dict[str, bool] = field(default_factory=dict)
    identity: bool = False

    @property
    def ok(self) -> bool:
        return (all(self.lipschitz.values()) and all(self.surjective.values())
                and all(self.naturality.values()))

    def apply(self, x, xi):
        return _vecmat(tuple(xi), self.matrices[x])


def _chart_map(atlas: Atlas, x: str):
    hit = atlas.chart_at(x)
    return hit[1] if hit else None


def _pool_of(atlas: Atlas) -> dict[str, dict]:
    if atlas.pool:
        return atlas.pool
    pool = {}
    for c in atlas.charts:
        for k, name in enumerate(c.phi.names):
            pool.setdefault(name, c.phi.component(k))
    return pool


def pq_map(graph: MetricGraph, atlas_p: Atlas, atlas_q: Atlas,
           functions: Sequence[Mapping[str, float]] = ()) -> BundleComparison:
    """pi_{p,q}: q-fiber coefficients -> p-fiber coefficients, xi -> xi @ M."""
    p, q = atlas_p.p, atlas_q.p
    if not p <= q:
        raise ValueError("pq_map needs p <= q")
    mats, lip, surj, pre, nat = {}, {}, {}, {}, {}
    identity = True
    for cq in atlas_q.charts:
        for x in cq.U:
            cp = _chart_map(atlas_p, x)
            if cp is None or cp.dim == 0 or cq.dim == 0:
                continue
            one = Chart((x,), cp.phi, {x: cp.index[x]}, cp.structure, cp.gradient)
            M, _ = coordinate_matrix(graph, one, cq.phi)
            M = M[x]
            mats[x] = M
            identity &= cp.phi == cq.phi
            cert = _same_norm(graph, x, M, cp, cq)
            lip[x] = bool(cert) if cert is not None else _vertex_norm_check(x, M, cp, cq)[0]
            # explicit preimage of each basis covector of the p-fiber
            Mt = [[M[k][j] for k in range(len(M))] for j in range(len(M[0]))]
            pre[x] = []
            for j in range(cp.dim):
                e = [Fraction(int(k == j)) for k in range(cp.dim)]
                sol = rational.solve(Mt, e)
                if sol is None:
                    break
                pre[x].append(tuple(sol))
            surj[x] = len(pre[x]) == cp.dim
    for f in functions:
        dq = {}
        for i, c in enumerate(atlas_q.charts):
            if c.dim:
                dq.update(differential(graph, f, c).values)
        dp = {}
        for c in atlas_p.charts:
            if c.dim:
                dp.update(differential(graph, f, c).values)
        for x, M in mats.items():
            img = _vecmat(dq[x], M)
            nat[x] = nat.get(x, True) and all(abs(a - b) <= 1e-12 for a, b in zip(img, dp[x]))
    return BundleComparison(p, q, mats, lip, surj, pre, nat, identity)


def composition_error(p_s: BundleComparison, s_q: BundleComparison, p_q: BundleComparison) -> float:
    """max |M_pq - M_sq @ M_ps| over common locations."""
    common = set(p_s.matrices) & set(s_q.matrices) & set(p_q.matrices)
    return max((_maxdiff(_matmul(s_q.matrices[x], p_s.matrices[x]), p_q.matrices[x]) for x in common),
               default=0.0)


# ------------------------------------------------------------------- Cheeger

def lip(graph: MetricGraph, f: Mapping[str, float], x: str):
    """Pointwise Lipschitz constant: max slope over every incident edge."""
    return max((abs(f[graph.edges[e].other(x)] - f[x]) / graph.length(e) for e in graph.incident(x)),
               default=0)


def left_kernel(M) -> list[tuple[Fraction, ...]]:
    """Basis of {xi : xi @ M = 0}."""
    if not M:
        return []
    n = len(M)
    Mt = rational.as_fraction_matrix([[M[k][j] for k in range(n)] for j in range(len(M[0]))])
    red, piv = rational.row_echelon(Mt)
    free = [c for c in range(n) if c not in piv]
    basis = []
    for fc in free:
        v = [Fraction(0)] * n
        v[fc] = Fraction(1)
        for r, pc in enumerate(piv):
            v[pc] = -red[r][fc]
        basis.append(tuple(v))
    return basis


def min_norm_lift(Wc, M, target) -> Fraction:
    """min |zeta|_C subject to zeta @ M = target, exactly."""
    Wc = rational.as_fraction_matrix(Wc)
    n = len(M)
    k = len(target)
    m = len(Wc)
    # variables zeta+ (n), zeta- (n), t, slacks (2m)
    nv = 2 * n + 1 + 2 * m
    A, b = [], []
    for r in range(m):
        A.append(Wc[r] + [-a for a in Wc[r]] + [Fraction(-1)] + [Fraction(int(s == r)) for s in range(2 * m)])
        b.append(Fraction(0))
        A.append([-a for a in Wc[r]] + Wc[r] + [Fraction(-1)] + [Fraction(int(s == m + r)) for s in range(2 * m)])
        b.append(Fraction(0))
    for j in range(k):
        col = [Fraction(M[i][j]) for i in range(n)]
        A.append(col + [-a for a in col] + [Fraction(0)] * (1 + 2 * m))
        b.append(Fraction(target[j]))
    c = [Fraction(0)] * nv
    c[2 * n] = Fraction(1)
    _, t = rational.simplex(c, A, b)
    return t


@dataclass
class CheegerPoint:
    lip: float | Fraction
    weak: float | Fraction
    verdict: str  # "cheeger" or "gap"
    kernel: list[tuple]
    submetry: bool | None


@dataclass
class CheegerReport:
    points: dict[str, CheegerPoint]

    def gap_locations(self) -> list[str]:
        return [x for x, pt in self.points.items() if pt.verdict == "gap"]

    def kernel_locations(self) -> list[str]:
        return [x for x, pt in self.points.items() if pt.kernel]

    def omega_hypothesis(self, omega: Callable[[str, float], float]) -> dict[str, bool]:
        """Lip f(x) <= omega_x(|Df|_p(x)) per location."""
        return {x: pt.lip <= omega(x, pt.weak) for x, pt in self.points.items()}


def cheeger_compare(graph: MetricGraph, f: Mapping[str, float], atlas: Atlas,
                    cheeger_atlas: Atlas | None = None) -> CheegerReport:
    """Compare Lip f with |Df|_p and witness non-injectivity of pi_{C,p}."""
    from .gradient import minimal_weak_gradient
    from .mmspace import STAR
    exact = all(isinstance(v, (int, Fraction)) for v in f.values())
    g = minimal_weak_gradient(graph, f, atlas.p, STAR, exact)
    cheeger_atlas = cheeger_atlas or build_atlas(graph, atlas.p, _pool_of(atlas), CHEEGER)
    points = {}
    for x in graph.vertices:
        if not graph.incident(x):
            continue
        L = lip(graph, f, x)
        w = g.values[x]
        kernel, sub = [], None
        cc, cp = _chart_map(cheeger_atlas, x), _chart_map(atlas, x)
        if cc is not None and cc.dim:
            if cp is None or cp.dim == 0:
                kernel = [tuple(Fraction(int(i == k)) for i in range(cc.dim)) for k in range(cc.dim)]
            else:
                one = Chart((x,), cp.phi, {x: cp.index[x]}, cp.structure, cp.gradient)
                M, _ = coordinate_matrix(graph, one, cc.phi)
                M = M[x]
                kernel = left_kernel(M)
                Wp = [tuple(float(a) for a in v) for v in cp.gradient.W[x]]
                lifts = [min_norm_lift(cc.gradient.W[x], M, [Fraction(float(a)) for a in v])
                         for v in unit_ball_vertices(Wp, cp.dim)]
                sub = all(abs(float(t) - 1) <= 1e-9 for t in lifts)
        points[x] = CheegerPoint(L, w, "gap" if L > w else "cheeger", kernel, sub)
    return CheegerReport(points)
