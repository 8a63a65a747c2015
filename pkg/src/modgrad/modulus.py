"""p-modulus of curve families by constraint generation.

The program is

    minimise  sum_e sigma(e) rho(e)^p   over rho >= 0
    subject to  sum_{steps of g} rho(e) len(e) >= 1   for every curve g.

Curves are generated lazily: the separation oracle returns the curve with the
smallest line integral (a shortest path under weights rho * len for connector
families, a scan for explicit ones).  For p > 1 the restricted problem is
solved through its smooth concave dual

    G(lam) = sum lam - (p - 1) sum_e sigma_e (u_e / (p sigma_e))^q,   u = N^T lam,

by projected Newton; rho is recovered as (u / (p sigma))^(1/(p-1)).  For p = 1
the restricted problem is an LP.  Edges of zero measure are free: they get the
cap RHO_MAX and every curve through one of them is satisfied at no cost.
"""
from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np
from scipy.optimize import linprog

from . import rational
from .mmspace import (BudgetExceeded, Curve, CurveFamily, MetricGraph, SpaceError,
                      line_integral)

log = logging.getLogger(__name__)

TOL_FEAS = 1e-9
GAP_TARGET = 1e-6
MAX_CONSTRAINTS = 10_000
RHO_MAX = 1e12
EXACT_MAX_CURVES = 200


@dataclass
class ModulusProblem:
    graph: MetricGraph
    family: CurveFamily
    p: float

    def __post_init__(self):
        if not self.p >= 1:
            raise ValueError("the exponent p must be >= 1")


@dataclass
class ModulusSolution:
    value: float | Fraction
    density: dict[str, float | Fraction]
    active: list[tuple[Curve, float | Fraction]]
    p: float
    duality_gap: float | Fraction = 0.0
    dual_value: float | Fraction = 0.0
    kkt_residual: float | Fraction = 0.0
    iterations: int = 0
    exact: bool = False
    zero: bool = False
    empty: bool = False
    witness: object = None
    degenerate_edges: list[str] = field(default_factory=list)

    def multipliers(self) -> dict[Curve, float | Fraction]:
        return dict(self.active)

    def to_json(self) -> dict:
        num = float
        return {
            "p": self.p,
            "value": num(self.value),
            "exact_value": str(self.value) if self.exact else None,
            "density": {k: num(v) for k, v in self.density.items()},
            "active_curves": [{"curve": c.to_json(), "lambda": num(w)} for c, w in self.active],
            "duality_gap": num(self.duality_gap),
            "dual_value": num(self.dual_value),
            "kkt_residual": num(self.kkt_residual),
            "iterations": self.iterations,
            "zero_modulus": self.zero,
            "empty_family": self.empty,
            "degenerate_edges": self.degenerate_edges,
        }


# ------------------------------------------------------------------ separation

class Separator:
    """Minimum line integral over a family, for a nonnegative edge weight."""

    def __init__(self, graph: MetricGraph, family: CurveFamily, max_scan: int = 1_000_000):
        self.graph = graph
        self.family = family
        if family.explicit is not None:
            for c in family.explicit:
                c.validate(graph)
            self.curves = list(family.explicit)
        else:
            self.curves = None
            conn = family.connector
            self.limit = family.step_limit(graph)
            # a hop limit below |V|-1 can bind for simple paths
            self.hop_bounded = (not conn.simple) or self.limit < len(graph.vertices) - 1

    def _edge_weights(self, rho: Mapping[str, float], exact: bool):
        g = self.graph
        if exact:
            return {k: Fraction(rho[k]) * Fraction(g.length(k)) for k in g.edge_ids}
        return {k: rho[k] * g.length(k) for k in g.edge_ids}

    def candidates(self, rho: Mapping[str, float], exact: bool = False) -> list[tuple[object, Curve]]:
        """One minimising curve per source (connector) or every curve (explicit)."""
        if self.curves is not None:
            return [(line_integral(rho, c, self.graph, exact), c) for c in self.curves]
        w = self._edge_weights(rho, exact)
        out = []
        for s in self.family.connector.sources:
            best = (self._hop_paths if self.hop_bounded else self._dijkstra)(s, w, exact)
            if best is not None:
                out.append(best)
        return out

    def minimum(self, rho, exact=False):
        cands = self.candidates(rho, exact)
        if not cands:
            return None
        return min(cands, key=lambda t: t[0])

    def _dijkstra(self, s, w, exact):
        g = self.graph
        conn = self.family.connector
        targets = set(conn.targets)
        stop = (set(conn.sources) | targets) if conn.avoid_terminals else targets
        zero = Fraction(0) if exact else 0.0
        dist = {s: zero}
        pred: dict[str, tuple[str, str, int]] = {}
        heap = [(zero, 0, s)]
        hops = {s: 0}
        done = set()
        best = None
        while heap:
            d, h, v = heapq.heappop(heap)
            if v in done:
                continue
            done.add(v)
            if v != s and v in targets:
                best = (d, v)
                break
            if v != s and v in stop:
                continue
            for x, eid, o in g.adj[v]:
                if math.isinf(w[eid]):
                    continue
                nd = d + w[eid]
                if x not in dist or nd < dist[x] or (nd == dist[x] and h + 1 < hops[x]):
                    if x in done:
                        continue
                    dist[x], hops[x] = nd, h + 1
                    pred[x] = (v, eid, o)
                    heapq.heappush(heap, (nd, h + 1, x))
        if best is None:
            return None
        d, v = best
        steps = []
        while v != s:
            u, eid, o = pred[v]
            steps.append((eid, o))
            v = u
        return d, Curve(tuple(reversed(steps)))

    def _hop_paths(self, s, w, exact):
        """Shortest walk from s with at most ``limit`` steps (layered DP)."""
        g = self.graph
        conn = self.family.connector
        targets = set(conn.targets)
        stop = (set(conn.sources) | targets) if conn.avoid_terminals else targets
        zero = Fraction(0) if exact else 0.0
        layer = {s: (zero, None)}
        layers = [layer]
        best = None
        for k in range(1, self.limit + 1):
            nxt: dict[str, tuple] = {}
            for v, (d, _) in layer.items():
                if v != s and v in stop:
                    continue
                for x, eid, o in g.adj[v]:
                    if math.isinf(w[eid]):
                        continue
                    nd = d + w[eid]
                    if x not in nxt or nd < nxt[x][0]:
                        nxt[x] = (nd, (v, eid, o))
            layers.append(nxt)
            for t in targets:
                if t != s and t in nxt and (best is None or nxt[t][0] < best[0]):
                    best = (nxt[t][0], k, t)
            layer = nxt
        if best is None:
            return None
        d, k, v = best
        steps, verts = [], [v]
        for j in range(k, 0, -1):
            u, eid, o = layers[j][v][1]
            steps.append((eid, o))
            verts.append(u)
            v = u
        steps.reverse()
        verts.reverse()
        if conn.simple:
            steps = _remove_cycles(verts, steps)
        return d, Curve(tuple(steps))


def _remove_cycles(verts, steps):
    """Drop closed sub-walks; weights are nonnegative so the value cannot grow."""
    out_v, out_s = [verts[0]], []
    pos = {verts[0]: 0}
    for v, st in zip(verts[1:], steps):
        if v in pos:
            cut = pos[v]
            for dropped in out_v[cut + 1:]:
                pos.pop(dropped, None)
            out_v = out_v[:cut + 1]
            out_s = out_s[:cut]
        else:
            out_v.append(v)
            out_s.append(st)
            pos[v] = len(out_v) - 1
    return out_s


# --------------------------------------------------------------- admissibility

@dataclass
class Admissibility:
    admissible: bool
    curve: Curve | None
    value: float | Fraction
    deficit: float | Fraction  # max(0, 1 - min line integral)


def is_admissible(graph: MetricGraph, rho: Mapping[str, float], family: CurveFamily,
                  tol: float = 0.0, exact: bool = False) -> Admissibility:
    if any(v < 0 for v in rho.values()):
        raise SpaceError("densities must be nonnegative")
    best = Separator(graph, family).minimum(rho, exact)
    if best is None:
        return Admissibility(True, None, math.inf, 0)
    val, curve = best
    deficit = max(1 - val, 0)
    return Admissibility(val >= 1 - tol, curve, val, deficit)


# --------------------------------------------------------------- zero modulus

@dataclass
class ZeroCheck:
    zero: bool
    hitting_set: list[str] | None = None
    witness: Curve | None = None

    def __bool__(self):
        return self.zero


def mod_zero_check(graph: MetricGraph, family: CurveFamily) -> ZeroCheck:
    """Zero modulus iff every curve of the family meets an edge of zero measure."""
    null = set(graph.null_edges())
    if family.explicit is not None:
        hit = set()
        for c in family.explicit:
            edges = {e for e, _ in c.steps}
            if not edges & null:
                return ZeroCheck(False, witness=c)
            hit |= edges & null
        return ZeroCheck(True, hitting_set=sorted(hit))
    weights = {k: (math.inf if k in null else 1.0) for k in graph.edge_ids}
    sep = Separator(graph, family)
    # unit weights on positive edges: hop count; inf forbids null edges
    best = sep.minimum({k: weights[k] / graph.length(k) for k in graph.edge_ids})
    if best is None:
        return ZeroCheck(True, hitting_set=sorted(null))
    return ZeroCheck(False, witness=best[1])


# ------------------------------------------------------------------ the solver

class _Rows:
    """Constraint rows over the measure-positive edges."""

    def __init__(self, graph: MetricGraph):
        self.graph = graph
        self.edges = graph.positive_edges()
        self.index = {e: i for i, e in enumerate(self.edges)}
        self.sigma = np.array([graph.measure(e) for e in self.edges], dtype=float)
        self.curves: list[Curve] = []
        self.rows: list[np.ndarray] = []
        self.known: set[Curve] = set()

    def add(self, c: Curve) -> bool:
        if c in self.known:
            return False
        if any(self.graph.measure(e) == 0 for e, _ in c.steps):
            return False  # satisfied by the capped null-edge density
        row = np.zeros(len(self.edges))
        for e, _ in c.steps:
            row[self.index[e]] += self.graph.length(e)
        self.known.add(c)
        self.curves.append(c)
        self.rows.append(row)
        return True

    def matrix(self) -> np.ndarray:
        return np.array(self.rows) if self.rows else np.zeros((0, len(self.edges)))

    def exact_row(self, c: Curve) -> list[Fraction]:
        row = [Fraction(0)] * len(self.edges)
        for e, _ in c.steps:
            row[self.index[e]] += Fraction(self.graph.length(e))
        return row


def _density_map(rows: _Rows, rho_pos, graph: MetricGraph, exact=False) -> dict:
    cap = Fraction(int(RHO_MAX)) if exact else RHO_MAX
    out = {}
    for e in graph.edge_ids:
        out[e] = rho_pos[rows.index[e]] if e in rows.index else cap
    return out


def _rho_from_dual(lam, N, sigma, p):
    u = N.T @ lam
    return (np.maximum(u, 0.0) / (p * sigma)) ** (1.0 / (p - 1.0)), u


def _dual_value(lam, N, sigma, p):
    q = p / (p - 1.0)
    u = np.maximum(N.T @ lam, 0.0)
    return lam.sum() - (p - 1.0) * np.sum(sigma * (u / (p * sigma)) ** q)


def _fresh_multiplier(row, sigma, p):
    """Multiplier that would make ``row`` tight if it were the only constraint."""
    a = 1.0 / (p - 1.0)
    mask = row > 0
    s = np.sum(row[mask] * (row[mask] / (p * sigma[mask])) ** a)
    return s ** (-1.0 / a)


def _projected_newton(N, sigma, p, lam, tol=1e-13, maxit=400):
    """Maximise the concave dual over lam >= 0."""
    a = 1.0 / (p - 1.0)
    k = len(lam)
    g_old = _dual_value(lam, N, sigma, p)
    for it in range(maxit):
        rho, u = _rho_from_dual(lam, N, sigma, p)
        grad = 1.0 - N @ rho
        pg = np.where(lam > 0, grad, np.maximum(grad, 0.0))
        pgn = np.max(np.abs(pg)) if k else 0.0
        if pgn <= tol:
            break
        eps = min(1e-10, pgn)
        bound = (lam <= eps) & (grad < 0)
        free = ~bound
        upos = u > 0
        drho = np.zeros_like(u)
        drho[upos] = a * rho[upos] / u[upos]
        d = np.zeros(k)
        d[bound] = -lam[bound]
        if free.any():
            Nf = N[free]
            H = (Nf * drho) @ Nf.T
            ridge = 1e-13 * max(np.trace(H) / max(H.shape[0], 1), 1e-300)
            H[np.diag_indices_from(H)] += ridge
            try:
                d[free] = np.linalg.solve(H, grad[free])
            except np.linalg.LinAlgError:
                d[free] = np.linalg.lstsq(H, grad[free], rcond=None)[0]
        alpha = 1.0
        accepted = False
        while alpha > 1e-14:
            new = np.maximum(lam + alpha * d, 0.0)
            g_new = _dual_value(new, N, sigma, p)
            if g_new >= g_old + 1e-4 * grad @ (new - lam):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # roundoff floor of G: accept the Newton point if it shrinks the projected gradient
            new = np.maximum(lam + d, 0.0)
            r2, _ = _rho_from_dual(new, N, sigma, p)
            g2 = 1.0 - N @ r2
            pg2 = np.where(new > 0, g2, np.maximum(g2, 0.0))
            if np.max(np.abs(pg2)) >= pgn:
                break
            g_new = _dual_value(new, N, sigma, p)
        lam, g_old = new, g_new
    return lam


def _lp_float(rows: _Rows, lexicographic: bool):
    N = rows.matrix()
    m = len(rows.edges)
    res = linprog(rows.sigma, A_ub=-N, b_ub=-np.ones(len(N)), bounds=[(0, None)] * m,
                  method="highs")
    if res.status != 0:
        raise ArithmeticError(f"LP failed: {res.message}")
    lam = -res.ineqlin.marginals
    x = res.x
    if lexicographic:
        val = res.fun
        A = [*(-N), rows.sigma]
        b = [*(-np.ones(len(N))), val + 1e-12 * (1 + abs(val))]
        for j in range(m):
            obj = np.zeros(m)
            obj[j] = 1.0
            r = linprog(obj, A_ub=np.array(A), b_ub=np.array(b), bounds=[(0, None)] * m,
                        method="highs")
            if r.status != 0:
                break
            x = r.x
            A.append(obj)
            b.append(r.x[j] + 1e-12)
        x = np.maximum(x, 0.0)
    return x, np.maximum(lam, 0.0)


def mod_p(graph: MetricGraph, family: CurveFamily, p: float, exact: bool = False,
          tol_feas: float = TOL_FEAS, gap_target: float = GAP_TARGET,
          max_constraints: int = MAX_CONSTRAINTS, lexicographic: bool = True) -> ModulusSolution:
    """Compute Mod_p(family) with a certified dual.

    ``exact`` switches to Fraction arithmetic; available for p in {1, 2}.
    """
    ModulusProblem(graph, family, p)
    if exact and p not in (1, 2):
        raise ValueError("exact mode needs a rational KKT system: p must be 1 or 2")
    sep = Separator(graph, family)
    zc = mod_zero_check(graph, family)
    null = graph.null_edges()
    if zc.zero:
        empty = zc.hitting_set == [] and (family.explicit is not None and not family.explicit)
        if family.connector is not None:
            empty = sep.minimum({k: 1.0 for k in graph.edge_ids}) is None
        zero = Fraction(0) if exact else 0.0
        dens = {k: (Fraction(int(RHO_MAX)) if exact else RHO_MAX) if k in null else zero
                for k in graph.edge_ids}
        return ModulusSolution(zero, dens, [], p, exact=exact, zero=True, empty=empty,
                               witness=zc, degenerate_edges=null)

    rows = _Rows(graph)
    # seed: minimisers under the plain length weight
    seed = {k: (RHO_MAX if graph.measure(k) == 0 else 1.0) for k in graph.edge_ids}
    for _, c in sorted(sep.candidates(seed), key=lambda t: t[0]):
        rows.add(c)
    if exact and family.explicit is not None and len(family.explicit) > EXACT_MAX_CURVES:
        raise ValueError(f"exact mode is limited to {EXACT_MAX_CURVES} explicit curves")

    if p == 1:
        sol = _solve_lp(graph, rows, sep, tol_feas, max_constraints, lexicographic)
    else:
        sol = _solve_smooth(graph, rows, sep, p, tol_feas, gap_target, max_constraints)
    if exact:
        sol = _exact_polish(graph, rows, sep, p, sol, lexicographic)
    sol.degenerate_edges = null
    return sol


def _solve_smooth(graph, rows: _Rows, sep: Separator, p, tol_feas, gap_target, max_constraints):
    sigma = rows.sigma
    lam = np.array([_fresh_multiplier(r, sigma, p) for r in rows.rows]) * 0.5
    it = 0
    inner_tol = 1e-13
    while True:
        it += 1
        N = rows.matrix()
        lam = _projected_newton(N, sigma, p, lam, tol=inner_tol)
        rho_pos, _ = _rho_from_dual(lam, N, sigma, p)
        rho = _density_map(rows, rho_pos, graph)
        cands = sep.candidates(rho)
        viol = sorted((t for t in cands if t[0] < 1 - tol_feas), key=lambda t: t[0])
        added = 0
        for _, c in viol:
            if rows.add(c):
                lam = np.append(lam, 0.5 * _fresh_multiplier(rows.rows[-1], sigma, p))
                added += 1
        if viol and not added:
            # violated curves already present: inner solve not tight enough
            inner_tol = max(inner_tol * 0.1, 1e-16)
            if inner_tol <= 1e-16 and it > 50:
                log.warning("stalled with known violators at min=%g", viol[0][0])
            else:
                continue
        if len(rows.curves) > max_constraints:
            raise BudgetExceeded(f"more than {max_constraints} generated constraints")
        if added:
            continue
        mn = sep.minimum(rho)[0]
        rho_feas = rho_pos / mn if mn < 1 else rho_pos
        value = float(np.sum(sigma * rho_feas ** p))
        dual = float(_dual_value(lam, N, sigma, p))
        gap = value - dual
        if gap > gap_target * (1 + value) and inner_tol > 1e-16:
            inner_tol *= 0.01
            continue
        u = N.T @ lam
        stat = np.max(np.abs(p * sigma * rho_feas ** (p - 1) - u)) if len(u) else 0.0
        slack = np.max(np.abs(lam * (N @ rho_feas - 1.0))) if len(lam) else 0.0
        scale = max(1.0, float(np.max(u)) if len(u) else 1.0)
        resid = max(stat / scale, slack, max(0.0, 1.0 - (mn if mn < 1 else 1.0)))
        return ModulusSolution(
            value, _density_map(rows, rho_feas, graph),
            [(c, float(l)) for c, l in zip(rows.curves, lam) if l > 0], p,
            duality_gap=gap, dual_value=dual, kkt_residual=resid, iterations=it)


def _solve_lp(graph, rows: _Rows, sep: Separator, tol_feas, max_constraints, lexicographic):
    it = 0
    lex = False
    while True:
        it += 1
        x, lam = _lp_float(rows, lex)
        rho = _density_map(rows, x, graph)
        viol = [t for t in sep.candidates(rho) if t[0] < 1 - tol_feas]
        added = sum(rows.add(c) for _, c in sorted(viol, key=lambda t: t[0]))
        if len(rows.curves) > max_constraints:
            raise BudgetExceeded(f"more than {max_constraints} generated constraints")
        if added:
            continue
        if lexicographic and not lex:
            lex = True
            continue
        N = rows.matrix()
        value = float(rows.sigma @ x)
        dual = float(lam.sum())
        u = N.T @ lam
        resid = max(float(np.max(np.maximum(u - rows.sigma, 0.0), initial=0.0)),
                    float(np.max(np.abs(x * (rows.sigma - u)), initial=0.0)),
                    float(np.max(np.abs(lam * (N @ x - 1.0)), initial=0.0)))
        return ModulusSolution(value, rho, [(c, float(l)) for c, l in zip(rows.curves, lam) if l > 1e-15],
                               1, duality_gap=value - dual, dual_value=dual,
                               kkt_residual=resid, iterations=it)


def _exact_polish(graph, rows: _Rows, sep: Separator, p, sol: ModulusSolution, lexicographic):
    """Recompute the optimum exactly on the generated rows, re-separating exactly."""
    sigma = [Fraction(graph.measure(e)) for e in rows.edges]
    erows = [rows.exact_row(c) for c in rows.curves]
    curves = list(rows.curves)
    lam_f = dict(sol.active)
    for it in range(1, 10_000):
        if p == 1:
            x, val, y = rational.covering_lp(sigma, erows, lexicographic)
            lam = y
        else:
            x, lam, work = _exact_qp(sigma, erows, curves, lam_f)
            val = sum((s * xi * xi for s, xi in zip(sigma, x)), Fraction(0))
        rho = _density_map(rows, x, graph, exact=True)
        best = sep.minimum(rho, exact=True)
        if best[0] < 1:
            c = best[1]
            if c in curves:
                raise ArithmeticError("exact re-separation returned a known curve")
            curves.append(c)
            erows.append(rows.exact_row(c))
            continue
        u = [sum((l * r[j] for l, r in zip(lam, erows)), Fraction(0)) for j in range(len(sigma))]
        if p == 1:
            dual = sum(lam, Fraction(0))
            resid = max([max(ui - si, Fraction(0)) for ui, si in zip(u, sigma)]
                        + [abs(xi * (si - ui)) for xi, si, ui in zip(x, sigma, u)], default=Fraction(0))
        else:
            dual = sum(lam, Fraction(0)) - sum((ui * ui / (4 * si) for ui, si in zip(u, sigma)), Fraction(0))
            resid = max((abs(2 * si * xi - ui) for xi, si, ui in zip(x, sigma, u)), default=Fraction(0))
        for l, r in zip(lam, erows):
            li = sum((a * b for a, b in zip(r, x)), Fraction(0))
            resid = max(resid, abs(l * (li - 1)))
        return ModulusSolution(val, rho, [(c, l) for c, l in zip(curves, lam) if l > 0], p,
                               duality_gap=val - dual, dual_value=dual, kkt_residual=resid,
                               iterations=sol.iterations + it, exact=True)
    raise ArithmeticError("exact polish did not terminate")


def _exact_qp(sigma, erows, curves, lam_hint):
    """Active-set solve of min sum sigma x^2 s.t. R x >= 1 in Fractions (p = 2)."""
    k = len(erows)
    big = max((abs(v) for v in lam_hint.values()), default=1.0)
    work = [i for i, c in enumerate(curves) if lam_hint.get(c, 0.0) > 1e-9 * big]
    if not work:
        work = [0]
    seen = set()
    while True:
        key = tuple(sorted(work))
        if key in seen:
            raise ArithmeticError("exact active-set iteration cycled")
        seen.add(key)
        basis = [work[i] for i in rational.independent_rows(
            [[r / (2 * s) ** 0 for r, s in zip(erows[j], sigma)] for j in work])]
        # Gram system (R D R^T) lam = 1 with D = 1/(2 sigma)
        gram = [[sum((erows[i][e] * erows[j][e] / (2 * sigma[e]) for e in range(len(sigma))), Fraction(0))
                 for j in basis] for i in basis]
        sol = rational.solve(gram, [1] * len(basis))
        if sol is None:
            raise ArithmeticError("inconsistent active set")
        lam = [Fraction(0)] * k
        for i, l in zip(basis, sol):
            lam[i] = l
        x = [sum((lam[i] * erows[i][e] for i in range(k)), Fraction(0)) / (2 * sigma[e])
             for e in range(len(sigma))]
        neg = [i for i in basis if lam[i] < 0]
        if neg:
            worst = min(neg, key=lambda i: (lam[i], i))
            work = [i for i in work if i != worst]
            continue
        short = [(sum((a * b for a, b in zip(erows[i], x)), Fraction(0)), i) for i in range(k) if i not in work]
        short = [t for t in short if t[0] < 1]
        if short:
            work.append(min(short)[1])
            continue
        return x, lam, work
