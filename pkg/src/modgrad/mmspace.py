"""Finite metric graphs as metric measure spaces.

Edges carry a length and a measure; curves are oriented edge paths run at
constant speed on [0, 1].  Vertex masses only appear through the star
granularity, where a vertex collects half of the measure of each incident
edge.
"""
from __future__ import annotations

import heapq
import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, Sequence

EDGE = "edge"
STAR = "star"
GRANULARITIES = (EDGE, STAR)


class SpaceError(ValueError):
    """Invalid graph, curve or family data."""


class ParseError(SpaceError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class BudgetExceeded(RuntimeError):
    """Raised instead of silently truncating an enumeration."""

    def __init__(self, message: str, partial: int = 0):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class Edge:
    id: str
    u: str
    v: str
    length: float
    measure: float

    def other(self, w: str) -> str:
        return self.v if w == self.u else self.u


@dataclass(frozen=True)
class Location:
    kind: str  # EDGE or STAR
    id: str
    measure: float


class MetricGraph:
    """Immutable finite metric graph with an edge measure."""

    def __init__(self, vertices: Iterable[str], edges: Iterable[Edge],
                 coords: Mapping[str, Sequence[float]] | None = None,
                 name: str = ""):
        self.vertices: tuple[str, ...] = tuple(sorted(set(vertices)))
        vset = set(self.vertices)
        emap: dict[str, Edge] = {}
        for e in edges:
            if e.id in emap:
                raise SpaceError(f"duplicate edge id {e.id!r}")
            if e.u not in vset or e.v not in vset:
                raise SpaceError(f"edge {e.id!r} has a dangling endpoint")
            if e.u == e.v:
                raise SpaceError(f"edge {e.id!r} is a loop")
            if not (math.isfinite(e.length) and e.length > 0):
                raise SpaceError(f"edge {e.id!r} has nonpositive length")
            if not (math.isfinite(e.measure) and e.measure >= 0):
                raise SpaceError(f"edge {e.id!r} has invalid measure")
            emap[e.id] = e
        self.edge_ids: tuple[str, ...] = tuple(sorted(emap))
        self.edges: dict[str, Edge] = {k: emap[k] for k in self.edge_ids}
        self.coords: dict[str, tuple[float, ...]] = (
            {v: tuple(float(c) for c in coords[v]) for v in self.vertices if v in coords}
            if coords else {})
        self.name = name
        adj: dict[str, list[tuple[str, str, int]]] = {v: [] for v in self.vertices}
        for e in self.edges.values():
            adj[e.u].append((e.v, e.id, +1))
            adj[e.v].append((e.u, e.id, -1))
        # neighbours sorted by (vertex, edge id) fixes every traversal order
        self.adj = {v: tuple(sorted(lst)) for v, lst in adj.items()}

    def __eq__(self, other):
        if not isinstance(other, MetricGraph):
            return NotImplemented
        return (self.vertices == other.vertices and self.edges == other.edges
                and self.coords == other.coords)

    def __hash__(self):
        return hash((self.vertices, tuple(self.edges.items())))

    def __repr__(self):
        return f"MetricGraph({self.name or '?'}: {len(self.vertices)} vertices, {len(self.edges)} edges)"

    def length(self, eid: str) -> float:
        return self.edges[eid].length

    def measure(self, eid: str) -> float:
        return self.edges[eid].measure

    def total_measure(self) -> float:
        return math.fsum(e.measure for e in self.edges.values())

    def null_edges(self) -> list[str]:
        return [k for k, e in self.edges.items() if e.measure == 0]

    def positive_edges(self) -> list[str]:
        return [k for k, e in self.edges.items() if e.measure > 0]

    def incident(self, v: str) -> list[str]:
        return [eid for _, eid, _ in self.adj[v]]

    def star_measure(self, v: str, exact: bool = False):
        if exact:
            return sum((Fraction(self.measure(e)) for e in self.incident(v)), Fraction(0)) / 2
        return 0.5 * math.fsum(self.measure(e) for e in self.incident(v))

    def locations(self, granularity: str = EDGE) -> list[Location]:
        if granularity == EDGE:
            return [Location(EDGE, k, e.measure) for k, e in self.edges.items()]
        if granularity == STAR:
            return [Location(STAR, v, self.star_measure(v)) for v in self.vertices]
        raise SpaceError(f"unknown granularity {granularity!r}")

    def is_exceptional(self, loc: Location | str, granularity: str | None = None) -> bool:
        if isinstance(loc, Location):
            granularity, loc = loc.kind, loc.id
        if granularity == EDGE:
            return self.measure(loc) == 0
        return all(self.measure(e) == 0 for e in self.incident(loc))

    def distances(self, source: str) -> dict[str, float]:
        """Shortest-path distances from ``source`` induced by edge lengths."""
        dist = {source: 0.0}
        heap = [(0.0, source)]
        done = set()
        while heap:
            d, v = heapq.heappop(heap)
            if v in done:
                continue
            done.add(v)
            for w, eid, _ in self.adj[v]:
                nd = d + self.length(eid)
                if nd < dist.get(w, math.inf):
                    dist[w] = nd
                    heapq.heappush(heap, (nd, w))
        return dist

    def edge_between(self, a: str, b: str) -> str | None:
        for w, eid, _ in self.adj[a]:
            if w == b:
                return eid
        return None

    def with_measures(self, changes: Mapping[str, float]) -> "MetricGraph":
        """Copy with the measures of the edges in ``changes`` replaced."""
        edges = [Edge(e.id, e.u, e.v, e.length, changes.get(e.id, e.measure))
                 for e in self.edges.values()]
        return MetricGraph(self.vertices, edges, self.coords, self.name)

    def scaled(self, length: float = 1.0, measure: float = 1.0) -> "MetricGraph":
        edges = [Edge(e.id, e.u, e.v, e.length * length, e.measure * measure)
                 for e in self.edges.values()]
        return MetricGraph(self.vertices, edges, self.coords, self.name)


def disjoint_union(parts: Sequence[tuple[str, MetricGraph]]) -> MetricGraph:
    """Union of graphs with ids prefixed by ``prefix + ':'``."""
    verts, edges, coords = [], [], {}
    for prefix, g in parts:
        verts += [f"{prefix}:{v}" for v in g.vertices]
        edges += [Edge(f"{prefix}:{e.id}", f"{prefix}:{e.u}", f"{prefix}:{e.v}", e.length, e.measure)
                  for e in g.edges.values()]
        coords.update({f"{prefix}:{v}": c for v, c in g.coords.items()})
    return MetricGraph(verts, edges, coords, "+".join(g.name for _, g in parts))


# --------------------------------------------------------------------- curves

@dataclass(frozen=True)
class Curve:
    """Oriented edge path; orientation +1 runs u -> v."""

    steps: tuple[tuple[str, int], ...]

    def __post_init__(self):
        if not self.steps:
            raise SpaceError("constant curves are not allowed")
        for eid, o in self.steps:
            if o not in (1, -1):
                raise SpaceError(f"bad orientation {o!r} on {eid!r}")

    @classmethod
    def of(cls, graph: MetricGraph, steps: Iterable[tuple[str, int | str]]) -> "Curve":
        st = []
        for eid, o in steps:
            if isinstance(o, str):
                if o not in ("+", "-"):
                    raise SpaceError(f"bad orientation {o!r} on {eid!r}")
                o = 1 if o == "+" else -1
            st.append((eid, int(o)))
        c = cls(tuple(st))
        c.validate(graph)
        return c

    @classmethod
    def from_vertices(cls, graph: MetricGraph, path: Sequence[str]) -> "Curve":
        steps = []
        for a, b in zip(path, path[1:]):
            eid = graph.edge_between(a, b)
            if eid is None:
                raise SpaceError(f"no edge between {a!r} and {b!r}")
            steps.append((eid, 1 if graph.edges[eid].u == a else -1))
        return cls(tuple(steps))

    def validate(self, graph: MetricGraph) -> None:
        prev = None
        for i, (eid, o) in enumerate(self.steps):
            if eid not in graph.edges:
                raise SpaceError(f"step {i}: unknown edge {eid!r}")
            e = graph.edges[eid]
            a, b = (e.u, e.v) if o > 0 else (e.v, e.u)
            if prev is not None and a != prev:
                raise SpaceError(f"step {i}: edge {eid!r} does not start at {prev!r}")
            prev = b

    def vertices(self, graph: MetricGraph) -> tuple[str, ...]:
        e0, o0 = self.steps[0]
        e = graph.edges[e0]
        out = [e.u if o0 > 0 else e.v]
        for eid, o in self.steps:
            e = graph.edges[eid]
            out.append(e.v if o > 0 else e.u)
        return tuple(out)

    def endpoints(self, graph: MetricGraph) -> tuple[str, str]:
        vs = self.vertices(graph)
        return vs[0], vs[-1]

    def length(self, graph: MetricGraph, exact: bool = False):
        if exact:
            return sum((Fraction(graph.length(e)) for e, _ in self.steps), Fraction(0))
        return math.fsum(graph.length(e) for e, _ in self.steps)

    speed = length  # constant speed on [0, 1]

    def edge_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for e, _ in self.steps:
            out[e] = out.get(e, 0) + 1
        return out

    def reversed(self) -> "Curve":
        return Curve(tuple((e, -o) for e, o in reversed(self.steps)))

    def is_simple(self, graph: MetricGraph) -> bool:
        vs = self.vertices(graph)
        return len(set(vs)) == len(vs)

    def to_json(self) -> list[list[str]]:
        return [[e, "+" if o > 0 else "-"] for e, o in self.steps]

    def __add__(self, other: "Curve") -> "Curve":
        return Curve(self.steps + other.steps)


def line_integral(rho: Mapping[str, float], curve: Curve, graph: MetricGraph, exact: bool = False):
    """Sum over steps of rho(e) * len(e)."""
    total = Fraction(0) if exact else []
    for eid, _ in curve.steps:
        if eid not in rho:
            raise SpaceError(f"density undefined on edge {eid!r}")
        if exact:
            total += Fraction(rho[eid]) * Fraction(graph.length(eid))
        else:
            total.append(rho[eid] * graph.length(eid))
    return total if exact else math.fsum(total)


# ------------------------------------------------------------------- families

@dataclass(frozen=True)
class Connector:
    sources: tuple[str, ...]
    targets: tuple[str, ...]
    simple: bool = True
    max_steps: int | None = None
    # "crossing" restriction: interior vertices avoid sources and targets
    avoid_terminals: bool = False


@dataclass(frozen=True)
class CurveFamily:
    explicit: tuple[Curve, ...] | None = None
    connector: Connector | None = None

    def __post_init__(self):
        if (self.explicit is None) == (self.connector is None):
            raise SpaceError("a family is either explicit or a connector")
        if self.explicit is not None and len(set(self.explicit)) != len(self.explicit):
            raise SpaceError("explicit family contains repeated curves")

    @classmethod
    def of_curves(cls, curves: Iterable[Curve]) -> "CurveFamily":
        return cls(explicit=tuple(curves))

    @classmethod
    def connect(cls, sources, targets, simple=True, max_steps=None, avoid_terminals=False):
        return cls(connector=Connector(tuple(sorted(sources)), tuple(sorted(targets)),
                                       simple, max_steps, avoid_terminals))

    def step_limit(self, graph: MetricGraph) -> int:
        c = self.connector
        if c.max_steps is not None:
            return c.max_steps
        if c.simple:
            return max(len(graph.vertices) - 1, 1)
        raise SpaceError("a non-simple connector needs max_steps")


def _walk_paths(graph: MetricGraph, conn: Connector, limit: int) -> Iterator[tuple[tuple[str, ...], tuple[tuple[str, int], ...]]]:
    targets = set(conn.targets)
    terminals = set(conn.sources) | targets
    for s in conn.sources:
        stack = [(s, iter(graph.adj[s]))]
        path_v = [s]
        path_e: list[tuple[str, int]] = []
        onpath = {s}
        while stack:
            v, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                if path_e:
                    path_e.pop()
                onpath.discard(path_v.pop())
                continue
            w, eid, o = nxt
            if len(path_e) >= limit:
                continue
            if conn.simple and w in onpath:
                continue
            path_v.append(w)
            path_e.append((eid, o))
            if w in targets:
                yield tuple(path_v), tuple(path_e)
            extend = not (conn.avoid_terminals and w in terminals)
            if extend:
                onpath.add(w)
                stack.append((w, iter(graph.adj[w])))
            else:
                path_v.pop()
                path_e.pop()


def iter_curves(graph: MetricGraph, family: CurveFamily) -> Iterator[Curve]:
    """Unordered lazy expansion of a family."""
    if family.explicit is not None:
        for c in family.explicit:
            c.validate(graph)
            yield c
        return
    limit = family.step_limit(graph)
    for _, steps in _walk_paths(graph, family.connector, limit):
        yield Curve(steps)


def enumerate_curves(graph: MetricGraph, family: CurveFamily, max_count: int = 100_000) -> list[Curve]:
    """All curves of ``family``, sorted lexicographically by vertex sequence.

    Raises BudgetExceeded when more than ``max_count`` curves exist.
    """
    if family.explicit is not None:
        for c in family.explicit:
            c.validate(graph)
        if len(family.explicit) > max_count:
            raise BudgetExceeded(f"family has more than {max_count} curves", max_count)
        return list(family.explicit)
    found = []
    limit = family.step_limit(graph)
    for vs, steps in _walk_paths(graph, family.connector, limit):
        found.append((vs, steps))
        if len(found) > max_count:
            raise BudgetExceeded(f"connector expands to more than {max_count} curves", max_count)
    found.sort(key=lambda t: (t[0], [e for e, _ in t[1]]))
    return [Curve(steps) for _, steps in found]


# ----------------------------------------------------------------- generators

def _vid(i: int, j: int) -> str:
    return f"v{i:03d}_{j:03d}"


def _lattice(nx: int, ny: int, h: float, null_vertical: bool, name: str,
             keep_cell=None) -> MetricGraph:
    if nx < 1 or ny < 1 or not h > 0:
        raise SpaceError("grid sizes and spacing must be positive")
    sigma = h * h
    edges = []
    for i in range(nx):
        for j in range(ny):
            if i + 1 < nx:
                edges.append(Edge(f"h{i:03d}_{j:03d}", _vid(i, j), _vid(i + 1, j), h, sigma))
            if j + 1 < ny:
                edges.append(Edge(f"u{i:03d}_{j:03d}", _vid(i, j), _vid(i, j + 1), h,
                                  0.0 if null_vertical else sigma))
    if keep_cell is not None:
        def touches_kept(e: Edge) -> bool:
            i, j = (int(t) for t in e.id[1:].split("_"))
            if e.id[0] == "h":
                cells = [(i, j - 1), (i, j)]
            else:
                cells = [(i - 1, j), (i, j)]
            return any(0 <= a < nx - 1 and 0 <= b < ny - 1 and keep_cell(a, b) for a, b in cells)
        edges = [e for e in edges if touches_kept(e)]
    used = {e.u for e in edges} | {e.v for e in edges}
    verts = [_vid(i, j) for i in range(nx) for j in range(ny)]
    if keep_cell is not None:
        verts = [v for v in verts if v in used]
    coords = {_vid(i, j): (i * h, j * h) for i in range(nx) for j in range(ny)}
    return MetricGraph(verts, edges, coords, name)


def _sides(g: MetricGraph) -> tuple[list[str], list[str]]:
    xs = [c[0] for c in g.coords.values()]
    lo, hi = min(xs), max(xs)
    left = [v for v in g.vertices if g.coords[v][0] == lo]
    right = [v for v in g.vertices if g.coords[v][0] == hi]
    return left, right


def crossing_family(g: MetricGraph) -> CurveFamily:
    """Simple left-to-right crossings whose interiors avoid both sides."""
    left, right = _sides(g)
    return CurveFamily.connect(left, right, simple=True, avoid_terminals=True)


def grid(nx: int, ny: int, h: float = 1.0) -> tuple[MetricGraph, CurveFamily]:
    g = _lattice(nx, ny, h, False, f"grid({nx},{ny},{h:g})")
    return g, crossing_family(g)


def rug(nx: int, ny: int, h: float = 1.0) -> tuple[MetricGraph, CurveFamily]:
    g = _lattice(nx, ny, h, True, f"rug({nx},{ny},{h:g})")
    return g, crossing_family(g)


def parallel_paths(k: int, m: int) -> tuple[MetricGraph, CurveFamily]:
    if k < 1 or m < 1:
        raise SpaceError("parallel_paths needs k, m >= 1")
    verts, edges, coords = [], [], {}
    for i in range(k):
        for j in range(m + 1):
            verts.append(_vid(i, j))
            coords[_vid(i, j)] = (float(j), float(i))
        for j in range(m):
            edges.append(Edge(f"p{i:03d}_{j:03d}", _vid(i, j), _vid(i, j + 1), 1.0, 1.0))
    g = MetricGraph(verts, edges, coords, f"parallel_paths({k},{m})")
    fam = CurveFamily.of_curves(
        Curve(tuple((f"p{i:03d}_{j:03d}", 1) for j in range(m))) for i in range(k))
    return g, fam


def carpet(level: int) -> tuple[MetricGraph, CurveFamily]:
    """Edge skeleton of the level-``level`` Sierpinski carpet on [0,1]^2."""
    if level < 0:
        raise SpaceError("carpet level must be nonnegative")
    n = 3 ** level

    def keep(a: int, b: int) -> bool:
        while a or b:
            if a % 3 == 1 and b % 3 == 1:
                return False
            a, b = a // 3, b // 3
        return True

    g = _lattice(n + 1, n + 1, 1.0 / n, False, f"carpet({level})", keep_cell=keep)
    return g, crossing_family(g)


GENERATORS = {"grid": grid, "rug": rug, "parallel_paths": parallel_paths, "carpet": carpet}


def generate(kind: str, *args, **kwargs) -> tuple[MetricGraph, CurveFamily]:
    try:
        gen = GENERATORS[kind]
    except KeyError:
        raise SpaceError(f"unknown generator {kind!r}") from None
    return gen(*args, **kwargs)


# ----------------------------------------------------------------------- JSON

def _fmt(x: float) -> str:
    s = format(float(x), ".17g")
    if not math.isfinite(float(x)):
        raise SpaceError("non-finite number")
    return s


def save_space(graph: MetricGraph) -> bytes:
    """Canonical JSON: ids sorted, numbers with 17 significant digits."""
    vparts = []
    for v in graph.vertices:
        item = '{"id":' + json.dumps(v)
        if v in graph.coords:
            item += ',"coords":[' + ",".join(_fmt(c) for c in graph.coords[v]) + "]"
        vparts.append(item + "}")
    eparts = [
        '{"id":%s,"u":%s,"v":%s,"len":%s,"measure":%s}'
        % (json.dumps(e.id), json.dumps(e.u), json.dumps(e.v), _fmt(e.length), _fmt(e.measure))
        for e in graph.edges.values()
    ]
    text = '{"vertices":[' + ",".join(vparts) + '],"edges":[' + ",".join(eparts) + "]}"
    return text.encode()


def _number(obj, path: str, what: str) -> float:
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise ParseError(path, f"{what} must be a number")
    x = float(obj)
    if not math.isfinite(x):
        raise ParseError(path, f"{what} must be finite")
    return x


def space_from_obj(doc) -> MetricGraph:
    if not isinstance(doc, dict):
        raise ParseError("$", "document must be an object")
    for key in ("vertices", "edges"):
        if not isinstance(doc.get(key), list):
            raise ParseError(f"$.{key}", "missing or not a list")
    verts, coords = [], {}
    for i, v in enumerate(doc["vertices"]):
        path = f"$.vertices[{i}]"
        if not isinstance(v, dict) or not isinstance(v.get("id"), str):
            raise ParseError(path, "vertex needs a string id")
        if v["id"] in verts:
            raise ParseError(path, f"duplicate vertex id {v['id']!r}")
        verts.append(v["id"])
        if "coords" in v:
            if not isinstance(v["coords"], list):
                raise ParseError(path + ".coords", "must be a list")
            coords[v["id"]] = [_number(c, f"{path}.coords[{k}]", "coordinate")
                               for k, c in enumerate(v["coords"])]
    vset = set(verts)
    edges, seen = [], set()
    for i, e in enumerate(doc["edges"]):
        path = f"$.edges[{i}]"
        if not isinstance(e, dict):
            raise ParseError(path, "edge must be an object")
        eid = e.get("id")
        if not isinstance(eid, str):
            raise ParseError(path + ".id", "edge needs a string id")
        if eid in seen:
            raise ParseError(path + ".id", f"duplicate edge id {eid!r}")
        seen.add(eid)
        for end in ("u", "v"):
            if not isinstance(e.get(end), str):
                raise ParseError(f"{path}.{end}", f"edge {eid!r}: endpoint must be a string")
            if e[end] not in vset:
                raise ParseError(f"{path}.{end}", f"edge {eid!r}: dangling endpoint {e[end]!r}")
        if e["u"] == e["v"]:
            raise ParseError(path, f"edge {eid!r}: loops are not allowed")
        ln = _number(e.get("len"), path + ".len", f"edge {eid!r} length")
        if ln <= 0:
            raise ParseError(path + ".len", f"edge {eid!r}: length must be > 0, got {ln!r}")
        ms = _number(e.get("measure"), path + ".measure", f"edge {eid!r} measure")
        if ms < 0:
            raise ParseError(path + ".measure", f"edge {eid!r}: measure must be >= 0, got {ms!r}")
        edges.append(Edge(eid, e["u"], e["v"], ln, ms))
    return MetricGraph(verts, edges, coords)


def load_space(data: bytes | str) -> MetricGraph:
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError("$", f"invalid JSON: {exc}") from None
    return space_from_obj(doc)


def family_from_obj(doc, graph: MetricGraph) -> CurveFamily:
    if not isinstance(doc, dict):
        raise ParseError("$", "family must be an object")
    if "explicit" in doc:
        curves = []
        if not isinstance(doc["explicit"], list):
            raise ParseError("$.explicit", "must be a list of curves")
        for i, c in enumerate(doc["explicit"]):
            try:
                curves.append(Curve.of(graph, [tuple(s) for s in c]))
            except (SpaceError, TypeError, ValueError) as exc:
                raise ParseError(f"$.explicit[{i}]", str(exc)) from None
        try:
            return CurveFamily.of_curves(curves)
        except SpaceError as exc:
            raise ParseError("$.explicit", str(exc)) from None
    if "connector" in doc:
        c = doc["connector"]
        if not isinstance(c, dict):
            raise ParseError("$.connector", "must be an object")
        for key in ("from", "to"):
            ids = c.get(key)
            if not isinstance(ids, list) or not all(isinstance(v, str) for v in ids):
                raise ParseError(f"$.connector.{key}", "must be a list of vertex ids")
            for v in ids:
                if v not in graph.adj:
                    raise ParseError(f"$.connector.{key}", f"unknown vertex {v!r}")
        ms = c.get("max_steps")
        if ms is not None and (not isinstance(ms, int) or ms < 1):
            raise ParseError("$.connector.max_steps", "must be a positive integer")
        return CurveFamily.connect(c["from"], c["to"], bool(c.get("simple", True)), ms,
                                   bool(c.get("crossing", False)))
    raise ParseError("$", "family needs 'explicit' or 'connector'")


def family_to_obj(family: CurveFamily) -> dict:
    if family.explicit is not None:
        return {"explicit": [c.to_json() for c in family.explicit]}
    c = family.connector
    out = {"from": list(c.sources), "to": list(c.targets), "simple": c.simple,
           "max_steps": c.max_steps}
    if c.avoid_terminals:
        out["crossing"] = True
    return {"connector": out}


def metric_axioms_hold(graph: MetricGraph, tol: float = 1e-12) -> bool:
    d = {v: graph.distances(v) for v in graph.vertices}
    for a, b in itertools.product(graph.vertices, repeat=2):
        if b not in d[a]:
            continue
        if abs(d[a][b] - d[b][a]) > tol or (a != b and d[a][b] <= 0):
            return False
        for c in graph.vertices:
            if c in d[a] and d[a][b] > d[a][c] + d[c][b] + tol:
                return False
    return True
