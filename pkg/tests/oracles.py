"""Independent reference values.

The grid crossing modulus is recomputed here from scratch: networkx
enumerates every crossing path of an n x n unit lattice and cvxpy (Clarabel)
solves the full convex program.  Nothing from modgrad is imported.

Run as a script to refresh tests/data/frozen_oracles.json.
"""
from __future__ import annotations

import itertools
import json
from pathlib import Path

import numpy as np

FROZEN = Path(__file__).with_name("data") / "frozen_oracles.json"


def lattice_crossings(n: int):
    """Edges of the n x n unit lattice and all left-to-right crossing paths.

    A crossing starts in column 0, ends in column n-1 and has no other vertex
    in either column.
    """
    import networkx as nx

    G = nx.grid_2d_graph(n, n)  # nodes (i, j), i = column
    edges = sorted(tuple(sorted(e)) for e in G.edges())
    index = {e: k for k, e in enumerate(edges)}
    left = [(0, j) for j in range(n)]
    right = [(n - 1, j) for j in range(n)]
    inner = G.subgraph([v for v in G if v[0] not in (0, n - 1)])
    paths = []
    for a, b in itertools.product(left, right):
        H = nx.Graph(inner)
        H.add_edges_from((a, w) for w in G[a] if w in inner)
        H.add_edges_from((b, w) for w in G[b] if w in inner)
        if n == 2:
            H.add_edges_from([(a, b)] if G.has_edge(a, b) else [])
        if a not in H or b not in H:
            continue
        for path in nx.all_simple_paths(H, a, b):
            paths.append([index[tuple(sorted(e))] for e in zip(path, path[1:])])
    return edges, paths


def convex_modulus(n_edges: int, paths, p: float, sigma=None) -> float:
    import cvxpy as cp

    sig = np.ones(n_edges) if sigma is None else np.asarray(sigma, float)
    N = np.zeros((len(paths), n_edges))
    for i, path in enumerate(paths):
        for k in path:
            N[i, k] += 1.0
    x = cp.Variable(n_edges, nonneg=True)
    obj = cp.sum(cp.multiply(sig, cp.square(x))) if p == 2 else sig @ cp.power(x, p)
    prob = cp.Problem(cp.Minimize(obj), [N @ x >= 1])
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12, tol_ktratio=1e-8)
    rho = np.maximum(np.asarray(x.value).ravel(), 0.0)
    rho = rho / min(1.0, float((N @ rho).min()))  # exactly admissible
    return float(np.sum(sig * rho ** p))


def grid_crossing_modulus(n: int, p: float) -> float:
    edges, paths = lattice_crossings(n)
    return convex_modulus(len(edges), paths, p)


def compute_all() -> dict:
    out = {"grid_crossing": {}, "crossing_counts": {}}
    for n in (3, 4, 5):
        edges, paths = lattice_crossings(n)
        out["crossing_counts"][str(n)] = len(paths)
        for p in (1.5, 2.0, 3.0):
            out["grid_crossing"][f"{n}/{p:g}"] = convex_modulus(len(edges), paths, p)
    return out


def frozen() -> dict:
    return json.loads(FROZEN.read_text())


if __name__ == "__main__":
    FROZEN.parent.mkdir(exist_ok=True)
    FROZEN.write_text(json.dumps(compute_all(), indent=2, sort_keys=True) + "\n")
    print(FROZEN.read_text())
