"""Exact linear algebra and linear programming over Fractions."""
from __future__ import annotations

from fractions import Fraction
from typing import Sequence

Matrix = list[list[Fraction]]


def as_fraction_matrix(rows) -> Matrix:
    return [[Fraction(x) for x in r] for r in rows]


def row_echelon(a: Matrix) -> tuple[Matrix, list[int]]:
    """Reduced row echelon form and pivot columns."""
    m = [r[:] for r in a]
    pivots = []
    r = 0
    ncols = len(m[0]) if m else 0
    for c in range(ncols):
        piv = next((i for i in range(r, len(m)) if m[i][c] != 0), None)
        if piv is None:
            continue
        m[r], m[piv] = m[piv], m[r]
        inv = 1 / m[r][c]
        m[r] = [x * inv for x in m[r]]
        for i in range(len(m)):
            if i != r and m[i][c] != 0:
                f = m[i][c]
                m[i] = [x - f * y for x, y in zip(m[i], m[r])]
        pivots.append(c)
        r += 1
        if r == len(m):
            break
    return m, pivots


def rank(rows) -> int:
    a = as_fraction_matrix(rows)
    if not a or not a[0]:
        return 0
    return len(row_echelon(a)[1])


def independent_rows(rows) -> list[int]:
    """Indices of a maximal independent subset of rows, greedy in order."""
    a = as_fraction_matrix(rows)
    if not a:
        return []
    cols = len(a[0])
    # transpose: pivot columns of A^T are independent rows of A
    at = [[a[i][j] for i in range(len(a))] for j in range(cols)]
    if not at:
        return []
    return row_echelon(at)[1]


def solve(a, b) -> list[Fraction] | None:
    """A basic solution of A x = b (free variables zero), or None if inconsistent."""
    a = as_fraction_matrix(a)
    n = len(a[0]) if a else 0
    aug = [r + [Fraction(bi)] for r, bi in zip(a, b)]
    red, piv = row_echelon(aug)
    if n in piv:
        return None
    x = [Fraction(0)] * n
    for i, c in enumerate(piv):
        x[c] = red[i][n]
    return x


def matmul(a: Sequence[Sequence], b: Sequence[Sequence]) -> Matrix:
    return [[sum((x * y for x, y in zip(row, col)), Fraction(0)) for col in zip(*b)] for row in a]


class LPInfeasible(ArithmeticError):
    pass


class LPUnbounded(ArithmeticError):
    pass


def simplex(c, a_eq, b_eq) -> tuple[list[Fraction], Fraction]:
    """min c.x subject to A x = b, x >= 0, exactly; Bland's rule throughout.

    Returns an optimal basic solution and the optimal value.
    """
    c = [Fraction(x) for x in c]
    a = as_fraction_matrix(a_eq)
    b = [Fraction(x) for x in b_eq]
    m, n = len(a), len(c)
    for i in range(m):
        if b[i] < 0:
            a[i] = [-x for x in a[i]]
            b[i] = -b[i]
    # phase one with artificials n..n+m-1
    tab = [a[i] + [Fraction(int(i == k)) for k in range(m)] + [b[i]] for i in range(m)]
    basis = list(range(n, n + m))
    cost1 = [Fraction(0)] * n + [Fraction(1)] * m
    _run(tab, basis, cost1, n + m)
    if _objective(tab, basis, cost1) != 0:
        raise LPInfeasible("no feasible point")
    # drive artificials out of the basis
    for i, bv in enumerate(basis):
        if bv >= n:
            col = next((j for j in range(n) if tab[i][j] != 0), None)
            if col is not None:
                _pivot(tab, basis, i, col)
    keep = [i for i, bv in enumerate(basis) if bv < n]
    tab = [tab[i][:n] + [tab[i][-1]] for i in keep]
    basis = [basis[i] for i in keep]
    _run(tab, basis, c, n)
    x = [Fraction(0)] * n
    for i, bv in enumerate(basis):
        x[bv] = tab[i][-1]
    return x, sum((ci * xi for ci, xi in zip(c, x)), Fraction(0))


def _objective(tab, basis, cost):
    return sum((cost[bv] * tab[i][-1] for i, bv in enumerate(basis)), Fraction(0))


def _pivot(tab, basis, r, c):
    inv = 1 / tab[r][c]
    tab[r] = [x * inv for x in tab[r]]
    for i in range(len(tab)):
        if i != r and tab[i][c] != 0:
            f = tab[i][c]
            tab[i] = [x - f * y for x, y in zip(tab[i], tab[r])]
    basis[r] = c


def _run(tab, basis, cost, ncols):
    while True:
        # reduced costs
        enter = None
        for j in range(ncols):
            if j in basis:
                continue
            rc = cost[j] - sum((cost[bv] * tab[i][j] for i, bv in enumerate(basis)), Fraction(0))
            if rc < 0:
                enter = j
                break
        if enter is None:
            return
        best = None
        for i in range(len(tab)):
            if tab[i][enter] > 0:
                ratio = tab[i][-1] / tab[i][enter]
                if best is None or ratio < best[0] or (ratio == best[0] and basis[i] < basis[best[1]]):
                    best = (ratio, i)
        if best is None:
            raise LPUnbounded("objective unbounded below")
        _pivot(tab, basis, best[1], enter)


def covering_lp(cost, rows, lexicographic: bool = True):
    """min cost.x  s.t.  rows x >= 1, x >= 0, exactly.

    With ``lexicographic`` the optimal solution returned is the
    lexicographically least one among all optima.  Returns (x, value, y) with
    y an optimal dual (rows^T y <= cost, y >= 0, sum y = value).
    """
    m, n = len(rows), len(cost)
    # slack form: rows x - s = 1
    a = [list(map(Fraction, r)) + [Fraction(-int(i == k)) for k in range(m)] for i, r in enumerate(rows)]
    b = [Fraction(1)] * m
    c = [Fraction(x) for x in cost] + [Fraction(0)] * m
    x, val = simplex(c, a, b)
    if lexicographic:
        a_fix = [r[:] for r in a] + [c[:]]
        b_fix = b + [val]
        for j in range(n):
            obj = [Fraction(int(k == j)) for k in range(n + m)]
            x, xj = simplex(obj, a_fix, b_fix)
            a_fix.append(obj)
            b_fix.append(xj)
    # dual: max 1.y s.t. rows^T y <= cost, y >= 0  ->  min -1.y with slacks
    at = [[Fraction(rows[i][j]) for i in range(m)] + [Fraction(int(j == k)) for k in range(n)]
          for j in range(n)]
    y, negval = simplex([Fraction(-1)] * m + [Fraction(0)] * n, at, [Fraction(x) for x in cost])
    y = y[:m]
    if -negval != val:
        raise ArithmeticError("exact LP duality failed")
    return x[:n], val, y
