from fractions import Fraction

import pytest

from modgrad.bundle import (Atlas, Section, SectionError, cheeger_compare, differential_section, gradient_norm,
                            left_kernel, lp_decomposition, norm_identity, pq_map, reparametrize, section_norm,
                            transitions)
from modgrad.charts import build_atlas
from modgrad.mmspace import SpaceError, disjoint_union, grid, rug


def pool_of(g):
    return {n: {v: Fraction(g.coords[v][k]) for v in g.vertices} for k, n in enumerate("xy")}


def grid_atlas(n=3):
    g = grid(n, n, 1)[0]
    return g, build_atlas(g, 2, pool_of(g))


def test_identical_charts_give_identity():
    g, a = grid_atlas()
    c = a.charts[0]
    tb = transitions(g, Atlas([c, c], 2))
    for x, D in tb[0, 1].matrices.items():
        assert D == [[1, 0], [0, 1]]
        assert tb[0, 1].isometry[x]


def test_linear_change_of_chart():
    g, a = grid_atlas()
    c = a.charts[0]
    A = [[2, 1], [1, 1]]
    tb = transitions(g, Atlas([c, reparametrize(g, c, A)], 2))
    x = c.U[0]
    assert tb[0, 1].matrices[x] == [[2, 1], [1, 1]]
    xi = (Fraction(1), Fraction(-3))
    # the same covector measured in either chart has the same norm
    c2 = reparametrize(g, c, A)
    assert c.norm(x, tb[0, 1].apply(x, xi)) == c2.norm(x, xi)


def test_dimension_mismatch_on_overlap():
    g, a = grid_atlas()
    c = a.charts[0]
    one = reparametrize(g, c, [[1, 0]])
    with pytest.raises(SpaceError):
        transitions(g, Atlas([c, one], 2))


def test_section_norm_of_dx():
    g = grid(2, 2, 1)[0]
    a = build_atlas(g, 2, pool_of(g))
    sec = differential_section(g, pool_of(g)["x"], a)
    assert all(sec.pointwise_norm(x) == 1 for x in g.vertices)
    total = sum(g.star_measure(x) for x in g.vertices)
    for p in (1.5, 2, 3):
        assert section_norm(g, sec, p) == pytest.approx(total ** (1 / p))
    assert section_norm(g, sec, 2, root=False) == total


def test_zero_section_and_lp_decomposition():
    g, a = grid_atlas(4)
    zero = Section(a, {0: {x: (0, 0) for x in a.charts[0].U}})
    assert section_norm(g, zero, 2) == 0
    f = {v: pool_of(g)["x"][v] * pool_of(g)["y"][v] for v in g.vertices}
    sec = differential_section(g, f, a)
    assert sum(lp_decomposition(g, sec, 2)) == section_norm(g, sec, 2, root=False)


def test_incompatible_section_is_reported():
    g, a = grid_atlas()
    c = a.charts[0]
    two = Atlas([c, reparametrize(g, c, [[2, 0], [0, 1]])], 2)
    bad = Section(two, {0: {x: (1, 0) for x in c.U}, 1: {x: (1, 0) for x in c.U}})
    with pytest.raises(SectionError, match="at 'v"):
        section_norm(g, bad, 2)


def test_union_section_fiber_dimensions():
    u = disjoint_union([("g", grid(3, 3, 1)[0]), ("r", rug(3, 3, 1)[0])])
    a = build_atlas(u, 2)
    sec = differential_section(u, {v: u.coords[v][0] for v in u.vertices}, a)
    dims = {len(sec.omega[sec.home(x)][x]) for x in u.vertices if x.startswith("g:")}
    dims_r = {len(sec.omega[sec.home(x)][x]) for x in u.vertices if x.startswith("r:")}
    assert dims == {2} and dims_r == {1}


def test_norm_identity_for_affine_f():
    g, a = grid_atlas(4)
    p = pool_of(g)
    f = {v: 3 * p["x"][v] - 2 * p["y"][v] for v in g.vertices}
    ni = norm_identity(g, f, a, 2)
    assert ni.ok and ni.section_norm == gradient_norm(g, f, 2, root=False)


def test_pq_map_is_identity_in_this_model():
    g, _ = grid_atlas()
    pool = pool_of(g)
    a15, a2, a3 = (build_atlas(g, p, pool) for p in (1.5, 2, 3))
    m = pq_map(g, a15, a2, [pool["x"]])
    assert m.identity and m.ok
    assert all(M == [[1, 0], [0, 1]] for M in m.matrices.values())
    with pytest.raises(ValueError):
        pq_map(g, a3, a2)


def test_weak_gradient_is_pointwise_monotone_in_p():
    import random
    from modgrad.gradient import minimal_weak_gradient
    g = grid(3, 3, 1)[0]
    rng = random.Random(5)
    for _ in range(20):
        f = {v: rng.uniform(-1, 1) for v in g.vertices}
        lo, hi = minimal_weak_gradient(g, f, 1.5), minimal_weak_gradient(g, f, 3)
        assert all(lo[e] <= hi[e] for e in g.edge_ids)


def test_cheeger_on_grid_and_rug():
    g, a = grid_atlas(4)
    f = {v: pool_of(g)["x"][v] ** 2 for v in g.vertices}
    rep = cheeger_compare(g, f, a)
    assert not rep.gap_locations() and not rep.kernel_locations()
    r = rug(4, 4, 1)[0]
    rp = pool_of(r)
    ra = build_atlas(r, 2, rp)
    s = {v: rp["x"][v] + rp["y"][v] for v in r.vertices}
    pt = cheeger_compare(r, s, ra).points["v001_001"]
    assert pt.lip == 1 and pt.weak == 1 and pt.kernel == [(0, 1)] and pt.submetry
    assert cheeger_compare(r, rp["y"], ra).omega_hypothesis(lambda x, t: 1 + t)["v001_001"]


def test_left_kernel():
    assert left_kernel([[1, 2], [2, 4]]) == [(-2, 1)]
    assert left_kernel([[1, 0], [0, 1]]) == []
