import json

import pytest
from hypothesis import given, settings, strategies as st

from modgrad.mmspace import (BudgetExceeded, Curve, CurveFamily, MetricGraph, Edge, ParseError, SpaceError,
                             carpet, crossing_family, disjoint_union, enumerate_curves, family_from_obj,
                             family_to_obj, grid, line_integral, load_space, metric_axioms_hold,
                             parallel_paths, rug, save_space)


def test_grid_shape_and_measure():
    g, fam = grid(3, 3, 0.5)
    assert len(g.vertices) == 9 and len(g.edge_ids) == 12
    assert all(g.length(e) == 0.5 and g.measure(e) == 0.25 for e in g.edge_ids)
    assert g.star_measure("v001_001") == 0.5
    assert metric_axioms_hold(g)


def test_rug_vertical_edges_are_null():
    g, _ = rug(3, 3, 1)
    assert sorted(g.null_edges()) == sorted(e for e in g.edge_ids if e.startswith("u"))
    assert all(g.measure(e) == 1 for e in g.positive_edges())


def test_parallel_paths_family_is_the_paths():
    g, fam = parallel_paths(3, 2)
    curves = enumerate_curves(g, fam)
    assert len(curves) == 3
    assert all(c.length(g) == 2 for c in curves)


def test_crossing_counts():
    assert [len(enumerate_curves(*grid(n, n, 1))) for n in (3, 4)] == [9, 80]


def test_budget_is_an_error_not_a_truncation():
    g, fam = grid(5, 5, 1)
    with pytest.raises(BudgetExceeded):
        enumerate_curves(g, fam, max_count=100)


def test_curve_validation_and_line_integral():
    g, _ = grid(2, 2, 1)
    c = Curve.from_vertices(g, ["v000_000", "v001_000", "v001_001"])
    assert c.length(g) == 2 and c.is_simple(g)
    assert line_integral({e: 1.0 for e in g.edge_ids}, c, g) == 2.0
    assert c.reversed().endpoints(g) == ("v001_001", "v000_000")
    with pytest.raises(SpaceError):
        Curve.from_vertices(g, ["v000_000", "v001_001"])


def test_json_round_trip_is_canonical():
    g, _ = grid(3, 2, 0.1)
    data = save_space(g)
    g2 = load_space(data)
    assert save_space(g2) == data
    assert g2.coords == g.coords


@pytest.mark.parametrize("doc,path", [
    ({"vertices": [{"id": "a"}, {"id": "b"}], "edges": [{"id": "e", "u": "a", "v": "b", "len": 0, "measure": 1}]},
     "$.edges[0].len"),
    ({"vertices": [{"id": "a"}, {"id": "b"}], "edges": [{"id": "e", "u": "a", "v": "b", "len": 1, "measure": -1}]},
     "$.edges[0].measure"),
    ({"vertices": [{"id": "a"}], "edges": [{"id": "e", "u": "a", "v": "z", "len": 1, "measure": 1}]},
     "$.edges[0].v"),
    ({"vertices": [{"id": "a"}, {"id": "a"}], "edges": []}, "$.vertices[1]"),
    ({"edges": []}, "$.vertices"),
])
def test_parse_errors_name_the_path(doc, path):
    with pytest.raises(ParseError) as err:
        load_space(json.dumps(doc))
    assert err.value.path == path


def test_family_json_round_trip():
    g, fam = grid(3, 3, 1)
    again = family_from_obj(family_to_obj(fam), g)
    assert enumerate_curves(g, again) == enumerate_curves(g, fam)
    explicit = CurveFamily.of_curves(enumerate_curves(g, fam)[:3])
    assert family_from_obj(json.loads(json.dumps(family_to_obj(explicit))), g).explicit == explicit.explicit


def test_disjoint_union_prefixes_ids():
    u = disjoint_union([("a", grid(2, 2, 1)[0]), ("b", rug(2, 2, 1)[0])])
    assert len(u.vertices) == 8
    assert all(v.startswith(("a:", "b:")) for v in u.vertices)


def test_carpet_removes_hole_interiors():
    # at level 1 the hole's boundary edges are shared with kept cells
    assert len(carpet(1)[0].edge_ids) == 24
    g, _ = carpet(2)
    assert metric_axioms_hold(g)
    assert len(g.edge_ids) < 2 * 9 * 10
    assert "v004_004" not in g.vertices


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5),
                          st.floats(0.01, 10, allow_nan=False), st.floats(0, 10, allow_nan=False)),
                min_size=1, max_size=12))
def test_save_load_round_trip_property(raw):
    edges = [Edge(f"e{i}", f"n{a}", f"n{b}", ln, ms) for i, (a, b, ln, ms) in enumerate(raw) if a != b]
    verts = sorted({v for e in edges for v in (e.u, e.v)} | {"n0"})
    g = MetricGraph(verts, edges)
    assert save_space(load_space(save_space(g))) == save_space(g)
