import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from modgrad.mmspace import Curve, CurveFamily, enumerate_curves, grid, parallel_paths, rug
from modgrad.modulus import is_admissible, mod_p, mod_zero_check


@pytest.mark.parametrize("p", [1, 1.5, 2, 3])
def test_parallel_paths_closed_form(p):
    g, fam = parallel_paths(3, 4)
    sol = mod_p(g, fam, p)
    assert math.isclose(float(sol.value), 3 * 4 ** (1 - p), rel_tol=1e-10)
    assert is_admissible(g, sol.density, fam, tol=1e-9).admissible


def test_exact_mode_p2_grid():
    g, fam = grid(3, 3, 1)
    sol = mod_p(g, fam, 2, exact=True)
    assert sol.value == Fraction(3, 2)
    assert sol.duality_gap == 0
    assert is_admissible(g, sol.density, fam, exact=True).admissible


def test_exact_mode_p1_is_min_cut():
    g, fam = grid(4, 4, 1)
    assert mod_p(g, fam, 1, exact=True).value == 4


def test_exact_mode_rejects_irrational_exponents():
    g, fam = parallel_paths(1, 1)
    with pytest.raises(ValueError):
        mod_p(g, fam, 1.5, exact=True)


def test_rug_crossing_family_has_positive_modulus_but_vertical_has_zero():
    g, fam = rug(3, 3, 1)
    assert float(mod_p(g, fam, 2).value) == pytest.approx(1.5)
    vertical = CurveFamily.connect(["v000_000"], ["v000_002"], max_steps=2)
    sol = mod_p(g, vertical, 2)
    assert sol.zero and sol.value == 0


def test_zero_check_needs_every_curve_to_meet_a_null_edge():
    g, _ = rug(3, 3, 1)
    up = Curve.from_vertices(g, ["v000_000", "v000_001"])
    across = Curve.from_vertices(g, ["v000_000", "v001_000"])
    assert mod_zero_check(g, CurveFamily.of_curves([up])).zero
    assert not mod_zero_check(g, CurveFamily.of_curves([up, across])).zero


def test_empty_family():
    g, _ = grid(2, 2, 1)
    sol = mod_p(g, CurveFamily.of_curves([]), 2)
    assert sol.value == 0 and sol.empty


def test_subfamily_monotonicity_and_overflowing():
    g, fam = grid(4, 4, 1)
    full = float(mod_p(g, fam, 2).value)
    some = enumerate_curves(g, fam)[:10]
    part = float(mod_p(g, CurveFamily.of_curves(some), 2).value)
    assert part <= full + 1e-12
    # longer curves only relax the constraints
    plain = CurveFamily.connect([v for v in g.vertices if v.startswith("v000")],
                                [v for v in g.vertices if v.startswith("v003")])
    assert float(mod_p(g, plain, 2).value) == pytest.approx(full, rel=1e-9)


def test_certificate_fields():
    g, fam = grid(5, 5, 1)
    sol = mod_p(g, fam, 3)
    assert abs(float(sol.duality_gap)) <= 1e-6 * float(sol.value)
    assert float(sol.kkt_residual) <= 1e-6
    assert float(sol.dual_value) == pytest.approx(float(sol.value), rel=1e-9)
    doc = sol.to_json()
    assert set(doc) >= {"value", "density", "active_curves", "duality_gap", "kkt_residual", "iterations"}


@settings(max_examples=15, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=12, max_size=12), st.sampled_from([1.5, 2.0, 3.0]))
def test_random_measures_certify(weights, p):
    g0, fam = grid(3, 3, 1)
    g = g0.with_measures(dict(zip(g0.edge_ids, map(float, weights))))
    sol = mod_p(g, fam, p)
    assert abs(float(sol.duality_gap)) <= 1e-6 * float(sol.value)
    assert is_admissible(g, sol.density, fam, tol=1e-9).admissible
    # scaling the measure scales the modulus
    g2 = g0.with_measures(dict(zip(g0.edge_ids, [2.0 * w for w in weights])))
    assert float(mod_p(g2, fam, p).value) == pytest.approx(2 * float(sol.value), rel=1e-7)
