import math

import numpy as np
import pytest

from thermolab.flow import TrigField, constant_field, integrate_flow, dirichlet_chart
from thermolab.geometry import enumerate_classes, geodesic_from_class
from thermolab.orbits import (
    ContinuationError,
    continue_orbit,
    energy_second_variation,
    identity_suite,
    index_form,
    margin_scan,
    orbit_energy,
    period_curve,
    symmetric_fit,
)
from thermolab.structures import FieldFamily


@pytest.fixture(scope="module")
def geo():
    return geodesic_from_class(enumerate_classes(1)[0])


@pytest.fixture(scope="module")
def curve(geo, fld):
    return period_curve(geo, fld)


def test_zero_lambda_orbit_is_the_geodesic(geo, fld):
    orb = continue_orbit(geo, 0.0, fld)
    assert orb.period == pytest.approx(geo.length, abs=1e-10)


@pytest.mark.parametrize("lam", [0.02, -0.02])
def test_continued_orbit_closes(geo, fld, lam):
    orb = continue_orbit(geo, lam, fld)
    assert orb.residual < 1e-9
    tr = integrate_flow(lam, orb.anchor, orb.period, fld, chart=dirichlet_chart())
    assert abs(tr.final.p - orb.anchor.p) < 1e-8


def test_continuation_failure_is_reported(geo, fld):
    with pytest.raises(ContinuationError):
        continue_orbit(geo, 0.02, fld, max_iter=1, max_halvings=0, tol=1e-30)


def test_period_curve_first_derivative_vanishes(geo, curve):
    assert abs(curve.dT) < 1e-4 * geo.length
    assert np.all(curve.residuals < 1e-9)


def test_second_derivatives_agree(geo, fld, curve):
    ev = energy_second_variation(geo, fld, curve=curve)
    rep = identity_suite(geo, fld)
    vals = [curve.d2T, 0.5 * ev.d2E, rep.I_WW]
    assert max(vals) - min(vals) < 0.02 * max(abs(v) for v in vals)
    assert ev.max_relative_deviation < 1e-10


def test_orbit_energy_at_zero_is_length(geo, fld):
    orb = continue_orbit(geo, 0.0, fld)
    assert orbit_energy(orb, geo.length, fld) == pytest.approx(geo.length, rel=1e-10)


def test_zero_grid_gives_flat_curve():
    d1, _, d2, _ = symmetric_fit([-0.1, 0.1], [2.0, 2.0], 2.0)
    assert d1 == 0 and d2 == 0


def test_symmetric_fit_recovers_polynomial():
    grid = np.array([-0.02, -0.01, -0.005, 0.005, 0.01, 0.02])
    vals = 3.0 + 0.0 * grid + 0.5 * 1.7 * grid**2 + 0.3 * grid**4
    d1, _, d2, _ = symmetric_fit(grid, vals, 3.0)
    assert abs(d1) < 1e-12
    assert d2 == pytest.approx(1.7, rel=1e-8)


def test_index_form_of_tangent_field_vanishes(geo):
    assert abs(index_form(geo, constant_field(geo.length, 1.0), constant_field(geo.length, 1.0))) < 1e-12


def test_index_form_of_parallel_normal_is_length(geo):
    n = constant_field(geo.length, 0.0, 1.0)
    assert index_form(geo, n, n) == pytest.approx(geo.length, rel=1e-12)


def test_index_form_positive_on_random_fields(geo):
    r = np.random.default_rng(3)
    vals = [index_form(geo, f, f) for f in (TrigField.random(geo.length, r) for _ in range(200))]
    assert min(vals) >= -1e-9


def test_index_form_symmetric(geo):
    r = np.random.default_rng(4)
    U, V = TrigField.random(geo.length, r), TrigField.random(geo.length, r)
    assert index_form(geo, U, V) == pytest.approx(index_form(geo, V, U), rel=1e-10)


def test_identity_suite_residuals(geo, fld):
    rep = identity_suite(geo, fld)
    for k in ("EE", "E_Et", "Et_Et", "VV"):
        assert rep.residuals[k] < 1e-6
    assert rep.wv_variant == "b"
    assert rep.residuals["WV_b"] < 1e-6 < rep.residuals["WV_a"]
    assert rep.A > 0 and rep.B >= rep.A


def test_identity_suite_zero_field(geo):
    rep = identity_suite(geo, FieldFamily.zero())
    assert rep.I_WW == 0 and rep.A == 0 and rep.B == 0


def test_margins(geo, fld, curve):
    rep = identity_suite(geo, fld)
    m = margin_scan(rep, curve.d2T)
    assert len(m) == 5
    assert min(m.values()) >= -1e-8
    assert m[rep.x_star] == pytest.approx(min(m.values()))


def test_margins_zero_field(geo):
    rep = identity_suite(geo, FieldFamily.zero())
    assert all(v == 0 for v in margin_scan(rep, 0.0).values())


def test_long_orbit_needs_multiple_segments(fld):
    geo = geodesic_from_class(next(c for c in enumerate_classes(3) if c.word == (0, 2, 2)))
    orb = continue_orbit(geo, -0.02, fld)
    assert orb.residual < 1e-9
    assert len(orb.nodes) > 1
    assert math.isfinite(orb.period)
