import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermolab.geometry import (
    SYSTOLE,
    DomainError,
    Isometry,
    PhasePoint,
    bolza_group,
    conformal_factor,
    covariant_derivative,
    curvature_R,
    enumerate_by_length,
    enumerate_classes,
    exact_geodesic_flow,
    geodesic_from_class,
    hyperbolic_distance,
    metric_inner,
    reduce_to_domain,
    unreduce,
)

disk_points = st.builds(
    lambda r, a: r * complex(math.cos(a), math.sin(a)),
    st.floats(0.0, 0.9),
    st.floats(0.0, 2 * math.pi),
)
vectors = st.builds(complex, st.floats(-3, 3), st.floats(-3, 3))


def test_metric_examples():
    assert metric_inner(0j, 1, 1) == pytest.approx(4.0)
    assert metric_inner(0j, 1, 1j) == 0.0
    assert metric_inner(0.5, 1, 1) == pytest.approx(4 / 0.75**2)


def test_metric_rejects_boundary():
    with pytest.raises(DomainError):
        metric_inner(1.0 + 0j, 1, 1)


def test_covariant_derivative_at_origin_and_along_geodesic():
    assert covariant_derivative(0j, 0.3 + 0.2j, 1.0 + 2.0j, 0j) == 0
    for t in (0.1, 0.7, 2.0):
        p = math.tanh(t / 2)
        pdot = 0.5 / math.cosh(t / 2) ** 2
        pddot = -0.5 * math.tanh(t / 2) / math.cosh(t / 2) ** 2
        assert abs(covariant_derivative(p, pdot, pdot, pddot)) < 1e-14


@given(disk_points, vectors, vectors)
def test_sectional_curvature_is_minus_one(p, u, w):
    area = metric_inner(p, u, u) * metric_inner(p, w, w) - metric_inner(p, u, w) ** 2
    if area < 1e-6 * conformal_factor(p) ** 4:
        return
    k = metric_inner(p, curvature_R(p, u, w, u), w) / area
    assert k == pytest.approx(-1.0, rel=1e-9)
    assert abs(curvature_R(p, u, u, w)) < 1e-9 * (1 + abs(u) ** 2 * abs(w))


@given(disk_points, st.floats(0, 2 * math.pi), st.floats(-4, 4))
@settings(max_examples=50)
def test_exact_flow_unit_speed_and_reversible(p, ang, t):
    th = PhasePoint.unit(p, ang)
    out = exact_geodesic_flow(th, t)
    assert out.speed == pytest.approx(1.0, abs=1e-9)
    assert hyperbolic_distance(p, out.p) == pytest.approx(abs(t), abs=1e-7)
    back = exact_geodesic_flow(out, -t)
    assert abs(back.p - p) < 1e-10


def test_exact_flow_radial_example():
    out = exact_geodesic_flow(PhasePoint.unit(0j, 0.0), 1.0)
    assert out.p == pytest.approx(math.tanh(0.5))
    assert metric_inner(out.p, out.v, out.v) == pytest.approx(1.0)
    assert exact_geodesic_flow(PhasePoint.unit(0.2j, 1.0), 0.0) == PhasePoint.unit(0.2j, 1.0)


def test_group_construction_verifies():
    rep = bolza_group().verify()
    assert rep["ok"]
    assert rep["relation_residual"] < 1e-12
    assert abs(bolza_group().generators[0].trace) == pytest.approx(2 * (1 + math.sqrt(2)))


def test_jittered_group_fails_relation():
    assert not bolza_group(1e-3).verify()["ok"]


def test_reduce_interior_is_identity():
    th = PhasePoint.unit(0.1 + 0.05j, 0.3)
    red, word = reduce_to_domain(th)
    assert red == th and word == []


def test_reduce_single_generator():
    g = bolza_group().generators[0]
    inner = PhasePoint.unit(0.2 + 0.1j, 1.0)
    red, word = reduce_to_domain(g.push(inner))
    assert word == [4]
    assert abs(red.p - inner.p) < 1e-12


def test_reduce_round_trip(rng):
    for _ in range(20):
        th = PhasePoint.unit(0.97 * np.exp(2j * np.pi * rng.random()), rng.uniform(0, 6.28))
        red, word = reduce_to_domain(th)
        assert bolza_group().contains(red.p, 1e-12)
        back = unreduce(red, word)
        assert abs(back.p - th.p) < 1e-10


def test_isometry_composition_and_inverse():
    g, h = bolza_group().generators[1], Isometry.translation(0.7, 0.4)
    z = 0.3 - 0.2j
    assert abs((g @ h)(z) - g(h(z))) < 1e-12
    assert abs(g.inverse()(g(z)) - z) < 1e-12


def test_word_length_one_classes():
    classes = enumerate_classes(1)
    assert len(classes) == 4
    for c in classes:
        assert c.length == pytest.approx(2 * math.acosh(1 + math.sqrt(2)), abs=1e-10)
        assert c.length == pytest.approx(3.05714, abs=1e-5)
    assert SYSTOLE == pytest.approx(3.057141838961996)


def test_inverse_word_same_length():
    g = bolza_group()
    for c in enumerate_classes(2):
        inv = g.word_isometry(tuple((k + 4) % 8 for k in reversed(c.word)))
        assert inv.translation_length == pytest.approx(c.length, abs=1e-10)


def test_enumeration_against_length_ordered_spectrum():
    by_len = sorted(c.length for c in enumerate_by_length(5.0))
    short = sorted(c.length for c in enumerate_classes(3, max_length=5.0))
    # word length 3 already misses some classes of length 4.897
    assert len(short) < len(by_len)
    assert all(np.any(np.isclose(t, by_len, atol=1e-8)) for t in short)
    full = sorted(c.length for c in enumerate_classes(4, max_length=5.0))
    assert np.allclose(full, by_len, atol=1e-8)


def test_closed_geodesic_closes():
    for c in enumerate_classes(2)[:6]:
        geo = geodesic_from_class(c)
        assert geo.closure_error() < 1e-9
        P, V = geo.sample(np.linspace(0, geo.length, 9))
        assert np.allclose(conformal_factor_many(P) * np.abs(V), 1.0, atol=1e-10)


def conformal_factor_many(P):
    return 2.0 / (1.0 - np.abs(P) ** 2)
