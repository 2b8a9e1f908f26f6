import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermolab.geometry import DomainError, PhasePoint, metric_inner
from thermolab.structures import (
    FieldFamily,
    PhaseCotangentProbe,
    Y_tilde,
    Z_op,
    energy_H,
    random_probe,
    random_unit_states,
    symplectic_residual,
    thermostat_F,
    twisted_omega,
)


def test_E_is_linear_in_lambda(fld):
    p = 0.2 - 0.1j
    assert fld.eval_E(0.0, p) == 0
    assert fld.eval_E(2.0, p) == pytest.approx(2 * fld.eval_E(1.0, p))


def test_symmetric_bump_has_critical_point():
    f = FieldFamily(centers=(0j,), amplitudes=(1.0,), widths=(0.8,))
    assert abs(f.eval_grad_potential(0j)) < 1e-14


def test_compact_support():
    f = FieldFamily(centers=(0j,), amplitudes=(1.0,), widths=(0.2,), truncation=0)
    assert f.eval_grad_potential(0.5 + 0j) == 0


def test_field_matches_potential_gradient(fld):
    # E0 = grad U in the hyperbolic metric: <E0, u> = dU(u)
    p, h = 0.15 + 0.2j, 1e-6
    for u in (1.0, 1j, 0.6 - 0.8j):
        dU = (fld.potential(p + h * u) - fld.potential(p - h * u)) / (2 * h)
        assert metric_inner(p, fld.eval_grad_potential(p), u) == pytest.approx(dU, rel=1e-6, abs=1e-9)


def test_jet_matches_finite_differences(fld):
    P = np.array([0.1 + 0.3j, -0.4 + 0.1j])
    E, DE = fld.jet_many(P)
    h = 1e-6
    for k, d in enumerate((1.0, 1j)):
        Ep, _ = fld.jet_many(P + h * d)
        Em, _ = fld.jet_many(P - h * d)
        col = (Ep - Em) / (2 * h)
        assert np.allclose(DE[:, 0, k], col.real, atol=1e-6)
        assert np.allclose(DE[:, 1, k], col.imag, atol=1e-6)


def test_field_outside_reach_raises(fld):
    with pytest.raises(DomainError):
        fld.eval_E(1.0, 0.9999 + 0j)


def test_automorphy_defect_small(fld):
    assert fld.automorphy_defect(n=100) < 1e-9


def test_Y_tilde_on_velocity_is_vertical_part(fld, rng):
    for th in random_unit_states(5, rng):
        Fh, Fv = thermostat_F(0.3, th, fld)
        assert Y_tilde(th, 0.3, th.v, fld) == pytest.approx(Fv, abs=1e-12)
        assert Y_tilde(th, 0.0, 0.2 + 0.1j, fld) == 0


def test_Z_is_lambda_derivative(fld, rng):
    th = random_unit_states(1, rng)[0]
    u = 0.4 - 0.3j
    h = 1e-4
    fd = (Y_tilde(th, h, u, fld) - Y_tilde(th, -h, u, fld)) / (2 * h)
    assert Z_op(th, u, fld) == pytest.approx(fd, rel=1e-8, abs=1e-12)
    E = fld.eval_grad_potential(th.p)
    assert Z_op(th, th.v, fld) == pytest.approx(E - metric_inner(th.p, E, th.v) * th.v, abs=1e-12)


def test_zero_field_Z_vanishes(rng):
    th = random_unit_states(1, rng)[0]
    assert Z_op(th, 1.0 + 0j, FieldFamily.zero()) == 0


def test_energy():
    th = PhasePoint.unit(0.3j, 1.0)
    assert energy_H(th) == pytest.approx(0.5)
    assert energy_H(PhasePoint(0.3j, 0j)) == 0


def test_F_geodesic_at_zero_and_tangent_to_energy_levels(fld, rng):
    for th in random_unit_states(5, rng):
        Fh, Fv = thermostat_F(0.0, th, fld)
        assert Fh == th.v and Fv == 0
        _, Fv = thermostat_F(0.7, th, fld)
        assert abs(metric_inner(th.p, Fv, th.v)) < 1e-14


@given(st.floats(-1, 1), st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_twisted_omega_antisymmetric(lam, seed):
    from thermolab.structures import default_field

    fld = default_field()
    r = np.random.default_rng(seed)
    th = random_unit_states(1, r)[0]
    a, b = random_probe(th, r), random_probe(th, r)
    assert twisted_omega(lam, th, a, b, fld) == pytest.approx(-twisted_omega(lam, th, b, a, fld), abs=1e-12)
    assert abs(twisted_omega(lam, th, a, a, fld)) < 1e-12


def test_twisted_omega_reduces_to_canonical(fld, rng):
    th = random_unit_states(1, rng)[0]
    a, b = random_probe(th, rng), random_probe(th, rng)
    w0 = metric_inner(th.p, a.horizontal, b.vertical) - metric_inner(th.p, a.vertical, b.horizontal)
    assert twisted_omega(0.0, th, a, b, fld) == pytest.approx(w0, abs=1e-15)


def test_probe_encode_decode(rng):
    th = random_unit_states(1, rng)[0]
    pr = PhaseCotangentProbe.encode(th, 0.1 + 0.2j, -0.3j)
    assert pr.decode() == pytest.approx((0.1 + 0.2j, -0.3j))


def test_symplectic_residual(fld, rng):
    for th in random_unit_states(20, rng):
        assert symplectic_residual(0.0, th, 100, fld) < 1e-12
        assert symplectic_residual(0.1, th, 100, fld) < 1e-10


def test_symplectic_residual_negative_control(fld, rng):
    th = random_unit_states(1, rng)[0]

    def corrupted(lam, t):
        Fh, Fv = thermostat_F(lam, t, fld)
        return Fh, Fv + 0.01 * 1j * t.v

    assert symplectic_residual(0.1, th, 100, fld, F=corrupted) > 1e-3
