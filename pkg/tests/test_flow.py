import csv
import math

import numpy as np
import pytest

from thermolab import _backend, _pycore, flow
from thermolab.flow import (
    IntegrationError,
    constant_field,
    integrate_flow,
    integrate_jacobi,
    jacobi_fd_error,
    monodromy,
    solve_W,
    variational_flow,
)
from thermolab.geometry import PhasePoint, conformal_factor, exact_geodesic_flow, reduce_to_domain
from thermolab.structures import FieldFamily, random_unit_states


def test_speed_conserved(fld, rng):
    for th in random_unit_states(3, rng):
        assert integrate_flow(0.05, th, 20.0, fld).speed_error() < 1e-9


def test_geodesic_flow_matches_closed_form(fld, rng):
    for th in random_unit_states(10, rng):
        tr = integrate_flow(0.0, th, 5.0, fld)
        ex, _ = reduce_to_domain(exact_geodesic_flow(th, 5.0))
        assert abs(tr.final.p - ex.p) + abs(tr.final.v - ex.v) < 1e-8


def test_reversible_at_moderate_time(fld, rng):
    th = random_unit_states(1, rng)[0]
    fwd = integrate_flow(0.05, th, 5.0, fld)
    back = integrate_flow(0.05, fwd.final, -5.0, fld)
    assert abs(back.final.p - th.p) < 1e-8


def test_deck_words_follow_crossings(fld, rng):
    th = random_unit_states(1, rng)[0]
    tr = integrate_flow(0.02, th, 6.0, fld, t_eval=np.linspace(0, 6, 13)[1:])
    words = tr.deck_words()
    assert len(words) == len(tr.times)
    assert words[-1] == tuple(c[2] for c in tr.crossings)


def test_t_eval_outside_interval_rejected(fld, rng):
    th = random_unit_states(1, rng)[0]
    with pytest.raises(ValueError):
        integrate_flow(0.0, th, 3.0, fld, t_eval=[1.0, 5.0])


def test_trajectory_csv(tmp_path, fld, rng):
    th = random_unit_states(1, rng)[0]
    tr = integrate_flow(0.01, th, 4.0, fld, t_eval=np.linspace(0, 4, 5)[1:])
    path = tmp_path / "traj.csv"
    tr.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "x", "y", "v1", "v2", "deck_word"]
    assert len(rows) == len(tr.times) + 1
    assert float(rows[-1][0]) == pytest.approx(4.0)


def test_backends_agree(fld, rng, monkeypatch):
    th = random_unit_states(1, rng)[0]
    a = integrate_flow(0.03, th, 3.0, fld, t_eval=[1.0, 2.0, 3.0])
    q, w, amp = fld.translates
    pure = _pycore.Kernel(q.real, q.imag, (2.0 / (1.0 - np.abs(q) ** 2)) / (np.cosh(w) - 1.0), amp)
    pure_fld = FieldFamily()
    object.__setattr__(pure_fld, "__dict__", {**pure_fld.__dict__, "kernel": pure})
    monkeypatch.setattr(_backend, "integrate", _pycore.integrate)
    b = integrate_flow(0.03, th, 3.0, pure_fld, t_eval=[1.0, 2.0, 3.0])
    assert np.max(np.abs(a.positions - b.positions)) < 1e-12
    assert [c[2] for c in a.crossings] == [c[2] for c in b.crossings]


def test_integration_error_on_step_budget(fld, rng):
    th = random_unit_states(1, rng)[0]
    cfg = flow.IntegratorConfig(max_steps=5)
    with pytest.raises(IntegrationError):
        integrate_flow(0.0, th, 10.0, fld, cfg)


@pytest.mark.parametrize("lam", [0.0, 0.01, 0.02])
def test_jacobi_against_finite_differences(fld, lam):
    r = np.random.default_rng(7)
    for th in random_unit_states(10, r):
        assert jacobi_fd_error(lam, th, fld, r) < 1e-4


def test_flow_direction_is_jacobi_field(fld, rng):
    th = random_unit_states(1, rng)[0]
    base = integrate_flow(0.0, th, 3.0, fld, t_eval=np.linspace(0, 3, 7)[1:])
    J, _ = integrate_jacobi(base, th.v, 0j, fld).vectors()
    assert np.max(np.abs(J - base.velocities)) < 1e-9


def test_normal_jacobi_closed_form(rng):
    z = FieldFamily.zero()
    th = random_unit_states(1, rng)[0]
    base = integrate_flow(0.0, th, 3.0, z, t_eval=np.linspace(0, 3, 7)[1:])
    n = 1j * th.v
    js = integrate_jacobi(base, 0.3 * n, -0.7 * n, z)
    t = js.times
    assert np.max(np.abs(js.J[:, 1] - (0.3 * np.cosh(t) - 0.7 * np.sinh(t)))) < 1e-9
    assert np.max(np.abs(js.J[:, 0])) < 1e-12


def test_variational_flow_identity_and_volume(fld, rng):
    th = random_unit_states(1, rng)[0]
    base = integrate_flow(0.0, th, 4.0, fld, t_eval=np.linspace(0, 4, 9)[1:])
    Phi = variational_flow(base, fld)
    assert np.allclose(Phi[0], np.eye(4))
    # the geodesic flow preserves Liouville volume rho^4 dp dv
    ratio = conformal_factor(th.p) ** 4 / (2.0 / (1.0 - np.abs(base.positions) ** 2)) ** 4
    dets = np.linalg.det(Phi)
    assert np.max(np.abs(dets - ratio)) < 1e-8


def test_monodromy_identity_at_zero_time(fld, rng):
    th = random_unit_states(1, rng)[0]
    end, Phi, _ = monodromy(0.01, th, 1e-9, fld)
    assert np.allclose(Phi, np.eye(4), atol=1e-8)


def test_solve_W_residual(fld, short_geodesics):
    for geo in short_geodesics:
        W = solve_W(geo, fld)
        ts = np.linspace(0, geo.length, 256, endpoint=False)
        assert W.residual(ts) < 1e-8
        assert W.periodicity_error() < 1e-9


def test_solve_W_zero_field(short_geodesics):
    W = solve_W(short_geodesics[0], FieldFamily.zero())
    assert np.max(np.abs(W.w(np.linspace(0, 1, 5)))) == 0


def test_solve_W_constant_forcing(short_geodesics, monkeypatch, fld):
    monkeypatch.setattr(flow, "normal_forcing", lambda g, f, ts: np.full(len(ts), 0.75))
    W = solve_W(short_geodesics[0], fld)
    assert np.allclose(W.w(np.linspace(0, 2, 7)), -0.75, atol=1e-12)


def test_constant_field_components():
    f = constant_field(2.0, 0.5, -1.0)
    a, b, da, db = f.components(np.array([0.0, 1.0]))
    assert np.allclose(a, 0.5) and np.allclose(b, -1.0) and np.allclose(da, 0) and np.allclose(db, 0)
