"""Acceptance criteria 1-13, one PASS/FAIL line each.

Run on its own with ``python3 tests/test_acceptance.py`` or as part of
``pytest``. The orbit criteria (5-9) sweep every conjugacy class of word
length <= 3 and take several minutes on one core; criterion 13 is a stretch
goal and is reported as xfail when it does not hold.
"""

import math

import numpy as np
import pytest

from thermolab.entropy import (
    bound_report,
    entropy_curve,
    entropy_from_spectrum,
    fiber_oracle_A,
    sample_liouville,
)
from thermolab.flow import TrigField, integrate_flow, jacobi_fd_error, solve_W
from thermolab.geometry import enumerate_classes, exact_geodesic_flow, geodesic_from_class, reduce_to_domain
from thermolab.orbits import energy_second_variation, identity_suite, index_form, margin_scan, period_curve
from thermolab.structures import random_unit_states, symplectic_residual

pytestmark = pytest.mark.acceptance

SEED = 20240607
MC_SAMPLES = 100_000


@pytest.fixture(scope="session")
def report(request):
    tr = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(n, passed, detail):
        line = f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}"
        if tr is not None:
            tr.write_line("")
            tr.write_line(line)
        else:  # pragma: no cover
            print(line)

    return emit


def test_c01_speed_conserved(fld, report):
    rng = np.random.default_rng(SEED)
    worst = max(
        integrate_flow(lam, th, 20.0, fld).speed_error()
        for lam in (0.01, 0.05)
        for th in random_unit_states(5, rng)
    )
    report(1, worst < 1e-9, f"max | |v| - 1 | over t <= 20, lambda <= 0.05: {worst:.2e} (< 1e-9)")
    assert worst < 1e-9


def test_c02_symplectic_identity(fld, report):
    rng = np.random.default_rng(SEED + 2)
    states = random_unit_states(20, rng)
    worst = max(
        symplectic_residual(lam, th, 100, fld, seed=SEED + 10 * i + j)
        for i, th in enumerate(states)
        for j, lam in enumerate((0.0, 0.05))
    )
    report(2, worst < 1e-10, f"max |dH(xi) - omega(F, xi)| over 2x2000 probes: {worst:.2e} (< 1e-10)")
    assert worst < 1e-10


def test_c03_jacobi_finite_differences(fld, report):
    rng = np.random.default_rng(SEED + 3)
    errs = {
        lam: max(jacobi_fd_error(lam, th, fld, rng) for th in random_unit_states(10, rng))
        for lam in (0.0, 0.01, 0.02)
    }
    worst = max(errs.values())
    detail = ", ".join(f"lambda={l}: {e:.1e}" for l, e in errs.items())
    report(3, worst < 1e-4, f"Jacobi vs central differences, relative: {detail} (< 1e-4)")
    assert worst < 1e-4


def test_c04_exact_geodesic_flow(fld, report):
    rng = np.random.default_rng(SEED + 4)
    worst = 0.0
    for th in random_unit_states(50, rng):
        tr = integrate_flow(0.0, th, 5.0, fld)
        ex, _ = reduce_to_domain(exact_geodesic_flow(th, 5.0))
        worst = max(worst, abs(ex.p - tr.final.p) + abs(ex.v - tr.final.v))
    report(4, worst < 1e-8, f"numeric vs Moebius flow at t=5, 50 starts: {worst:.2e} (< 1e-8)")
    assert worst < 1e-8


# ---------------------------------------------------------------------------
# orbit criteria share one sweep over all classes of word length <= 3


def _orbit_record(klass, fld, rng):
    g = geodesic_from_class(klass)
    cur = period_curve(g, fld)
    ev = energy_second_variation(g, fld, curve=cur)
    rep = identity_suite(g, fld, solve_W(g, fld))
    idx = [index_form(g, f, f) for f in (TrigField.random(g.length, rng) for _ in range(200))]
    return {
        "word": klass.word,
        "T": g.length,
        "dT": cur.dT,
        "second": (cur.d2T, 0.5 * ev.d2E, rep.I_WW),
        "min_index": min(idx),
        "residuals": rep.residuals,
        "variant": rep.wv_variant,
        "margin": min(margin_scan(rep, cur.d2T).values()),
    }


@pytest.fixture(scope="session")
def orbit_sweep(fld):
    rng = np.random.default_rng(SEED + 5)
    return [_orbit_record(c, fld, rng) for c in enumerate_classes(3)]


def test_c05_first_derivative_vanishes(orbit_sweep, report):
    worst = max(abs(r["dT"]) / r["T"] for r in orbit_sweep)
    report(5, worst < 1e-4, f"max |T'(0)|/T over {len(orbit_sweep)} classes: {worst:.1e} (< 1e-4)")
    assert worst < 1e-4


def test_c06_second_derivatives_agree(orbit_sweep, report):
    def spread(vals):
        return max(abs(a - b) for a in vals for b in vals) / max(abs(v) for v in vals)

    worst = max(spread(r["second"]) for r in orbit_sweep)
    report(6, worst < 0.02, f"max pairwise spread of T'', E''/2, I(W,W): {worst:.1e} (< 2%)")
    assert worst < 0.02


def test_c07_index_positivity(orbit_sweep, report):
    worst = min(r["min_index"] for r in orbit_sweep)
    report(7, worst >= -1e-9, f"min I(V,V) over 200 random fields per orbit: {worst:.3g} (>= -1e-9)")
    assert worst >= -1e-9


def test_c08_identity_suite(orbit_sweep, report):
    keys = ("EE", "E_Et", "Et_Et", "VV")
    worst = max(r["residuals"][k] for r in orbit_sweep for k in keys)
    wv = {v: max(r["residuals"]["WV_" + v] for r in orbit_sweep) for v in "ab"}
    votes = {v: sum(r["variant"] == v for r in orbit_sweep) for v in "ab"}
    ok = worst < 1e-6 and wv[max(votes, key=votes.get)] < 1e-6
    report(
        8, ok,
        f"max identity residual {worst:.1e} (< 1e-6); I(W,V) variant a: max residual {wv['a']:.2e}, "
        f"variant b: {wv['b']:.2e}; adopted per orbit a={votes['a']} b={votes['b']}",
    )
    assert ok


def test_c09_margins(orbit_sweep, report):
    worst = min(r["margin"] for r in orbit_sweep)
    report(9, worst >= -1e-8, f"min margin over x in {{0.1, 0.5, 1, x*, 2x*}}: {worst:.3e} (>= -1e-8)")
    assert worst >= -1e-8


# ---------------------------------------------------------------------------
# Monte Carlo bound


@pytest.fixture(scope="session")
def mc_sample():
    return sample_liouville(MC_SAMPLES, SEED)


@pytest.fixture(scope="session")
def bound(mc_sample, fld):
    return bound_report(mc_sample, fld)


def test_c10_bound_pipeline(bound, fld, report):
    oracle = fiber_oracle_A(fld)["A"]
    gap = (bound.A - oracle) / bound.A_stderr
    checks = bound.sign_checks()
    ok = all(checks.values()) and abs(gap) < 3.0
    report(
        10, ok,
        f"A={bound.A:.5f}+-{bound.A_stderr:.1e}, B={bound.B:.5f}+-{bound.B_stderr:.1e}, "
        f"bound={bound.bound:.5f}; oracle A={oracle:.5f} ({gap:+.2f} stderr); {checks}",
    )
    assert ok


def test_c11_scale_covariance(bound, fld, report):
    doubled = bound_report(sample_liouville(MC_SAMPLES, SEED + 1), fld.scaled(2.0))

    def z(a, sa, b, sb):
        return abs(a - b) / math.hypot(sa, sb)

    zA = z(doubled.A / 4.0, doubled.A_stderr / 4.0, bound.A, bound.A_stderr)
    zB = z(doubled.B / 4.0, doubled.B_stderr / 4.0, bound.B, bound.B_stderr)
    zx = z(doubled.x_star, doubled.x_star_stderr, bound.x_star, bound.x_star_stderr)
    ok = max(zA, zB, zx) < 3.0
    report(
        11, ok,
        f"independent samples, doubled amplitude: A ratio {doubled.A / bound.A:.4f} ({zA:.2f} sd), "
        f"B ratio {doubled.B / bound.B:.4f} ({zB:.2f} sd), x* {zx:.2f} sd (< 3)",
    )
    assert ok


# ---------------------------------------------------------------------------
# entropy


def test_c12_entropy_at_zero(report):
    est = entropy_from_spectrum(0.0, 8)
    ok = abs(est.h - 1.0) < 0.1
    report(12, ok, f"L=8 spectrum estimate h={est.h:.4f} from {est.orbits} orbits up to T={est.t_cut:.3f} (within 10% of 1)")
    assert ok


@pytest.mark.slow
def test_c12b_more_spectrum_helps(report):
    e6, e10 = entropy_from_spectrum(0.0, 6), entropy_from_spectrum(0.0, 10)
    ok = abs(e10.h - 1.0) <= abs(e6.h - 1.0)
    report("12b", ok, f"|h - 1|: L=6 {abs(e6.h - 1):.4f}, L=10 {abs(e10.h - 1):.4f} (non-increasing)")
    assert ok


@pytest.mark.slow
def test_c13_entropy_curve_stretch(bound, fld, report):
    fit = entropy_curve([-0.03, -0.02, -0.01, 0.0, 0.01, 0.02, 0.03], 8, fld)
    s = fit.summary(bound.bound, bound.bound_stderr)
    ok = s["c1_compatible_with_zero"] and s["consistent_with_bound"] and not s["partial"]
    report(
        "13 (stretch, non-blocking)", ok,
        f"c1={s['c1']:.2e} (95% hw {s['ci95_halfwidth'][1]:.2e}); 2c2={s['h2_estimate']:.4f} "
        f"+-{s['h2_ci95_halfwidth']:.4f} vs bound {s['bound']:.4f}, slack {s['slack']:.4f}, partial={s['partial']}",
    )
    if not ok:
        pytest.xfail("stretch criterion not met at L=8; finite-spectrum estimator bias, see README")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))
