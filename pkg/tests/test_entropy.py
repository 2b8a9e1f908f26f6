import json
import math

import numpy as np
import pytest

from thermolab.entropy import (
    DegenerateFieldError,
    b_minus_a_min,
    bound_report,
    completeness_threshold,
    compute_A,
    compute_B,
    fiber_oracle_A,
    fit_growth,
    quadratic_fit,
    sample_liouville,
    substream,
)
from thermolab.structures import FieldFamily


@pytest.fixture(scope="module")
def sample():
    return sample_liouville(50_000, 11)


def test_sampling_is_deterministic():
    a, b = sample_liouville(1, 3), sample_liouville(1, 3)
    assert a.P[0] == b.P[0] and a.V[0] == b.V[0]
    assert sample_liouville(1, 4).P[0] != a.P[0]


def test_substreams_are_independent():
    assert substream(1, "sampling").random() != substream(1, "probes").random()


def test_samples_are_unit_and_inside(sample):
    from thermolab.geometry import bolza_group

    rho = 2.0 / (1.0 - np.abs(sample.P) ** 2)
    assert np.allclose(rho * np.abs(sample.V), 1.0)
    g = bolza_group()
    assert all(g.contains(complex(p)) for p in sample.P[:500])


def test_sample_symmetry_and_area(sample):
    x = sample.P.real
    assert abs(x.mean()) < 3 * x.std() / math.sqrt(len(x))
    area, err = sample.area_estimate()
    assert abs(area - 4 * math.pi) < 3 * err


def test_zero_field_gives_zero(sample):
    z = FieldFamily.zero()
    assert compute_A(sample, z) == (0.0, 0.0)
    assert compute_B(sample, z) == (0.0, 0.0)
    with pytest.raises(DegenerateFieldError):
        bound_report(sample, z)


def test_sign_structure(sample, fld):
    rep = bound_report(sample, fld)
    assert all(rep.sign_checks().values())
    assert rep.x_star == pytest.approx(rep.A / rep.B)
    assert json.loads(rep.to_json())["variant"] == "b"


def test_pointwise_B_dominates_A(sample, fld):
    assert b_minus_a_min(sample, fld) >= -1e-12


def test_scale_covariance(sample, fld):
    r1 = bound_report(sample, fld)
    r2 = bound_report(sample, fld.scaled(2.0))
    assert r2.A == pytest.approx(4 * r1.A, rel=1e-12)
    assert r2.B == pytest.approx(4 * r1.B, rel=1e-12)
    assert r2.x_star == pytest.approx(r1.x_star, rel=1e-12)
    assert r2.bound == pytest.approx(4 * r1.bound, rel=1e-12)


def test_A_matches_oracle(sample, fld):
    A, err = compute_A(sample, fld)
    o = fiber_oracle_A(fld)
    assert o["area"] == pytest.approx(4 * math.pi, rel=1e-8)
    assert o["quadrature_change"] < 1e-3 * o["A"]
    assert abs(A - o["A"]) < 3 * err


def test_stderr_scaling(fld):
    _, e1 = compute_A(sample_liouville(20_000, 5), fld)
    _, e2 = compute_A(sample_liouville(40_000, 5), fld)
    assert e2 / e1 == pytest.approx(1 / math.sqrt(2), rel=0.1)


def test_equal_A_B_algebra():
    # bound = -h0 A^2 / B reduces to -h0 A when A = B
    A = B = 0.3
    assert -1.0 * A**2 / B == pytest.approx(-A)


def test_fit_growth_on_exact_counting_function():
    # N(T) = e^{hT} / (hT) sampled at its jumps
    h = 1.3
    T = []
    for k in range(1, 3000):
        # invert N(T) = k by bisection
        lo, hi = 0.5, 20.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if math.exp(h * mid) / (h * mid) < k - 0.5:
                lo = mid
            else:
                hi = mid
        T.append(lo)
    fit = fit_growth(T, T[-1])
    assert fit["h"] == pytest.approx(h, rel=0.02)


def test_completeness_threshold_small_word_length():
    # length 4.897 needs word length 4, so L = 3 is complete only below it
    assert completeness_threshold(3) == 4.0
    assert completeness_threshold(3, probe=5.0) == pytest.approx(2 * math.acosh(3 + 2 * math.sqrt(2)), abs=1e-6)


def test_quadratic_fit_exact():
    g = np.array([-0.03, -0.02, -0.01, 0.0, 0.01, 0.02, 0.03])
    c, se, hw = quadratic_fit(g, 1.0 + 0.0 * g - 0.4 * g**2)
    assert c == pytest.approx([1.0, 0.0, -0.4], abs=1e-10)
    single, _, _ = quadratic_fit([0.0], [0.9])
    assert single[0] == 0.9 and math.isnan(single[1])


def test_trace_and_integrated_periods_agree(fld):
    from thermolab.entropy import _period_job, spectrum_classes

    _, classes = spectrum_classes(4)
    for c in classes:
        assert _period_job((c, 0.0, fld)) == pytest.approx(c.length, abs=1e-6)
