"""Periodic-orbit continuation in the field strength, period derivatives and index-form identities."""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .flow import (
    AlongField,
    dirichlet_chart,
    IntegrationError,
    IntegratorConfig,
    TrigField,
    WField,
    e0_frame_components,
    integrate_flow,
    monodromy,
    solve_W,
    vector_field,
)
from .geometry import (
    ClosedGeodesic,
    DomainError,
    PhasePoint,
    curvature_R_many,
    cutting_domain,
    metric_inner_many,
)
from .structures import FieldFamily

CONTINUATION_CONFIG = IntegratorConfig(rtol=1e-12, atol=1e-14)
DEFAULT_GRID = (-0.02, -0.01, -0.005, 0.005, 0.01, 0.02)


class ContinuationError(RuntimeError):
    def __init__(self, message: str, residual: float = math.nan):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class PartialCurveError(RuntimeError):
    def __init__(self, failed: list[float], curve: "PeriodCurve | None" = None):
        super().__init__(f"continuation failed at lambda = {failed}")
        self.failed = failed
        self.curve = curve


@dataclass
class PeriodicOrbit:
    """Continued orbit; ``nodes`` are the shooting nodes ``(x, y, angle)`` at ``fractions`` of the period."""

    lam: float
    anchor: PhasePoint
    period: float
    residual: float
    iterations: int
    nodes: np.ndarray
    fractions: np.ndarray
    samples: object = None


def _wrap(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def _readout(th: PhasePoint) -> np.ndarray:
    return np.array([th.p.real, th.p.imag, math.atan2(th.v.imag, th.v.real)])


def _readout_jac(th: PhasePoint) -> np.ndarray:
    v2 = abs(th.v) ** 2
    return np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0], [0, 0, -th.v.imag / v2, th.v.real / v2]])


def _unit_state(z) -> PhasePoint:
    p = complex(z[0], z[1])
    return PhasePoint(p, cmath.exp(1j * z[2]) * (1.0 - abs(p) ** 2) / 2.0)


def _unit_state_jac(z) -> np.ndarray:
    """4x3 derivative of ``(x, y, angle) -> (p, v)`` at unit speed."""
    e = cmath.exp(1j * z[2])
    th = _unit_state(z)
    iv = 1j * th.v
    return np.array(
        [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-z[0] * e.real, -z[1] * e.real, iv.real], [-z[0] * e.imag, -z[1] * e.imag, iv.imag]]
    )


@dataclass(frozen=True, eq=False)
class _Shooting:
    """Multiple-shooting layout along a closed geodesic.

    Nodes sit where the geodesic is deepest inside the Dirichlet chart (the
    octagon's sides lie on closed geodesics, so octagon anchors can sit on a
    side for a whole period). Node 0 is restricted to a section transverse to
    the flow: ``p = p0 + s n``, angle ``a0 + psi``.
    """

    fractions: np.ndarray
    nodes: np.ndarray

    @property
    def p0(self) -> complex:
        return complex(self.nodes[0, 0], self.nodes[0, 1])

    @property
    def normal(self) -> complex:
        return 1j * cmath.exp(1j * self.nodes[0, 2])

    def node0(self, s: float, psi: float) -> np.ndarray:
        p = self.p0 + s * self.normal
        return np.array([p.real, p.imag, self.nodes[0, 2] + psi])

    def node0_jac(self) -> np.ndarray:
        n = self.normal
        return np.array([[n.real, 0.0], [n.imag, 0.0], [0.0, 1.0]])


@lru_cache(maxsize=512)
def shooting_layout(geodesic: ClosedGeodesic, seg_len: float = 1.5, per_unit: int = 64) -> _Shooting:
    dom = cutting_domain()
    T = geodesic.length
    n = max(128, int(per_unit * T))
    ts = np.arange(n) * (T / n)
    P, V = geodesic.sample(ts)
    states = [dom.reduce(PhasePoint(complex(p), complex(v))) for p, v in zip(P, V)]
    depth = dom.depth(np.array([th.p for th in states]))
    i0 = int(np.argmax(depth))
    m = max(1, math.ceil(T / seg_len))
    idx = [i0]
    for j in range(1, m):
        centre = i0 + j * n / m
        window = np.arange(int(centre - 0.3 * n / m), int(centre + 0.3 * n / m) + 1)
        idx.append(int(window[np.argmax(depth[window % n])]))
    fractions = np.array([(k - i0) / n for k in idx] + [1.0])
    nodes = np.array([_readout(states[k % n]) for k in idx])
    return _Shooting(fractions, nodes)


def _shoot_newton(lay: _Shooting, lam, fld, cfg, guess, chart, tol, max_iter):
    """Newton iteration on ``(s, psi, z_1 .. z_{m-1}, tau)``."""
    m = len(lay.nodes)
    u = np.asarray(guess, dtype=float).copy()
    dim = 3 * m
    last = math.inf
    for it in range(1, max_iter + 1):
        z = [lay.node0(u[0], u[1])] + [u[2 + 3 * (j - 1): 5 + 3 * (j - 1)] for j in range(1, m)]
        tau = u[-1]
        r = np.empty(dim)
        J = np.zeros((dim, dim))
        for j in range(m):
            dt = (lay.fractions[j + 1] - lay.fractions[j]) * tau
            end, Phi, _ = monodromy(lam, _unit_state(z[j]), dt, fld, cfg, chart=chart)
            target = z[(j + 1) % m]
            rj = _readout(end) - target
            rj[2] = _wrap(rj[2])
            rows = slice(3 * j, 3 * j + 3)
            r[rows] = rj
            DPhi = _readout_jac(end) @ Phi @ _unit_state_jac(z[j])
            if j == 0:
                J[rows, 0:2] = DPhi @ lay.node0_jac()
            else:
                J[rows, 2 + 3 * (j - 1): 5 + 3 * (j - 1)] = DPhi
            if j + 1 < m:
                J[rows, 2 + 3 * j: 5 + 3 * j] -= np.eye(3)
            else:
                J[rows, 0:2] -= lay.node0_jac()
            dp, dv = vector_field(lam, end, fld)
            J[rows, -1] = _readout_jac(end) @ np.array([dp.real, dp.imag, dv.real, dv.imag]) * (
                lay.fractions[j + 1] - lay.fractions[j]
            )
        res = float(np.max(np.abs(r)))
        if res < tol:
            return u, res, it, _unit_state(z[0]), np.array(z)
        if it > 3 and not res < 10.0 * last:
            raise ContinuationError("Newton iteration diverged", res)
        last = res
        u = u + np.linalg.solve(J, -r)
        if abs(u[0]) > 0.5 or u[-1] <= 0:
            raise ContinuationError("Newton iterate left the section neighbourhood", res)
    raise ContinuationError("Newton iteration did not converge", last)


def continue_orbit(
    geodesic: ClosedGeodesic,
    lam: float,
    fld: FieldFamily,
    cfg: IntegratorConfig = CONTINUATION_CONFIG,
    start: PeriodicOrbit | None = None,
    tol: float = 1e-11,
    max_iter: int = 12,
    max_halvings: int = 6,
    n_samples: int = 0,
) -> PeriodicOrbit:
    """Periodic orbit of the thermostat at ``lam`` continued from the closed geodesic.

    Multiple shooting with segments of length about 1.5, node 0 on a section
    transverse to the flow, and the return time as an unknown; Jacobian
    blocks come from the variational flow. If a jump fails, the path from
    ``start`` (or from the geodesic) is subdivided.
    """
    chart = dirichlet_chart()
    lay = shooting_layout(geodesic)

    def pack(nodes, s, psi, tau):
        return np.concatenate([[s, psi], np.asarray(nodes)[1:].ravel(), [tau]])

    if start is not None:
        d = complex(start.nodes[0, 0], start.nodes[0, 1]) - lay.p0
        n = lay.normal
        s0 = d.real * n.real + d.imag * n.imag
        lam0, guess = start.lam, pack(start.nodes, s0, start.nodes[0, 2] - lay.nodes[0, 2], start.period)
    else:
        lam0, guess = 0.0, pack(lay.nodes, 0.0, 0.0, geodesic.length)

    def attempt(l_from, g_from, l_to, depth):
        try:
            return _shoot_newton(lay, l_to, fld, cfg, g_from, chart, tol, max_iter)
        except (ContinuationError, IntegrationError, DomainError, np.linalg.LinAlgError):
            if depth >= max_halvings:
                raise
            mid = 0.5 * (l_from + l_to)
            g_mid = attempt(l_from, g_from, mid, depth + 1)[0]
            return attempt(mid, g_mid, l_to, depth + 1)

    try:
        u, res, it, anchor, nodes = attempt(lam0, guess, lam, 0)
    except (IntegrationError, DomainError) as exc:
        raise ContinuationError(f"integration failed: {exc}") from exc
    orbit = PeriodicOrbit(lam, anchor, float(u[-1]), res, it, nodes, lay.fractions)
    if n_samples:
        orbit.samples = integrate_flow(lam, anchor, orbit.period, fld, cfg, np.linspace(0.0, orbit.period, n_samples)[1:], chart=chart)
    return orbit


# ---------------------------------------------------------------------------
# period curves


def _check_grid(grid) -> np.ndarray:
    g = np.asarray(sorted(float(x) for x in grid))
    if not np.allclose(g, -g[::-1], atol=1e-15, rtol=0):
        raise ValueError("lambda grid must be symmetric about zero")
    return g


def symmetric_fit(grid, values, v0: float) -> tuple[float, float, float, float]:
    """First and second derivatives at zero from symmetric differences.

    Odd and even parts ``(v(l) - v(-l)) / 2l`` and ``(v(l) + v(-l) - 2 v0) / l^2``
    are extrapolated to ``l = 0`` by a fit in ``l^2``. Returns
    ``(d1, err1, d2, err2)``.
    """
    vals = {round(float(l), 15): float(v) for l, v in zip(grid, values)}
    pos = sorted(l for l in vals if l > 0 and round(-l, 15) in vals)
    if not pos:
        return 0.0, 0.0, 0.0, 0.0
    lam = np.array(pos)
    d1 = np.array([(vals[l] - vals[round(-l, 15)]) / (2 * l) for l in pos])
    d2 = np.array([(vals[l] + vals[round(-l, 15)] - 2 * v0) / l**2 for l in pos])
    return (*_extrapolate(lam, d1), *_extrapolate(lam, d2))


def _extrapolate(lam: np.ndarray, d: np.ndarray) -> tuple[float, float]:
    if len(d) == 1:
        return float(d[0]), abs(float(d[0]))
    X = np.column_stack([np.ones_like(lam), lam**2])
    coef, *_ = np.linalg.lstsq(X, d, rcond=None)
    dof = len(d) - 2
    if dof > 0:
        r = d - X @ coef
        cov = (r @ r / dof) * np.linalg.inv(X.T @ X)
        err = math.sqrt(max(cov[0, 0], 0.0))
    else:
        err = abs(coef[0] - d[0])
    return float(coef[0]), float(err)


@dataclass
class PeriodCurve:
    word: tuple[int, ...]
    T: float
    grid: np.ndarray
    periods: np.ndarray
    residuals: np.ndarray
    dT: float
    dT_err: float
    d2T: float
    d2T_err: float
    orbits: list[PeriodicOrbit] = field(default_factory=list, repr=False)


def continue_grid(geodesic, grid, fld, cfg=CONTINUATION_CONFIG):
    """Continue along the grid outward from zero on each side; returns orbits and failures."""
    out: dict[float, PeriodicOrbit] = {}
    failed = []
    for sign in (1.0, -1.0):
        prev = None
        for l in sorted((x for x in grid if x * sign > 0), key=abs):
            try:
                prev = continue_orbit(geodesic, l, fld, cfg, start=prev)
                out[l] = prev
            except ContinuationError:
                failed.append(float(l))
    for l in grid:
        if l == 0.0:
            out[0.0] = continue_orbit(geodesic, 0.0, fld, cfg)
    return out, failed


def period_curve(
    geodesic: ClosedGeodesic,
    fld: FieldFamily,
    grid=DEFAULT_GRID,
    cfg: IntegratorConfig = CONTINUATION_CONFIG,
) -> PeriodCurve:
    """Periods ``T_lam`` on a symmetric grid and extrapolated ``T'(0)``, ``T''(0)``."""
    grid = _check_grid(grid)
    orbits, failed = continue_grid(geodesic, grid, fld, cfg)
    periods = np.array([orbits[l].period if l in orbits else math.nan for l in grid])
    res = np.array([orbits[l].residual if l in orbits else math.nan for l in grid])
    if failed:
        raise PartialCurveError(sorted(failed))
    d1, e1, d2, e2 = symmetric_fit(grid, periods, geodesic.length)
    return PeriodCurve(geodesic.word, geodesic.length, grid, periods, res, d1, e1, d2, e2, [orbits[l] for l in grid])


@dataclass
class EnergyVariation:
    grid: np.ndarray
    energies: np.ndarray
    max_relative_deviation: float
    d2E: float
    d2E_err: float


def _gauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(n)


def orbit_energy(orbit: PeriodicOrbit, T: float, fld: FieldFamily, nodes: int = 64, cfg=CONTINUATION_CONFIG) -> float:
    """``int_0^T |d/dt gamma(t T_lam / T)|^2 dt`` by Gauss-Legendre quadrature of integrated speeds."""
    x, w = _gauss(nodes)
    t = 0.5 * T * (x + 1.0)
    scale = orbit.period / T
    tr = integrate_flow(orbit.lam, orbit.anchor, orbit.period, fld, cfg, t * scale, chart=dirichlet_chart())
    P, V = tr.positions[1:], tr.velocities[1:]
    speed2 = metric_inner_many(P, V, V) * scale**2
    return float(0.5 * T * (w @ speed2))


def energy_second_variation(
    geodesic: ClosedGeodesic,
    fld: FieldFamily,
    grid=DEFAULT_GRID,
    curve: PeriodCurve | None = None,
    cfg: IntegratorConfig = CONTINUATION_CONFIG,
) -> EnergyVariation:
    """Energies of the reparameterised orbits and the fitted second derivative at zero."""
    curve = curve or period_curve(geodesic, fld, grid, cfg)
    T = geodesic.length
    E = np.array([orbit_energy(o, T, fld, cfg=cfg) for o in curve.orbits])
    dev = float(np.max(np.abs(E / (curve.periods**2 / T) - 1.0)))
    _, _, d2, e2 = symmetric_fit(curve.grid, E, T)
    return EnergyVariation(curve.grid, E, dev, d2, e2)


# ---------------------------------------------------------------------------
# index form


@lru_cache(maxsize=64)
def _nodes(geodesic: ClosedGeodesic, n_seg: int, per_seg: int):
    x, w = _gauss(per_seg)
    h = geodesic.length / n_seg
    a = np.arange(n_seg)[:, None] * h
    ts = (a + 0.5 * h * (x + 1.0)).ravel()
    ws = np.tile(0.5 * h * w, n_seg)
    P, V = geodesic.sample(ts)
    return ts, ws, P, V


def _vectors(field_: AlongField, ts, V):
    a, b, da, db = field_.components(ts)
    n = 1j * V
    return a * V + b * n, da * V + db * n


def _index_once(geodesic, U, Vf, n_seg, per_seg):
    ts, ws, P, G = _nodes(geodesic, n_seg, per_seg)
    u, du = _vectors(U, ts, G)
    v, dv = (u, du) if Vf is U else _vectors(Vf, ts, G)
    integrand = metric_inner_many(P, du, dv) - metric_inner_many(P, curvature_R_many(P, G, u, G), v)
    return float(ws @ integrand)


def index_form(
    geodesic: ClosedGeodesic,
    U: AlongField,
    V: AlongField,
    per_seg: int = 64,
    tol: float = 1e-9,
    max_doublings: int = 8,
) -> float:
    """``int <U', V'> - <R(gdot, U) gdot, V> dt`` by composite Gauss-Legendre, refined until stable."""
    for f in (U, V):
        if abs(f.period - geodesic.length) > 1e-9 * geodesic.length:
            raise DomainError("field period differs from the geodesic length")
    n_seg = 1
    prev = _index_once(geodesic, U, V, n_seg, per_seg)
    for _ in range(max_doublings):
        n_seg *= 2
        cur = _index_once(geodesic, U, V, n_seg, per_seg)
        if abs(cur - prev) <= tol * max(1.0, abs(cur)):
            return cur
        prev = cur
    return cur


def quadrature(geodesic: ClosedGeodesic, fn, per_seg: int = 64, tol: float = 1e-9, max_doublings: int = 8) -> float:
    """``int_0^T fn(ts, P, V) dt`` with the same refinement rule as :func:`index_form`."""
    n_seg = 1

    def once(k):
        ts, ws, P, V = _nodes(geodesic, k, per_seg)
        return float(ws @ fn(ts, P, V))

    prev = once(n_seg)
    for _ in range(max_doublings):
        n_seg *= 2
        cur = once(n_seg)
        if abs(cur - prev) <= tol * max(1.0, abs(cur)):
            return cur
        prev = cur
    return cur


# ---------------------------------------------------------------------------
# identity suite


class _E0Terms:
    """Pointwise quantities of ``E0`` along the geodesic from the field analytics."""

    def __init__(self, geodesic: ClosedGeodesic, fld: FieldFamily):
        self.geodesic, self.fld = geodesic, fld

    def __call__(self, ts, P, V):
        E, DE = self.fld.jet_many(P)
        cov = np.einsum("nij,nj->ni", DE, np.column_stack([V.real, V.imag]))
        gphi = 2.0 / (1.0 - np.abs(P) ** 2) * P
        dot = lambda a, b: a.real * b.real + a.imag * b.imag
        dE = cov[:, 0] + 1j * cov[:, 1] + V * dot(gphi, E) + E * dot(gphi, V) - dot(V, E) * gphi
        g = lambda a, b: metric_inner_many(P, a, b)
        vv = g(V, V)
        return {
            "E2": g(E, E),
            "Ev2": g(E, V) ** 2 / vv,
            "dE2": g(dE, dE),
            "dEv2": g(dE, V) ** 2 / vv,
            "REE": g(curvature_R_many(P, V, E, V), E),
        }


def e0_fields(geodesic: ClosedGeodesic, fld: FieldFamily, n: int = 1024) -> tuple[TrigField, TrigField, TrigField]:
    """``E0``, its tangential part and its normal part as spectral fields along the geodesic."""
    T = geodesic.length
    ts = np.arange(n) * (T / n)
    et, en, _, _ = e0_frame_components(geodesic, fld, ts)
    z = np.zeros(n)
    return TrigField.from_samples(T, et, en), TrigField.from_samples(T, et, z), TrigField.from_samples(T, z, en)


@dataclass
class IndexReport:
    word: tuple[int, ...]
    T: float
    I_EE: float
    I_E_Et: float
    I_Et_Et: float
    I_VV: float
    I_WE: float
    I_W_Et: float
    I_WW: float
    I_WV: float
    rhs: dict
    residuals: dict
    wv_variant: str
    A: float
    B: float

    @property
    def x_star(self) -> float:
        return self.A / self.B if self.B > 0 else math.nan


def identity_suite(
    geodesic: ClosedGeodesic, fld: FieldFamily, W: WField | None = None, n: int = 1024, per_seg: int = 64
) -> IndexReport:
    """Both sides of each index-form identity along ``geodesic``.

    Left sides come from :func:`index_form` on spectral fields built from
    samples of ``E0``; right sides are direct quadratures of the pointwise
    integrands. Both printed forms of the ``I(W, V)`` integrand are scored and
    the closer one is reported as the adopted variant.
    """
    W = W if W is not None else solve_W(geodesic, fld)
    E, Et, V = e0_fields(geodesic, fld, n)
    I = lambda a, b: index_form(geodesic, a, b, per_seg=per_seg)
    terms = _E0Terms(geodesic, fld)
    q = lambda key_fn: quadrature(geodesic, lambda ts, P, G: key_fn(terms(ts, P, G)), per_seg=per_seg)
    lhs = dict(
        I_EE=I(E, E), I_E_Et=I(E, Et), I_Et_Et=I(Et, Et), I_VV=I(V, V),
        I_WE=I(W, E), I_W_Et=I(W, Et), I_WW=I(W, W), I_WV=I(W, V),
    )
    rhs = {
        "EE": q(lambda d: d["dE2"] - d["REE"]),
        "E_Et": q(lambda d: d["dEv2"]),
        "Et_Et": q(lambda d: d["dEv2"]),
        "VV": q(lambda d: d["dE2"] - d["dEv2"] - d["REE"]),
        "WV_a": q(lambda d: -d["E2"] + d["dEv2"]),
        "WV_b": q(lambda d: -d["E2"] + d["Ev2"]),
    }
    res = {
        "EE": abs(lhs["I_EE"] - rhs["EE"]),
        "E_Et": abs(lhs["I_E_Et"] - rhs["E_Et"]),
        "Et_Et": abs(lhs["I_Et_Et"] - rhs["Et_Et"]),
        "VV": abs(lhs["I_VV"] - rhs["VV"]),
        "WV_a": abs(lhs["I_WV"] - rhs["WV_a"]),
        "WV_b": abs(lhs["I_WV"] - rhs["WV_b"]),
    }
    variant = "b" if res["WV_b"] <= res["WV_a"] else "a"
    A = -rhs["WV_" + variant]
    return IndexReport(geodesic.word, geodesic.length, **lhs, rhs=rhs, residuals=res, wv_variant=variant, A=A, B=rhs["VV"])


def margin_scan(report: IndexReport, d2T: float, xs=None) -> dict[float, float]:
    """Margins ``T''(0) - (2 x A - x^2 B)`` for each ``x``.

    Defaults to ``x`` in ``{0.1, 0.5, 1, x*, 2 x*}`` with ``x* = A / B``.
    """
    if xs is None:
        xs = [0.1, 0.5, 1.0]
        if report.B > 0:
            xs += [report.x_star, 2.0 * report.x_star]
    return {float(x): float(d2T - (2.0 * x * report.A - x * x * report.B)) for x in xs}
