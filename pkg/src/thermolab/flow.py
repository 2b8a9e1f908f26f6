"""Thermostat flow integration with deck unwrapping, Jacobi fields and the W problem."""

from __future__ import annotations

import cmath
import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _backend
from .geometry import (
    ClosedGeodesic,
    CuttingDomain,
    DomainError,
    PhasePoint,
    SurfaceGroup,
    bolza_group,
    christoffel,
    conformal_factor,
    cutting_domain,
    metric_inner,
    metric_inner_many,
)
from .structures import FieldFamily


class IntegrationError(RuntimeError):
    """Step-size underflow, exhausted step budget or failed event location."""


@dataclass(frozen=True)
class IntegratorConfig:
    rtol: float = 1e-10
    atol: float = 1e-12
    h0: float = 0.05
    max_steps: int = 5_000_000
    event_tol: float = 1e-13

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0 or self.h0 <= 0 or self.event_tol <= 0:
            raise ValueError("integrator tolerances must be positive")

    def tighter(self, factor: float = 100.0) -> "IntegratorConfig":
        return IntegratorConfig(self.rtol / factor, self.atol / factor, self.h0, self.max_steps, self.event_tol)


DEFAULT_CONFIG = IntegratorConfig()


@dataclass(frozen=True, eq=False)
class Chart:
    """Fundamental polygon used for folding: side circles ``(cx, cy, r^2)``,
    the isometry applied on leaving through each side and a tag per side."""

    sides: np.ndarray
    exits: np.ndarray
    labels: np.ndarray
    name: str = ""


def _circle(e1: complex, e2: complex) -> tuple[float, float, float]:
    # circle orthogonal to the unit circle through the ideal points e1, e2
    half = 0.5 * (cmath.phase(e2) - cmath.phase(e1))
    mid = 0.5 * (cmath.phase(e1) + cmath.phase(e2))
    c = cmath.exp(1j * mid) / math.cos(half)
    return c.real, c.imag, math.tan(half) ** 2


_OCTAGONS: dict[int, tuple[SurfaceGroup, Chart]] = {}


def octagon_chart(group: SurfaceGroup | None = None) -> Chart:
    """The group's octagon; leaving through side ``k`` applies generator ``k + 4 mod 8``."""
    group = group or bolza_group()
    hit = _OCTAGONS.get(id(group))
    if hit is not None and hit[0] is group:
        return hit[1]
    sides = np.column_stack([group.side_centers.real, group.side_centers.imag, np.full(8, group.side_radius**2)])
    idx = (np.arange(8) + 4) % 8
    chart = Chart(np.ascontiguousarray(sides), np.ascontiguousarray(group.table()[idx]), idx.astype(np.int64), "octagon")
    _OCTAGONS[id(group)] = (group, chart)
    return chart


@lru_cache(maxsize=8)
def dirichlet_chart(domain: CuttingDomain | None = None) -> Chart:
    """Dirichlet domain about a generic centre; no closed geodesic runs along its sides.

    Every candidate bisector is kept; those that are not faces lie outside the
    domain and are never reached.
    """
    domain = domain or cutting_domain()
    sides = np.array([_circle(complex(a), complex(b)) for a, b in domain.ends])
    exits = []
    for g in domain.elements:
        h = g.inverse().normalized()
        exits.append([h.a.real, h.a.imag, h.b.real, h.b.imag])
    return Chart(sides, np.ascontiguousarray(exits), np.arange(len(sides), dtype=np.int64), "dirichlet")


def _run(lam, y0, t0, t1, mode, fld, cfg, t_eval, group, chart=None):
    chart = chart or octagon_chart(group)
    te = None if t_eval is None else np.ascontiguousarray(t_eval, dtype=float)
    if te is not None and len(te):
        d = np.sign(t1 - t0) or 1.0
        s = d * (te - t0)
        if s.min() < 0 or d * (te[-1] - t1) > 1e-12 or np.any(np.diff(s) < 0):
            raise ValueError("t_eval must be monotone and inside the integration interval")
    try:
        return _backend.integrate(
            fld.kernel, float(lam), np.ascontiguousarray(y0, dtype=float), float(t0), float(t1), mode,
            chart.sides, chart.exits, chart.labels, cfg.rtol, cfg.atol, te, cfg.h0, cfg.max_steps, cfg.event_tol,
        )
    except RuntimeError as exc:
        raise IntegrationError(str(exc)) from exc


@dataclass
class Trajectory:
    """Samples of one thermostat orbit, each folded into the octagon."""

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    crossings: list[tuple[float, int, int]]
    lam: float
    stats: dict = field(default_factory=dict)
    theta0: PhasePoint | None = None
    chart: Chart | None = None

    def __len__(self) -> int:
        return len(self.times)

    def state(self, i: int) -> PhasePoint:
        return PhasePoint(complex(self.positions[i]), complex(self.velocities[i]))

    @property
    def final(self) -> PhasePoint:
        return self.state(-1)

    def deck_words(self) -> list[tuple[int, ...]]:
        """Generators applied up to each sample, in order of application."""
        out, word, j = [], [], 0
        cr = self.crossings
        for t in self.times:
            while j < len(cr) and (cr[j][0] - t) * np.sign(self.times[-1] - self.times[0] or 1.0) <= 0.0:
                word.append(cr[j][2])
                j += 1
            out.append(tuple(word))
        return out

    def speed_error(self) -> float:
        rho = 2.0 / (1.0 - np.abs(self.positions) ** 2)
        return float(np.max(np.abs(rho * np.abs(self.velocities) - 1.0)))

    def to_csv(self, path: str | Path) -> None:
        """Columns ``t, x, y, v1, v2, deck_word`` (word as dash-separated generator indices)."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "y", "v1", "v2", "deck_word"])
            for t, p, v, word in zip(self.times, self.positions, self.velocities, self.deck_words()):
                w.writerow([repr(float(t)), repr(p.real), repr(p.imag), repr(v.real), repr(v.imag), "-".join(map(str, word))])


def integrate_flow(
    lam: float,
    theta0: PhasePoint,
    t_end: float,
    fld: FieldFamily,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
    t_eval: Sequence[float] | None = None,
    group: SurfaceGroup | None = None,
    chart: Chart | None = None,
) -> Trajectory:
    """Integrate the thermostat from ``theta0`` over ``[0, t_end]`` (``t_end`` may be negative).

    States are folded into ``chart`` (the group's octagon by default).
    """
    chart = chart or octagon_chart(group)
    ts, ys, cr, stats = _run(lam, theta0.as_array(), 0.0, t_end, 0, fld, cfg, t_eval, group, chart)
    return Trajectory(ts, ys[:, 0] + 1j * ys[:, 1], ys[:, 2] + 1j * ys[:, 3], list(cr), lam, stats, theta0, chart)


def vector_field(lam: float, theta: PhasePoint, fld: FieldFamily) -> tuple[complex, complex]:
    """Coordinate time derivative ``(dp/dt, dv/dt)`` of the thermostat."""
    p, v = theta
    E = fld.eval_E(lam, p)
    vv = v.real * v.real + v.imag * v.imag
    s = (E.real * v.real + E.imag * v.imag) / vv
    return v, -christoffel(p, v, v) + E - s * v


# ---------------------------------------------------------------------------
# linearised flow


@dataclass
class JacobiSolution:
    """Jacobi field in a parallel orthonormal frame ``(e1, i e1)`` along the base orbit."""

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    frame: np.ndarray
    J: np.ndarray
    Jdot: np.ndarray

    def vectors(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate vectors ``J`` and ``DJ/dt`` at each sample."""
        e1 = self.frame
        e2 = 1j * e1
        return self.J[:, 0] * e1 + self.J[:, 1] * e2, self.Jdot[:, 0] * e1 + self.Jdot[:, 1] * e2


def _frame_components(p: complex, e1: complex, u: complex) -> tuple[float, float]:
    return metric_inner(p, u, e1), metric_inner(p, u, 1j * e1)


def integrate_jacobi(
    base: Trajectory,
    J0: complex,
    Jdot0: complex,
    fld: FieldFamily,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
    group: SurfaceGroup | None = None,
) -> JacobiSolution:
    """Solve the thermostat Jacobi equation along ``base`` from ``(J(0), DJ/dt(0))``.

    The frame starts at the unit velocity and is parallel transported; ``J``
    and ``DJ/dt`` are stored as frame components, which deck maps leave unchanged.
    """
    if base.theta0 is None:
        raise ValueError("base trajectory lacks its initial state")
    if len(base.times) < 2:
        raise ValueError("base trajectory too coarse for frame transport")
    group = group or bolza_group()
    th = base.theta0
    e1 = th.v / (conformal_factor(th.p) * abs(th.v))
    j1, j2 = _frame_components(th.p, e1, J0)
    k1, k2 = _frame_components(th.p, e1, Jdot0)
    y0 = np.array([th.p.real, th.p.imag, th.v.real, th.v.imag, e1.real, e1.imag, j1, j2, k1, k2])
    t_end = float(base.times[-1])
    ts, ys, _, _ = _run(base.lam, y0, 0.0, t_end, 2, fld, cfg, base.times[1:], group, base.chart)
    return JacobiSolution(ts, ys[:, 0] + 1j * ys[:, 1], ys[:, 2] + 1j * ys[:, 3], ys[:, 4] + 1j * ys[:, 5], ys[:, 6:8], ys[:, 8:10])


def variational_flow(
    base: Trajectory,
    fld: FieldFamily,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
    group: SurfaceGroup | None = None,
) -> np.ndarray:
    """Fundamental matrices ``Phi(t)`` (shape ``(n, 4, 4)``) of the coordinate linearisation.

    Deck maps act on ``Phi`` through the derivative of ``(p, v) -> (g p, g'(p) v)``.
    """
    if base.theta0 is None:
        raise ValueError("base trajectory lacks its initial state")
    group = group or bolza_group()
    _, ys, _, _ = _run(base.lam, _variational_start(base.theta0), 0.0, float(base.times[-1]), 1, fld, cfg, base.times[1:], group, base.chart)
    return ys[:, 4:].reshape(-1, 4, 4)


def _variational_start(theta: PhasePoint) -> np.ndarray:
    return np.concatenate([theta.as_array(), np.eye(4).ravel()])


def monodromy(lam: float, theta0: PhasePoint, tau: float, fld: FieldFamily, cfg: IntegratorConfig = DEFAULT_CONFIG, group=None, chart=None):
    """Folded end state and the 4x4 fundamental matrix after time ``tau``."""
    ts, ys, cr, stats = _run(lam, _variational_start(theta0), 0.0, tau, 1, fld, cfg, None, group, chart)
    y = ys[-1]
    return PhasePoint(complex(y[0], y[1]), complex(y[2], y[3])), y[4:].reshape(4, 4), stats


def jacobi_from_displacement(theta: PhasePoint, dp: complex, dv: complex) -> tuple[complex, complex]:
    """``(J(0), DJ/dt(0))`` of the variation with coordinate displacement ``(dp, dv)``."""
    return dp, dv + christoffel(theta.p, dp, theta.v)


def jacobi_fd_error(
    lam: float,
    theta: PhasePoint,
    fld: FieldFamily,
    rng: np.random.Generator,
    t_end: float = 3.0,
    samples: int = 6,
    h: float = 1e-5,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
) -> float:
    """Worst relative gap between the Jacobi field and central differences of the flow.

    The variation moves the base point and turns the direction, staying on the
    unit bundle. Samples where the two perturbed orbits took different deck
    maps are skipped.
    """
    ts = np.linspace(0.0, t_end, samples + 1)[1:]
    dp = complex(*rng.normal(size=2)) * 0.3
    dang = float(rng.normal())
    ang0 = cmath.phase(theta.v)

    def state(s):
        p = theta.p + s * dp
        return PhasePoint(p, cmath.exp(1j * (ang0 + s * dang)) / conformal_factor(p))

    base = integrate_flow(lam, state(0.0), t_end, fld, cfg, t_eval=ts)
    plus = integrate_flow(lam, state(h), t_end, fld, cfg, t_eval=ts)
    minus = integrate_flow(lam, state(-h), t_end, fld, cfg, t_eval=ts)
    dv = (state(1e-7).v - state(-1e-7).v) / 2e-7
    J0, K0 = jacobi_from_displacement(state(0.0), dp, dv)
    J, _ = integrate_jacobi(base, J0, K0, fld, cfg).vectors()
    wp, wm = plus.deck_words(), minus.deck_words()
    worst = 0.0
    for i in range(1, len(base.times)):
        if wp[i] != wm[i]:
            continue
        fd = (plus.positions[i] - minus.positions[i]) / (2.0 * h)
        worst = max(worst, abs(fd - J[i]) / abs(J[i]))
    return worst


# ---------------------------------------------------------------------------
# vector fields along a closed geodesic, in the parallel frame (gdot, n = i gdot)


def trig_eval_many(cs, orders, period: float, ts, rel_cut: float = 1e-15) -> list[np.ndarray]:
    """Evaluate several trigonometric interpolants (FFT coefficients ``cs``) at ``ts``.

    Modes whose coefficients are below ``rel_cut`` of the total are skipped,
    so smooth fields cost far less than their FFT length.
    """
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    n = len(cs[0])
    om = 2.0 * math.pi * np.fft.fftfreq(n, d=1.0 / n) / period
    mag = sum(np.abs(c) for c in cs)
    keep = np.flatnonzero(mag >= rel_cut * max(mag.sum(), 1e-300))
    if len(keep) == 0:
        return [np.zeros(ts.shape) for _ in cs]
    phase = np.exp(1j * np.outer(ts, om[keep]))
    out = []
    for c, order in zip(cs, orders):
        k = (1j * om) ** order
        if n % 2 == 0:
            # Nyquist term read as a cosine so every derivative stays real
            k[n // 2] = om[n // 2] ** order * (1.0, 0.0, -1.0, 0.0)[order % 4]
        out.append((phase @ (k * c)[keep]).real / n)
    return out


def trig_eval(c: np.ndarray, period: float, ts, order: int = 0, rel_cut: float = 1e-15) -> np.ndarray:
    """Evaluate the trigonometric interpolant with FFT coefficients ``c`` (or a derivative)."""
    return trig_eval_many([c], [order], period, ts, rel_cut)[0]


class AlongField:
    """Periodic field ``a(t) gdot + b(t) n`` along a closed geodesic of length ``period``."""

    period: float

    def components(self, ts) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """``(a, b, a', b')`` at the given arc lengths."""
        raise NotImplementedError

    def __add__(self, other: "AlongField") -> "AlongField":
        return LinearField(((1.0, self), (1.0, other)))

    def __sub__(self, other: "AlongField") -> "AlongField":
        return LinearField(((1.0, self), (-1.0, other)))

    def __rmul__(self, c: float) -> "AlongField":
        return LinearField(((float(c), self),))


class LinearField(AlongField):
    def __init__(self, terms):
        self.terms = tuple(terms)
        periods = {round(f.period, 12) for _, f in self.terms}
        if len(periods) != 1:
            raise ValueError("fields along different curves cannot be combined")
        self.period = self.terms[0][1].period

    def components(self, ts):
        out = [np.zeros(np.atleast_1d(ts).shape) for _ in range(4)]
        for c, f in self.terms:
            for o, x in zip(out, f.components(ts)):
                o += c * x
        return tuple(out)


class TrigField(AlongField):
    """Frame components stored as trigonometric polynomials."""

    def __init__(self, period: float, ca: np.ndarray, cb: np.ndarray):
        self.period = float(period)
        self.ca = np.asarray(ca, dtype=complex)
        self.cb = np.asarray(cb, dtype=complex)

    @classmethod
    def from_samples(cls, period: float, a: np.ndarray, b: np.ndarray) -> "TrigField":
        """Interpolate equispaced samples on ``[0, period)``."""
        return cls(period, np.fft.fft(a), np.fft.fft(b))

    @classmethod
    def from_function(cls, period: float, fn, n: int = 512) -> "TrigField":
        ts = np.arange(n) * (period / n)
        a, b = fn(ts)
        return cls.from_samples(period, a, b)

    @classmethod
    def random(cls, period: float, rng: np.random.Generator, modes: int = 6, n: int = 32) -> "TrigField":
        """Random trigonometric polynomial with decaying mode amplitudes."""
        ca = np.zeros(n, dtype=complex)
        cb = np.zeros(n, dtype=complex)
        for c in (ca, cb):
            c[0] = rng.normal() * n
            for k in range(1, modes + 1):
                z = complex(rng.normal(), rng.normal()) * n / (2.0 * k)
                c[k], c[-k] = z, z.conjugate()
        return cls(period, ca, cb)

    def components(self, ts):
        return tuple(trig_eval_many([self.ca, self.cb, self.ca, self.cb], [0, 0, 1, 1], self.period, ts))


class FunctionField(AlongField):
    """Field from user callables ``a, b, a', b'``; periodicity is checked on construction."""

    def __init__(self, period: float, a, b, da, db, tol: float = 1e-9):
        self.period = float(period)
        self.fns = (a, b, da, db)
        for f in self.fns:
            y0, y1 = np.asarray(f(np.array([0.0, self.period])), dtype=float)
            if abs(y1 - y0) > tol * (1.0 + abs(y0)):
                raise DomainError("field is not periodic along the geodesic")

    def components(self, ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        return tuple(np.broadcast_to(np.asarray(f(ts), dtype=float), ts.shape).copy() for f in self.fns)


def constant_field(period: float, a: float = 0.0, b: float = 0.0) -> FunctionField:
    """``a gdot + b n``; ``constant_field(T, 1)`` is the flow direction itself."""
    one = lambda t: np.ones_like(t)
    zero = lambda t: np.zeros_like(t)
    return FunctionField(period, lambda t: a * one(t), lambda t: b * one(t), zero, zero)


def e0_frame_components(geodesic: ClosedGeodesic, fld: FieldFamily, ts):
    """``(e_t, e_n, e_t', e_n')`` of ``E0`` along the geodesic, from the field analytics."""
    P, V = geodesic.sample(ts)
    E, DE = fld.jet_many(P)
    cov = np.einsum("nij,nj->ni", DE, np.column_stack([V.real, V.imag]))
    dE = cov[:, 0] + 1j * cov[:, 1] + _christoffel_many(P, V, E)
    n = 1j * V
    return (
        metric_inner_many(P, E, V),
        metric_inner_many(P, E, n),
        metric_inner_many(P, dE, V),
        metric_inner_many(P, dE, n),
    )


def _christoffel_many(P, X, Vv):
    gphi = 2.0 / (1.0 - np.abs(P) ** 2) * P
    dot = lambda a, b: a.real * b.real + a.imag * b.imag
    return X * dot(gphi, Vv) + Vv * dot(gphi, X) - dot(X, Vv) * gphi


# ---------------------------------------------------------------------------
# periodic inhomogeneous Jacobi problem along a closed geodesic


class FourierResidualError(RuntimeError):
    """The truncated Fourier solution does not reach the requested residual."""


class WField(AlongField):
    """Periodic solution ``W = u gdot + w n`` with gauge ``u = 0``.

    ``coeffs`` are FFT coefficients of ``w`` on ``[0, T)``; ``forcing`` those of ``f = <E0, n>``.
    """

    def __init__(self, geodesic: ClosedGeodesic, fld: FieldFamily, coeffs: np.ndarray, forcing: np.ndarray):
        self.geodesic = geodesic
        self.fld = fld
        self.coeffs = coeffs
        self.forcing = forcing
        self.period = geodesic.length

    def w(self, ts, order: int = 0) -> np.ndarray:
        """Normal component (or its ``order``-th derivative)."""
        # no mode cut here: the residual check differentiates twice
        return trig_eval_many([self.coeffs], [order], self.period, ts, rel_cut=0.0)[0]

    def u(self, ts, order: int = 0) -> np.ndarray:
        return np.zeros(np.atleast_1d(ts).shape)

    def components(self, ts):
        w, dw = trig_eval_many([self.coeffs, self.coeffs], [0, 1], self.period, ts)
        return np.zeros(w.shape), w, np.zeros(w.shape), dw

    def forcing_at(self, ts) -> np.ndarray:
        return normal_forcing(self.geodesic, self.fld, ts)

    def residual(self, ts) -> float:
        """Max of ``|w'' - w - f|`` at the given times with ``f`` evaluated directly."""
        return float(np.max(np.abs(self.w(ts, 2) - self.w(ts) - self.forcing_at(ts))))

    def periodicity_error(self) -> float:
        T = self.period
        return float(max(abs(self.w(0.0)[0] - self.w(T)[0]), abs(self.w(0.0, 1)[0] - self.w(T, 1)[0])))

    def vectors(self, ts) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Positions, unit velocities, ``W`` and ``DW/dt`` as coordinate vectors."""
        P, V = self.geodesic.sample(ts)
        n = 1j * V
        return P, V, self.w(ts) * n, self.w(ts, 1) * n


def normal_forcing(geodesic: ClosedGeodesic, fld: FieldFamily, ts) -> np.ndarray:
    """``<E0, n>`` along the geodesic with ``n = i gdot``."""
    P, V = geodesic.sample(ts)
    E, _ = fld.jet_many(P)
    return metric_inner_many(P, E, 1j * V)


def solve_W(geodesic: ClosedGeodesic, fld: FieldFamily, n0: int = 256, tol: float = 1e-8, max_n: int = 1 << 16) -> WField:
    """Periodic solution of ``W'' + R(gdot, W) gdot = E0 - <E0, gdot> gdot``.

    In the parallel frame ``(gdot, n)`` the tangential part solves ``u'' = 0``
    (gauge ``u = 0``) and the normal part ``w'' - w = f``, solved mode by mode.
    The node count doubles until the residual at off-grid points is below ``tol``.
    """
    T = geodesic.length
    n = n0
    while True:
        ts = np.arange(n) * (T / n)
        fh = np.fft.fft(normal_forcing(geodesic, fld, ts))
        om = 2.0 * math.pi * np.fft.fftfreq(n, d=1.0 / n) / T
        W = WField(geodesic, fld, -fh / (om**2 + 1.0), fh)
        check = (np.arange(64) + 0.5) * (T / 64) + 0.37 * T / n
        res = W.residual(check)
        if res < tol:
            return W
        n *= 2
        if n > max_n:
            raise FourierResidualError(f"W residual {res:.3e} above {tol:.1e} with {n // 2} modes")
