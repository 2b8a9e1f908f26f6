"""Poincare-disk geometry of the Bolza surface.

Points and tangent vectors are complex numbers: a point ``p`` is ``x + iy``
with ``|p| < 1`` and a tangent vector at ``p`` is ``u1 + i u2``.  The metric
is ``g = (2 / (1 - |p|^2))^2 (dx^2 + dy^2)`` so the curvature is exactly -1.

The surface is the quotient of the disk by the group generated by the side
pairings of the regular octagon with interior angles pi/4.  The octagon is
also the Dirichlet domain centred at the origin, which makes greedy
reduction ("move to the nearest tile centre") terminate.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np

CURVATURE = -1.0

# cosh of half the side-pairing translation length; inradius of the octagon
COSH_INRADIUS = 1.0 + math.sqrt(2.0)
INRADIUS = math.acosh(COSH_INRADIUS)
CIRCUMRADIUS = math.acosh(COSH_INRADIUS**2)
SYSTOLE = 2.0 * INRADIUS

# g0 g3 g6 g1 g4 g7 g2 g5 = 1, with g_{k+4} = g_k^{-1}
RELATION = (0, 3, 6, 1, 4, 7, 2, 5)


class DomainError(ValueError):
    """A point lies outside the open unit disk."""


class ReductionError(RuntimeError):
    """Deck reduction did not reach the fundamental domain within the cap."""


class NonHyperbolicError(ValueError):
    """A group element has ``|trace| <= 2``."""


def _check_point(p: complex) -> float:
    r2 = p.real * p.real + p.imag * p.imag
    if not r2 < 1.0:
        raise DomainError(f"point {p!r} is not inside the unit disk")
    return r2


def _as_complex(u) -> complex:
    if isinstance(u, (complex, float, int, np.number)):
        return complex(u)
    u1, u2 = u
    return complex(u1, u2)


def conformal_factor(p: complex) -> float:
    """Return ``2 / (1 - |p|^2)``."""
    return 2.0 / (1.0 - _check_point(complex(p)))


def _dot(a: complex, b: complex) -> float:
    return a.real * b.real + a.imag * b.imag


def metric_inner(p, u, w) -> float:
    """Riemannian inner product of two tangent vectors at ``p``."""
    p = _as_complex(p)
    rho = conformal_factor(p)
    return rho * rho * _dot(_as_complex(u), _as_complex(w))


def metric_norm(p, u) -> float:
    return math.sqrt(metric_inner(p, u, u))


def christoffel(p: complex, x: complex, v: complex) -> complex:
    """Coordinate Christoffel contraction ``Gamma(p)(x, v)``.

    For ``g = e^{2 phi} delta`` the symbols give
    ``x (grad phi . v) + v (grad phi . x) - (x . v) grad phi``.
    """
    gphi = conformal_factor(p) * p
    return x * _dot(gphi, v) + v * _dot(gphi, x) - _dot(x, v) * gphi


def covariant_derivative(p, pdot, V, dV) -> complex:
    """``DV/dt = dV/dt + Gamma(p)(pdot, V)`` along a curve with velocity ``pdot``."""
    p = _as_complex(p)
    return _as_complex(dV) + christoffel(p, _as_complex(pdot), _as_complex(V))


def curvature_R(p, u, w, z) -> complex:
    """Riemann tensor ``R(u, w) z = K (<u, z> w - <w, z> u)`` with ``K = -1``.

    Sign convention: ``<R(u, w) u, w>`` is the sectional curvature of an
    orthonormal pair, and Jacobi fields solve ``J'' + R(gdot, J) gdot = 0``.
    """
    p, u, w, z = (_as_complex(a) for a in (p, u, w, z))
    return CURVATURE * (metric_inner(p, u, z) * w - metric_inner(p, w, z) * u)


def metric_inner_many(P: np.ndarray, U: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Vectorised :func:`metric_inner` over arrays of points and vectors."""
    rho = 2.0 / (1.0 - np.abs(P) ** 2)
    return rho * rho * (U.real * W.real + U.imag * W.imag)


def curvature_R_many(P: np.ndarray, u: np.ndarray, w: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Vectorised :func:`curvature_R`."""
    return CURVATURE * (metric_inner_many(P, u, z) * w - metric_inner_many(P, w, z) * u)


def rotate_quarter(v: complex) -> complex:
    """Rotate a tangent vector by +pi/2; isometric because the metric is conformal."""
    return 1j * v


def hyperbolic_distance(p: complex, q: complex) -> float:
    num = 2.0 * abs(p - q) ** 2
    den = (1.0 - abs(p) ** 2) * (1.0 - abs(q) ** 2)
    return math.acosh(1.0 + num / den)


def distance_from_origin(p: complex) -> float:
    return 2.0 * math.atanh(abs(p))


class PhasePoint(NamedTuple):
    """A point ``(p, v)`` of the tangent bundle."""

    p: complex
    v: complex

    @property
    def speed(self) -> float:
        return metric_norm(self.p, self.v)

    def as_array(self) -> np.ndarray:
        return np.array([self.p.real, self.p.imag, self.v.real, self.v.imag])

    @classmethod
    def from_array(cls, y) -> "PhasePoint":
        return cls(complex(y[0], y[1]), complex(y[2], y[3]))

    @classmethod
    def unit(cls, p: complex, angle: float) -> "PhasePoint":
        """Unit vector at ``p`` making Euclidean angle ``angle`` with the x axis."""
        return cls(complex(p), cmath.exp(1j * angle) / conformal_factor(p))


@dataclass(frozen=True)
class Isometry:
    """Disk automorphism ``z -> (a z + b) / (conj(b) z + conj(a))``, ``|a|^2 - |b|^2 = 1``."""

    a: complex
    b: complex

    def __call__(self, z):
        return (self.a * z + self.b) / (self.b.conjugate() * z + self.a.conjugate())

    def derivative(self, z):
        return 1.0 / (self.b.conjugate() * z + self.a.conjugate()) ** 2

    def second_derivative(self, z):
        den = self.b.conjugate() * z + self.a.conjugate()
        return -2.0 * self.b.conjugate() / den**3

    def __matmul__(self, other: "Isometry") -> "Isometry":
        a = self.a * other.a + self.b * other.b.conjugate()
        b = self.a * other.b + self.b * other.a.conjugate()
        return Isometry(a, b).normalized()

    def normalized(self) -> "Isometry":
        d = abs(self.a) ** 2 - abs(self.b) ** 2
        s = 1.0 / math.sqrt(d)
        return Isometry(self.a * s, self.b * s)

    def inverse(self) -> "Isometry":
        return Isometry(self.a.conjugate(), -self.b)

    @property
    def trace(self) -> float:
        return 2.0 * self.a.real

    @property
    def translation_length(self) -> float:
        t = abs(self.a.real)
        if t <= 1.0:
            raise NonHyperbolicError(f"|trace| = {2 * t} <= 2")
        return 2.0 * math.acosh(t)

    def push(self, theta: PhasePoint) -> PhasePoint:
        return PhasePoint(self(theta.p), self.derivative(theta.p) * theta.v)

    def fixed_points(self) -> tuple[complex, complex]:
        """Boundary fixed points ``(repelling, attracting)`` of a hyperbolic element."""
        if abs(self.a.real) <= 1.0:
            raise NonHyperbolicError("element is not hyperbolic")
        bc = self.b.conjugate()
        diff = self.a.conjugate() - self.a
        disc = cmath.sqrt(diff * diff + 4.0 * bc * self.b)
        roots = [(-diff + disc) / (2.0 * bc), (-diff - disc) / (2.0 * bc)]
        roots = [z / abs(z) for z in roots]
        roots.sort(key=lambda z: abs(self.derivative(z)))
        return roots[1], roots[0]

    def distance_to(self, other: "Isometry") -> float:
        """Max-entry distance between the matrices, up to overall sign."""
        d1 = max(abs(self.a - other.a), abs(self.b - other.b))
        d2 = max(abs(self.a + other.a), abs(self.b + other.b))
        return min(d1, d2)

    @staticmethod
    def identity() -> "Isometry":
        return Isometry(1.0 + 0j, 0j)

    @staticmethod
    def rotation(angle: float) -> "Isometry":
        return Isometry(cmath.exp(0.5j * angle), 0j)

    @staticmethod
    def translation(length: float, angle: float = 0.0) -> "Isometry":
        """Hyperbolic translation by ``length`` along the diameter at ``angle``."""
        return Isometry(complex(math.cosh(0.5 * length)), math.sinh(0.5 * length) * cmath.exp(1j * angle))

    @staticmethod
    def to_origin(p: complex) -> "Isometry":
        """The transvection sending ``p`` to the origin."""
        s = 1.0 / math.sqrt(1.0 - abs(p) ** 2)
        return Isometry(complex(s), -p * s)


def inverse_letter(k: int) -> int:
    return (k + 4) % 8


def inverse_word(word: Sequence[int]) -> tuple[int, ...]:
    return tuple(inverse_letter(k) for k in reversed(word))


@dataclass
class SurfaceGroup:
    """Side-pairing group of a regular octagon.

    ``generators[k]`` maps side ``k + 4`` onto side ``k``; side ``k`` is the
    perpendicular bisector of ``0`` and ``generators[k](0)``.
    """

    generators: tuple[Isometry, ...]
    relation: tuple[int, ...] = RELATION
    side_centers: np.ndarray = field(init=False)
    side_radius: float = field(init=False)
    vertices: np.ndarray = field(init=False)

    def __post_init__(self):
        mid = math.tanh(0.5 * INRADIUS)
        far = 1.0 / mid
        self.side_radius = 0.5 * (far - mid)
        dist = 0.5 * (far + mid)
        angles = np.arange(8) * (np.pi / 4)
        self.side_centers = dist * np.exp(1j * angles)
        vr = math.tanh(0.5 * CIRCUMRADIUS)
        self.vertices = vr * np.exp(1j * (angles + np.pi / 8))
        # boundary endpoints of each side geodesic
        half = math.acos(1.0 / dist)
        self.side_endpoints = np.stack([np.exp(1j * (angles - half)), np.exp(1j * (angles + half))], axis=1)

    def side_values(self, z: complex) -> np.ndarray:
        """``|z - c_k|^2 - r^2`` per side; all positive strictly inside the octagon."""
        d = z - self.side_centers
        return d.real**2 + d.imag**2 - self.side_radius**2

    def contains(self, z: complex, tol: float = 0.0) -> bool:
        return bool(np.min(self.side_values(z)) >= -tol)

    def word_isometry(self, word: Sequence[int]) -> Isometry:
        """Product ``g_{w0} g_{w1} ... g_{wn}`` (rightmost letter acts first)."""
        m = Isometry.identity()
        for k in word:
            m = m @ self.generators[k]
        return m

    def deck_isometry(self, applied: Sequence[int]) -> Isometry:
        """Composite of generators applied in order (first letter acts first)."""
        return self.word_isometry(tuple(reversed(applied)))

    def table(self) -> np.ndarray:
        """Generator coefficients as an (8, 4) float array ``[Re a, Im a, Re b, Im b]``."""
        return np.array([[g.a.real, g.a.imag, g.b.real, g.b.imag] for g in self.generators])

    def verify(self, tol: float = 1e-9) -> dict:
        """Check the octagon construction: relation, side pairing, hyperbolicity."""
        rel = self.word_isometry(self.relation)
        rel_err = rel.distance_to(Isometry.identity())
        side_err = 0.0
        for k in range(8):
            g = self.generators[k]
            src = self.side_endpoints[(k + 4) % 8]
            dst = self.side_endpoints[k]
            imgs = [g(complex(z)) for z in src]
            err = min(
                max(abs(imgs[0] - dst[0]), abs(imgs[1] - dst[1])),
                max(abs(imgs[0] - dst[1]), abs(imgs[1] - dst[0])),
            )
            side_err = max(side_err, err)
        inv_err = max(
            (self.generators[k] @ self.generators[(k + 4) % 8]).distance_to(Isometry.identity()) for k in range(8)
        )
        min_trace = min(abs(g.trace) for g in self.generators)
        ok = rel_err < tol and side_err < tol and inv_err < tol and min_trace > 2.0
        return {
            "relation_residual": rel_err,
            "side_pairing_residual": side_err,
            "inverse_residual": inv_err,
            "min_abs_trace": min_trace,
            "ok": ok,
        }


def _bolza_generators(jitter: float = 0.0) -> tuple[Isometry, ...]:
    gens = []
    for k in range(8):
        g = Isometry.translation(SYSTOLE, k * math.pi / 4)
        if k == 0 and jitter:
            g = Isometry(g.a, g.b * (1.0 + jitter)).normalized()
        gens.append(g)
    return tuple(gens)


@lru_cache(maxsize=None)
def bolza_group(jitter: float = 0.0) -> SurfaceGroup:
    """The Bolza surface group; ``jitter`` corrupts ``g_0`` for negative controls."""
    return SurfaceGroup(_bolza_generators(jitter))


# ---------------------------------------------------------------------------
# geodesic flow and deck reduction


def exact_geodesic_flow(theta: PhasePoint, t: float) -> PhasePoint:
    """Closed-form geodesic flow in the disk (no deck reduction)."""
    p, v = theta
    speed = metric_norm(p, v)
    if speed == 0.0 or t == 0.0:
        return PhasePoint(p, v)
    to0 = Isometry.to_origin(p)
    w = to0.derivative(p) * v
    e = w / abs(w)
    s = 0.5 * speed * t
    z = math.tanh(s) * e
    zdot = 0.5 * speed / math.cosh(s) ** 2 * e
    back = to0.inverse()
    return PhasePoint(back(z), back.derivative(z) * zdot)


def reduce_to_domain(theta: PhasePoint, group: SurfaceGroup | None = None, max_word: int = 32):
    """Move ``theta`` into the closed octagon by greedy nearest-centre deck moves.

    Returns ``(reduced, word)`` where ``word`` lists generator indices in the
    order they were applied.
    """
    group = group or bolza_group()
    p, v = theta
    word: list[int] = []
    while True:
        best, best_r = -1, abs(p)
        for k, g in enumerate(group.generators):
            r = abs(g(p))
            if r < best_r - 1e-15:
                best, best_r = k, r
        if best < 0:
            break
        if len(word) >= max_word:
            raise ReductionError(f"point not reduced within {max_word} deck moves")
        g = group.generators[best]
        v = g.derivative(p) * v
        p = g(p)
        word.append(best)
    return PhasePoint(p, v), word


def unreduce(theta: PhasePoint, word: Sequence[int], group: SurfaceGroup | None = None) -> PhasePoint:
    """Undo :func:`reduce_to_domain` by applying inverse letters in reverse order."""
    group = group or bolza_group()
    out = theta
    for k in reversed(word):
        out = group.generators[inverse_letter(k)].push(out)
    return out


def _line_hits(theta: PhasePoint, ends: np.ndarray) -> np.ndarray:
    """Arc length along the unit-speed ray from ``theta`` to each geodesic line (inf if missed).

    ``ends`` holds the boundary endpoints of the lines, shape ``(n, 2)``.
    """
    p, v = theta
    to0 = Isometry.to_origin(p)
    w = to0.derivative(p) * v
    m = Isometry.rotation(-cmath.phase(w)) @ to0
    z1 = m(ends[:, 0])
    z2 = m(ends[:, 1])
    out = np.full(len(ends), np.inf)
    cross = z1.imag * z2.imag < 0.0
    for k in np.nonzero(cross)[0]:
        a, b = complex(z1[k]), complex(z2[k])
        # endpoints e^{i al}, e^{i be}: the line meets the real axis where
        # u x^2 - 2 m x + u = 0 with u = cos((al-be)/2), m = cos((al+be)/2)
        al, be = cmath.phase(a), cmath.phase(b)
        u = math.cos(0.5 * (al - be))
        m = math.cos(0.5 * (al + be))
        root = math.sqrt(max(m * m - u * u, 0.0))
        q = m + math.copysign(root, m)
        if q == 0.0:
            continue
        x = u / q
        if abs(x) >= 1.0:
            continue
        out[k] = 2.0 * math.atanh(x)
    return out


def ray_exit(theta: PhasePoint, group: SurfaceGroup | None = None, eps: float = 1e-12) -> tuple[float, int]:
    """Arc length to the first octagon side crossed by the geodesic ray from an interior ``theta``."""
    group = group or bolza_group()
    unit = PhasePoint(theta.p, theta.v / metric_norm(theta.p, theta.v))
    hits = _line_hits(unit, group.side_endpoints)
    hits[hits <= eps] = np.inf
    k = int(np.argmin(hits))
    return float(hits[k]), k


def _bisector_ends(p: complex, q: complex) -> tuple[complex, complex]:
    """Boundary endpoints of the perpendicular bisector of ``p`` and ``q``."""
    to0 = Isometry.to_origin(p)
    w = to0(q)
    d = distance_from_origin(w)
    mid = math.tanh(0.25 * d)
    cdist = 0.5 * (mid + 1.0 / mid)
    half = math.acos(1.0 / cdist)
    ang = cmath.phase(w)
    back = to0.inverse()
    return back(cmath.exp(1j * (ang - half))), back(cmath.exp(1j * (ang + half)))


def _first_positive(hits: np.ndarray) -> float:
    hits = hits[hits > 0.0]
    if hits.size == 0:
        raise DomainError("geodesic ray leaves no face of the domain")
    return float(hits.min())


class CuttingDomain:
    """Dirichlet domain of the surface group centred at a generic point.

    Used only to cut closed geodesics into chords for conjugacy-class
    identification: the octagon's own sides lie on closed geodesics, which
    makes cutting sequences through it ambiguous.
    """

    def __init__(self, group: SurfaceGroup, centre: complex = 0.1713 + 0.0926j):
        self.group = group
        self.centre = centre
        shift = distance_from_origin(centre)
        reach = 2.0 * (CIRCUMRADIUS + shift) + 0.1
        A, B, _ = ball_elements(reach + 2.0 * shift, group)
        elems = []
        for a, b in zip(A, B):
            g = Isometry(complex(a), complex(b))
            d = hyperbolic_distance(centre, g(centre))
            if 1e-9 < d <= reach:
                elems.append(g)
        self.elements = elems
        self.images = np.array([g(centre) for g in elems])
        self.ends = np.array([_bisector_ends(centre, q) for q in self.images])

    def _dist(self, z: complex) -> tuple[float, np.ndarray]:
        # monotone proxy for hyperbolic distance: |z - q|^2 / (1 - |q|^2)
        d0 = abs(z - self.centre) ** 2 / (1.0 - abs(self.centre) ** 2)
        d = np.abs(z - self.images) ** 2 / (1.0 - np.abs(self.images) ** 2)
        return d0, d

    def reduce(self, theta: PhasePoint, max_moves: int = 64) -> PhasePoint:
        p, v = theta
        for _ in range(max_moves):
            d0, d = self._dist(p)
            j = int(np.argmin(d))
            if d[j] >= d0 * (1.0 - 1e-14):
                return PhasePoint(p, v)
            g = self.elements[j].inverse()
            v = g.derivative(p) * v
            p = g(p)
        raise ReductionError("cutting-domain reduction did not converge")

    def depth(self, P) -> np.ndarray:
        """``min_j d(p, q_j) - d(p, centre)``: positive inside, zero on a face."""
        P = np.atleast_1d(np.asarray(P, dtype=complex))
        bp = 1.0 - np.abs(P) ** 2
        d0 = np.arccosh(1.0 + 2.0 * np.abs(P - self.centre) ** 2 / (bp * (1.0 - abs(self.centre) ** 2)))
        q = self.images[None, :]
        d = np.arccosh(1.0 + 2.0 * np.abs(P[:, None] - q) ** 2 / (bp[:, None] * (1.0 - np.abs(q) ** 2)))
        return d.min(axis=1) - d0

    def chord(self, theta: PhasePoint) -> tuple[PhasePoint, float]:
        """Entry state and length of the chord through an interior unit state."""
        back = _first_positive(_line_hits(PhasePoint(theta.p, -theta.v), self.ends))
        fwd = _first_positive(_line_hits(theta, self.ends))
        return exact_geodesic_flow(theta, -back), float(back + fwd)

    def next_chord(self, entry: PhasePoint, eps: float = 1e-9) -> tuple[PhasePoint, float, PhasePoint]:
        """Follow a chord from its boundary entry state.

        Returns ``(entry, length, next_entry)`` where ``next_entry`` is the
        exit state carried back into the domain by the face pairing.
        """
        hits = _line_hits(entry, self.ends)
        hits[hits <= eps] = np.inf
        j = int(np.argmin(hits))
        if not np.isfinite(hits[j]):
            raise DomainError("geodesic ray leaves no face of the domain")
        out = exact_geodesic_flow(entry, float(hits[j]))
        g = self.elements[j].inverse()
        return entry, float(hits[j]), PhasePoint(g(out.p), g.derivative(out.p) * out.v)


@lru_cache(maxsize=None)
def cutting_domain(jitter: float = 0.0) -> CuttingDomain:
    return CuttingDomain(bolza_group(jitter))


# ---------------------------------------------------------------------------
# closed geodesics


@dataclass(frozen=True)
class ConjugacyClass:
    word: tuple[int, ...]
    matrix: Isometry
    trace_magnitude: float

    @property
    def length(self) -> float:
        return 2.0 * math.acosh(0.5 * self.trace_magnitude)


def _flow_many(theta: PhasePoint, ts: np.ndarray):
    """Unit-speed closed-form flow of one state to many times (no reduction)."""
    p, v = theta
    to0 = Isometry.to_origin(p)
    w = to0.derivative(p) * v
    e = w / abs(w)
    s = 0.5 * ts
    z = np.tanh(s) * e
    zdot = 0.5 / np.cosh(s) ** 2 * e
    back = to0.inverse()
    return back(z), back.derivative(z) * zdot


@dataclass(frozen=True)
class ClosedGeodesic:
    """A primitive closed geodesic with a unit-speed parameterisation from ``base``.

    ``knots[k]`` is the reduced state at arc length ``k * knot_step``; states
    in between come from the closed-form flow of the preceding knot, which
    keeps every evaluation within one unit of arc length of a reduced point.
    """

    klass: ConjugacyClass
    length: float
    base: PhasePoint
    knots: tuple[PhasePoint, ...]
    knot_step: float = 1.0

    @property
    def word(self) -> tuple[int, ...]:
        return self.klass.word

    def state_at(self, t: float, group: SurfaceGroup | None = None) -> PhasePoint:
        t = t % self.length
        k = min(int(t // self.knot_step), len(self.knots) - 1)
        out = exact_geodesic_flow(self.knots[k], t - k * self.knot_step)
        return reduce_to_domain(out, group)[0]

    def sample(self, ts, group: SurfaceGroup | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Reduced positions and unit velocities at arc lengths ``ts``."""
        group = group or bolza_group()
        ts = np.atleast_1d(np.asarray(ts, dtype=float)) % self.length
        idx = np.minimum((ts // self.knot_step).astype(int), len(self.knots) - 1)
        P = np.empty(ts.shape, dtype=complex)
        V = np.empty(ts.shape, dtype=complex)
        for k in np.unique(idx):
            mask = idx == k
            P[mask], V[mask] = _flow_many(self.knots[k], ts[mask] - k * self.knot_step)
        for i in range(len(ts)):
            th, _ = reduce_to_domain(PhasePoint(complex(P[i]), complex(V[i])), group)
            P[i], V[i] = th.p, th.v
        return P, V

    def closure_error(self, group: SurfaceGroup | None = None) -> float:
        """Distance between ``base`` and the reduced state after one full period."""
        k = len(self.knots) - 1
        end = exact_geodesic_flow(self.knots[k], self.length - k * self.knot_step)
        end, _ = reduce_to_domain(end, group)
        return abs(end.p - self.base.p) + abs(end.v - self.base.v)


def axis_point(m: Isometry) -> PhasePoint:
    """Unit state on the axis of ``m`` nearest the origin, pointing in the translation direction."""
    xm, xp = m.fixed_points()
    den = 1.0 + _dot(xm, xp)
    if abs(den) < 1e-14:
        q = 0j
    else:
        c = (xm + xp) / den
        r = math.sqrt(max(abs(c) ** 2 - 1.0, 0.0))
        q = (abs(c) - r) * c / abs(c)
    to0 = Isometry.to_origin(q)
    w = to0(m(q))
    e = w / abs(w)
    v = to0.inverse().derivative(0j) * e
    return PhasePoint(q, v / metric_norm(q, v))


def _knots(start: PhasePoint, T: float, step: float, group: SurfaceGroup) -> list[PhasePoint]:
    knots = [start]
    n = int(math.ceil(T / step))
    for _ in range(1, n):
        nxt, _ = reduce_to_domain(exact_geodesic_flow(knots[-1], step), group)
        knots.append(nxt)
    return knots


def trace_chords(m: Isometry, domain: CuttingDomain | None = None, max_chords: int = 100000):
    """Cut the closed geodesic of ``m`` by the generic Dirichlet domain.

    Returns ``(key, closing_length)``: ``key`` lists ``(midpoint, direction mod pi)``
    per chord and ``closing_length`` is the arc length at which the walk first
    returns to its starting chord (the primitive length).
    """
    domain = domain or cutting_domain()
    start = domain.reduce(axis_point(m))
    c0, l0 = domain.chord(start)
    key = [_chord_mid(c0, l0)]
    total = l0
    _, _, entry = domain.next_chord(c0)
    for _ in range(max_chords):
        c, ln, nxt = domain.next_chord(entry)
        k = _chord_mid(c, ln)
        if abs(k[0] - key[0][0]) < 1e-7 and _angle_close(k[1], key[0][1]):
            return key, total
        key.append(k)
        total += ln
        entry = nxt
    raise RuntimeError("closed geodesic walk did not close")


def _chord_mid(start: PhasePoint, length: float) -> tuple[complex, float]:
    mid = exact_geodesic_flow(start, 0.5 * length)
    return mid.p, cmath.phase(mid.v) % math.pi


def _angle_close(a: float, b: float, tol: float = 1e-7) -> bool:
    d = abs(a - b) % math.pi
    return min(d, math.pi - d) < tol


def same_geodesic(key1, key2, tol: float = 1e-7) -> bool:
    """Whether two chord keys describe the same unoriented closed geodesic."""
    if len(key1) != len(key2):
        return False
    used = [False] * len(key2)
    for p, a in key1:
        for j, (q, b) in enumerate(key2):
            if not used[j] and abs(p - q) < tol and _angle_close(a, b, tol):
                used[j] = True
                break
        else:
            return False
    return True


def geodesic_from_class(c: ConjugacyClass, group: SurfaceGroup | None = None, knot_step: float = 1.0) -> ClosedGeodesic:
    """Closed geodesic of a hyperbolic class, based at its deepest point in the octagon."""
    group = group or bolza_group()
    if c.trace_magnitude <= 2.0:
        raise NonHyperbolicError(f"class {c.word} has |trace| {c.trace_magnitude} <= 2")
    T = c.length
    start, _ = reduce_to_domain(axis_point(c.matrix), group)
    knots = _knots(start, T, knot_step, group)
    # candidate base points: 64 per unit length along the orbit
    best, best_depth = start, -np.inf
    n = max(64, int(64 * T))
    rough = ClosedGeodesic(c, T, start, tuple(knots), knot_step)
    P, V = rough.sample(np.arange(n) * (T / n), group)
    for p, v in zip(P, V):
        depth = float(np.min(group.side_values(complex(p))))
        if depth > best_depth + 1e-12:
            best, best_depth = PhasePoint(complex(p), complex(v)), depth
    best = PhasePoint(best.p, best.v / metric_norm(best.p, best.v))
    return ClosedGeodesic(c, T, best, tuple(_knots(best, T, knot_step, group)), knot_step)


# ---------------------------------------------------------------------------
# conjugacy class enumeration


def canonical_word(word: Sequence[int]) -> tuple[int, ...]:
    """Lexicographic minimum over cyclic rotations of the word and of its inverse."""
    w = tuple(word)
    inv = inverse_word(w)
    n = len(w)
    cands = [w[i:] + w[:i] for i in range(n)] + [inv[i:] + inv[:i] for i in range(n)]
    return min(cands)


def is_cyclically_reduced(word: Sequence[int]) -> bool:
    n = len(word)
    return all((word[i] - word[(i + 1) % n]) % 8 != 4 for i in range(n)) if n > 1 else n == 1


def is_proper_power(word: Sequence[int]) -> bool:
    n = len(word)
    for d in range(1, n // 2 + 1):
        if n % d == 0 and tuple(word[:d]) * (n // d) == tuple(word):
            return True
    return False


def _reduced_words(n: int, group: SurfaceGroup):
    """All freely reduced words of length ``n`` with their matrix coefficients."""
    words = np.arange(8, dtype=np.int8).reshape(8, 1)
    tab = group.table()
    a = tab[:, 0] + 1j * tab[:, 1]
    b = tab[:, 2] + 1j * tab[:, 3]
    for _ in range(n - 1):
        last = words[:, -1]
        rows, letters = [], []
        for k in range(8):
            ok = np.nonzero(last != (k + 4) % 8)[0]
            rows.append(ok)
            letters.append(np.full(ok.size, k, dtype=np.int8))
        rows = np.concatenate(rows)
        letters = np.concatenate(letters)
        ga, gb = a[rows], b[rows]
        ha, hb = tab[letters, 0] + 1j * tab[letters, 1], tab[letters, 2] + 1j * tab[letters, 3]
        a = ga * ha + gb * np.conj(hb)
        b = ga * hb + gb * np.conj(ha)
        norm = np.sqrt(np.abs(a) ** 2 - np.abs(b) ** 2)
        a, b = a / norm, b / norm
        words = np.concatenate([words[rows], letters[:, None]], axis=1)
        order = np.lexsort(words.T[::-1])
        words, a, b = words[order], a[order], b[order]
    return words, a, b


def _candidate_words(L: int, max_length: float | None, group: SurfaceGroup, chunk: int = 1024):
    """Cyclically reduced words of length ``<= L`` with ``|trace| > 2`` (and short enough)."""
    half_cap = math.cosh(0.5 * max_length) if max_length is not None else math.inf
    levels: dict[int, tuple] = {}

    def level(n):
        if n not in levels:
            levels[n] = _reduced_words(n, group)
        return levels[n]

    out: list[tuple[tuple[int, ...], float]] = []
    for n in range(1, L + 1):
        if n == 1:
            w, a, b = level(1)
            ht = np.abs(a.real)
            for i in np.nonzero((ht > 1.0 + 1e-12) & (ht <= half_cap))[0]:
                out.append((tuple(int(x) for x in w[i]), float(ht[i])))
            continue
        n1 = (n + 1) // 2
        n2 = n - n1
        wa, aa, ba = level(n1)
        wb, ab, bb = level(n2)
        # half-trace Re(a_A a_B + b_A conj(b_B)) as one GEMM
        left = np.stack([aa.real, -aa.imag, ba.real, ba.imag], axis=1)
        right = np.stack([ab.real, ab.imag, bb.real, bb.imag], axis=0)
        firstA, lastA = wa[:, 0].astype(int), wa[:, -1].astype(int)
        firstB, lastB = wb[:, 0].astype(int), wb[:, -1].astype(int)
        for s in range(0, len(wa), chunk):
            ht = np.abs(left[s : s + chunk] @ right)
            ok = (ht > 1.0 + 1e-12) & (ht <= half_cap)
            ok &= (lastA[s : s + chunk, None] - firstB[None, :]) % 8 != 4
            ok &= (lastB[None, :] - firstA[s : s + chunk, None]) % 8 != 4
            ii, jj = np.nonzero(ok)
            for i, j in zip(ii, jj):
                word = tuple(int(x) for x in wa[s + i]) + tuple(int(x) for x in wb[j])
                out.append((word, float(ht[i, j])))
    return out


class _ChordIndex:
    """Tolerance lookup of chord keys ``(midpoint, direction mod pi)`` on a hash grid."""

    def __init__(self, tol: float = 1e-7, cell: float = 1e-5):
        self.tol = tol
        self.cell = cell
        self.nang = int(math.pi / cell)
        self.cells: dict[tuple[int, int, int], list[tuple[complex, float, int]]] = {}

    def _cell(self, p: complex, a: float) -> tuple[int, int, int]:
        return (int(math.floor(p.real / self.cell)), int(math.floor(p.imag / self.cell)), int(a / self.cell) % self.nang)

    def find(self, p: complex, a: float) -> int | None:
        cx, cy, ca = self._cell(p, a)
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for da in (-1, 0, 1):
                    for q, b, owner in self.cells.get((cx + dx, cy + dy, (ca + da) % self.nang), ()):
                        if abs(p - q) < self.tol and _angle_close(a, b, self.tol):
                            return owner
        return None

    def add(self, key, owner: int) -> None:
        for p, a in key:
            self.cells.setdefault(self._cell(p, a), []).append((p, a, owner))


def _classify(cands, group: SurfaceGroup, domain: CuttingDomain) -> list[ConjugacyClass]:
    """Geometric deduplication of ``(word, isometry, half-trace)`` candidates sorted by preference."""
    index = _ChordIndex()
    classes: list[ConjugacyClass] = []
    for word, m, ht in cands:
        T = 2.0 * math.acosh(ht)
        start = domain.reduce(axis_point(m))
        c, ln = domain.chord(start)
        if index.find(*_chord_mid(c, ln)) is not None:
            continue
        key, closed = trace_chords(m, domain)
        if abs(closed - T) > 1e-7 * max(1.0, T):
            continue  # a proper power in disguise
        index.add(key, len(classes))
        classes.append(ConjugacyClass(tuple(word), m, 2.0 * ht))
    classes.sort(key=lambda c: (round(c.length, 9), len(c.word), c.word))
    return classes


def _domain_for(group: SurfaceGroup) -> CuttingDomain:
    return cutting_domain() if group is bolza_group() else CuttingDomain(group)


def enumerate_classes(L: int, max_length: float | None = None, group: SurfaceGroup | None = None):
    """Primitive hyperbolic conjugacy classes with a cyclically reduced word of length ``<= L``.

    Words are deduplicated first combinatorially (rotation and inversion) and
    then geometrically, since distinct words in a surface group can be
    conjugate.  Each class keeps its shortest canonical representative.
    Order: by length, then word length, then word.

    ``max_length`` optionally drops classes longer than that translation length.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    group = group or bolza_group()
    seen: dict[tuple[int, ...], float] = {}
    for word, ht in _candidate_words(L, max_length, group):
        if is_proper_power(word):
            continue
        cw = canonical_word(word)
        if cw not in seen:
            seen[cw] = ht
    cands = sorted(seen.items(), key=lambda kv: (round(kv[1], 10), len(kv[0]), kv[0]))
    return _classify(((w, group.word_isometry(w), ht) for w, ht in cands), group, _domain_for(group))


def ball_elements(radius: float, group: SurfaceGroup | None = None):
    """Every group element ``g`` with ``d(0, g(0)) <= radius``, with a word for each.

    Breadth-first search that only extends an element when the displacement
    grows.  This is complete: any element other than the identity moves the
    origin outside the octagon, so some side pairing brings it strictly
    closer.  Returns ``(a, b, words)``.
    """
    group = group or bolza_group()
    tab = group.table()
    ga = tab[:, 0] + 1j * tab[:, 1]
    gb = tab[:, 2] + 1j * tab[:, 3]
    cap = math.tanh(0.5 * radius) + 1e-12
    a, b = np.array([1.0 + 0j]), np.array([0j])
    words: list[tuple[int, ...]] = [()]
    all_a, all_b, all_w = [a], [b], list(words)
    seen = {(1.0, 0.0, 0.0, 0.0)}
    while len(a):
        # children s * g for every generator s
        na = (ga[:, None] * a[None, :] + gb[:, None] * np.conj(b)[None, :]).ravel()
        nb = (ga[:, None] * b[None, :] + gb[:, None] * np.conj(a)[None, :]).ravel()
        letter = np.repeat(np.arange(8), len(a))
        parent = np.tile(np.arange(len(a)), 8)
        r_old = np.abs(b / np.conj(a))[parent]
        r_new = np.abs(nb / np.conj(na))
        ok = (r_new > r_old + 1e-15) & (r_new <= cap)
        na, nb, letter, parent = na[ok], nb[ok], letter[ok], parent[ok]
        sign = np.where(na.real < 0, -1.0, 1.0)
        na, nb = na * sign, nb * sign
        keys = np.round(np.stack([na.real, na.imag, nb.real, nb.imag], axis=1), 6)
        fa, fb, fw = [], [], []
        for i in range(len(na)):
            k = tuple(keys[i])
            if k in seen:
                continue
            seen.add(k)
            fa.append(na[i])
            fb.append(nb[i])
            fw.append((int(letter[i]),) + words[parent[i]])
        a, b, words = np.array(fa, dtype=complex), np.array(fb, dtype=complex), fw
        all_a.append(a)
        all_b.append(b)
        all_w.extend(fw)
    return np.concatenate(all_a), np.concatenate(all_b), all_w


def _cyclic_reduce(word: tuple[int, ...]) -> tuple[int, ...]:
    w = list(word)
    while len(w) > 1 and (w[0] - w[-1]) % 8 == 4:
        w = w[1:-1]
    return tuple(w)


def enumerate_by_length(t_max: float, group: SurfaceGroup | None = None) -> list[ConjugacyClass]:
    """Every primitive closed geodesic of length ``<= t_max`` (complete by construction).

    A class has a representative whose axis meets the octagon, and such a
    representative moves the origin by at most ``t_max + 2 * circumradius``.
    """
    group = group or bolza_group()
    A, B, words = ball_elements(t_max + 2.0 * CIRCUMRADIUS + 1e-6, group)
    ht = np.abs(A.real)
    ok = (ht > 1.0 + 1e-12) & (ht <= math.cosh(0.5 * t_max) * (1 + 1e-12))
    cands = []
    for i in np.nonzero(ok)[0]:
        w = canonical_word(_cyclic_reduce(words[i]))
        cands.append((w, float(ht[i])))
    cands = sorted(set(cands), key=lambda kv: (round(kv[1], 10), len(kv[0]), kv[0]))
    return _classify(((w, group.word_isometry(w), h) for w, h in cands), group, _domain_for(group))


def group_ball(radius: float, max_word: int | None = None, group: SurfaceGroup | None = None) -> list[Isometry]:
    """Group elements moving the origin at most ``radius``, optionally capped in word length.

    Sorted by displacement, identity first.
    """
    A, B, words = ball_elements(radius, group)
    d = 2.0 * np.arctanh(np.minimum(np.abs(B / np.conj(A)), 1.0 - 1e-16))
    order = np.argsort(d, kind="stable")
    return [Isometry(complex(A[i]), complex(B[i])) for i in order if max_word is None or len(words[i]) <= max_word]
