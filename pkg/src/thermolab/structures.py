"""The perturbing field family and the thermostat's algebraic structures.

The field is ``E_lam = lam * E0`` with ``E0 = grad U`` and

    U(p) = sum_gamma sum_j a_j * bump(sigma_j(gamma^{-1} p)),
    sigma = (cosh d(p, q) - 1) / (cosh w - 1),   bump(s) = exp(1 - 1 / (1 - s)),

a smooth bump supported on the hyperbolic ball of radius ``w`` around each
translated centre ``q``.  Only translates by words of length ``<= truncation``
that come within reach of the octagon are kept.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from . import _backend
from .geometry import (
    CIRCUMRADIUS,
    DomainError,
    PhasePoint,
    SurfaceGroup,
    bolza_group,
    christoffel,
    conformal_factor,
    distance_from_origin,
    group_ball,
    metric_inner,
)

DEFAULT_CENTERS = (0.3 + 0.1j, -0.25 + 0.35j, 0.05 - 0.45j)
DEFAULT_AMPLITUDES = (1.0, -0.7, 0.5)
DEFAULT_WIDTHS = (1.2, 1.0, 0.9)


@dataclass(frozen=True)
class FieldFamily:
    """Gradient field ``E0`` of a truncated automorphic bump-sum potential.

    ``reach`` is how far outside the octagon (hyperbolic distance) the field
    is evaluated faithfully; integrator stages and automorphy checks stay
    well inside it.
    """

    centers: tuple[complex, ...] = DEFAULT_CENTERS
    amplitudes: tuple[float, ...] = DEFAULT_AMPLITUDES
    widths: tuple[float, ...] = DEFAULT_WIDTHS
    truncation: int = 6
    reach: float = 1.5
    group: SurfaceGroup = field(default_factory=bolza_group, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "centers", tuple(complex(c) for c in self.centers))
        object.__setattr__(self, "amplitudes", tuple(float(a) for a in self.amplitudes))
        object.__setattr__(self, "widths", tuple(float(w) for w in self.widths))
        if not len(self.centers) == len(self.amplitudes) == len(self.widths):
            raise ValueError("centers, amplitudes and widths must have equal length")
        if any(w <= 0 for w in self.widths):
            raise ValueError("bump widths must be positive")
        if any(abs(c) >= 1 for c in self.centers):
            raise DomainError("bump centres must lie in the unit disk")
        if self.truncation < 0:
            raise ValueError("truncation must be >= 0")

    @classmethod
    def zero(cls) -> "FieldFamily":
        return cls(centers=(), amplitudes=(), widths=())

    def scaled(self, c: float) -> "FieldFamily":
        return FieldFamily(self.centers, tuple(c * a for a in self.amplitudes), self.widths, self.truncation, self.reach, self.group)

    @property
    def is_zero(self) -> bool:
        return all(a == 0.0 for a in self.amplitudes)

    @property
    def max_radius(self) -> float:
        """Distance from the origin up to which evaluation is faithful."""
        return CIRCUMRADIUS + self.reach

    @cached_property
    def translates(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Translated centres, their widths and amplitudes."""
        qs, ws, amps = [], [], []
        for c, a, w in zip(self.centers, self.amplitudes, self.widths):
            if a == 0.0:
                continue
            cap = self.max_radius + w
            for g in group_ball(cap + distance_from_origin(c), self.truncation, self.group):
                q = g(c)
                if distance_from_origin(q) <= cap:
                    qs.append(q)
                    ws.append(w)
                    amps.append(a)
        return np.array(qs, dtype=complex), np.array(ws), np.array(amps)

    @cached_property
    def kernel(self):
        q, w, a = self.translates
        kc = (2.0 / (1.0 - np.abs(q) ** 2)) / (np.cosh(w) - 1.0)
        return _backend.Kernel(q.real, q.imag, kc, a)

    def _check(self, p: complex) -> None:
        if not abs(p) < 1.0:
            raise DomainError(f"point {p!r} is not inside the unit disk")
        if distance_from_origin(p) > self.max_radius:
            raise DomainError(f"point {p!r} is beyond the field's reach")

    def potential_derivatives(self, p: complex):
        """``(U, dU, d2U)`` with Euclidean gradient (complex) and 2x2 Hessian."""
        p = complex(p)
        self._check(p)
        U, ux, uy, hxx, hxy, hyy = self.kernel.evaluate(p.real, p.imag)
        return U, complex(ux, uy), np.array([[hxx, hxy], [hxy, hyy]])

    def potential(self, p: complex) -> float:
        return self.potential_derivatives(p)[0]

    def eval_grad_potential(self, p: complex) -> complex:
        """Riemannian gradient of ``U``, i.e. ``E0(p)``."""
        _, dU, _ = self.potential_derivatives(p)
        s2 = 0.25 * (1.0 - abs(p) ** 2) ** 2
        return s2 * dU

    def eval_E(self, lam: float, p: complex) -> complex:
        return lam * self.eval_grad_potential(p)

    def jet(self, p: complex) -> tuple[complex, np.ndarray]:
        """``E0(p)`` and its coordinate Jacobian ``DE[i, j] = d_j E_i``."""
        p = complex(p)
        _, dU, H = self.potential_derivatives(p)
        B = 1.0 - abs(p) ** 2
        s2 = 0.25 * B * B
        ds = np.array([-p.real * B, -p.imag * B])
        g = np.array([dU.real, dU.imag])
        return s2 * dU, s2 * H + np.outer(g, ds)

    def covariant_derivative(self, p: complex, X: complex) -> complex:
        """``nabla_X E0`` at ``p``."""
        E, DE = self.jet(p)
        d = DE @ np.array([X.real, X.imag])
        return complex(d[0], d[1]) + christoffel(p, X, E)

    def jet_many(self, P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised :meth:`jet`: ``E`` of shape (n,) complex and ``DE`` of shape (n, 2, 2)."""
        P = np.asarray(P, dtype=complex)
        if np.any(np.abs(P) >= 1.0):
            raise DomainError("points must lie inside the unit disk")
        raw = self.kernel.evaluate_many(np.ascontiguousarray(P.real), np.ascontiguousarray(P.imag))
        B = 1.0 - np.abs(P) ** 2
        s2 = 0.25 * B * B
        E = s2 * (raw[:, 1] + 1j * raw[:, 2])
        DE = np.empty((len(P), 2, 2))
        DE[:, 0, 0] = s2 * raw[:, 3] - raw[:, 1] * P.real * B
        DE[:, 0, 1] = s2 * raw[:, 4] - raw[:, 1] * P.imag * B
        DE[:, 1, 0] = s2 * raw[:, 4] - raw[:, 2] * P.real * B
        DE[:, 1, 1] = s2 * raw[:, 5] - raw[:, 2] * P.imag * B
        return E, DE

    def automorphy_defect(self, n: int = 200, seed: int = 0) -> float:
        """Max relative deviation of ``E0(g p)`` from ``dg E0(p)`` over random ``p`` and generators."""
        rng = np.random.default_rng(seed)
        worst = 0.0
        gens = self.group.generators
        count = 0
        while count < n:
            p = complex(*rng.uniform(-0.85, 0.85, 2))
            if not self.group.contains(p):
                continue
            g = gens[int(rng.integers(8))]
            q = g(p)
            if distance_from_origin(q) > self.max_radius:
                continue
            lhs = self.eval_grad_potential(q)
            rhs = g.derivative(p) * self.eval_grad_potential(p)
            # compare Riemannian lengths so the scale is chart independent
            scale = max(abs(rhs) * conformal_factor(q), 1e-12)
            worst = max(worst, abs(lhs - rhs) * conformal_factor(q) / scale)
            count += 1
        return worst


def default_field() -> FieldFamily:
    return FieldFamily()


# ---------------------------------------------------------------------------
# operators on SM


def _speed2(theta: PhasePoint) -> float:
    return metric_inner(theta.p, theta.v, theta.v)


def Y_tilde(theta: PhasePoint, lam: float, u: complex, fld: FieldFamily) -> complex:
    """``(<v, u> E - <E, u> v) / |v|^2``; antisymmetric in the metric."""
    E = fld.eval_E(lam, theta.p)
    return _wedge_op(theta, E, u)


def Z_op(theta: PhasePoint, u: complex, fld: FieldFamily) -> complex:
    """Derivative of :func:`Y_tilde` in ``lam`` at 0 (built from ``E0``)."""
    return _wedge_op(theta, fld.eval_grad_potential(theta.p), u)


def _wedge_op(theta: PhasePoint, E: complex, u: complex) -> complex:
    p, v = theta
    vv = _speed2(theta)
    if vv == 0.0:
        raise ValueError("velocity must be nonzero")
    return (metric_inner(p, v, u) * E - metric_inner(p, E, u) * v) / vv


def energy_H(theta: PhasePoint) -> float:
    return 0.5 * _speed2(theta)


def thermostat_F(lam: float, theta: PhasePoint, fld: FieldFamily) -> tuple[complex, complex]:
    """Horizontal and vertical parts of the thermostat vector field."""
    p, v = theta
    E = fld.eval_E(lam, p)
    return v, E - metric_inner(p, E, v) / _speed2(theta) * v


@dataclass(frozen=True)
class PhaseCotangentProbe:
    """A tangent vector to TM at ``theta``, split by the Levi-Civita connection.

    ``horizontal`` is the base displacement and ``vertical`` its covariant
    fibre part; :meth:`encode` and :meth:`decode` convert from and to the
    plain coordinate displacement ``(dp, dv)``.
    """

    theta: PhasePoint
    horizontal: complex
    vertical: complex

    @classmethod
    def encode(cls, theta: PhasePoint, dp: complex, dv: complex) -> "PhaseCotangentProbe":
        return cls(theta, complex(dp), complex(dv) + christoffel(theta.p, complex(dp), theta.v))

    def decode(self) -> tuple[complex, complex]:
        return self.horizontal, self.vertical - christoffel(self.theta.p, self.horizontal, self.theta.v)


def twisted_omega(lam: float, theta: PhasePoint, xi1: PhaseCotangentProbe, xi2: PhaseCotangentProbe, fld: FieldFamily) -> float:
    """Canonical symplectic form plus the magnetic-type twist from ``Y_tilde``."""
    p = theta.p
    w0 = metric_inner(p, xi1.horizontal, xi2.vertical) - metric_inner(p, xi1.vertical, xi2.horizontal)
    kappa = metric_inner(p, Y_tilde(theta, lam, xi1.horizontal, fld), xi2.horizontal)
    return w0 + kappa


def random_probe(theta: PhasePoint, rng: np.random.Generator) -> PhaseCotangentProbe:
    """Probe with unit-scale components in an orthonormal frame at ``theta``."""
    rho = conformal_factor(theta.p)
    h = complex(*rng.normal(size=2)) / rho
    v = complex(*rng.normal(size=2)) / rho
    return PhaseCotangentProbe(theta, h, v)


def symplectic_residual(
    lam: float,
    theta: PhasePoint,
    n: int,
    fld: FieldFamily,
    seed: int = 0,
    F: Callable[[float, PhasePoint], tuple[complex, complex]] | None = None,
) -> float:
    """Max of ``|dH(xi) - omega(F, xi)|`` over ``n`` random probes at ``theta``.

    ``F`` overrides the vector field (for negative controls).
    """
    rng = np.random.default_rng(seed)
    Fh, Fv = (F or (lambda l, th: thermostat_F(l, th, fld)))(lam, theta)
    fprobe = PhaseCotangentProbe(theta, Fh, Fv)
    worst = 0.0
    for _ in range(n):
        xi = random_probe(theta, rng)
        dH = metric_inner(theta.p, theta.v, xi.vertical)
        worst = max(worst, abs(dH - twisted_omega(lam, theta, fprobe, xi, fld)))
    return worst


def random_unit_states(n: int, rng: np.random.Generator, group: SurfaceGroup | None = None) -> list[PhasePoint]:
    """Unit states with base points uniform in the disk chart restricted to the octagon."""
    group = group or bolza_group()
    out = []
    while len(out) < n:
        p = complex(*rng.uniform(-0.85, 0.85, 2))
        if group.contains(p):
            out.append(PhasePoint.unit(p, float(rng.uniform(0.0, 2.0 * math.pi))))
    return out


__all__: Sequence[str] = [
    "FieldFamily",
    "default_field",
    "Y_tilde",
    "Z_op",
    "energy_H",
    "thermostat_F",
    "PhaseCotangentProbe",
    "twisted_omega",
    "symplectic_residual",
    "random_probe",
    "random_unit_states",
]
