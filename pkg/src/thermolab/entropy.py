"""Monte Carlo evaluation of the second-order entropy bound and length-spectrum entropy estimates."""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy import stats

from ._parallel import parallel_map
from .geometry import (
    CIRCUMRADIUS,
    PhasePoint,
    bolza_group,
    curvature_R_many,
    enumerate_by_length,
    enumerate_classes,
    geodesic_from_class,
    metric_inner_many,
    ray_exit,
)
from .orbits import ContinuationError, continue_grid, continue_orbit
from .structures import FieldFamily

H0_CONSTANT_CURVATURE = 1.0
_CHUNK = 1 << 14


class DegenerateFieldError(ValueError):
    """``A`` vanishes within noise: the field is zero in the mean and the bound says nothing."""

    def __init__(self, message: str, A: float = math.nan, A_stderr: float = math.nan):
        super().__init__(message)
        self.A, self.A_stderr = A, A_stderr


def substream(seed: int, name: str) -> np.random.Generator:
    """Named, seed-derived random stream; the same ``(seed, name)`` always gives the same draws."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(zlib.crc32(name.encode()),)))


# ---------------------------------------------------------------------------
# sampling


@dataclass
class LiouvilleSample:
    """Unit states drawn from normalised Liouville measure on the octagon."""

    P: np.ndarray
    V: np.ndarray
    seed: int
    attempts: int

    @property
    def count(self) -> int:
        return len(self.P)

    def states(self) -> list[PhasePoint]:
        return [PhasePoint(complex(p), complex(v)) for p, v in zip(self.P, self.V)]

    def area_estimate(self) -> tuple[float, float]:
        """Hyperbolic area of the octagon from the acceptance rate, with its standard error."""
        ball = 2.0 * math.pi * (math.cosh(CIRCUMRADIUS) - 1.0)
        q = self.count / self.attempts
        return ball * q, ball * math.sqrt(q * (1.0 - q) / self.attempts)


def _inside(P: np.ndarray) -> np.ndarray:
    g = bolza_group()
    d = np.abs(P[:, None] - g.side_centers[None, :]) ** 2 - g.side_radius**2
    return np.all(d > 0.0, axis=1)


def sample_liouville(n: int, seed: int) -> LiouvilleSample:
    """Base points uniform in hyperbolic area (rejection from the circumscribed ball), angles uniform."""
    if n < 1:
        raise ValueError("need at least one sample")
    rng = substream(seed, "sampling")
    ch = math.cosh(CIRCUMRADIUS) - 1.0
    Ps, Vs, have, attempts = [], [], 0, 0
    while have < n:
        m = _CHUNK
        u = rng.random(m)
        phi = rng.uniform(0.0, 2.0 * math.pi, m)
        ang = rng.uniform(0.0, 2.0 * math.pi, m)
        r = np.arccosh(1.0 + u * ch)
        P = np.tanh(0.5 * r) * np.exp(1j * phi)
        ok = _inside(P)
        idx = np.flatnonzero(ok)
        take = idx[: n - have]
        # attempts counted up to the last accepted draw so the area estimate is unbiased
        attempts += (int(take[-1]) + 1) if have + len(idx) >= n and len(take) else m
        P, a = P[take], ang[take]
        Ps.append(P)
        Vs.append(np.exp(1j * a) * (1.0 - np.abs(P) ** 2) / 2.0)
        have += len(take)
    return LiouvilleSample(np.concatenate(Ps), np.concatenate(Vs), int(seed), attempts)


# ---------------------------------------------------------------------------
# integrands


def _jets(fld: FieldFamily, P: np.ndarray, V: np.ndarray):
    E, DE = fld.jet_many(P)
    cov = np.einsum("nij,nj->ni", DE, np.column_stack([V.real, V.imag]))
    gphi = 2.0 / (1.0 - np.abs(P) ** 2) * P
    dot = lambda a, b: a.real * b.real + a.imag * b.imag
    dE = cov[:, 0] + 1j * cov[:, 1] + V * dot(gphi, E) + E * dot(gphi, V) - dot(V, E) * gphi
    return E, dE


def integrand_A(fld: FieldFamily, P: np.ndarray, V: np.ndarray, variant: str = "b") -> np.ndarray:
    """``|E0|^2 - <E0, v>^2 / |v|^2`` (variant ``b``) or with ``<nabla_v E0, v>`` (variant ``a``)."""
    E, dE = _jets(fld, P, V)
    g = lambda a, b: metric_inner_many(P, a, b)
    w = E if variant == "b" else dE
    return g(E, E) - g(w, V) ** 2 / g(V, V)


def integrand_B(fld: FieldFamily, P: np.ndarray, V: np.ndarray) -> np.ndarray:
    """``|nabla_v E0|^2 - <nabla_v E0, v>^2 / |v|^2 - <R(v, E0) v, E0>``."""
    E, dE = _jets(fld, P, V)
    g = lambda a, b: metric_inner_many(P, a, b)
    return g(dE, dE) - g(dE, V) ** 2 / g(V, V) - g(curvature_R_many(P, V, E, V), E)


def _chunked(fn, sample: LiouvilleSample, *args) -> np.ndarray:
    out = [fn(*args, sample.P[i: i + _CHUNK], sample.V[i: i + _CHUNK]) for i in range(0, sample.count, _CHUNK)]
    return np.concatenate(out)


def _mean_err(x: np.ndarray) -> tuple[float, float]:
    if len(x) < 2:
        return float(x.mean()), math.inf
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


def compute_A(sample: LiouvilleSample, fld: FieldFamily, variant: str = "b") -> tuple[float, float]:
    return _mean_err(_chunked(lambda P, V: integrand_A(fld, P, V, variant), sample))


def compute_B(sample: LiouvilleSample, fld: FieldFamily) -> tuple[float, float]:
    return _mean_err(_chunked(lambda P, V: integrand_B(fld, P, V), sample))


def b_minus_a_min(sample: LiouvilleSample, fld: FieldFamily) -> float:
    """Smallest per-sample ``b - a``; nonnegative in constant curvature -1."""
    a = _chunked(lambda P, V: integrand_A(fld, P, V), sample)
    b = _chunked(lambda P, V: integrand_B(fld, P, V), sample)
    return float(np.min(b - a))


# ---------------------------------------------------------------------------
# fibre-reduced deterministic oracle


def _octagon_polar(n_phi: int, n_r: int):
    """Gauss-Legendre nodes in geodesic polar coordinates about the origin over the octagon.

    The angle is split at the vertex and side-midpoint directions, where the
    boundary distance is not smooth.
    """
    g = bolza_group()
    xg, wg = np.polynomial.legendre.leggauss(n_phi)
    xr, wr = np.polynomial.legendre.leggauss(n_r)
    pts, wts = [], []
    for k in range(16):
        a, b = k * math.pi / 8, (k + 1) * math.pi / 8
        for x, w in zip(xg, wg):
            phi = 0.5 * (b - a) * (x + 1.0) + a
            D, _ = ray_exit(PhasePoint(0j, complex(math.cos(phi), math.sin(phi)) / 2.0), g)
            r = 0.5 * D * (xr + 1.0)
            pts.append(np.tanh(0.5 * r) * complex(math.cos(phi), math.sin(phi)))
            wts.append(0.5 * (b - a) * w * 0.5 * D * wr * np.sinh(r))
    return np.concatenate(pts), np.concatenate(wts)


def fiber_oracle_A(fld: FieldFamily, n_phi: int = 32, n_r: int = 96) -> dict:
    """``(1 / (2 Area)) int |E0|^2 dA`` by quadrature; the fibre mean of ``<E0, v>^2`` is ``|E0|^2 / 2``."""
    out = {}
    for tag, (a, b) in (("coarse", (n_phi // 2, n_r // 2)), ("fine", (n_phi, n_r))):
        P, W = _octagon_polar(a, b)
        E, _ = fld.jet_many(P)
        area = float(W.sum())
        out[tag] = (float(W @ metric_inner_many(P, E, E)) / (2.0 * area), area)
    value, area = out["fine"]
    return {"A": value, "area": area, "quadrature_change": abs(value - out["coarse"][0])}


# ---------------------------------------------------------------------------
# bound


@dataclass
class BoundReport:
    A: float
    A_stderr: float
    B: float
    B_stderr: float
    x_star: float
    x_star_stderr: float
    bound: float
    bound_stderr: float
    h0: float
    n: int
    variant: str
    seed: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def sign_checks(self) -> dict[str, bool]:
        return {
            "A_positive": self.A > 5.0 * self.A_stderr,
            "B_positive": self.B > 5.0 * self.B_stderr,
            "bound_negative": self.bound < 0.0,
            "B_at_least_A": self.B >= self.A - 3.0 * (self.A_stderr + self.B_stderr),
        }


def bound_report(sample: LiouvilleSample, fld: FieldFamily, h0: float = H0_CONSTANT_CURVATURE, variant: str = "b") -> BoundReport:
    """``-h0 A^2 / B`` and ``x* = A / B`` with delta-method errors from the paired samples."""
    a = _chunked(lambda P, V: integrand_A(fld, P, V, variant), sample)
    b = _chunked(lambda P, V: integrand_B(fld, P, V), sample)
    n = len(a)
    A, B = float(a.mean()), float(b.mean())
    cov = np.cov(np.vstack([a, b])) / n if n > 1 else np.full((2, 2), math.inf)
    sA, sB = math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1])
    if not A > 3.0 * sA:
        raise DegenerateFieldError(f"A = {A:.3e} is not positive at 3 standard errors ({sA:.3e})", A, sA)
    gx = np.array([1.0 / B, -A / B**2])
    gb = np.array([-2.0 * h0 * A / B, h0 * A**2 / B**2])
    return BoundReport(
        A, sA, B, sB,
        A / B, math.sqrt(max(gx @ cov @ gx, 0.0)),
        -h0 * A**2 / B, math.sqrt(max(gb @ cov @ gb, 0.0)),
        h0, n, variant, sample.seed,
    )


# ---------------------------------------------------------------------------
# topological entropy from the length spectrum


@lru_cache(maxsize=16)
def completeness_threshold(L: int, probe: float | None = None) -> float:
    """Length below which the word-length-``L`` enumeration contains every closed geodesic.

    Compares against the complete length-ordered enumeration up to ``probe``
    (default ``min(L + 1, 11)``); the first missing length, or ``probe``, is returned.
    """
    probe = probe if probe is not None else min(L + 1.0, 11.0)
    full = [c.length for c in enumerate_by_length(probe)]
    have = sorted(c.length for c in enumerate_classes(L, max_length=probe))
    j = 0
    for t in sorted(full):
        if j < len(have) and abs(have[j] - t) < 1e-7:
            j += 1
            continue
        return float(t) - 1e-9
    return float(probe)


def fit_growth(lengths, t_cut: float) -> dict:
    """Regress ``log(N T)`` on ``T`` over the individual periods up to ``t_cut``.

    The ``k``-th smallest period gets ``N = k - 1/2``, the midpoint of the
    counting staircase. Ranks rather than distinct jumps keep the estimate
    continuous when a perturbation splits a degenerate length. Only periods in
    the upper half of ``[T_min, t_cut]`` enter the fit; the slope is the
    growth-rate estimate. Neighbouring points are strongly correlated, so the
    reported standard error is optimistic.
    """
    T = np.sort(np.asarray([t for t in lengths if t <= t_cut], dtype=float))
    if len(T) < 3:
        raise ValueError("too few periods for a growth fit")
    N = np.arange(1, len(T) + 1) - 0.5
    sel = T >= 0.5 * (T[0] + t_cut)
    if np.ptp(T[sel]) <= 0.0:
        raise ValueError("too few distinct periods for a growth fit")
    x, y = T[sel], np.log(N[sel] * T[sel])
    res = stats.linregress(x, y)
    return {
        "h": float(res.slope),
        "h_stderr": float(res.stderr),
        "intercept": float(res.intercept),
        "window": (float(x[0]), float(t_cut)),
        "points": int(sel.sum()),
        "count": int(len(T)),
    }


@dataclass
class EntropyEstimate:
    lam: float
    L: int
    h: float
    h_stderr: float
    t_cut: float
    orbits: int
    failed: list = field(default_factory=list)
    source: str = "traces"
    diagnostics: dict = field(default_factory=dict)

    @property
    def partial(self) -> bool:
        return bool(self.failed)


def _period_job(args):
    klass, lam, fld = args
    g = geodesic_from_class(klass)
    try:
        return continue_orbit(g, lam, fld).period
    except ContinuationError:
        return None


def spectrum_classes(L: int):
    t_cut = completeness_threshold(L)
    return t_cut, [c for c in enumerate_classes(L, max_length=t_cut + 0.05)]


def entropy_from_spectrum(
    lam: float,
    L: int,
    fld: FieldFamily | None = None,
    source: str | None = None,
    threads: int = 1,
) -> EntropyEstimate:
    """Growth rate of the period spectrum of the continued orbits with word length ``<= L``.

    At ``lam = 0`` periods default to trace lengths; otherwise (or with
    ``source="orbits"``) every class is continued and failures are listed.
    """
    t_cut, classes = spectrum_classes(L)
    source = source or ("traces" if lam == 0.0 else "orbits")
    failed = []
    if source == "traces":
        periods = [c.length for c in classes]
    else:
        if fld is None:
            raise ValueError("a field is needed to continue orbits")
        got = parallel_map(_period_job, [(c, lam, fld) for c in classes], threads, chunksize=4)
        periods = []
        for c, t in zip(classes, got):
            if t is None:
                failed.append(c.word)
            else:
                periods.append(t)
    fit = fit_growth(periods, t_cut)
    return EntropyEstimate(lam, L, fit["h"], fit["h_stderr"], t_cut, len(periods), failed, source, fit)


@dataclass
class EntropyFit:
    grid: np.ndarray
    estimates: list[EntropyEstimate]
    coeffs: np.ndarray
    stderr: np.ndarray
    halfwidth: np.ndarray

    @property
    def c1(self) -> float:
        return float(self.coeffs[1])

    @property
    def second_derivative(self) -> float:
        return float(2.0 * self.coeffs[2])

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("lambda,h_est,fit_err,orbits,partial\n")
            for l, e in zip(self.grid, self.estimates):
                fh.write(f"{float(l)!r},{e.h!r},{e.h_stderr!r},{e.orbits},{int(e.partial)}\n")

    def summary(self, bound: float | None = None, bound_stderr: float = 0.0) -> dict:
        """Fit report; with ``bound`` also the gap ``bound - 2 c2`` and a consistency flag.

        The slack allowed is the 95% half-width of ``2 c2`` plus three
        standard errors of the bound.
        """
        out = {
            "grid": [float(x) for x in self.grid],
            "c0": float(self.coeffs[0]),
            "c1": self.c1,
            "c2": float(self.coeffs[2]),
            "stderr": [float(x) for x in self.stderr],
            "ci95_halfwidth": [float(x) for x in self.halfwidth],
            "c1_compatible_with_zero": bool(abs(self.c1) <= self.halfwidth[1]),
            "h2_estimate": self.second_derivative,
            "h2_ci95_halfwidth": float(2.0 * self.halfwidth[2]),
            "partial": any(e.partial for e in self.estimates),
            "failed": {repr(float(e.lam)): [list(w) for w in e.failed] for e in self.estimates if e.failed},
        }
        if bound is not None:
            slack = 2.0 * float(self.halfwidth[2]) + 3.0 * bound_stderr
            out["bound"] = bound
            out["gap"] = bound - self.second_derivative
            out["slack"] = slack
            out["consistent_with_bound"] = bool(self.second_derivative <= bound + slack)
        return out


def quadratic_fit(grid, values) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Least-squares ``c0 + c1 l + c2 l^2`` with standard errors and 95% half-widths."""
    x = np.asarray(grid, dtype=float)
    y = np.asarray(values, dtype=float)
    X = np.column_stack([np.ones_like(x), x, x * x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    dof = len(x) - 3
    if len(x) < 3:
        return np.array([y.mean(), math.nan, math.nan]), np.full(3, math.nan), np.full(3, math.nan)
    if dof == 0:
        return coef, np.full(3, math.inf), np.full(3, math.inf)
    r = y - X @ coef
    cov = (r @ r / dof) * np.linalg.inv(X.T @ X)
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    return coef, se, se * stats.t.ppf(0.975, dof)


def _curve_job(args):
    klass, grid, fld = args
    orbits, failed = continue_grid(geodesic_from_class(klass), grid, fld)
    return {l: o.period for l, o in orbits.items()}, failed


def entropy_curve(grid, L: int, fld: FieldFamily, threads: int = 1) -> EntropyFit:
    """Spectrum entropy estimates across a symmetric grid and their quadratic fit.

    Each class is continued once along the grid, outward from zero with warm
    starts; the zero entry uses trace lengths.
    """
    g = np.asarray(sorted(float(x) for x in grid))
    if not np.allclose(g, -g[::-1], atol=1e-15, rtol=0):
        raise ValueError("lambda grid must be symmetric about zero")
    t_cut, classes = spectrum_classes(L)
    nonzero = [float(l) for l in g if l != 0.0]
    results = parallel_map(_curve_job, [(c, nonzero, fld) for c in classes], threads) if nonzero else []
    est = []
    for l in g:
        if l == 0.0:
            est.append(entropy_from_spectrum(0.0, L, source="traces"))
            continue
        periods, failed = [], []
        for c, (got, bad) in zip(classes, results):
            if l in got:
                periods.append(got[l])
            else:
                failed.append(c.word)
        fit = fit_growth(periods, t_cut)
        est.append(EntropyEstimate(float(l), L, fit["h"], fit["h_stderr"], t_cut, len(periods), failed, "orbits", fit))
    coef, se, hw = quadratic_fit(g, [e.h for e in est])
    return EntropyFit(g, est, coef, se, hw)
