# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: bump-sum field derivatives and the thermostat integrator.

Mirrors ``_pycore`` line for line; see that module for the reference version.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, fabs, fmax, fmin, pow

cnp.import_array()

DEF MAXDIM = 20
DEF MAXSIDES = 128

cdef double A21 = 1.0 / 5.0
cdef double A31 = 3.0 / 40.0, A32 = 9.0 / 40.0
cdef double A41 = 44.0 / 45.0, A42 = -56.0 / 15.0, A43 = 32.0 / 9.0
cdef double A51 = 19372.0 / 6561.0, A52 = -25360.0 / 2187.0, A53 = 64448.0 / 6561.0, A54 = -212.0 / 729.0
cdef double A61 = 9017.0 / 3168.0, A62 = -355.0 / 33.0, A63 = 46732.0 / 5247.0, A64 = 49.0 / 176.0, A65 = -5103.0 / 18656.0
cdef double B1 = 35.0 / 384.0, B3 = 500.0 / 1113.0, B4 = 125.0 / 192.0, B5 = -2187.0 / 6784.0, B6 = 11.0 / 84.0
cdef double E1 = 71.0 / 57600.0, E3 = -71.0 / 16695.0, E4 = 71.0 / 1920.0, E5 = -17253.0 / 339200.0
cdef double E6 = 22.0 / 525.0, E7 = -1.0 / 40.0


cdef class Kernel:
    """Translated bump centres ``q`` with coefficients ``kc`` (so ``sigma = kc |p-q|^2 / (1-|p|^2)``)."""

    cdef public cnp.ndarray qx, qy, kc, amp
    cdef double[::1] _qx, _qy, _kc, _amp
    cdef int n

    def __init__(self, qx, qy, kc, amp):
        self.qx = np.ascontiguousarray(qx, dtype=np.float64)
        self.qy = np.ascontiguousarray(qy, dtype=np.float64)
        self.kc = np.ascontiguousarray(kc, dtype=np.float64)
        self.amp = np.ascontiguousarray(amp, dtype=np.float64)
        self._qx = self.qx
        self._qy = self.qy
        self._kc = self.kc
        self._amp = self.amp
        self.n = self.qx.shape[0]

    cdef void derivs(self, double x, double y, double* out) noexcept nogil:
        # out = U, Ux, Uy, Uxx, Uxy, Uyy
        cdef double B = 1.0 - x * x - y * y
        cdef double iB = 1.0 / B, iB2 = iB * iB, iB3 = iB2 * iB
        cdef double dx, dy, A, s, k, om, beta, b1, b2, sx, sy, hxx, hxy, hyy, a
        cdef int i
        for i in range(6):
            out[i] = 0.0
        for i in range(self.n):
            dx = x - self._qx[i]
            dy = y - self._qy[i]
            A = dx * dx + dy * dy
            k = self._kc[i]
            s = k * A * iB
            if s >= 1.0:
                continue
            om = 1.0 / (1.0 - s)
            beta = exp(1.0 - om)
            b1 = -beta * om * om
            b2 = beta * (om * om * om * om - 2.0 * om * om * om)
            sx = k * (2.0 * dx * iB + 2.0 * A * x * iB2)
            sy = k * (2.0 * dy * iB + 2.0 * A * y * iB2)
            hxx = k * (2.0 * iB + 8.0 * dx * x * iB2 + 2.0 * A * iB2 + 8.0 * A * x * x * iB3)
            hyy = k * (2.0 * iB + 8.0 * dy * y * iB2 + 2.0 * A * iB2 + 8.0 * A * y * y * iB3)
            hxy = k * (4.0 * (dx * y + x * dy) * iB2 + 8.0 * A * x * y * iB3)
            a = self._amp[i]
            out[0] += a * beta
            out[1] += a * b1 * sx
            out[2] += a * b1 * sy
            out[3] += a * (b2 * sx * sx + b1 * hxx)
            out[4] += a * (b2 * sx * sy + b1 * hxy)
            out[5] += a * (b2 * sy * sy + b1 * hyy)

    def evaluate(self, double x, double y):
        """Potential, Euclidean gradient and Hessian at ``(x, y)``."""
        cdef double out[6]
        self.derivs(x, y, out)
        return out[0], out[1], out[2], out[3], out[4], out[5]

    def evaluate_many(self, double[::1] xs, double[::1] ys):
        cdef Py_ssize_t m = xs.shape[0], j
        res = np.empty((m, 6))
        cdef double[:, ::1] r = res
        cdef double out[6]
        with nogil:
            for j in range(m):
                self.derivs(xs[j], ys[j], out)
                for i in range(6):
                    r[j, i] = out[i]
        return res


cdef struct Ctx:
    int mode
    int dim
    double lam
    int nsides
    double cx[MAXSIDES]
    double cy[MAXSIDES]
    double r2[MAXSIDES]
    double ga_re[MAXSIDES]
    double ga_im[MAXSIDES]
    double gb_re[MAXSIDES]
    double gb_im[MAXSIDES]


cdef inline void field_E(Kernel ker, double lam, double x, double y, double* E, double* DE) noexcept nogil:
    # E = lam * s2 * grad U, DE[i][j] = d_j E_i with s2 = (1 - r^2)^2 / 4
    cdef double u[6]
    ker.derivs(x, y, u)
    cdef double B = 1.0 - x * x - y * y
    cdef double s2 = 0.25 * B * B
    cdef double dsx = -x * B, dsy = -y * B
    E[0] = lam * s2 * u[1]
    E[1] = lam * s2 * u[2]
    DE[0] = lam * (s2 * u[3] + u[1] * dsx)
    DE[1] = lam * (s2 * u[4] + u[1] * dsy)
    DE[2] = lam * (s2 * u[4] + u[2] * dsx)
    DE[3] = lam * (s2 * u[5] + u[2] * dsy)


cdef inline void gamma(double gx, double gy, double ax, double ay, double bx, double by, double* out) noexcept nogil:
    # Gamma(a, b) = a (g.b) + b (g.a) - (a.b) g
    cdef double gb = gx * bx + gy * by, ga = gx * ax + gy * ay, ab = ax * bx + ay * by
    out[0] = ax * gb + bx * ga - ab * gx
    out[1] = ay * gb + by * ga - ab * gy


cdef void rhs(Kernel ker, Ctx* c, double* y, double* f) noexcept nogil:
    cdef double x = y[0], yy = y[1], vx = y[2], vy = y[3]
    cdef double B = 1.0 - x * x - yy * yy
    cdef double rho = 2.0 / B
    cdef double gx = rho * x, gy = rho * yy
    cdef double E[2]
    cdef double DE[4]
    cdef double G[2]
    cdef double vv = vx * vx + vy * vy
    cdef double Ev, s
    field_E(ker, c.lam, x, yy, E, DE)
    gamma(gx, gy, vx, vy, vx, vy, G)
    Ev = E[0] * vx + E[1] * vy
    s = Ev / vv
    f[0] = vx
    f[1] = vy
    f[2] = -G[0] + E[0] - s * vx
    f[3] = -G[1] + E[1] - s * vy
    if c.mode == 1:
        variational_rhs(c, x, yy, vx, vy, B, gx, gy, E, DE, vv, Ev, y + 4, f + 4)
    elif c.mode == 2:
        jacobi_rhs(x, yy, vx, vy, rho, gx, gy, E, DE, y + 4, f + 4)


cdef void variational_rhs(Ctx* c, double x, double y, double vx, double vy, double B, double gx, double gy,
                          double* E, double* DE, double vv, double Ev, double* P, double* dP) noexcept nogil:
    cdef double M[4][4]
    cdef double Dg[2][2]
    cdef double gv = gx * vx + gy * vy
    cdef double iB = 1.0 / B
    cdef double v[2]
    cdef double g[2]
    cdef double e[2]
    cdef double ds[2]
    cdef double vDg[2]
    cdef double vDE[2]
    cdef int i, j, k
    cdef double s = Ev / vv, acc
    v[0] = vx; v[1] = vy; g[0] = gx; g[1] = gy; e[0] = E[0]; e[1] = E[1]
    Dg[0][0] = 2.0 * iB + 4.0 * x * x * iB * iB
    Dg[0][1] = 4.0 * x * y * iB * iB
    Dg[1][0] = Dg[0][1]
    Dg[1][1] = 2.0 * iB + 4.0 * y * y * iB * iB
    for j in range(2):
        ds[j] = e[j] / vv - 2.0 * Ev * v[j] / (vv * vv)
        vDg[j] = v[0] * Dg[0][j] + v[1] * Dg[1][j]
        vDE[j] = v[0] * DE[j] + v[1] * DE[2 + j]
    for i in range(4):
        for j in range(4):
            M[i][j] = 0.0
    M[0][2] = 1.0
    M[1][3] = 1.0
    for i in range(2):
        for j in range(2):
            # d a_i / d v_j
            M[2 + i][2 + j] = -2.0 * (v[i] * g[j] + (gv if i == j else 0.0) - g[i] * v[j]) - (v[i] * ds[j] + (s if i == j else 0.0))
            # d a_i / d p_j
            M[2 + i][j] = -(2.0 * v[i] * vDg[j] - vv * Dg[i][j]) + DE[2 * i + j] - v[i] * vDE[j] / vv
    for i in range(4):
        for j in range(4):
            acc = 0.0
            for k in range(4):
                acc += M[i][k] * P[4 * k + j]
            dP[4 * i + j] = acc


cdef void jacobi_rhs(double x, double y, double vx, double vy, double rho, double gx, double gy,
                     double* E, double* DE, double* s, double* ds) noexcept nogil:
    # s = (e1x, e1y, J1, J2, K1, K2) with e2 = i e1; J, K are frame components
    cdef double e1x = s[0], e1y = s[1], e2x = -s[1], e2y = s[0]
    cdef double Jx = s[2] * e1x + s[3] * e2x, Jy = s[2] * e1y + s[3] * e2y
    cdef double Kx = s[4] * e1x + s[5] * e2x, Ky = s[4] * e1y + s[5] * e2y
    cdef double r2 = rho * rho
    cdef double G[2]
    cdef double nab[2]
    cdef double vv = r2 * (vx * vx + vy * vy)
    cdef double Jv = r2 * (Jx * vx + Jy * vy)
    cdef double Ev = r2 * (E[0] * vx + E[1] * vy)
    cdef double EK = r2 * (E[0] * Kx + E[1] * Ky)
    cdef double Kv = r2 * (Kx * vx + Ky * vy)
    cdef double nv, ax, ay
    gamma(gx, gy, vx, vy, e1x, e1y, G)
    ds[0] = -G[0]
    ds[1] = -G[1]
    # covariant derivative of E along J
    gamma(gx, gy, Jx, Jy, E[0], E[1], G)
    nab[0] = DE[0] * Jx + DE[1] * Jy + G[0]
    nab[1] = DE[2] * Jx + DE[3] * Jy + G[1]
    nv = r2 * (nab[0] * vx + nab[1] * vy)
    # K = -1: R(v, J) v = -(|v|^2 J - <J, v> v)
    ax = (vv * Jx - Jv * vx) + nab[0] - (nv * vx + EK * vx - 2.0 * Kv * Ev / vv * vx + Ev * Kx) / vv
    ay = (vv * Jy - Jv * vy) + nab[1] - (nv * vy + EK * vy - 2.0 * Kv * Ev / vv * vy + Ev * Ky) / vv
    ds[2] = s[4]
    ds[3] = s[5]
    ds[4] = r2 * (ax * e1x + ay * e1y)
    ds[5] = r2 * (ax * e2x + ay * e2y)


cdef inline double side_min(Ctx* c, double x, double y, int* which) noexcept nogil:
    cdef double best = 1e300, d
    cdef int k
    for k in range(c.nsides):
        d = (x - c.cx[k]) * (x - c.cx[k]) + (y - c.cy[k]) * (y - c.cy[k]) - c.r2[k]
        if d < best:
            best = d
            which[0] = k
    return best


cdef inline double side_val(Ctx* c, int k, double x, double y) noexcept nogil:
    return (x - c.cx[k]) * (x - c.cx[k]) + (y - c.cy[k]) * (y - c.cy[k]) - c.r2[k]


cdef void apply_gen(Ctx* c, int g, double* y) noexcept nogil:
    # z -> (a z + b) / (conj(b) z + conj(a)); tangent data pushed by the derivative
    cdef double ar = c.ga_re[g], ai = c.ga_im[g], br = c.gb_re[g], bi = c.gb_im[g]
    cdef double zr = y[0], zi = y[1]
    cdef double nr = ar * zr - ai * zi + br, ni = ar * zi + ai * zr + bi
    cdef double dr = br * zr + bi * zi + ar, di = br * zi - bi * zr - ai
    cdef double den = dr * dr + di * di
    # 1 / den_c, derivative 1 / den_c^2, second derivative -2 conj(b) / den_c^3
    cdef double ir = dr / den, ii = -di / den
    cdef double d1r = ir * ir - ii * ii, d1i = 2.0 * ir * ii
    cdef double d3r = d1r * ir - d1i * ii, d3i = d1r * ii + d1i * ir
    cdef double d2r = -2.0 * (br * d3r + bi * d3i), d2i = -2.0 * (br * d3i - bi * d3r)
    cdef double wr, wi, Q[16], P2[16], acc
    cdef int i, j, k
    y[0] = nr * ir - ni * ii
    y[1] = nr * ii + ni * ir
    wr = y[2]; wi = y[3]
    y[2] = d1r * wr - d1i * wi
    y[3] = d1r * wi + d1i * wr
    if c.mode == 2:
        wr = y[4]; wi = y[5]
        y[4] = d1r * wr - d1i * wi
        y[5] = d1r * wi + d1i * wr
    elif c.mode == 1:
        # block lower-triangular derivative of (p, v) -> (g p, g'(p) v)
        for i in range(16):
            Q[i] = 0.0
        Q[0] = d1r; Q[1] = -d1i; Q[4] = d1i; Q[5] = d1r
        Q[10] = d1r; Q[11] = -d1i; Q[14] = d1i; Q[15] = d1r
        # d(g'(p) v)/dp = g''(p) v as a complex multiplication
        Q[8] = d2r * wr - d2i * wi; Q[9] = -(d2r * wi + d2i * wr)
        Q[12] = d2r * wi + d2i * wr; Q[13] = d2r * wr - d2i * wi
        for i in range(4):
            for j in range(4):
                acc = 0.0
                for k in range(4):
                    acc += Q[4 * i + k] * y[4 + 4 * k + j]
                P2[4 * i + j] = acc
        for i in range(16):
            y[4 + i] = P2[i]


cdef void rk_step(Kernel ker, Ctx* c, double* y, double* k1, double h, double* yout, double* k7, double* err) noexcept nogil:
    cdef double k2[MAXDIM]
    cdef double k3[MAXDIM]
    cdef double k4[MAXDIM]
    cdef double k5[MAXDIM]
    cdef double k6[MAXDIM]
    cdef double t[MAXDIM]
    cdef int i, n = c.dim
    for i in range(n):
        t[i] = y[i] + h * A21 * k1[i]
    rhs(ker, c, t, k2)
    for i in range(n):
        t[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i])
    rhs(ker, c, t, k3)
    for i in range(n):
        t[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
    rhs(ker, c, t, k4)
    for i in range(n):
        t[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
    rhs(ker, c, t, k5)
    for i in range(n):
        t[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
    rhs(ker, c, t, k6)
    for i in range(n):
        yout[i] = y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i])
    rhs(ker, c, yout, k7)
    for i in range(n):
        err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])


cdef double err_norm(int n, double* y, double* yn, double* err, double rtol, double atol) noexcept nogil:
    cdef double acc = 0.0, sc
    cdef int i
    for i in range(n):
        sc = atol + rtol * fmax(fabs(y[i]), fabs(yn[i]))
        acc += (err[i] / sc) * (err[i] / sc)
    return sqrt(acc / n)


cdef double speed(double* y) noexcept nogil:
    return 2.0 * sqrt(y[2] * y[2] + y[3] * y[3]) / (1.0 - y[0] * y[0] - y[1] * y[1])


def integrate(Kernel ker, double lam, double[::1] y0, double t0, double t1, int mode,
              double[:, ::1] sides, double[:, ::1] exits, long[::1] labels, double rtol, double atol,
              double[::1] t_eval=None, double h0=0.05, long max_steps=10000000, double event_tol=1e-13):
    """Adaptive Dormand-Prince 5(4) integration with side-crossing events.

    ``sides`` rows are ``(cx, cy, r^2)``; ``exits[k]`` (rows ``(Re a, Im a, Re b, Im b)``)
    is the isometry applied on leaving through side ``k`` and ``labels[k]`` its tag.
    Returns ``(ts, ys, crossings, stats)``; ``crossings`` lists ``(t, side, label)``.
    """
    cdef Ctx c
    cdef int k, i, n, side
    c.mode = mode
    c.dim = 4 if mode == 0 else (20 if mode == 1 else 10)
    c.lam = lam
    if sides.shape[0] > MAXSIDES or exits.shape[0] != sides.shape[0] or labels.shape[0] != sides.shape[0]:
        raise ValueError(f"need matching side, exit and label tables with at most {MAXSIDES} rows")
    c.nsides = sides.shape[0]
    for k in range(c.nsides):
        c.cx[k] = sides[k, 0]
        c.cy[k] = sides[k, 1]
        c.r2[k] = sides[k, 2]
        c.ga_re[k] = exits[k, 0]
        c.ga_im[k] = exits[k, 1]
        c.gb_re[k] = exits[k, 2]
        c.gb_im[k] = exits[k, 3]
    n = c.dim
    if y0.shape[0] != n:
        raise ValueError(f"state has {y0.shape[0]} entries, mode {mode} needs {n}")
    cdef double y[MAXDIM]
    cdef double yn[MAXDIM]
    cdef double k1[MAXDIM]
    cdef double k7[MAXDIM]
    cdef double err[MAXDIM]
    cdef double ys[MAXDIM]
    cdef double ks[MAXDIM]
    cdef double es[MAXDIM]
    for i in range(n):
        y[i] = y0[i]
    cdef double direction = 1.0 if t1 >= t0 else -1.0
    cdef double t = t0, h = direction * fabs(h0), en, fac, hn
    cdef double v0 = speed(y), drift = 0.0
    cdef long steps = 0, rejected = 0, nev = 0, n_eval = 0 if t_eval is None else t_eval.shape[0]
    cdef long ie = 0
    cdef double target, lo, hi, flo, fhi, mid, fm, best_th, hsave
    cdef int it, side_hit, s_end
    cdef bint landed, crossed
    out_t = [t0]
    out_y = [[y[i] for i in range(n)]]
    crossings = []
    # skip t_eval entries at the start time
    while ie < n_eval and (t_eval[ie] - t) * direction <= 0.0:
        ie += 1
    # a start point outside the polygon is folded back first
    while side_min(&c, y[0], y[1], &side) < -1e-12:
        apply_gen(&c, side, y)
        crossings.append((t, side, labels[side]))
        nev += 1
        if nev > 64:
            raise RuntimeError("initial state could not be folded into the polygon")
    rhs(ker, &c, y, k1)
    while (t1 - t) * direction > 0.0:
        if steps + rejected >= max_steps:
            raise RuntimeError(f"step budget {max_steps} exhausted at t={t}")
        target = t1
        if ie < n_eval:
            target = t_eval[ie]
        landed = False
        hsave = h
        if (t + h - target) * direction >= 0.0:
            h = target - t
            landed = True
        rk_step(ker, &c, y, k1, h, yn, k7, err)
        en = err_norm(n, y, yn, err, rtol, atol)
        if en > 1.0 or en != en:
            rejected += 1
            fac = 0.2 if en != en else fmax(0.2, 0.9 * pow(en, -0.2))
            h *= fac
            if fabs(h) < 1e-14:
                raise RuntimeError(f"step size underflow at t={t}")
            continue
        fac = 5.0 if en == 0.0 else fmin(5.0, fmax(0.2, 0.9 * pow(en, -0.2)))
        hn = h * fac
        steps += 1
        # crossing of a polygon side during the step
        s_end = -1
        if side_min(&c, yn[0], yn[1], &side) < 0.0:
            lo = 0.0
            hi = 1.0
            side_hit = side
            # earliest crossing among every side negative at the end point
            best_th = 2.0
            for k in range(c.nsides):
                if side_val(&c, k, yn[0], yn[1]) >= 0.0 or side_val(&c, k, y[0], y[1]) < 0.0:
                    continue
                lo = 0.0
                hi = 1.0
                flo = side_val(&c, k, y[0], y[1])
                fhi = side_val(&c, k, yn[0], yn[1])
                it = 0
                # Illinois regula falsi on true sub-steps
                while it < 200 and (hi - lo) * fabs(h) > event_tol:
                    mid = hi - fhi * (hi - lo) / (fhi - flo)
                    if not (mid > lo and mid < hi):
                        mid = 0.5 * (lo + hi)
                    rk_step(ker, &c, y, k1, mid * h, ys, ks, es)
                    fm = side_val(&c, k, ys[0], ys[1])
                    if fm == 0.0:
                        lo = mid
                        hi = mid
                        break
                    if (fm > 0.0) == (flo > 0.0):
                        lo = mid
                        flo = fm
                        fhi *= 0.5
                    else:
                        hi = mid
                        fhi = fm
                        flo *= 0.5
                    it += 1
                if it >= 200:
                    raise RuntimeError(f"event location failed near t={t}")
                if hi < best_th:
                    best_th = hi
                    s_end = k
            if s_end >= 0:
                # land just past the crossing and fold back
                rk_step(ker, &c, y, k1, best_th * h, yn, k7, err)
                t += best_th * h
                for i in range(n):
                    y[i] = yn[i]
                while side_min(&c, y[0], y[1], &side) < 0.0:
                    apply_gen(&c, side, y)
                    crossings.append((t, side, labels[side]))
                    nev += 1
                    if side_min(&c, y[0], y[1], &side) < -1e-9:
                        continue
                    break
                rhs(ker, &c, y, k1)
                drift = fmax(drift, fabs(speed(y) - v0))
                if t_eval is None:
                    out_t.append(t)
                    out_y.append([y[i] for i in range(n)])
                h = hn
                continue
        t += h
        for i in range(n):
            y[i] = yn[i]
            k1[i] = k7[i]
        drift = fmax(drift, fabs(speed(y) - v0))
        if landed and ie < n_eval:
            t = t_eval[ie]
            out_t.append(t)
            out_y.append([y[i] for i in range(n)])
            ie += 1
        elif t_eval is None:
            out_t.append(t)
            out_y.append([y[i] for i in range(n)])
        if landed and ie >= n_eval and target == t1:
            t = t1
        h = hsave if landed and fabs(hsave) < fabs(hn) else hn
    if t_eval is not None and len(out_t) - 1 < n_eval:
        # the final time coincided with the last requested sample
        while len(out_t) - 1 < n_eval:
            out_t.append(t)
            out_y.append([y[i] for i in range(n)])
    stats = {"steps": steps, "rejected": rejected, "crossings": nev, "max_speed_drift": drift}
    return np.asarray(out_t), np.asarray(out_y), crossings, stats
