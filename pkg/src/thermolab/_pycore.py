"""Pure-Python reference for the compiled kernels in ``_core.pyx``.

Same algorithm, same numbers up to floating-point evaluation order.  Used
when the extension is not built, or when ``THERMOLAB_PURE=1``.
"""

from __future__ import annotations

import math

import numpy as np

A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = 9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0
B1, B3, B4, B5, B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
E1, E3, E4, E5 = 71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0
E6, E7 = 22.0 / 525.0, -1.0 / 40.0


class Kernel:
    """Translated bump centres ``q`` with coefficients ``kc`` (so ``sigma = kc |p-q|^2 / (1-|p|^2)``)."""

    def __init__(self, qx, qy, kc, amp):
        self.qx = np.ascontiguousarray(qx, dtype=np.float64)
        self.qy = np.ascontiguousarray(qy, dtype=np.float64)
        self.kc = np.ascontiguousarray(kc, dtype=np.float64)
        self.amp = np.ascontiguousarray(amp, dtype=np.float64)
        self._rows = list(zip(self.qx.tolist(), self.qy.tolist(), self.kc.tolist(), self.amp.tolist()))

    def evaluate(self, x: float, y: float):
        """Potential, Euclidean gradient and Hessian at ``(x, y)``."""
        B = 1.0 - x * x - y * y
        iB = 1.0 / B
        iB2 = iB * iB
        iB3 = iB2 * iB
        U = Ux = Uy = Uxx = Uxy = Uyy = 0.0
        for qx, qy, k, a in self._rows:
            dx = x - qx
            dy = y - qy
            A = dx * dx + dy * dy
            s = k * A * iB
            if s >= 1.0:
                continue
            om = 1.0 / (1.0 - s)
            beta = math.exp(1.0 - om)
            b1 = -beta * om * om
            b2 = beta * (om**4 - 2.0 * om**3)
            sx = k * (2.0 * dx * iB + 2.0 * A * x * iB2)
            sy = k * (2.0 * dy * iB + 2.0 * A * y * iB2)
            hxx = k * (2.0 * iB + 8.0 * dx * x * iB2 + 2.0 * A * iB2 + 8.0 * A * x * x * iB3)
            hyy = k * (2.0 * iB + 8.0 * dy * y * iB2 + 2.0 * A * iB2 + 8.0 * A * y * y * iB3)
            hxy = k * (4.0 * (dx * y + x * dy) * iB2 + 8.0 * A * x * y * iB3)
            U += a * beta
            Ux += a * b1 * sx
            Uy += a * b1 * sy
            Uxx += a * (b2 * sx * sx + b1 * hxx)
            Uxy += a * (b2 * sx * sy + b1 * hxy)
            Uyy += a * (b2 * sy * sy + b1 * hyy)
        return U, Ux, Uy, Uxx, Uxy, Uyy

    def evaluate_many(self, xs, ys):
        """Vectorised over points; loops over translates."""
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        out = np.zeros((len(xs), 6))
        B = 1.0 - xs * xs - ys * ys
        iB = 1.0 / B
        iB2 = iB * iB
        iB3 = iB2 * iB
        for qx, qy, k, a in self._rows:
            dx = xs - qx
            dy = ys - qy
            A = dx * dx + dy * dy
            s = k * A * iB
            m = s < 1.0
            if not m.any():
                continue
            om = 1.0 / (1.0 - s[m])
            beta = np.exp(1.0 - om)
            b1 = -beta * om * om
            b2 = beta * (om**4 - 2.0 * om**3)
            x, y, dxm, dym, Am = xs[m], ys[m], dx[m], dy[m], A[m]
            i1, i2, i3 = iB[m], iB2[m], iB3[m]
            sx = k * (2.0 * dxm * i1 + 2.0 * Am * x * i2)
            sy = k * (2.0 * dym * i1 + 2.0 * Am * y * i2)
            hxx = k * (2.0 * i1 + 8.0 * dxm * x * i2 + 2.0 * Am * i2 + 8.0 * Am * x * x * i3)
            hyy = k * (2.0 * i1 + 8.0 * dym * y * i2 + 2.0 * Am * i2 + 8.0 * Am * y * y * i3)
            hxy = k * (4.0 * (dxm * y + x * dym) * i2 + 8.0 * Am * x * y * i3)
            out[m, 0] += a * beta
            out[m, 1] += a * b1 * sx
            out[m, 2] += a * b1 * sy
            out[m, 3] += a * (b2 * sx * sx + b1 * hxx)
            out[m, 4] += a * (b2 * sx * sy + b1 * hxy)
            out[m, 5] += a * (b2 * sy * sy + b1 * hyy)
        return out


class _Ctx:
    __slots__ = ("mode", "dim", "lam", "cx", "cy", "r2", "gens", "ker")


def _field_E(ker, lam, x, y):
    U, Ux, Uy, Uxx, Uxy, Uyy = ker.evaluate(x, y)
    B = 1.0 - x * x - y * y
    s2 = 0.25 * B * B
    dsx, dsy = -x * B, -y * B
    E = (lam * s2 * Ux, lam * s2 * Uy)
    DE = (
        lam * (s2 * Uxx + Ux * dsx),
        lam * (s2 * Uxy + Ux * dsy),
        lam * (s2 * Uxy + Uy * dsx),
        lam * (s2 * Uyy + Uy * dsy),
    )
    return E, DE


def _gamma(gx, gy, ax, ay, bx, by):
    gb = gx * bx + gy * by
    ga = gx * ax + gy * ay
    ab = ax * bx + ay * by
    return ax * gb + bx * ga - ab * gx, ay * gb + by * ga - ab * gy


def _rhs(c: _Ctx, y):
    x, yy, vx, vy = y[0], y[1], y[2], y[3]
    B = 1.0 - x * x - yy * yy
    rho = 2.0 / B
    gx, gy = rho * x, rho * yy
    E, DE = _field_E(c.ker, c.lam, x, yy)
    G = _gamma(gx, gy, vx, vy, vx, vy)
    vv = vx * vx + vy * vy
    Ev = E[0] * vx + E[1] * vy
    s = Ev / vv
    f = [vx, vy, -G[0] + E[0] - s * vx, -G[1] + E[1] - s * vy]
    if c.mode == 1:
        f.extend(_variational_rhs(x, yy, vx, vy, B, gx, gy, E, DE, vv, Ev, y[4:]))
    elif c.mode == 2:
        f.extend(_jacobi_rhs(x, yy, vx, vy, rho, gx, gy, E, DE, y[4:]))
    return f


def _variational_rhs(x, y, vx, vy, B, gx, gy, E, DE, vv, Ev, P):
    gv = gx * vx + gy * vy
    iB = 1.0 / B
    v = (vx, vy)
    g = (gx, gy)
    s = Ev / vv
    Dg = ((2.0 * iB + 4.0 * x * x * iB * iB, 4.0 * x * y * iB * iB), (4.0 * x * y * iB * iB, 2.0 * iB + 4.0 * y * y * iB * iB))
    ds = [E[j] / vv - 2.0 * Ev * v[j] / (vv * vv) for j in range(2)]
    vDg = [v[0] * Dg[0][j] + v[1] * Dg[1][j] for j in range(2)]
    vDE = [v[0] * DE[j] + v[1] * DE[2 + j] for j in range(2)]
    M = [[0.0] * 4 for _ in range(4)]
    M[0][2] = 1.0
    M[1][3] = 1.0
    for i in range(2):
        for j in range(2):
            M[2 + i][2 + j] = -2.0 * (v[i] * g[j] + (gv if i == j else 0.0) - g[i] * v[j]) - (
                v[i] * ds[j] + (s if i == j else 0.0)
            )
            M[2 + i][j] = -(2.0 * v[i] * vDg[j] - vv * Dg[i][j]) + DE[2 * i + j] - v[i] * vDE[j] / vv
    out = [0.0] * 16
    for i in range(4):
        Mi = M[i]
        for j in range(4):
            out[4 * i + j] = Mi[0] * P[j] + Mi[1] * P[4 + j] + Mi[2] * P[8 + j] + Mi[3] * P[12 + j]
    return out


def _jacobi_rhs(x, y, vx, vy, rho, gx, gy, E, DE, s):
    e1x, e1y = s[0], s[1]
    e2x, e2y = -s[1], s[0]
    Jx, Jy = s[2] * e1x + s[3] * e2x, s[2] * e1y + s[3] * e2y
    Kx, Ky = s[4] * e1x + s[5] * e2x, s[4] * e1y + s[5] * e2y
    r2 = rho * rho
    vv = r2 * (vx * vx + vy * vy)
    Jv = r2 * (Jx * vx + Jy * vy)
    Ev = r2 * (E[0] * vx + E[1] * vy)
    EK = r2 * (E[0] * Kx + E[1] * Ky)
    Kv = r2 * (Kx * vx + Ky * vy)
    G = _gamma(gx, gy, vx, vy, e1x, e1y)
    de = (-G[0], -G[1])
    G = _gamma(gx, gy, Jx, Jy, E[0], E[1])
    nab = (DE[0] * Jx + DE[1] * Jy + G[0], DE[2] * Jx + DE[3] * Jy + G[1])
    nv = r2 * (nab[0] * vx + nab[1] * vy)
    ax = (vv * Jx - Jv * vx) + nab[0] - (nv * vx + EK * vx - 2.0 * Kv * Ev / vv * vx + Ev * Kx) / vv
    ay = (vv * Jy - Jv * vy) + nab[1] - (nv * vy + EK * vy - 2.0 * Kv * Ev / vv * vy + Ev * Ky) / vv
    return [de[0], de[1], s[4], s[5], r2 * (ax * e1x + ay * e1y), r2 * (ax * e2x + ay * e2y)]


def _side_min(c: _Ctx, x, y):
    best, which = 1e300, -1
    for k in range(len(c.cx)):
        d = (x - c.cx[k]) ** 2 + (y - c.cy[k]) ** 2 - c.r2[k]
        if d < best:
            best, which = d, k
    return best, which


def _side_val(c: _Ctx, k, x, y):
    return (x - c.cx[k]) ** 2 + (y - c.cy[k]) ** 2 - c.r2[k]


def _apply_gen(c: _Ctx, g: int, y):
    a, b = c.gens[g]
    z = complex(y[0], y[1])
    den = b.conjugate() * z + a.conjugate()
    inv = 1.0 / den
    d1 = inv * inv
    d2 = -2.0 * b.conjugate() * d1 * inv
    w = (a * z + b) * inv
    v = complex(y[2], y[3])
    out = list(y)
    out[0], out[1] = w.real, w.imag
    nv = d1 * v
    out[2], out[3] = nv.real, nv.imag
    if c.mode == 2:
        e = d1 * complex(y[4], y[5])
        out[4], out[5] = e.real, e.imag
    elif c.mode == 1:
        cv = d2 * v
        Q = np.array(
            [
                [d1.real, -d1.imag, 0.0, 0.0],
                [d1.imag, d1.real, 0.0, 0.0],
                [cv.real, -cv.imag, d1.real, -d1.imag],
                [cv.imag, cv.real, d1.imag, d1.real],
            ]
        )
        P = np.array(y[4:]).reshape(4, 4)
        out[4:] = (Q @ P).ravel().tolist()
    return out


def _rk_step(c: _Ctx, y, k1, h):
    n = c.dim
    t = [y[i] + h * A21 * k1[i] for i in range(n)]
    k2 = _rhs(c, t)
    t = [y[i] + h * (A31 * k1[i] + A32 * k2[i]) for i in range(n)]
    k3 = _rhs(c, t)
    t = [y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]) for i in range(n)]
    k4 = _rhs(c, t)
    t = [y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]) for i in range(n)]
    k5 = _rhs(c, t)
    t = [y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]) for i in range(n)]
    k6 = _rhs(c, t)
    yout = [y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]) for i in range(n)]
    k7 = _rhs(c, yout)
    err = [h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]) for i in range(n)]
    return yout, k7, err


def _err_norm(y, yn, err, rtol, atol):
    acc = 0.0
    for a, b, e in zip(y, yn, err):
        sc = atol + rtol * max(abs(a), abs(b))
        acc += (e / sc) ** 2
    return math.sqrt(acc / len(y))


def _speed(y):
    return 2.0 * math.hypot(y[2], y[3]) / (1.0 - y[0] * y[0] - y[1] * y[1])


def integrate(ker, lam, y0, t0, t1, mode, sides, exits, labels, rtol, atol, t_eval=None, h0=0.05, max_steps=10_000_000, event_tol=1e-13):
    """Adaptive Dormand-Prince 5(4) integration with side-crossing events.

    ``sides`` rows are ``(cx, cy, r^2)``; ``exits[k]`` (rows ``(Re a, Im a, Re b, Im b)``)
    is the isometry applied on leaving through side ``k`` and ``labels[k]`` its tag.
    Returns ``(ts, ys, crossings, stats)``; ``crossings`` lists ``(t, side, label)``.
    """
    c = _Ctx()
    c.mode = mode
    c.dim = 4 if mode == 0 else (20 if mode == 1 else 10)
    c.lam = lam
    c.ker = ker
    sides = np.asarray(sides)
    exits = np.asarray(exits)
    if len(exits) != len(sides) or len(labels) != len(sides):
        raise ValueError("need matching side, exit and label tables")
    c.cx = sides[:, 0].tolist()
    c.cy = sides[:, 1].tolist()
    c.r2 = sides[:, 2].tolist()
    c.gens = [(complex(g[0], g[1]), complex(g[2], g[3])) for g in exits]
    labels = [int(x) for x in labels]
    n = c.dim
    y = [float(v) for v in y0]
    if len(y) != n:
        raise ValueError(f"state has {len(y)} entries, mode {mode} needs {n}")
    direction = 1.0 if t1 >= t0 else -1.0
    t = t0
    h = direction * abs(h0)
    v0 = _speed(y)
    drift = 0.0
    steps = rejected = nev = 0
    t_eval = None if t_eval is None else np.asarray(t_eval, dtype=float)
    n_eval = 0 if t_eval is None else len(t_eval)
    ie = 0
    out_t = [t0]
    out_y = [list(y)]
    crossings = []
    while ie < n_eval and (t_eval[ie] - t) * direction <= 0.0:
        ie += 1
    while True:
        val, side = _side_min(c, y[0], y[1])
        if val >= -1e-12:
            break
        y = _apply_gen(c, side, y)
        crossings.append((float(t), int(side), int(labels[side])))
        nev += 1
        if nev > 64:
            raise RuntimeError("initial state could not be folded into the polygon")
    k1 = _rhs(c, y)
    while (t1 - t) * direction > 0.0:
        if steps + rejected >= max_steps:
            raise RuntimeError(f"step budget {max_steps} exhausted at t={t}")
        target = t_eval[ie] if ie < n_eval else t1
        landed = False
        hsave = h
        if (t + h - target) * direction >= 0.0:
            h = target - t
            landed = True
        yn, k7, err = _rk_step(c, y, k1, h)
        en = _err_norm(y, yn, err, rtol, atol)
        if en > 1.0 or en != en:
            rejected += 1
            h *= 0.2 if en != en else max(0.2, 0.9 * en**-0.2)
            if abs(h) < 1e-14:
                raise RuntimeError(f"step size underflow at t={t}")
            continue
        fac = 5.0 if en == 0.0 else min(5.0, max(0.2, 0.9 * en**-0.2))
        hn = h * fac
        steps += 1
        s_end = -1
        if _side_min(c, yn[0], yn[1])[0] < 0.0:
            best_th = 2.0
            for k in range(len(c.cx)):
                if _side_val(c, k, yn[0], yn[1]) >= 0.0 or _side_val(c, k, y[0], y[1]) < 0.0:
                    continue
                lo, hi = 0.0, 1.0
                flo = _side_val(c, k, y[0], y[1])
                fhi = _side_val(c, k, yn[0], yn[1])
                it = 0
                while it < 200 and (hi - lo) * abs(h) > event_tol:
                    mid = hi - fhi * (hi - lo) / (fhi - flo)
                    if not (lo < mid < hi):
                        mid = 0.5 * (lo + hi)
                    ys, _, _ = _rk_step(c, y, k1, mid * h)
                    fm = _side_val(c, k, ys[0], ys[1])
                    if fm == 0.0:
                        lo = hi = mid
                        break
                    if (fm > 0.0) == (flo > 0.0):
                        lo, flo = mid, fm
                        fhi *= 0.5
                    else:
                        hi, fhi = mid, fm
                        flo *= 0.5
                    it += 1
                if it >= 200:
                    raise RuntimeError(f"event location failed near t={t}")
                if hi < best_th:
                    best_th = hi
                    s_end = k
            if s_end >= 0:
                yn, k7, err = _rk_step(c, y, k1, best_th * h)
                t += best_th * h
                y = yn
                while True:
                    val, side = _side_min(c, y[0], y[1])
                    if val >= 0.0:
                        break
                    y = _apply_gen(c, side, y)
                    crossings.append((float(t), int(side), int(labels[side])))
                    nev += 1
                    if _side_min(c, y[0], y[1])[0] < -1e-9:
                        continue
                    break
                k1 = _rhs(c, y)
                drift = max(drift, abs(_speed(y) - v0))
                if t_eval is None:
                    out_t.append(t)
                    out_y.append(list(y))
                h = hn
                continue
        t += h
        y = yn
        k1 = k7
        drift = max(drift, abs(_speed(y) - v0))
        if landed and ie < n_eval:
            t = float(t_eval[ie])
            out_t.append(t)
            out_y.append(list(y))
            ie += 1
        elif t_eval is None:
            out_t.append(t)
            out_y.append(list(y))
        if landed and ie >= n_eval and target == t1:
            t = t1
        h = hsave if landed and abs(hsave) < abs(hn) else hn
    if t_eval is not None:
        while len(out_t) - 1 < n_eval:
            out_t.append(t)
            out_y.append(list(y))
    stats = {"steps": steps, "rejected": rejected, "crossings": nev, "max_speed_drift": drift}
    return np.asarray(out_t), np.asarray(out_y), crossings, stats
