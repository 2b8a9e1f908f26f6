"""Compiled core vs pure-Python fallback: field kernel and integrator throughput.

Run with ``python3 benchmarks/bench_core.py``. Both backends are imported
directly, so the comparison does not depend on which one was picked at import.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from thermolab import _pycore
from thermolab.flow import DEFAULT_CONFIG, octagon_chart
from thermolab.geometry import conformal_factor
from thermolab.structures import default_field, random_unit_states

try:
    from thermolab import _core
except ImportError:  # extension not built
    _core = None


def _best(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def bench(backend, t_end: float, repeat: int) -> dict:
    fld = default_field()
    q, w, a = fld.translates
    kern = backend.Kernel(q.real, q.imag, (2.0 / (1.0 - np.abs(q) ** 2)) / (np.cosh(w) - 1.0), a)
    pts = np.random.default_rng(0).uniform(-0.5, 0.5, (2000, 2))
    chart = octagon_chart()
    th = random_unit_states(1, np.random.default_rng(1))[0]
    cfg = DEFAULT_CONFIG

    def flow(mode, y0):
        return backend.integrate(
            kern, 0.03, y0, 0.0, t_end, mode, chart.sides, chart.exits, chart.labels,
            cfg.rtol, cfg.atol, None, cfg.h0, cfg.max_steps, cfg.event_tol,
        )

    y_flow = np.array([th.p.real, th.p.imag, th.v.real, th.v.imag])
    e1 = th.v / (conformal_factor(th.p) * abs(th.v))
    # normal Jacobi field, unit at t = 0
    y_jac = np.array([*y_flow, e1.real, e1.imag, 0.0, 1.0, 0.0, 0.0])
    return {
        "kernel_evals_per_s": len(pts) / _best(lambda: [kern.evaluate(x, y) for x, y in pts], repeat),
        "flow_s": _best(lambda: flow(0, y_flow), repeat),
        "jacobi_s": _best(lambda: flow(2, y_jac), repeat),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--t-end", type=float, default=10.0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    rows = {"pure": bench(_pycore, args.t_end, args.repeat)}
    if _core is not None:
        rows["compiled"] = bench(_core, args.t_end, args.repeat)
    print(f"{'backend':<10}{'kernel/s':>14}{'flow [s]':>12}{'jacobi [s]':>12}")
    for name, r in rows.items():
        print(f"{name:<10}{r['kernel_evals_per_s']:>14.0f}{r['flow_s']:>12.4f}{r['jacobi_s']:>12.4f}")
    if "compiled" in rows:
        c, p = rows["compiled"], rows["pure"]
        print(f"speedup: kernel x{c['kernel_evals_per_s'] / p['kernel_evals_per_s']:.1f}, "
              f"flow x{p['flow_s'] / c['flow_s']:.1f}, jacobi x{p['jacobi_s'] / c['jacobi_s']:.1f}")


if __name__ == "__main__":
    main()
