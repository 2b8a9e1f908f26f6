"""Command line: ``thermolab {validate,orbits,bound,entropy,config}``.

Exit codes: 0 success, 1 a suite failed, 2 configuration error, 3 degenerate field.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

from . import __version__
from ._parallel import parallel_map
from .config import ConfigError, ExperimentConfig, RunManifest, SuiteResult, default_config_text, load_config, parse_config
from .entropy import (
    DegenerateFieldError,
    bound_report,
    entropy_curve,
    fiber_oracle_A,
    sample_liouville,
    substream,
)
from .flow import IntegratorConfig, integrate_flow, jacobi_fd_error, solve_W
from .geometry import bolza_group, enumerate_classes, exact_geodesic_flow, geodesic_from_class, reduce_to_domain
from .orbits import (
    ContinuationError,
    PartialCurveError,
    energy_second_variation,
    identity_suite,
    margin_scan,
    period_curve,
)
from .structures import FieldFamily, random_probe, random_unit_states, symplectic_residual, twisted_omega

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DEGENERATE = 0, 1, 2, 3

log = logging.getLogger("thermolab")


def _clean(x):
    """JSON-safe copy: NaN and infinities become null, numpy scalars become Python ones."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if hasattr(x, "item"):
        x = x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _timed(fn):
    t = time.perf_counter()
    passed, metrics = fn()
    return SuiteResult(bool(passed), _clean(metrics), round(time.perf_counter() - t, 3))


# ---------------------------------------------------------------------------
# validate


def _suite_geometry(cfg: ExperimentConfig):
    rep = bolza_group(cfg.generator_jitter).verify()
    return rep.pop("ok"), rep


def _suite_structures(cfg: ExperimentConfig, fld: FieldFamily):
    rng = substream(cfg.seed, "probes")
    lam_max = max(abs(x) for x in cfg.lambda_grid)
    worst_res, worst_anti = 0.0, 0.0
    for th in random_unit_states(20, rng):
        for lam in (0.0, lam_max):
            worst_res = max(worst_res, symplectic_residual(lam, th, 100, fld, seed=int(rng.integers(2**31))))
            a, b = random_probe(th, rng), random_probe(th, rng)
            worst_anti = max(worst_anti, abs(twisted_omega(lam, th, a, b, fld) + twisted_omega(lam, th, b, a, fld)))
    defect = fld.automorphy_defect(seed=int(rng.integers(2**31))) if not fld.is_zero else 0.0
    ok = worst_res < 1e-10 and worst_anti < 1e-12
    return ok, {"symplectic_residual": worst_res, "antisymmetry": worst_anti, "automorphy_defect": defect}


def _suite_flow(cfg: ExperimentConfig, fld: FieldFamily):
    rng = substream(cfg.seed, "probes-flow")
    icfg = cfg.integrator()
    lam_max = max(abs(x) for x in cfg.lambda_grid)
    speed = max(integrate_flow(lam_max, th, 20.0, fld, icfg).speed_error() for th in random_unit_states(5, rng))
    exact = 0.0
    for th in random_unit_states(10, rng):
        tr = integrate_flow(0.0, th, 5.0, fld, icfg)
        ex, _ = reduce_to_domain(exact_geodesic_flow(th, 5.0))
        exact = max(exact, abs(ex.p - tr.final.p) + abs(ex.v - tr.final.v))
    jac = max(
        jacobi_fd_error(lam, th, fld, rng, cfg=icfg)
        for lam in (0.0, 0.01, 0.02)
        for th in random_unit_states(3, rng)
    )
    ok = speed < 1e-9 and exact < 1e-8 and jac < 1e-4
    return ok, {"speed_error": speed, "exact_flow_error": exact, "jacobi_fd_relative_error": jac}


def cmd_validate(cfg: ExperimentConfig, out: Path, threads: int = 1) -> tuple[RunManifest, int]:
    fld = cfg.field()
    man = RunManifest("validate", cfg.hash())
    man.suites["geometry"] = _timed(lambda: _suite_geometry(cfg))
    man.suites["structures"] = _timed(lambda: _suite_structures(cfg, fld))
    man.suites["flow"] = _timed(lambda: _suite_flow(cfg, fld))
    return man, EXIT_OK if man.passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# orbits

ORBIT_COLUMNS = [
    "word", "status", "T", "dT", "dT_err", "d2T", "d2T_err", "half_d2E", "I_WW",
    "res_EE", "res_E_Et", "res_Et_Et", "res_VV", "res_WV_a", "res_WV_b", "wv_variant",
    "A", "B", "x_star", "min_margin",
]
RESIDUAL_KEYS = ("EE", "E_Et", "Et_Et", "VV", "WV_a", "WV_b")


def _orbit_row(job) -> dict:
    klass, fld, grid, icfg, per_seg, nodes = job
    g = geodesic_from_class(klass)
    row = {"word": "-".join(map(str, klass.word)), "T": g.length}
    try:
        cur = period_curve(g, fld, grid, icfg)
        ev = energy_second_variation(g, fld, grid, cur, icfg)
        rep = identity_suite(g, fld, solve_W(g, fld, n0=nodes), per_seg=per_seg)
        margins = margin_scan(rep, cur.d2T)
    except PartialCurveError as e:
        row["status"] = "partial:" + ";".join(repr(x) for x in e.failed)
        return row
    except ContinuationError as e:
        row["status"] = f"continuation_failed:{e}"
        return row
    row.update(
        status="ok", dT=cur.dT, dT_err=cur.dT_err, d2T=cur.d2T, d2T_err=cur.d2T_err,
        half_d2E=0.5 * ev.d2E, I_WW=rep.I_WW, wv_variant=rep.wv_variant,
        A=rep.A, B=rep.B, x_star=rep.x_star, min_margin=min(margins.values()),
    )
    for k in RESIDUAL_KEYS:
        row["res_" + k] = rep.residuals[k]
    return row


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


# second derivatives below this are finite-difference noise
SECOND_DERIVATIVE_FLOOR = 1e-5


def _pairwise(row) -> float:
    vals = [row["d2T"], row["half_d2E"], row["I_WW"]]
    scale = max(SECOND_DERIVATIVE_FLOOR, *(abs(v) for v in vals))
    return max(abs(a - b) for a in vals for b in vals) / scale


def _orbit_summary(rows) -> tuple[dict, dict, bool]:
    ok = [r for r in rows if r["status"] == "ok"]
    s = {"word": "summary", "status": f"ok={len(ok)} failed={len(rows) - len(ok)}"}
    metrics = {"orbits": len(rows), "failed": len(rows) - len(ok)}
    if ok:
        s["dT"] = max(abs(r["dT"]) / r["T"] for r in ok)
        for k in RESIDUAL_KEYS[:4]:
            s["res_" + k] = max(r["res_" + k] for r in ok)
        s["min_margin"] = min(r["min_margin"] for r in ok)
        metrics.update(
            max_relative_dT=s["dT"],
            max_pairwise_second_derivative=max(_pairwise(r) for r in ok),
            max_identity_residual=max(s["res_" + k] for k in RESIDUAL_KEYS[:4]),
            min_margin=s["min_margin"],
        )
    passed = bool(ok) and len(ok) == len(rows) and (
        metrics["max_relative_dT"] < 1e-4
        and metrics["max_pairwise_second_derivative"] < 0.02
        and metrics["max_identity_residual"] < 1e-6
        and metrics["min_margin"] >= -1e-8
    )
    return s, metrics, passed


def _orbit_integrator(cfg: ExperimentConfig) -> IntegratorConfig:
    # continuation needs two orders more than plain flow runs
    return IntegratorConfig(rtol=cfg.rtol * 1e-2, atol=cfg.atol * 1e-2)


def cmd_orbits(cfg: ExperimentConfig, out: Path, threads: int = 1) -> tuple[RunManifest, int]:
    fld = cfg.field()
    man = RunManifest("orbits", cfg.hash())
    t = time.perf_counter()
    classes = enumerate_classes(cfg.max_word_length)
    icfg = _orbit_integrator(cfg)
    jobs = [(c, fld, cfg.lambda_grid, icfg, cfg.quadrature_per_segment, cfg.fourier_nodes) for c in classes]
    rows = parallel_map(_orbit_row, jobs, threads)
    summary, metrics, passed = _orbit_summary(rows)
    with open(out / "orbits.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ORBIT_COLUMNS)
        for r in rows + [summary]:
            w.writerow([_fmt(r.get(c)) for c in ORBIT_COLUMNS])
    man.suites["orbits"] = SuiteResult(passed, _clean(metrics), round(time.perf_counter() - t, 3))
    return man, EXIT_OK if passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# bound


def _bound(cfg: ExperimentConfig, fld: FieldFamily):
    sample = sample_liouville(cfg.mc_samples, cfg.seed)
    return bound_report(sample, fld)


def cmd_bound(cfg: ExperimentConfig, out: Path, threads: int = 1) -> tuple[RunManifest, int]:
    fld = cfg.field()
    man = RunManifest("bound", cfg.hash())
    t = time.perf_counter()
    try:
        rep = _bound(cfg, fld)
    except DegenerateFieldError as e:
        _dump(out / "bound.json", {"error": "degenerate_field", "message": str(e), "A": e.A, "A_stderr": e.A_stderr,
                                   "n": cfg.mc_samples, "seed": cfg.seed})
        man.suites["bound"] = SuiteResult(False, {"degenerate": True, "A": _clean(e.A)}, round(time.perf_counter() - t, 3))
        return man, EXIT_DEGENERATE
    (out / "bound.json").write_text(rep.to_json() + "\n", encoding="utf-8")
    checks = rep.sign_checks()
    oracle = fiber_oracle_A(fld)
    metrics = dict(checks, oracle_A=oracle["A"], oracle_gap_in_stderr=(rep.A - oracle["A"]) / rep.A_stderr)
    passed = all(checks.values())
    man.suites["bound"] = SuiteResult(passed, _clean(metrics), round(time.perf_counter() - t, 3))
    return man, EXIT_OK if passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# entropy


def cmd_entropy(cfg: ExperimentConfig, out: Path, threads: int = 1) -> tuple[RunManifest, int]:
    fld = cfg.field()
    man = RunManifest("entropy", cfg.hash())
    t = time.perf_counter()
    try:
        b = _bound(cfg, fld)
        bound, bound_err = b.bound, b.bound_stderr
    except DegenerateFieldError:
        bound, bound_err = None, 0.0
    fit = entropy_curve(cfg.entropy_grid, cfg.entropy_word_length, fld, threads=threads)
    fit.to_csv(out / "entropy.csv")
    summary = fit.summary(bound, bound_err)
    summary["estimates"] = [
        {"lambda": e.lam, "h": e.h, "h_stderr": e.h_stderr, "t_cut": e.t_cut, "orbits": e.orbits,
         "partial": e.partial, "source": e.source}
        for e in fit.estimates
    ]
    summary["word_length"] = cfg.entropy_word_length
    _dump(out / "entropy.json", summary)
    metrics = {"partial": summary["partial"], "c0": summary["c0"]}
    if 0.0 in fit.grid:
        metrics["h_at_zero"] = fit.estimates[list(fit.grid).index(0.0)].h
    man.suites["entropy"] = SuiteResult(not summary["partial"], _clean(metrics), round(time.perf_counter() - t, 3))
    return man, EXIT_OK if man.passed else EXIT_FAIL


COMMANDS = {"validate": cmd_validate, "orbits": cmd_orbits, "bound": cmd_bound, "entropy": cmd_entropy}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="thermolab", description="Gaussian thermostat experiments on the Bolza surface.")
    p.add_argument("--version", action="version", version=f"thermolab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="INI experiment config (defaults are used when omitted)")
        s.add_argument("--out", type=Path, help="output directory (overrides [run] output_dir)")
        s.add_argument("--seed", type=int, help="master seed (overrides the config)")
        s.add_argument("--threads", type=int, default=1, help="worker processes for per-orbit work")
        s.add_argument("-v", "--verbose", action="store_true")
    c = sub.add_parser("config", help="print a default config file")
    c.add_argument("--seed", type=int, default=20240607)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "config":
        sys.stdout.write(default_config_text(args.seed))
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer", "run", "seed")
        if args.config is not None:
            cfg = load_config(args.config, seed=args.seed)
        else:
            cfg = parse_config(default_config_text(), seed=args.seed)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    cfg = cfg.with_overrides(output_dir=args.out)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    log.info("config %s -> %s", cfg.hash(), out)
    man, code = COMMANDS[args.command](cfg, out, args.threads)
    man.write(out)
    for name, s in man.suites.items():
        print(f"{name}: {'PASS' if s.passed else 'FAIL'} {json.dumps(s.metrics, sort_keys=True)}")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
