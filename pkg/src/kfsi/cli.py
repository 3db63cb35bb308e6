"""Command line interface: ``kfsi run | verify | sweep | export``.

Outputs are stamped with the configuration hash:

* ``ledger-<hash>.csv``: header ``t,E_kin_fluid,E_kin_shell,E_koiter,dissipation,
  power,residual,eta_inf,tau``, values printed with ``%.17g``.
* ``outcome-<hash>.json``: run report, validated against ``schemas/report.schema.json``.
* ``snapshot-<hash>.bin``: 16-byte magic ``KFSI-SNAP`` padded with NUL, then
  little-endian u32 version (1), d, n_s, n_f, n_times, followed by
  little-endian f64 arrays times[n_times], alpha[n_times, n_s + n_f],
  coeffs[n_times, n_s].
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import os
import struct
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import config as cfgmod
from .errors import ConfigurationError, KfsiError
from .galerkin_core import LEDGER_HEADER

log = logging.getLogger("kfsi")

SNAPSHOT_MAGIC = b"KFSI-SNAP" + b"\0" * 7
SNAPSHOT_VERSION = 1


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def ledger_csv(ledger) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LEDGER_HEADER)
    for row in ledger.rows():
        w.writerow(["%.17g" % v for v in row])
    return buf.getvalue()


def write_snapshot(path, dim, times, alpha, coeffs):
    times = np.asarray(times, dtype="<f8")
    alpha = np.asarray(alpha, dtype="<f8").reshape(times.size, -1)
    coeffs = np.asarray(coeffs, dtype="<f8").reshape(times.size, -1)
    n_s = coeffs.shape[1]
    n_f = alpha.shape[1] - n_s
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<5I", SNAPSHOT_VERSION, dim, n_s, n_f, times.size))
        for arr in (times, alpha, coeffs):
            fh.write(np.ascontiguousarray(arr).tobytes())


def read_snapshot(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:16] != SNAPSHOT_MAGIC:
        raise ConfigurationError(f"{path}: not a kfsi snapshot")
    version, dim, n_s, n_f, n_t = struct.unpack_from("<5I", data, 16)
    if version != SNAPSHOT_VERSION:
        raise ConfigurationError(f"{path}: unsupported snapshot version {version}")
    flat = np.frombuffer(data, dtype="<f8", offset=36)
    n = n_s + n_f
    times = flat[:n_t]
    alpha = flat[n_t:n_t + n_t * n].reshape(n_t, n)
    coeffs = flat[n_t + n_t * n:].reshape(n_t, n_s)
    return {"dim": dim, "n_s": n_s, "n_f": n_f, "times": times, "alpha": alpha, "coeffs": coeffs}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def validate_report(report):
    jsonschema.validate(report, cfgmod.schema("report.schema.json"))
    return report


def _dump(path, report):
    Path(path).write_text(json.dumps(validate_report(_jsonable(report)), indent=2, sort_keys=True)
                          + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def execute_run(cfg, out_dir):
    """Run one configuration and write its artifacts; returns (report, exit code)."""
    from .coupler import Problem, continue_run

    h = cfgmod.config_hash(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = {"ledger": f"ledger-{h}.csv", "outcome": f"outcome-{h}.json",
             "snapshot": f"snapshot-{h}.bin"}
    tm, sv = cfg["time"], cfg["solver"]
    try:
        problem = Problem(cfgmod.problem_data(cfg), float(cfg["regularization"]["eps"]))
        outcome = continue_run(problem, tm["window"], tm["horizon"], tm["dt"],
                               kappa_fraction=sv["kappa_fraction"], tol_fp=sv["tol_fp"],
                               max_iter=sv["max_iter"], omega=sv["omega"])
    except KfsiError as exc:
        report = {"kind": "run", "config_hash": h, "config": cfg,
                  "outcome": {"status": "failed", "breakdown": False, "t_reached": 0.0,
                              "energy_residual": 0.0, "windows": [],
                              "diagnostics": {"error": str(exc),
                                              **getattr(exc, "diagnostics", {})}},
                  "artifacts": {"outcome": names["outcome"]}}
        _dump(out / names["outcome"], report)
        return report, 2
    (out / names["ledger"]).write_text(ledger_csv(outcome.ledger), encoding="utf-8")
    write_snapshot(out / names["snapshot"], problem.data.surface.dim, outcome.times,
                   outcome.alpha, outcome.coeffs)
    bound = float(sv["energy_bound"])
    report = {"kind": "run", "config_hash": h, "config": cfg, "outcome": outcome.as_dict(),
              "artifacts": names,
              "energy_check": {"residual": float(outcome.residual), "bound": bound,
                               "passed": bool(outcome.residual <= bound)}}
    _dump(out / names["outcome"], report)
    return report, (1 if outcome.status == "failed" else 0)


def _parse_grid(items):
    """``section.key=v1,v2`` entries -> list of override dicts (cartesian product)."""
    axes = []
    for item in items or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigurationError(f"grid entry {item!r} must look like section.key=v1,v2")
        key, vals = item.split("=", 1)
        sec, opt = key.split(".", 1)
        axes.append([(sec, opt, v) for v in vals.split(",") if v != ""])
    cells = [{}]
    for axis in axes:
        cells = [{**c, (s, o): v} for c in cells for (s, o, v) in axis]
    out = []
    for c in cells:
        ov = {}
        for (s, o), v in c.items():
            ov.setdefault(s, {})[o] = v
        out.append(ov)
    return out


def _sweep_cell(args):
    base, ov, out_dir = args
    try:
        cfg = cfgmod.validate(cfgmod._merge(copy.deepcopy(base), ov))
    except ConfigurationError as exc:
        return {"status": "failed", "error": str(exc), "overrides": ov}
    cell = {"overrides": ov, "config_hash": cfgmod.config_hash(cfg),
            "eps": cfg["regularization"]["eps"], "eps_tilde": cfg["regularization"]["eps_tilde"]}
    try:
        report, code = execute_run(cfg, out_dir)
    except Exception as exc:  # a broken cell must not take the sweep down
        cell.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        return cell
    o = report["outcome"]
    cell.update(status=o["status"], exit_code=code, t_reached=o["t_reached"],
                energy_residual=o["energy_residual"], eps_term=o.get("eps_term", 0.0))
    if o["status"] != "failed":
        led = Path(out_dir) / report["artifacts"]["ledger"]
        with led.open(encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        cell["energy_max"] = max(float(r["E_kin_fluid"]) + float(r["E_kin_shell"])
                                 + float(r["E_koiter"]) for r in rows)
    return cell


def execute_sweep(base_cfg, grid, out_dir, threads=1):
    """Fan out ``run`` over override dicts; failed cells are recorded, the rest continue."""
    jobs = [(base_cfg, ov, out_dir) for ov in grid]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            cells = list(pool.map(_sweep_cell, jobs))
    else:
        cells = [_sweep_cell(j) for j in jobs]
    ok = [c for c in cells if c["status"] != "failed"]
    return {"kind": "sweep", "cells": cells,
            "eps_term_bound": max((c["eps_term"] for c in ok), default=0.0),
            "completed": len(ok)}


def execute_export(cfg, what, out_dir):
    from .geometry import ConstantField, gamma_factor, gauss_curvature, mean_curvature
    from .shell_energy import build_shell_basis, export_matrices

    sf = cfgmod.make_surface(cfg)
    params = cfgmod.elastic_params(cfg)
    if cfg["geometry"]["kind"] == "flat":
        eta0 = cfgmod.problem_data(cfg).eta0
    else:
        eta0 = ConstantField(0.0, sf.m)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = cfgmod.config_hash(cfg)
    written = []
    if what in ("surface", "all"):
        q = sf.quadrature(int(cfg["basis"]["n_tan"]), region="shell") if sf.name == "sphere" \
            else sf.quadrature(int(cfg["basis"]["n_tan"]))
        X, nu = sf.embed(q.u), sf.normal(q.u)
        H, G = mean_curvature(sf, q.u), gauss_curvature(sf, q.u)
        gam = gamma_factor(sf, eta0, q.u)
        path = out / f"surface-{h}.csv"
        with path.open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            d = sf.dim
            w.writerow(["q"] + [f"X{i}" for i in range(d)] + [f"nu{i}" for i in range(d)]
                       + ["H", "G", "gamma"])
            for i in range(q.u.shape[0]):
                w.writerow([i] + ["%.17g" % v for v in X[i]] + ["%.17g" % v for v in nu[i]]
                           + ["%.17g" % H[i], "%.17g" % G[i], "%.17g" % gam[i]])
        written.append(str(path))
    if what in ("matrices", "all"):
        basis = build_shell_basis(sf, params, int(cfg["basis"]["n_s"]))
        path = out / f"matrices-{h}.txt"
        with path.open("w", encoding="utf-8") as fh:
            export_matrices(basis, fh)
        written.append(str(path))
    return written


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="kfsi", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI configuration file")
    common.add_argument("--preset", choices=sorted(cfgmod.PRESETS), help="scenario preset")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--seed", type=int, help="RNG seed for sampling checks")
    common.add_argument("--threads", type=int, default=1, help="worker processes")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one configuration value")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="coupled run to the horizon or breakdown")
    vp = sub.add_parser("verify", parents=[common], help="property suites")
    vp.add_argument("suite", choices=["geometry", "shell", "stress", "transform", "compat",
                                      "energy", "all"])
    sp = sub.add_parser("sweep", parents=[common], help="fan-out of run over a parameter grid")
    sp.add_argument("--grid", action="append", default=[], metavar="SECTION.KEY=V1,V2")
    ep = sub.add_parser("export", parents=[common], help="surface samples or shell matrices")
    ep.add_argument("what", choices=["surface", "matrices", "all"])
    return p


def _overrides(items):
    ov = {}
    for item in items:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigurationError(f"override {item!r} must look like section.key=value")
        key, val = item.split("=", 1)
        sec, opt = key.split(".", 1)
        ov.setdefault(sec, {})[opt] = val
    return ov


def _fail(message, code=2, **extra):
    print(json.dumps({"error": message, **_jsonable(extra)}, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads and args.threads > 0:
        os.environ.setdefault("OMP_NUM_THREADS", str(args.threads))
    try:
        ov = _overrides(args.set)
        if args.out:
            ov.setdefault("output", {})["dir"] = args.out
        if args.seed is not None:
            ov.setdefault("output", {})["seed"] = str(args.seed)
        cfg = cfgmod.load_config(args.config, args.preset, overrides=ov)
    except ConfigurationError as exc:
        return _fail(str(exc))
    out_dir = cfg["output"]["dir"]

    if args.command == "run":
        report, code = execute_run(cfg, out_dir)
        o = report["outcome"]
        summary = {"status": o["status"], "t_reached": o["t_reached"],
                   "config_hash": report["config_hash"], "out": str(out_dir)}
        if code:
            return _fail("run failed", code, **summary, diagnostics=o.get("diagnostics", {}))
        print(json.dumps(_jsonable(summary), sort_keys=True))
        return 0

    if args.command == "verify":
        from .verify import run_suite

        results = run_suite(args.suite, seed=int(cfg["output"]["seed"]))
        passed = all(r["passed"] for r in results)
        report = {"kind": "verify", "suite": args.suite, "passed": passed,
                  "seed": int(cfg["output"]["seed"]), "results": results}
        report = validate_report(_jsonable(report))
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        path = Path(out_dir) / f"verify-{args.suite}.json"
        path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        for r in results:
            print(f"{'PASS' if r['passed'] else 'FAIL'} {r['suite']}.{r['name']}: "
                  f"measured={r['measured']} threshold={r['threshold']}")
        return 0 if passed else 1

    if args.command == "sweep":
        try:
            grid = _parse_grid(args.grid) if args.grid else [{}]
            report = execute_sweep(cfg, grid, out_dir, args.threads)
        except ConfigurationError as exc:
            return _fail(str(exc))
        report = validate_report(_jsonable(report))
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        path = Path(out_dir) / f"sweep-{cfgmod.config_hash(cfg)}.json"
        path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        print(json.dumps({"cells": len(report["cells"]), "completed": report["completed"],
                          "report": str(path)}))
        return 0 if report["completed"] == len(report["cells"]) else 1

    if args.command == "export":
        try:
            written = execute_export(cfg, args.what, out_dir)
        except KfsiError as exc:
            return _fail(str(exc))
        print(json.dumps({"written": written}))
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
