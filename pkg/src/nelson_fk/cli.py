"""Command line entry point ``nelson-fk``.

Every subcommand writes its results as JSON (and CSV for tables) under
``output_dir`` together with a manifest holding the resolved config, its
hash and the SHA-256 of every output file.  ``replay`` re-runs a manifest
and compares the bytes.

Exit codes: 0 pass, 2 numerical-budget failure, 3 config error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import tempfile
import time
from functools import partial
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .action import identity_battery
from .config import ConfigError, RunConfig, describe
from .grid import coarse_grid, make_grid
from .levy import sample_paths
from .model import INF, ModelParams, e_ren, e_ren_closed_form, psi, symbol_from_levy
from .oracle import (TruncatedFock, build_fiber, expectation, generator_check, ground_energy, mc_vs_oracle,
                     renormalization_scan, trunc_rule)

EXIT_OK, EXIT_BUDGET, EXIT_CONFIG = 0, 2, 3


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if x is INF:
        return "inf"
    if isinstance(x, (complex, np.complexfloating)):
        return {"re": float(x.real), "im": float(x.imag)}
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return "inf" if math.isinf(x) else x
    if hasattr(x, "as_dict"):
        return _jsonable(x.as_dict())
    return x


class Outputs:
    """Collects result files of one run and writes the manifest."""

    def __init__(self, cfg: RunConfig, command: str, args: dict, out_dir: Path):
        self.cfg, self.command, self.args = cfg, command, args
        self.dir = out_dir
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files = {}

    def _name(self, suffix: str) -> str:
        return f"{self.cfg['experiment']}_{self.command}{suffix}"

    def _write(self, name: str, text: str):
        path = self.dir / name
        path.write_text(text)
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()

    def json(self, obj, suffix: str = ".json"):
        record = {"command": self.command, "config_hash": self.cfg.hash, "result": _jsonable(obj)}
        self._write(self._name(suffix), json.dumps(record, indent=1, sort_keys=True) + "\n")

    def csv(self, rows: list[dict], suffix: str = ".csv"):
        if not rows:
            return
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
        self._write(self._name(suffix), f"# config_hash={self.cfg.hash}\n" + buf.getvalue())

    def text(self, text: str, suffix: str):
        self._write(self._name(suffix), text)

    def failure(self, failures: list[dict]):
        self.json({"failures": failures}, "_failure.json")

    def manifest(self, status: int):
        man = {
            "command": self.command, "args": _jsonable(self.args), "config": _jsonable(self.cfg.values),
            "config_hash": self.cfg.hash, "version": __version__, "status": status, "outputs": self.files,
        }
        path = self.dir / self._name("_manifest.json")
        path.write_text(json.dumps(man, indent=1, sort_keys=True) + "\n")
        return path


def _grid(cfg: RunConfig, params: ModelParams, cutoffs):
    return make_grid(params, cutoffs, cfg["grid.radial"], cfg["grid.angular"], cfg["grid.r_max"], cfg["grid.tol"])


def _check(name, value, tol, ok=None, **extra):
    ok = bool(value <= tol) if ok is None else bool(ok)
    return {"check": name, "residual": float(value), "tolerance": tol, "passed": ok, **extra}


# --- subcommands ----------------------------------------------------------------


def cmd_validate(cfg: RunConfig, args, out: Outputs) -> int:
    """Invariant suite at desk scale; every entry carries its measured residual."""
    p = cfg.params
    lam = p.lam if p.lam is not INF else 1.0
    pf = p.with_(lam=lam)
    checks = []

    worst = max(abs(symbol_from_levy((x, 0.0), p) - float(psi(np.array([x, 0.0]), p))) / (1 + float(psi(np.array([x, 0.0]), p)))
                for x in (0.5, 2.0, 8.0)) if p.m_p > 0 else 0.0
    checks.append(_check("symbol_reconstruction", worst, 1e-5))

    m = p.m_b
    q = ModelParams(m, m, p.g)
    worst = max(abs(e_ren(L, q) / e_ren_closed_form(L, m, p.g) - 1) for L in (0.5, 1.0, 2.0, 4.0)) if p.g else 0.0
    checks.append(_check("e_ren_closed_form", worst, 1e-8))

    rows = identity_battery(p.with_(lam=INF), (0.5 * lam, lam), n_paths=min(cfg["action.n_paths"], 200),
                            eps=cfg["action.eps"], seed=cfg["mc.seed"])
    tol = cfg["action.tol_id"]
    checks.append(_check("action_identity_median", max(max(r["median_diff"], r["median_imag"]) for r in rows), tol))

    from .mc import fiber_semigroup, semigroup_check

    sc = semigroup_check((0.3, 0.0), 1.0, 0.4, pf, n_paths=20, seed=cfg["mc.seed"], eps=cfg["levy.eps"])
    checks.append(_check("flow_factorization", sc["flow_max"], 1e-8))
    checks.append(_check("oracle_semigroup", sc["oracle_residual"], 1e-8, dim=sc["oracle_dim"]))

    tr = trunc_rule(lam, radial=1, angular=4, n_max=3)
    gc = generator_check((0.0, 0.0), lam, tr, pf)
    checks.append(_check("generator_order", abs(gc["order"] - 1.0), 0.1, order=gc["order"]))

    free = p.with_(g=0.0, lam=lam)
    est = fiber_semigroup((1.0, 0.0), 1.0, free, n_paths=2000, seed=cfg["mc.seed"], eps=cfg["levy.eps"],
                          grid=coarse_grid(lam))
    target = math.exp(-float(psi(np.array([1.0, 0.0]), free)))
    checks.append(_check("free_characteristic_function", abs(est.mean - target), 3 * est.std_err,
                         mean=est.mean, target=target))

    a = fiber_semigroup((0.0, 0.0), 1.0, pf, n_paths=300, seed=cfg["mc.seed"], eps=cfg["levy.eps"], workers=1)
    b = fiber_semigroup((0.0, 0.0), 1.0, pf, n_paths=300, seed=cfg["mc.seed"], eps=cfg["levy.eps"], workers=2)
    same = a.samples.tobytes() == b.samples.tobytes() and a.mean == b.mean
    checks.append(_check("worker_independence", 0.0 if same else 1.0, 0.0, ok=same))

    c = fiber_semigroup((1.3, -0.4), 1.0, pf, n_paths=300, seed=cfg["mc.seed"], eps=cfg["levy.eps"])
    checks.append(_check("xi_independent_modulus", float(np.max(np.abs(np.abs(a.samples) - np.abs(c.samples))
                                                              / np.abs(a.samples))), 1e-12))

    gs = (0.1, 0.2, 0.4)
    trq = TruncatedFock(coarse_grid(1.0, radial=1, angular=8), 1.0, 4)
    e0 = [ground_energy((0.0, 0.0), 1.0, trq, ModelParams(p.m_p, p.m_b, g)) for g in gs]
    slope = float(np.polyfit(np.log(gs), np.log(np.abs(e0)), 1)[0])
    checks.append(_check("fourth_order_ground_energy", abs(slope - 4.0), 0.4, exponent=slope))

    out.json({"checks": checks})
    out.csv([{k: v for k, v in c.items() if k in ("check", "residual", "tolerance", "passed")} for c in checks])
    failed = [c for c in checks if not c["passed"]]
    for c in checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['check']}: {c['residual']:.3e} (tol {c['tolerance']:.1e})")
    if failed:
        out.failure(failed)
        return EXIT_BUDGET
    return EXIT_OK


def cmd_semigroup(cfg: RunConfig, args, out: Outputs) -> int:
    from .mc import fiber_semigroup

    p = cfg.params
    grid = _grid(cfg, p, [p.lam])
    rows = []
    for t in cfg["mc.t"]:
        for xi in cfg["mc.xi"]:
            est = fiber_semigroup(xi, t, p, n_paths=cfg["mc.n_paths"], seed=cfg["mc.seed"], grid=grid,
                                  eps=cfg["levy.eps"], workers=args.workers)
            rows.append(est.as_dict())
    out.json({"estimates": rows})
    out.csv([{"t": r["t"], "xi_x": r["xi"][0], "xi_y": r["xi"][1], "lambda": r["lambda"], "mean_re": r["mean_re"],
              "mean_im": r["mean_im"], "std_err": r["std_err"], "n_paths": r["n_paths"], "seed": r["seed"]}
             for r in rows])
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, args, out: Outputs) -> int:
    from .mc import lambda_sweep, moment_diagnostics

    p = cfg.params
    lams = cfg["mc.lambdas"]
    grid = _grid(cfg, p, lams)
    t, xi = cfg["mc.t"][0], cfg["mc.xi"][0]
    sw = lambda_sweep(xi, t, p, lams, n_paths=cfg["mc.n_paths"], seed=cfg["mc.seed"], grid=grid,
                      eps=cfg["levy.eps"], workers=args.workers)
    res = {"sweep": sw.as_dict()}
    rows = [{"lambda": str(c), "mean_re": e.mean.real, "mean_im": e.mean.imag, "std_err": e.std_err,
             "diff_to_top": abs(d[0]), "diff_std_err": d[1], "sup_path_diff_median": s}
            for c, e, d, s in zip(sw.cutoffs, sw.estimates, sw.diff_to_top, sw.sup_path_diff_median)]
    if args.moments:
        res["moments"] = moment_diagnostics(t, p, lams, n_paths=cfg["mc.n_paths"], seed=cfg["mc.seed"], grid=grid,
                                            eps=cfg["levy.eps"], refine=cfg["mc.refine"], workers=args.workers)
    failures = []
    if len(sw.cutoffs) > 1 and sw.cutoffs[-1] is INF:
        d, se = sw.diff_to_top[-2]
        res["cauchy"] = {"diff": abs(d), "std_err": se, "passed": bool(abs(d) <= 3 * se)}
        if not res["cauchy"]["passed"]:
            failures.append({"check": "cauchy", "diff": abs(d), "budget": 3 * se})
    out.json(res)
    out.csv(rows)
    if failures:
        out.failure(failures)
        return EXIT_BUDGET
    return EXIT_OK


def cmd_oracle(cfg: RunConfig, args, out: Outputs) -> int:
    p = cfg.params
    rule = partial(trunc_rule, radial=cfg["oracle.radial"], angular=cfg["oracle.angular"], n_max=cfg["oracle.n_max"])
    rows = []
    for xi in cfg["mc.xi"]:
        sym = args.symmetric and not any(xi)
        rows += renormalization_scan(xi, cfg["oracle.lambdas"], p, rule, cfg["oracle.eren_mode"], symmetric=sym)
    res = {"scan": rows}
    if p.lam is not INF:
        tr = TruncatedFock(coarse_grid(p.lam, cfg["oracle.radial"], cfg["oracle.angular"]), p.lam, cfg["oracle.n_max"])
        elems = []
        for xi in cfg["mc.xi"]:
            fm = build_fiber(xi, p.lam, tr, p, cfg["oracle.eren_mode"])
            vac = tr.coherent_vector(None)
            for t in cfg["mc.t"]:
                elems.append({"xi": xi, "t": t, "vacuum_element": expectation(fm, t, vac, vac),
                              "ground_energy": fm.ground_energy})
        res["evolve"] = {"dim": tr.dim, "elements": elems}
    out.json(res)
    out.csv(rows)
    return EXIT_OK


def cmd_compare(cfg: RunConfig, args, out: Outputs) -> int:
    p = cfg.params
    if p.lam is INF:
        raise ConfigError("model.lambda", "compare needs a finite cutoff")
    tr = TruncatedFock(coarse_grid(p.lam, cfg["oracle.radial"], cfg["oracle.angular"]), p.lam, cfg["oracle.n_max"])
    cmp = mc_vs_oracle(cfg["mc.xi"][0], cfg["mc.t"][0], p.lam, tr, p, n_paths=cfg["mc.n_paths"],
                       seed=cfg["mc.seed"], eps=cfg["levy.eps"], workers=args.workers)
    res = cmp.as_dict()
    res["dim"] = tr.dim
    out.json(res)
    print(f"{'PASS' if cmp.passed else 'FAIL'} |MC - oracle| = {cmp.discrepancy:.3e}, budget {cmp.budget:.3e}")
    if not cmp.passed:
        out.failure([{"check": "mc_vs_oracle", "discrepancy": cmp.discrepancy, "budget": cmp.budget}])
        return EXIT_BUDGET
    return EXIT_OK


def paths_csv(n: int, T: float, eps: float, params: ModelParams, seed: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["# T", repr(float(T)), "eps", repr(float(eps)), "seed", seed, "m_p", repr(params.m_p)])
    w.writerow(["path", "s", "dx", "dy"])
    for i, path in enumerate(sample_paths(n, float(T), float(eps), params, seed)):
        for s, (dx, dy) in zip(path.times, path.jumps):
            w.writerow([i, repr(float(s)), repr(float(dx)), repr(float(dy))])
    return buf.getvalue()


def cmd_paths(cfg: RunConfig, args, out: Outputs) -> int:
    T = args.T if args.T is not None else cfg["mc.t"][0]
    seed = args.seed if args.seed is not None else cfg["mc.seed"]
    text = paths_csv(args.n, T, cfg["levy.eps"], cfg.params, seed)
    out.text(text, ".csv")
    if args.stdout:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_action_id(cfg: RunConfig, args, out: Outputs) -> int:
    p = cfg.params.with_(lam=INF)
    rows = identity_battery(p, args.lambdas, n_paths=cfg["action.n_paths"], eps=cfg["action.eps"],
                            t=cfg["mc.t"][0], seed=cfg["mc.seed"])
    tol = cfg["action.tol_id"]
    failures = []
    for r in rows:
        for key in ("diff", "imag"):
            if r[f"median_{key}"] > tol or r[f"p99_{key}"] > 10 * tol:
                failures.append({"check": f"action_identity_{key}", "lambda": r["lambda"],
                                 "median": r[f"median_{key}"], "p99": r[f"p99_{key}"], "tolerance": tol})
    out.json({"rows": rows, "tolerance": tol})
    out.csv(rows)
    for r in rows:
        print(f"lambda={r['lambda']:g} median={r['median_diff']:.2e} p99={r['p99_diff']:.2e} "
              f"|Im| median={r['median_imag']:.2e}")
    if failures:
        out.failure(failures)
        return EXIT_BUDGET
    return EXIT_OK


def cmd_replay(manifest_path: str, workers) -> int:
    man = json.loads(Path(manifest_path).read_text())
    cfg = RunConfig.from_mapping(man["config"])
    if cfg.hash != man["config_hash"]:
        raise ConfigError("<manifest>", "config hash does not match the stored config")
    with tempfile.TemporaryDirectory() as tmp:
        ns = argparse.Namespace(**man["args"])
        ns.workers = workers
        status, out = _run(man["command"], cfg, ns, Path(tmp))
        same = out.files == man["outputs"]
    for name, h in man["outputs"].items():
        print(f"{'same' if out.files.get(name) == h else 'DIFFERENT'} {name}")
    return EXIT_OK if same and status == man["status"] else EXIT_BUDGET


COMMANDS = {
    "validate": cmd_validate, "semigroup": cmd_semigroup, "sweep": cmd_sweep, "oracle": cmd_oracle,
    "compare": cmd_compare, "paths": cmd_paths, "action-id": cmd_action_id,
}


def _run(command: str, cfg: RunConfig, ns, out_dir: Path):
    args = {k: v for k, v in vars(ns).items() if k not in ("workers", "config", "set", "out", "command", "stdout")}
    out = Outputs(cfg, command, args, out_dir)
    status = COMMANDS[command](cfg, ns, out)
    out.manifest(status)
    return status, out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nelson-fk", description="Feynman-Kac Monte Carlo for the relativistic Nelson model")
    ap.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, value parsed as YAML")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--workers", type=int, default=None,
                        help="worker processes (default from NELSONFK_WORKERS); never changes results")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="invariant suite")
    sub.add_parser("semigroup", parents=[common], help="fiber estimates over the t and xi lists")
    s = sub.add_parser("sweep", parents=[common], help="cutoff sweep on common paths")
    s.add_argument("--moments", action="store_true", help="also report sup-moment diagnostics")
    s = sub.add_parser("oracle", parents=[common], help="ground-energy scan and exact vacuum elements")
    s.add_argument("--symmetric", action="store_true", help="diagonalize the symmetric sector at xi = 0")
    sub.add_parser("compare", parents=[common], help="Monte Carlo against the exact oracle")
    s = sub.add_parser("paths", parents=[common], help="sample paths and dump them as CSV")
    s.add_argument("--n", type=int, default=3)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--T", type=float, default=None)
    s.add_argument("--stdout", action="store_true", help="also print the CSV")
    s = sub.add_parser("action-id", parents=[common], help="defining against Ito form of the action")
    s.add_argument("--lambdas", type=float, nargs="+", default=[1.0, 2.0, 4.0])
    s = sub.add_parser("replay", help="re-run a manifest and compare output bytes")
    s.add_argument("manifest")
    s.add_argument("--workers", type=int, default=None)
    sub.add_parser("keys", help="list the config keys")
    return ap


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        if ns.command == "keys":
            print(describe())
            return EXIT_OK
        if ns.command == "replay":
            return cmd_replay(ns.manifest, ns.workers)
        cfg = RunConfig.load(ns.config)
        overrides = {}
        for item in ns.set:
            key, sep, val = item.partition("=")
            if not sep:
                raise ConfigError(item, "expected KEY=VALUE")
            overrides[key.strip()] = yaml.safe_load(val)
        if ns.out:
            overrides["output_dir"] = ns.out
        if overrides:
            cfg = RunConfig.from_mapping({**cfg.values, **overrides})
        t0 = time.perf_counter()
        status, out = _run(ns.command, cfg, ns, Path(cfg["output_dir"]))
        print(f"{ns.command}: exit {status}, {len(out.files)} file(s) in {out.dir} "
              f"[config {cfg.hash}, {time.perf_counter() - t0:.1f}s]", file=sys.stderr)
        return status
    except ConfigError as exc:
        print(json.dumps({"error": "config", "key": exc.key, "message": str(exc)}), file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
