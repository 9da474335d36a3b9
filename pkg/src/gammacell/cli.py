"""Command-line front end and TOML configuration loader.

Subcommands: cell, homog, envelope, korn, rigidity, commute, equiv,
diagonal, addition, report. Exit codes: 0 success, 1 configuration or
validation error, 2 compute failure. Every run logs the config hash and the
seed into the emitted report. ``GAMMACELL_CACHE`` overrides the cache
directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from . import xp
from .density import DensitySpec, Phase
from .grid import build_grid
from .minimize import SolveOptions
from .rigidity import garding_check, korn_constant, rigidity_ratio, \
    two_rotation_field, zhang_check

SCHEMA_VERSION = 1

USAGE = """usage: gammacell SUBCOMMAND --config PATH [options]

subcommands:
  cell       single cell problems per (X, k)
  homog      homogenized-density estimate over the k schedule
  envelope   quasiconvexity bounds (cell bound, optional laminate)
  korn       Korn-quotient constant estimate
  rigidity   geometric-rigidity ratio and Zhang/Garding diagnostics
  commute    homogenization/linearization commutability sweep
  equiv      density-equivalence profile over (delta, T)
  diagonal   simultaneous-limit diagonal sequence
  addition   p-norm regularization sweep
  report     convert or plot an existing JSON report

options:
  --config PATH   TOML experiment configuration (required except report)
  --out DIR       output directory (default: config [io].out or '.')
  --workers N     worker pool size (default: [io].workers or 1)
  --seed U64      override the config seed
  --plot          also emit SVG plots
  --dry-run       validate and print the resolved job list, compute nothing
  --cache DIR     result cache directory (env GAMMACELL_CACHE overrides)
"""


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# strict schema walking
# ---------------------------------------------------------------------------

_DENSITY_KEYS = {"kind", "n", "p", "beta", "c_low", "C_low", "delta",
                 "wells", "phases", "period"}
_SECTIONS = {
    "schema_version", "seed", "density", "linearization", "cell", "solve",
    "sweep", "envelope", "rigidity", "io",
}
_SECTION_KEYS = {
    "cell": {"X", "k", "res", "symmetrized"},
    "solve": {"max_iter", "g_tol", "f_tol", "memory", "n_starts", "amp"},
    "sweep": {"delta", "T", "R", "slack", "nx", "nX", "diagonal", "lambda"},
    "envelope": {"res", "laminate_depth"},
    "rigidity": {"res", "p", "n_starts", "alpha", "gamma", "X", "slack",
                 "n_fields"},
    "io": {"out", "formats", "cache", "workers"},
}


def _check_keys(name, mapping, allowed):
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {sorted(unknown)}")


def _as_matrix(value, n, what):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0 and n == 1:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        if arr.size != n * n:
            raise ConfigError(f"{what}: expected {n * n} row-major entries, "
                              f"got {arr.size}")
        arr = arr.reshape(n, n)
    elif arr.shape != (n, n):
        raise ConfigError(f"{what}: expected an {n}x{n} matrix")
    return arr


def _parse_density(section: dict, name: str) -> DensitySpec:
    _check_keys(name, section, _DENSITY_KEYS)
    if "kind" not in section:
        raise ConfigError(f"[{name}] needs a kind")
    kind = section["kind"]
    wells_raw = section.get("wells", [])
    phases_raw = section.get("phases", [])
    n = section.get("n")
    if n is None:
        if wells_raw:
            flat = np.asarray(wells_raw[0], dtype=float)
            n = int(round(np.sqrt(flat.size))) if flat.ndim == 1 else flat.shape[0]
        elif phases_raw:
            n = len(phases_raw[0].get("box", [])) // 2
        else:
            raise ConfigError(f"[{name}] needs an explicit dimension n")
    n = int(n)
    wells = [_as_matrix(w, n, f"[{name}].wells") for w in wells_raw]
    phases = []
    for ph in phases_raw:
        _check_keys(f"{name}.phases", ph, {"box", "a"})
        box = list(ph.get("box", []))
        if len(box) != 2 * n:
            raise ConfigError(f"[{name}].phases box needs {2 * n} entries "
                              "(lo, hi per axis)")
        pairs = tuple((float(box[2 * i]), float(box[2 * i + 1])) for i in range(n))
        phases.append(Phase(box=pairs, a=float(ph["a"])))
    try:
        return DensitySpec(
            kind=kind, n=n, p=float(section.get("p", 2.0)),
            beta=section.get("beta"), c_low=section.get("c_low"),
            C_low=section.get("C_low"), delta=float(section.get("delta", 0.0)),
            wells=tuple(wells), phases=tuple(phases),
            period=float(section.get("period", 1.0)))
    except ValueError as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def _parse_solve(section: dict, seed: int) -> SolveOptions:
    _check_keys("solve", section, _SECTION_KEYS["solve"])
    try:
        return SolveOptions(
            max_iter=int(section.get("max_iter", 1000)),
            g_tol=float(section.get("g_tol", 1e-8)),
            f_tol=float(section.get("f_tol", 1e-12)),
            memory=int(section.get("memory", 10)),
            n_starts=int(section.get("n_starts", 8)),
            amp=tuple(section.get("amp", (0.1, 0.5, 1.0))),
            seed=seed)
    except ValueError as exc:
        raise ConfigError(f"[solve]: {exc}") from exc


def load_config(path: str, seed_override=None) -> dict:
    """Parse and validate a TOML experiment configuration.

    Returns a dict with the parsed sections, the built DensitySpec objects,
    and the config hash (sha256 of the canonicalized content, stable under
    key order)."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML parse error in {path}: {exc}")

    _check_keys("<root>", raw, _SECTIONS)
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}")
    if "density" not in raw:
        raise ConfigError("config needs a [density] section")

    seed = int(seed_override if seed_override is not None
               else raw.get("seed", 0))
    density = _parse_density(raw["density"], "density")
    linearization = None
    if "linearization" in raw:
        linearization = _parse_density(raw["linearization"], "linearization")

    cell_sec = raw.get("cell", {})
    _check_keys("cell", cell_sec, _SECTION_KEYS["cell"])
    sweep_sec = raw.get("sweep", {})
    _check_keys("sweep", sweep_sec, _SECTION_KEYS["sweep"])
    env_sec = raw.get("envelope", {})
    _check_keys("envelope", env_sec, _SECTION_KEYS["envelope"])
    rig_sec = raw.get("rigidity", {})
    _check_keys("rigidity", rig_sec, _SECTION_KEYS["rigidity"])
    io_sec = raw.get("io", {})
    _check_keys("io", io_sec, _SECTION_KEYS["io"])

    opts = _parse_solve(raw.get("solve", {}), seed)

    n = density.n
    Xs = tuple(tuple(map(tuple, _as_matrix(X, n, "[cell].X")))
               for X in cell_sec.get("X", []))

    body = json.dumps({**raw, "seed": seed}, sort_keys=True, default=str)
    config_hash = hashlib.sha256(body.encode()).hexdigest()[:16]

    return {
        "density": density,
        "linearization": linearization,
        "Xs": Xs,
        "k_schedule": tuple(int(k) for k in cell_sec.get("k", (1, 2, 4))),
        "res": int(cell_sec.get("res", 16)),
        "symmetrized": bool(cell_sec.get("symmetrized", False)),
        "deltas": tuple(float(d) for d in sweep_sec.get("delta",
                                                        (0.4, 0.2, 0.1, 0.05))),
        "Ts": tuple(sweep_sec.get("T", (1, 2, 4))),
        "R": float(sweep_sec.get("R", 1.0)),
        "slack": float(sweep_sec.get("slack", 0.1)),
        "nx": int(sweep_sec.get("nx", 2)),
        "nX": int(sweep_sec.get("nX", 5)),
        "diagonal": tuple((int(k), float(d))
                          for k, d in sweep_sec.get("diagonal", ())),
        "lambdas": tuple(float(l) for l in sweep_sec.get("lambda", ())),
        "qc_res": int(env_sec.get("res", 64)),
        "laminate_depth": int(env_sec.get("laminate_depth", 0)),
        "rigidity": rig_sec,
        "opts": opts,
        "seed": seed,
        "out": io_sec.get("out", "."),
        "formats": list(io_sec.get("formats", ["csv", "json"])),
        "cache": io_sec.get("cache"),
        "workers": int(io_sec.get("workers", 1)),
        "config_hash": config_hash,
    }


def build_plan(cfg: dict, cache_dir, workers) -> xp.ExperimentPlan:
    return xp.ExperimentPlan(
        density=cfg["density"], linearization=cfg["linearization"],
        Xs=cfg["Xs"], k_schedule=cfg["k_schedule"], res=cfg["res"],
        deltas=cfg["deltas"], Ts=cfg["Ts"], R=cfg["R"], slack=cfg["slack"],
        nx=cfg["nx"], nX=cfg["nX"], diagonal=cfg["diagonal"],
        lambdas=cfg["lambdas"], qc_res=cfg["qc_res"],
        laminate_depth=cfg["laminate_depth"], symmetrized=cfg["symmetrized"],
        opts=cfg["opts"], seed=cfg["seed"], cache_dir=cache_dir,
        workers=workers, config_hash=cfg["config_hash"])


# ---------------------------------------------------------------------------
# subcommand execution
# ---------------------------------------------------------------------------

_RUNNERS = {
    "cell": xp.run_cell,
    "homog": xp.run_homog,
    "envelope": xp.run_envelope,
    "commute": xp.run_commutability,
    "equiv": xp.run_equivalence_profile,
    "diagonal": xp.run_diagonal,
    "addition": xp.run_addition,
}

_PLOT_QUANTITY = {
    "commute": ("rel_err", dict(logx=True, logy=True)),
    "equiv": ("equivalence_metric", dict(logx=True, logy=True)),
    "diagonal": ("w_hom_delta", dict()),
    "addition": ("addition_trick", dict()),
    "homog": (None, dict()),
    "cell": (None, dict()),
    "envelope": ("qc_bound", dict()),
}


def _describe_jobs(cmd: str, cfg: dict) -> list:
    jobs = []
    if cmd in ("cell", "homog"):
        for i, X in enumerate(cfg["Xs"]):
            for k in cfg["k_schedule"]:
                jobs.append(f"{cmd} X{i} k={k} res={cfg['res']}")
    elif cmd == "envelope":
        for i, X in enumerate(cfg["Xs"]):
            jobs.append(f"qc_cell X{i} res={cfg['qc_res']}")
            if cfg["laminate_depth"] > 0:
                jobs.append(f"laminate X{i} depth={cfg['laminate_depth']}")
    elif cmd == "commute":
        for i, X in enumerate(cfg["Xs"]):
            jobs.append(f"v_hom X{i} k={cfg['k_schedule']}")
            for d in cfg["deltas"]:
                jobs.append(f"w_hom X{i} delta={d} k={cfg['k_schedule']}")
    elif cmd == "equiv":
        for d in cfg["deltas"]:
            for T in cfg["Ts"]:
                jobs.append(f"metric delta={d} T={T} R={cfg['R']}")
    elif cmd == "diagonal":
        for i, X in enumerate(cfg["Xs"]):
            for k, d in cfg["diagonal"]:
                jobs.append(f"diag X{i} k={k} delta={d}")
    elif cmd == "addition":
        for i, X in enumerate(cfg["Xs"]):
            for lam in cfg["lambdas"]:
                jobs.append(f"addition X{i} lambda={lam}")
    elif cmd == "korn":
        rig = cfg["rigidity"]
        jobs.append(f"korn res={rig.get('res', 16)} and 2x refinement")
    elif cmd == "rigidity":
        jobs.append("rigidity ratio + zhang + garding diagnostics")
    return jobs


def _run_korn(cfg: dict, out_dir: str) -> dict:
    rig = cfg["rigidity"]
    res = int(rig.get("res", 16))
    p = float(rig.get("p", 2.0))
    n_starts = int(rig.get("n_starts", 6))
    n = cfg["density"].n
    doc = {"config_hash": cfg["config_hash"], "seed": cfg["seed"],
           "version": __version__, "kind": "korn", "p": p}
    ests = {}
    for r in (res, 2 * res):
        est = korn_constant(build_grid(n, 1, r), p=p, n_starts=n_starts,
                            seed=cfg["seed"])
        ests[r] = est.value
        doc[f"res{r}"] = {"value": est.value, "method": est.method,
                          "certified_side": est.certified_side}
    doc["relative_change"] = abs(ests[2 * res] - ests[res]) / ests[res]
    return doc


def _run_rigidity(cfg: dict, out_dir: str) -> dict:
    rig = cfg["rigidity"]
    res = int(rig.get("res", 16))
    p = float(rig.get("p", 2.0))
    n = cfg["density"].n
    if n != 2:
        raise ConfigError("the rigidity diagnostics run on 2D densities")
    grid = build_grid(2, 1, res)
    fields = [two_rotation_field(grid, 0.0, th) for th in (0.4, 0.8, 1.2)]
    ratio = rigidity_ratio(grid, fields, p=p)
    doc = {"config_hash": cfg["config_hash"], "seed": cfg["seed"],
           "version": __version__, "kind": "rigidity",
           "ratio": {"value": ratio.value,
                     "certified_side": ratio.certified_side,
                     "samples": ratio.samples}}
    Xs = rig.get("X")
    if Xs:
        from .density import single_well
        samples = [_as_matrix(X, 2, "[rigidity].X") for X in Xs]
        zr = zhang_check(single_well(2, p=p), samples, C_est=ratio.value,
                         slack=float(rig.get("slack", 1.0)), res=res,
                         opts=cfg["opts"])
        doc["zhang"] = {"passed": zr.passed, "C_est": zr.C_est,
                        "slack": zr.slack,
                        "rows": [{"X": r.X.tolist(), "lhs": r.lhs,
                                  "rhs": r.rhs, "margin": r.margin}
                                 for r in zr.rows]}
    if "alpha" in rig:
        ge = garding_check(cfg["density"], grid, alpha=float(rig["alpha"]),
                           gamma=float(rig.get("gamma", 1.0)),
                           n_fields=int(rig.get("n_fields", 20)),
                           seed=cfg["seed"])
        doc["garding"] = {"alpha": ge.alpha, "gamma": ge.gamma,
                          "violations": ge.violations,
                          "worst_value": ge.worst_value,
                          "passed": ge.passed}
    return doc


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="gammacell", add_help=True,
                                     usage=argparse.SUPPRESS)
    parser.add_argument("subcommand", choices=sorted(list(_RUNNERS) +
                                                     ["korn", "rigidity",
                                                      "report"]))
    parser.add_argument("path", nargs="?", help="report path (report only)")
    parser.add_argument("--config")
    parser.add_argument("--out")
    parser.add_argument("--workers", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--plot", action="store_true")
    parser.add_argument("--dry-run", action="store_true")
    parser.add_argument("--cache")
    parser.add_argument("--format", choices=["csv", "json"], default="csv")
    parser.add_argument("--version", action="version", version=__version__)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1

    if args.subcommand == "report":
        return _report_command(args)

    if not args.config:
        sys.stderr.write(USAGE)
        sys.stderr.write("error: --config is required\n")
        return 1

    try:
        cfg = load_config(args.config, seed_override=args.seed)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return 1

    out_dir = args.out or cfg["out"]
    cache_dir = (args.cache or os.environ.get("GAMMACELL_CACHE")
                 or cfg["cache"])
    workers = args.workers if args.workers is not None else cfg["workers"]

    if args.dry_run:
        print(f"config {args.config} hash={cfg['config_hash']} "
              f"seed={cfg['seed']}")
        for job in _describe_jobs(args.subcommand, cfg):
            print(" ", job)
        return 0

    os.makedirs(out_dir, exist_ok=True)
    try:
        if args.subcommand == "korn":
            doc = _run_korn(cfg, out_dir)
            path = os.path.join(out_dir, "korn.json")
            with open(path, "w") as fh:
                json.dump(doc, fh, indent=1)
            print(f"wrote {path}")
            return 0
        if args.subcommand == "rigidity":
            doc = _run_rigidity(cfg, out_dir)
            path = os.path.join(out_dir, "rigidity.json")
            with open(path, "w") as fh:
                json.dump(doc, fh, indent=1)
            print(f"wrote {path}")
            return 0

        plan = build_plan(cfg, cache_dir, workers)
        report = _RUNNERS[args.subcommand](plan)
    except (ConfigError, ValueError) as exc:
        sys.stderr.write(f"validation error: {exc}\n")
        return 1
    except Exception as exc:  # compute failure
        sys.stderr.write(f"compute failure: {type(exc).__name__}: {exc}\n")
        return 2

    try:
        for fmt in cfg["formats"]:
            path = os.path.join(out_dir, f"{args.subcommand}.{fmt}")
            xp.write_report(report, fmt, path)
            print(f"wrote {path}")
        if args.plot:
            quantity, kw = _PLOT_QUANTITY[args.subcommand]
            if quantity is None:
                kinds = {r.kind for r in report.rows}
                quantity = kinds.pop() if len(kinds) == 1 else None
            if quantity is not None:
                path = os.path.join(out_dir, f"{args.subcommand}.svg")
                xp.plot(report, quantity, path, **kw)
                print(f"wrote {path}")
    except OSError as exc:
        sys.stderr.write(f"cannot write report: {exc}\n")
        return 2
    return 0


def _report_command(args) -> int:
    if not args.path:
        sys.stderr.write(USAGE)
        sys.stderr.write("error: report needs a JSON report path\n")
        return 1
    try:
        report = xp.read_report(args.path)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        sys.stderr.write(f"cannot read report: {exc}\n")
        return 1
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    base = os.path.splitext(os.path.basename(args.path))[0]
    path = os.path.join(out_dir, f"{base}.{args.format}")
    xp.write_report(report, args.format, path)
    print(f"wrote {path}")
    if args.plot:
        kinds = {r.kind for r in report.rows}
        quantity = "rel_err" if "commutability" in report.metadata else \
            (sorted(kinds)[0] if kinds else None)
        if quantity:
            spath = os.path.join(out_dir, f"{base}.svg")
            xp.plot(report, quantity, spath)
            print(f"wrote {spath}")
    return 0


def entry():
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entry()
