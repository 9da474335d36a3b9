"""Experiment harness: commutability sweeps, equivalence profiles, diagonal
sequences, and report/plot emission.

Reports are flat row tables with a fixed schema plus free-form metadata.
CSV columns are exactly

    experiment,X,delta,k,res,kind,value,converged,wall_time_s,seed

with X flattened row-major and semicolon-joined (empty when a row has no
matrix). Two columns are overloaded by row kind and documented here: for
``equivalence_metric`` rows the k column carries the half-width T of the
x-average, and for ``addition_trick`` rows the delta column carries the
regularization weight lambda. JSON mirrors the rows and adds the metadata;
floats are written in shortest round-trip form, so re-reading a report
reproduces every value bit-identically.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import cell as cellmod
from . import density as dens
from .density import DensitySpec, derive_linearization, equivalence_metric, linearize
from .envelope import laminate as laminate_fn
from .envelope import qc_cell
from .minimize import SolveOptions

ROW_KINDS = ("w_hom_delta", "v_hom", "equivalence_metric", "addition_trick",
             "qc_bound")
CSV_COLUMNS = ("experiment", "X", "delta", "k", "res", "kind", "value",
               "converged", "wall_time_s", "seed")

REL_ERR_GUARD = 1e-12


@dataclass
class SweepRow:
    experiment: str
    X: Optional[tuple]  # flattened row-major matrix entries, or None
    delta: float
    k: int
    res: int
    kind: str
    value: float
    converged: bool
    wall_time_s: float
    seed: int

    def __post_init__(self):
        if self.kind not in ROW_KINDS:
            raise ValueError(f"unknown row kind {self.kind!r}")


@dataclass
class SweepReport:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def append(self, row: SweepRow):
        self.rows.append(row)

    def values(self, kind: Optional[str] = None,
               experiment: Optional[str] = None) -> list:
        out = []
        for r in self.rows:
            if kind is not None and r.kind != kind:
                continue
            if experiment is not None and r.experiment != experiment:
                continue
            out.append(r)
        return out


@dataclass
class ExperimentPlan:
    """Resolved configuration consumed by the run_* entry points."""

    density: DensitySpec
    linearization: Optional[DensitySpec] = None
    Xs: tuple = ()
    k_schedule: tuple = (1, 2, 4)
    res: int = 16
    deltas: tuple = (0.4, 0.2, 0.1, 0.05)
    Ts: tuple = (1, 2, 4)
    R: float = 1.0
    slack: float = 0.1
    nx: int = 2
    nX: int = 5
    diagonal: tuple = ()          # ((k, delta), ...)
    lambdas: tuple = ()
    qc_res: int = 64
    laminate_depth: int = 0
    symmetrized: bool = False
    opts: SolveOptions = field(default_factory=SolveOptions)
    seed: int = 0
    cache_dir: Optional[str] = None
    workers: int = 1
    config_hash: str = ""

    def __post_init__(self):
        self.Xs = tuple(tuple(map(tuple, np.asarray(X, dtype=float)
                                  .reshape(self.density.n, self.density.n)))
                        for X in self.Xs)

    def base_metadata(self) -> dict:
        from ._kernels import BACKEND
        return {"config_hash": self.config_hash, "version": __version__,
                "seed": self.seed, "backend": BACKEND}


def _pmap(fn, items, workers: int):
    """Order-preserving map, threaded when workers > 1."""
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _flat(X) -> tuple:
    return tuple(float(v) for v in np.asarray(X, dtype=float).ravel())


def _hom_rows(report: SweepReport, experiment: str, est, kind: str,
              delta: float, res: int, seed: int):
    for r in est.results:
        report.append(SweepRow(
            experiment=experiment, X=_flat(r.job.X_array()), delta=delta,
            k=r.job.k, res=res, kind=kind, value=r.m_value,
            converged=r.solve.converged, wall_time_s=r.wall_time, seed=seed))


def rel_err(a: float, b: float) -> float:
    """|a - b| / (|b| + guard); never divides by less than the guard."""
    return abs(a - b) / (abs(b) + REL_ERR_GUARD)


def _nonincreasing(seq: Sequence[float], slack: float) -> bool:
    return all(b <= a * (1.0 + slack) + REL_ERR_GUARD
               for a, b in zip(seq, seq[1:]))


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def run_commutability(plan: ExperimentPlan) -> SweepReport:
    """Homogenize-then-linearize versus linearize-then-homogenize.

    Per X: the reference v_hom estimate of the linearized family, the
    rescaled w_hom_delta estimate per delta, and the profile
    rel_err(delta) = |w - v| / (|v| + guard), flagged nonincreasing within
    the configured slack.
    """
    W = plan.density
    V = plan.linearization or derive_linearization(W)
    report = SweepReport(metadata=plan.base_metadata())
    profiles = {}

    def one_x(idx_X):
        idx, X = idx_X
        exp = f"commute[X{idx}]"
        v = cellmod.v_hom_estimate(V, X, plan.k_schedule, plan.res,
                                   opts=plan.opts, cache_dir=plan.cache_dir)
        ws = _pmap(lambda d: cellmod.w_hom_delta(
            W, X, d, plan.k_schedule, plan.res, opts=plan.opts,
            cache_dir=plan.cache_dir), list(plan.deltas), plan.workers)
        return exp, X, v, ws

    # serial over X; the per-delta estimates inside already fan out
    outputs = [one_x(item) for item in enumerate(plan.Xs)]
    for exp, X, v, ws in outputs:
        _hom_rows(report, exp, v, "v_hom", 0.0, plan.res, plan.seed)
        errs = []
        for d, w in zip(plan.deltas, ws):
            _hom_rows(report, exp, w, "w_hom_delta", d, plan.res, plan.seed)
            errs.append(rel_err(w.estimate, v.estimate))
        profiles[exp] = {
            "X": list(_flat(X)),
            "deltas": list(plan.deltas),
            "rel_err": errs,
            "v_ref": v.estimate,
            "monotone_ok": _nonincreasing(errs, plan.slack),
        }
    report.metadata["commutability"] = profiles
    return report


def run_equivalence_profile(plan: ExperimentPlan) -> SweepReport:
    """Sampled density-equivalence profile of the rescaled family vs its
    linearization, per (delta, T), restricted to symmetric matrix arguments.

    The k column of the emitted rows carries T. Flags whether the T-max of
    the metric decreases along the delta schedule within the slack.
    """
    W = plan.density
    V = plan.linearization or derive_linearization(W)
    if not W.is_well_kind:
        raise ValueError("equivalence profile needs a nonlinear wells family")
    report = SweepReport(metadata=plan.base_metadata())

    def one(dT):
        d, T = dT
        t0 = time.perf_counter()

        def lin(x, X):
            return linearize(W, x, X, delta=d)

        m = equivalence_metric(lin, V, R=plan.R, T=float(T), nx=plan.nx,
                               nX=plan.nX, sym_only=True)
        return m, time.perf_counter() - t0

    pairs = [(d, T) for d in plan.deltas for T in plan.Ts]
    results = _pmap(one, pairs, plan.workers)
    tmax = {}
    for (d, T), (m, dt) in zip(pairs, results):
        report.append(SweepRow(
            experiment="equiv", X=None, delta=d, k=int(T), res=plan.res,
            kind="equivalence_metric", value=m, converged=True,
            wall_time_s=dt, seed=plan.seed))
        tmax[d] = max(tmax.get(d, 0.0), m)
    profile = [tmax[d] for d in plan.deltas]
    report.metadata["equivalence"] = {
        "deltas": list(plan.deltas), "Ts": list(plan.Ts),
        "t_max": profile,
        "monotone_ok": _nonincreasing(profile, plan.slack),
    }
    return report


def run_diagonal(plan: ExperimentPlan) -> SweepReport:
    """Simultaneous limit along a joint (k, delta) schedule against the
    large-cell linearized reference."""
    if not plan.diagonal:
        raise ValueError("diagonal schedule is empty")
    ks = [int(k) for k, _ in plan.diagonal]
    deltas = [float(d) for _, d in plan.diagonal]
    if any(b < a for a, b in zip(ks, ks[1:])):
        raise ValueError("diagonal k values must be nondecreasing")
    if any(b > a for a, b in zip(deltas, deltas[1:])):
        raise ValueError("diagonal delta values must be nonincreasing")
    W = plan.density
    V = plan.linearization or derive_linearization(W)
    report = SweepReport(metadata=plan.base_metadata())
    diag_profiles = {}

    for idx, X in enumerate(plan.Xs):
        exp = f"diagonal[X{idx}]"
        v = cellmod.v_hom_estimate(V, X, (max(ks),), plan.res,
                                   opts=plan.opts, cache_dir=plan.cache_dir)
        _hom_rows(report, exp, v, "v_hom", 0.0, plan.res, plan.seed)

        # sequential: each point warm-starts from the tiled previous
        # minimizer when the cell sizes divide
        results = []
        for k, d in zip(ks, deltas):
            if d > 0.0:
                job = cellmod.CellJob(spec=W, X=X, k=k, res=plan.res,
                                      delta=d, opts=plan.opts)
            else:
                job = cellmod.CellJob(spec=W, X=X, k=k, res=plan.res,
                                      opts=plan.opts)
            warm = results[-1] if results and k % results[-1].job.k == 0 \
                else None
            results.append(cellmod.cell_energy(job, cache_dir=plan.cache_dir,
                                               warm=warm))
        for (k, d), r in zip(zip(ks, deltas), results):
            report.append(SweepRow(
                experiment=exp, X=_flat(X), delta=d, k=k, res=plan.res,
                kind="w_hom_delta", value=r.m_value,
                converged=r.solve.converged, wall_time_s=r.wall_time,
                seed=plan.seed))
        final = results[-1].m_value
        diag_profiles[exp] = {
            "X": list(_flat(X)),
            "values": [r.m_value for r in results],
            "v_ref": v.estimate,
            "final_rel_err": rel_err(final, v.estimate),
            "converged_ok": rel_err(final, v.estimate) <= plan.slack,
        }
    report.metadata["diagonal"] = diag_profiles
    return report


def run_addition(plan: ExperimentPlan) -> SweepReport:
    """Regularized sweep f + lambda |.|^p; the delta column carries lambda."""
    if not plan.lambdas:
        raise ValueError("lambda schedule is empty")
    report = SweepReport(metadata=plan.base_metadata())
    profiles = {}
    k = max(plan.k_schedule)
    for idx, X in enumerate(plan.Xs):
        exp = f"addition[X{idx}]"
        sweep = cellmod.addition_trick(plan.density, X, plan.lambdas, k,
                                       plan.res, opts=plan.opts,
                                       cache_dir=plan.cache_dir)
        for lam, m, r in sweep:
            report.append(SweepRow(
                experiment=exp, X=_flat(X), delta=lam, k=k, res=plan.res,
                kind="addition_trick", value=m,
                converged=r.solve.converged, wall_time_s=r.wall_time,
                seed=plan.seed))
        vals = [m for _, m, _ in sweep]
        profiles[exp] = {
            "X": list(_flat(X)), "lambdas": list(plan.lambdas),
            "values": vals,
            "monotone_ok": _nonincreasing(vals, plan.slack),
        }
    report.metadata["addition"] = profiles
    return report


def run_homog(plan: ExperimentPlan) -> SweepReport:
    """Plain homogenized-density estimates per X over the k schedule."""
    report = SweepReport(metadata=plan.base_metadata())
    estimates = {}
    sym = plan.density.is_linear_kind

    def one(idx_X):
        idx, X = idx_X
        if sym:
            return cellmod.v_hom_estimate(plan.density, X, plan.k_schedule,
                                          plan.res, opts=plan.opts,
                                          cache_dir=plan.cache_dir)
        return cellmod.f_hom_estimate(plan.density, X, plan.k_schedule,
                                      plan.res, opts=plan.opts,
                                      cache_dir=plan.cache_dir)

    results = _pmap(one, list(enumerate(plan.Xs)), plan.workers)
    for (idx, X), est in zip(enumerate(plan.Xs), results):
        exp = f"homog[X{idx}]"
        _hom_rows(report, exp, est, "v_hom" if sym else "w_hom_delta",
                  0.0, plan.res, plan.seed)
        estimates[exp] = {"X": list(_flat(X)), "ks": list(est.ks),
                          "values": list(est.values),
                          "estimate": est.estimate,
                          "monotone_ok": est.monotone_ok}
    report.metadata["homog"] = estimates
    return report


def run_cell(plan: ExperimentPlan) -> SweepReport:
    """Single cell problems per (X, k)."""
    report = SweepReport(metadata=plan.base_metadata())
    sym = plan.density.is_linear_kind
    for idx, X in enumerate(plan.Xs):
        for k in plan.k_schedule:
            job = cellmod.CellJob(spec=plan.density, X=X, k=k, res=plan.res,
                                  symmetrized=sym, opts=plan.opts)
            r = cellmod.cell_energy(job, cache_dir=plan.cache_dir)
            report.append(SweepRow(
                experiment=f"cell[X{idx}]", X=_flat(X), delta=0.0, k=k,
                res=plan.res, kind="v_hom" if sym else "w_hom_delta",
                value=r.m_value, converged=r.solve.converged,
                wall_time_s=r.wall_time, seed=plan.seed))
    return report


def run_envelope(plan: ExperimentPlan) -> SweepReport:
    """Quasiconvexity bounds per X: cell bound, optional laminate bound."""
    report = SweepReport(metadata=plan.base_metadata())
    for idx, X in enumerate(plan.Xs):
        t0 = time.perf_counter()
        q = qc_cell(plan.density, X, plan.qc_res, opts=plan.opts,
                    cache_dir=plan.cache_dir)
        report.append(SweepRow(
            experiment=f"qc[X{idx}]", X=_flat(X), delta=0.0, k=1,
            res=plan.qc_res, kind="qc_bound", value=q.value,
            converged=bool(q.meta.get("converged", True)),
            wall_time_s=time.perf_counter() - t0, seed=plan.seed))
        if plan.laminate_depth > 0:
            t0 = time.perf_counter()
            l = laminate_fn(plan.density, X, plan.laminate_depth)
            report.append(SweepRow(
                experiment=f"laminate[X{idx}]", X=_flat(X), delta=0.0, k=1,
                res=plan.qc_res, kind="qc_bound", value=l.value,
                converged=True, wall_time_s=time.perf_counter() - t0,
                seed=plan.seed))
    return report


# ---------------------------------------------------------------------------
# report I/O
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_report(report: SweepReport, fmt: str, path) -> None:
    """Emit a report as CSV (rows only) or JSON (rows plus metadata)."""
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in report.rows:
                xs = "" if r.X is None else ";".join(repr(float(v)) for v in r.X)
                w.writerow([r.experiment, xs, _fmt(r.delta), r.k, r.res,
                            r.kind, _fmt(r.value), r.converged,
                            _fmt(r.wall_time_s), r.seed])
    elif fmt == "json":
        doc = {"metadata": report.metadata,
               "rows": [asdict(r) for r in report.rows]}
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def read_report(path) -> SweepReport:
    """Round-trip loader for JSON reports."""
    with open(path) as fh:
        doc = json.load(fh)
    rows = [SweepRow(**{**r, "X": None if r["X"] is None else tuple(r["X"])})
            for r in doc["rows"]]
    return SweepReport(rows=rows, metadata=doc["metadata"])


def read_report_csv(path) -> SweepReport:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            X = tuple(float(v) for v in rec["X"].split(";")) if rec["X"] else None
            rows.append(SweepRow(
                experiment=rec["experiment"], X=X, delta=float(rec["delta"]),
                k=int(rec["k"]), res=int(rec["res"]), kind=rec["kind"],
                value=float(rec["value"]),
                converged=rec["converged"] == "True",
                wall_time_s=float(rec["wall_time_s"]), seed=int(rec["seed"])))
    return SweepReport(rows=rows, metadata={})


# ---------------------------------------------------------------------------
# SVG line plots (self-contained, no plotting dependency)
# ---------------------------------------------------------------------------

_SVG_W, _SVG_H = 640, 420
_MARGIN = 56
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo: float, hi: float, log: bool):
    if log:
        lo_e = math.floor(math.log10(lo))
        hi_e = math.ceil(math.log10(hi))
        return [10.0 ** e for e in range(lo_e, hi_e + 1)]
    span = hi - lo or 1.0
    step = 10.0 ** math.floor(math.log10(span / 4.0))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if span / (step * mult) <= 6:
            step *= mult
            break
    t0 = math.ceil(lo / step) * step
    out = []
    while t0 <= hi + 1e-12 * span:
        out.append(t0)
        t0 += step
    return out


def _svg_line_plot(series: dict, path, xlabel: str, ylabel: str,
                   logx: bool = False, logy: bool = False,
                   title: str = "") -> None:
    xs_all = [x for pts in series.values() for x, _ in pts]
    ys_all = [y for pts in series.values() for _, y in pts]
    if not xs_all:
        raise ValueError("nothing to plot")
    eps = 1e-300

    def tx(v):
        return math.log10(max(v, eps)) if logx else v

    def ty(v):
        return math.log10(max(v, eps)) if logy else v

    x_lo, x_hi = min(map(tx, xs_all)), max(map(tx, xs_all))
    y_lo, y_hi = min(map(ty, ys_all)), max(map(ty, ys_all))
    if x_hi - x_lo < 1e-12:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    if y_hi - y_lo < 1e-12:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pad_y = 0.06 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad_y, y_hi + pad_y

    def px(v):
        return _MARGIN + (tx(v) - x_lo) / (x_hi - x_lo) * (_SVG_W - 2 * _MARGIN)

    def py(v):
        return _SVG_H - _MARGIN - (ty(v) - y_lo) / (y_hi - y_lo) * (_SVG_H - 2 * _MARGIN)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" '
        f'height="{_SVG_H}" viewBox="0 0 {_SVG_W} {_SVG_H}">',
        f'<rect width="{_SVG_W}" height="{_SVG_H}" fill="white"/>',
        f'<rect x="{_MARGIN}" y="{_MARGIN}" width="{_SVG_W - 2 * _MARGIN}" '
        f'height="{_SVG_H - 2 * _MARGIN}" fill="none" stroke="#333"/>',
    ]
    if title:
        parts.append(f'<text x="{_SVG_W / 2}" y="24" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="14">{title}</text>')

    x_ticks = _ticks(10.0 ** x_lo if logx else x_lo,
                     10.0 ** x_hi if logx else x_hi, logx)
    y_ticks = _ticks(10.0 ** y_lo if logy else y_lo,
                     10.0 ** y_hi if logy else y_hi, logy)
    for t in x_ticks:
        if not (x_lo - 1e-9 <= tx(t) <= x_hi + 1e-9):
            continue
        X = px(t)
        parts.append(f'<line x1="{X:.1f}" y1="{_SVG_H - _MARGIN}" x2="{X:.1f}" '
                     f'y2="{_SVG_H - _MARGIN + 5}" stroke="#333"/>')
        parts.append(f'<text x="{X:.1f}" y="{_SVG_H - _MARGIN + 18}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="11">{t:g}</text>')
    for t in y_ticks:
        if not (y_lo - 1e-9 <= ty(t) <= y_hi + 1e-9):
            continue
        Y = py(t)
        parts.append(f'<line x1="{_MARGIN - 5}" y1="{Y:.1f}" x2="{_MARGIN}" '
                     f'y2="{Y:.1f}" stroke="#333"/>')
        parts.append(f'<text x="{_MARGIN - 8}" y="{Y + 4:.1f}" '
                     f'text-anchor="end" font-family="sans-serif" '
                     f'font-size="11">{t:g}</text>')
    parts.append(f'<text x="{_SVG_W / 2}" y="{_SVG_H - 12}" '
                 f'text-anchor="middle" font-family="sans-serif" '
                 f'font-size="12">{xlabel}</text>')
    parts.append(f'<text x="16" y="{_SVG_H / 2}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="12" '
                 f'transform="rotate(-90 16 {_SVG_H / 2})">{ylabel}</text>')

    for i, (label, pts) in enumerate(sorted(series.items())):
        color = _COLORS[i % len(_COLORS)]
        pts = sorted(pts)
        poly = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
        parts.append(f'<polyline points="{poly}" fill="none" '
                     f'stroke="{color}" stroke-width="1.6"/>')
        for x, y in pts:
            parts.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="2.6" '
                         f'fill="{color}"/>')
        parts.append(f'<text x="{_SVG_W - _MARGIN - 6}" '
                     f'y="{_MARGIN + 16 + 14 * i}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11" '
                     f'fill="{color}">{label}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))


def plot(report: SweepReport, quantity: str, path, logx: bool = False,
         logy: bool = False) -> None:
    """Line plot of a report quantity into a self-contained SVG.

    ``rel_err`` plots the commutability profiles versus delta; a row kind
    plots row values versus delta when it varies, else versus k.
    """
    if quantity == "rel_err":
        profiles = report.metadata.get("commutability", {})
        if not profiles:
            raise ValueError("report has no commutability profiles")
        series = {exp: list(zip(prof["deltas"], prof["rel_err"]))
                  for exp, prof in profiles.items()}
        _svg_line_plot(series, path, xlabel="delta", ylabel="rel_err",
                       logx=logx, logy=logy, title="commutability profile")
        return
    rows = report.values(kind=quantity)
    if not rows:
        raise ValueError(f"report has no rows of kind {quantity!r}")
    deltas = {r.delta for r in rows}
    use_delta = len(deltas) > 1
    series = {}
    for r in rows:
        xval = r.delta if use_delta else r.k
        series.setdefault(r.experiment, []).append((xval, r.value))
    _svg_line_plot(series, path, xlabel="delta" if use_delta else "k",
                   ylabel=quantity, logx=logx, logy=logy, title=quantity)
