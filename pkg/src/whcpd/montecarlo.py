"""Monte Carlo evaluation of the estimators against the Cramér-Rao bound.

Each trial draws one unit-variance symmetric noise tensor and reuses it,
rescaled, at every grid point (common random numbers). The grid is in
``1/sigma^2`` dB, so ``sigma^2 = 10**(-snr_db/10)`` regardless of the signal
power.

Seeding: the noise of trial ``t`` comes from ``SeedSequence([seed, 0, t])``;
the random starts of estimator ``e`` at grid point ``s`` of trial ``t`` come
from ``SeedSequence([seed, 1, t, s, e])``.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ._accel import backend_name
from .crb import crb_matrix, sigma2_from_db
from .estimators import METHODS, CalsOptions, estimate
from .multilinear import multiset_domain, scatter_symmetric
from .whmodel import WhParams, check_identifiability, volterra_kernel

log = logging.getLogger(__name__)

CSV_FIELDS = ("estimator", "snr_db", "mse_db", "n_failed", "crb_db")
PLOT_FIELDS = ("snr_db", "series", "value_db")


def to_db(x):
    x = float(x)
    if np.isnan(x):
        return float("nan")
    return float(10.0 * np.log10(x)) if x > 0 else float("-inf")


def draw_noise(M, p, seed):
    """Symmetric tensor with i.i.d. N(0, 1) entries on the non-redundant domain."""
    D = multiset_domain(M, p)
    rng = np.random.default_rng(seed)
    return scatter_symmetric(rng.standard_normal(D.size), D)


@dataclass(frozen=True)
class EstimatorSpec:
    method: str
    n_starts: int = 10

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown estimator {self.method!r}; expected one of {METHODS}")
        if int(self.n_starts) < 1:
            raise ValueError("n_starts must be at least 1")

    @property
    def label(self):
        if self.method == "n_cals":
            return f"{self.n_starts}-CALS"
        return self.method.upper().replace("_", "-")

    @classmethod
    def parse(cls, obj):
        """Build from ``"cptoep"``, ``"10-cals"`` or ``{"name": ..., "options": {...}}``."""
        if isinstance(obj, cls):
            return obj
        if isinstance(obj, str):
            name = obj.strip().lower()
            if name.endswith("-cals") and name[:-5].isdigit():
                return cls("n_cals", int(name[:-5]))
            return cls(name.replace("-", "_"))
        options = dict(obj.get("options") or {})
        return cls(obj["name"], **options)


@dataclass
class McConfig:
    params: WhParams
    snr_db_grid: list = field(default_factory=lambda: [10.0, 20.0, 30.0, 40.0, 50.0, 60.0])
    n_trials: int = 100
    estimators: list = field(default_factory=list)
    master_seed: int = 0
    cals_opts: CalsOptions = field(default_factory=CalsOptions)
    include_failures_as_is: bool = False

    def __post_init__(self):
        self.estimators = [EstimatorSpec.parse(e) for e in self.estimators]
        self.snr_db_grid = [float(s) for s in self.snr_db_grid]
        if int(self.n_trials) < 1:
            raise ValueError("n_trials must be at least 1")
        if not self.snr_db_grid:
            raise ValueError("the SNR grid is empty")
        labels = [e.label for e in self.estimators]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate estimators: {labels}")


@dataclass
class TrialRecord:
    trial: int
    snr_db: float
    estimator: str
    eps: float
    status: str
    reason: str | None


@dataclass
class Cell:
    estimator: str
    snr_db: float
    mse: float
    mse_db: float
    n_failed: int
    n_used: int


@dataclass
class McReport:
    estimators: list
    snr_db_grid: list
    crb_db: dict
    cells: list
    records: list
    n_trials: int
    master_seed: int
    partial: bool = False
    backend: str = field(default_factory=backend_name)

    def cell(self, estimator, snr_db):
        for c in self.cells:
            if c.estimator == estimator and c.snr_db == float(snr_db):
                return c
        raise KeyError((estimator, snr_db))

    def row(self, estimator):
        return [self.cell(estimator, s).mse_db for s in self.snr_db_grid]

    def crb_row(self):
        return [self.crb_db[s] for s in self.snr_db_grid]

    def to_dict(self):
        return {
            "estimators": list(self.estimators),
            "snr_db_grid": list(self.snr_db_grid),
            "crb_db": [{"snr_db": s, "crb_db": v} for s, v in self.crb_db.items()],
            "cells": [asdict(c) for c in self.cells],
            "records": [asdict(r) for r in self.records],
            "n_trials": self.n_trials,
            "master_seed": self.master_seed,
            "partial": self.partial,
            "backend": self.backend,
        }


def _aggregate(cfg, records, crb_db, n_done, partial):
    labels = [e.label for e in cfg.estimators]
    cells = []
    for label in labels:
        for s in cfg.snr_db_grid:
            recs = [r for r in records if r.estimator == label and r.snr_db == s]
            failed = [r for r in recs if r.status == "failed"]
            if cfg.include_failures_as_is:
                used = [r.eps for r in recs if np.isfinite(r.eps)]
            else:
                used = [r.eps for r in recs if r.status != "failed" and np.isfinite(r.eps)]
            mse = float(np.mean(used)) if used else float("nan")
            cells.append(Cell(label, float(s), mse, to_db(mse), len(failed), len(used)))
    return McReport(labels, list(cfg.snr_db_grid), crb_db, cells, records, n_done,
                    cfg.master_seed, partial)


def run_sweep(cfg, progress=None):
    """Run all trials and return the aggregated report.

    An interrupt (``KeyboardInterrupt``) stops the sweep after the last
    complete trial and returns a report marked ``partial``.
    """
    params = cfg.params.require_canonical()
    ident = check_identifiability(params)
    if not ident.ok:
        raise ValueError(f"truth parameters are not identifiable: {ident.explanation}")
    M, p = params.M, params.p
    X = volterra_kernel(params)
    eta = params.eta
    crb_db = {s: float(crb_matrix(params, float(sigma2_from_db(s))).trace_db)
              for s in cfg.snr_db_grid}
    records = []
    n_done = 0
    partial = False
    try:
        for t in range(cfg.n_trials):
            noise = draw_noise(M, p, np.random.SeedSequence([cfg.master_seed, 0, t]))
            trial = []
            for si, s in enumerate(cfg.snr_db_grid):
                Y = X + np.sqrt(sigma2_from_db(s)) * noise
                for ei, spec in enumerate(cfg.estimators):
                    seed = np.random.SeedSequence([cfg.master_seed, 1, t, si, ei])
                    res = estimate(Y, spec.method, params.L_w, params.R, seed,
                                   cfg.cals_opts, spec.n_starts)
                    eps = float(np.sum((res.eta_hat - eta) ** 2))
                    trial.append(TrialRecord(t, s, spec.label, eps, res.status, res.reason))
            records.extend(trial)
            n_done += 1
            if progress is not None:
                progress(n_done, cfg.n_trials)
    except KeyboardInterrupt:
        log.warning("interrupted after %d of %d trials", n_done, cfg.n_trials)
        partial = True
    return _aggregate(cfg, records, crb_db, n_done, partial)


def _fmt_db(x):
    return f"{x:.2f}"


def _num(x):
    return repr(float(x))


def format_table(report):
    """Render the report as ``(table_text, csv_text)``.

    The table has one row per estimator plus the bound, one column per grid
    point, dB values to two decimals. The CSV holds full-precision values
    with columns ``estimator, snr_db, mse_db, n_failed, crb_db``; the bound
    appears as estimator ``CRB``.
    """
    grid = report.snr_db_grid
    names = list(report.estimators) + ["CRB"]
    width = max(len(n) for n in names + ["Estimator"])
    head = f"{'Estimator':>{width}} | " + " ".join(f"{s:>8g}" for s in grid)
    lines = [head, "-" * len(head)]
    for name in report.estimators:
        lines.append(f"{name:>{width}} | " + " ".join(f"{_fmt_db(v):>8}" for v in report.row(name)))
    lines.append("-" * len(head))
    lines.append(f"{'CRB':>{width}} | " + " ".join(f"{_fmt_db(v):>8}" for v in report.crb_row()))
    if report.partial:
        lines.append(f"(partial: {report.n_trials} trials completed)")
    text = "\n".join(lines) + "\n"

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for c in report.cells:
        writer.writerow([c.estimator, _num(c.snr_db), _num(c.mse_db), c.n_failed,
                         _num(report.crb_db[c.snr_db])])
    for s in grid:
        writer.writerow(["CRB", _num(s), _num(report.crb_db[s]), 0, _num(report.crb_db[s])])
    return text, buf.getvalue()


def parse_csv(text):
    """Inverse of the CSV half of :func:`format_table`: rows as typed dicts."""
    rows = []
    for row in csv.DictReader(io.StringIO(text)):
        rows.append({
            "estimator": row["estimator"],
            "snr_db": float(row["snr_db"]),
            "mse_db": float(row["mse_db"]),
            "n_failed": int(row["n_failed"]),
            "crb_db": float(row["crb_db"]),
        })
    return rows


def plot_csv(report):
    """Long-format CSV ``snr_db, series, value_db`` for external plotting."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PLOT_FIELDS)
    for name in report.estimators:
        for s, v in zip(report.snr_db_grid, report.row(name)):
            writer.writerow([_num(s), name, _num(v)])
    for s, v in zip(report.snr_db_grid, report.crb_row()):
        writer.writerow([_num(s), "CRB", _num(v)])
    return buf.getvalue()
