"""Command-line interface: ``whcpd {synth,crb,estimate,mc}``.

Exit codes: 0 success, 1 configuration or model error, 2 I/O error,
3 numerical failure, 130 interrupted (partial results written).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_config
from .crb import SingularFIMError, crb_matrix, sigma2_from_db
from .estimators import METHODS, estimate
from .montecarlo import draw_noise, format_table, plot_csv, run_sweep
from .multilinear import multiset_domain, scatter_symmetric, select_nonredundant
from .whmodel import WhParams, canonicalize, check_identifiability, volterra_kernel

log = logging.getLogger("whcpd")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_NUMERIC = 3
EXIT_INTERRUPTED = 130

KERNEL_ORDER = "lexicographic-multiset"


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _load(args):
    try:
        cfg = load_config(args.config)
    except OSError as exc:
        raise CliError(f"cannot read config: {exc}", EXIT_IO) from exc
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "trials", None) is not None:
        cfg.trials = args.trials
    if getattr(args, "out", None) is not None:
        cfg.out_dir = args.out
    if getattr(args, "format", None) is not None:
        cfg.formats = [args.format]
    return cfg


def _canonical_params(cfg):
    params = cfg.params()
    if not params.is_canonical:
        c = canonicalize(params.w, params.h, params.g_p, params.p)
        raise CliError(
            f"{cfg.source}: model must satisfy w[0] = g_p = 1; the equivalent canonical model "
            f"is w = {c.w.tolist()}, h = {c.h.tolist()}, g_p = 1",
            EXIT_CONFIG,
        )
    ident = check_identifiability(params)
    if not ident.ok:
        raise CliError(f"{cfg.source}: model not identifiable: {ident.explanation}", EXIT_CONFIG)
    return params


def _write(path, text):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from exc


def _dump_json(obj):
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


# -- kernel container ---------------------------------------------------------

def kernel_container(X, params=None):
    M, p = X.shape[0], X.ndim
    D = multiset_domain(M, p)
    out = {
        "M": M,
        "p": p,
        "order": KERNEL_ORDER,
        "values": [float(v) for v in select_nonredundant(X, D)],
    }
    if params is not None:
        out["model"] = {"w": params.w.tolist(), "h": params.h.tolist(),
                        "g_p": params.g_p, "p": params.p}
    return out


def read_kernel(path):
    """Load a kernel container; returns ``(X, model_dict_or_None)``."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(f"cannot read kernel file: {exc}", EXIT_IO) from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON: {exc}", EXIT_CONFIG) from exc
    try:
        M, p, order, values = int(data["M"]), int(data["p"]), data["order"], data["values"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"{path}: malformed kernel container: {exc!r}", EXIT_CONFIG) from exc
    if order != KERNEL_ORDER:
        raise CliError(f"{path}: order: unsupported ordering {order!r}", EXIT_CONFIG)
    D = multiset_domain(M, p)
    if len(values) != D.size:
        raise CliError(f"{path}: values: expected {D.size} entries, got {len(values)}", EXIT_CONFIG)
    return scatter_symmetric(np.asarray(values, dtype=float), D), data.get("model")


# -- commands -------------------------------------------------------------

def cmd_synth(args):
    cfg = _load(args)
    params = cfg.params()
    X = volterra_kernel(params)
    path = Path(args.kernel) if args.kernel else Path(cfg.out_dir) / "kernel.json"
    _write(path, _dump_json(kernel_container(X, params)))
    print(path)
    return EXIT_OK


def crb_rows(params, grid):
    rows = []
    for s in grid:
        rep = crb_matrix(params, float(sigma2_from_db(s)))
        rows.append({"snr_db": float(s), "trace": rep.trace, "trace_db": rep.trace_db,
                     "per_param": [float(v) for v in rep.per_param]})
    return rows


def cmd_crb(args):
    cfg = _load(args)
    params = _canonical_params(cfg)
    try:
        rows = crb_rows(params, cfg.snr_db)
    except (SingularFIMError, np.linalg.LinAlgError) as exc:
        raise CliError(str(exc), EXIT_NUMERIC) from exc
    names = [f"w{k}" for k in range(1, params.L_w)] + [f"h{r}" for r in range(params.R)]
    fmt = args.format or "table"
    if fmt == "json":
        text = _dump_json({"parameters": names, "rows": rows})
    elif fmt == "csv":
        lines = [",".join(["snr_db", "trace_db"] + [f"crb_{n}" for n in names])]
        for r in rows:
            lines.append(",".join(repr(v) for v in [r["snr_db"], r["trace_db"], *r["per_param"]]))
        text = "\n".join(lines) + "\n"
    else:
        head = f"{'1/sigma2 (dB)':>13} {'trace (dB)':>10} " + " ".join(f"{n:>10}" for n in names)
        lines = [head]
        for r in rows:
            lines.append(f"{r['snr_db']:>13g} {r['trace_db']:>10.2f} "
                         + " ".join(f"{v:>10.3e}" for v in r["per_param"]))
        text = "\n".join(lines) + "\n"
    if args.out:
        suffix = "txt" if fmt == "table" else fmt
        _write(Path(args.out) / f"crb.{suffix}", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_estimate(args):
    truth = None
    if args.kernel:
        Y, model = read_kernel(args.kernel)
        if model is not None:
            truth = WhParams(model["w"], model["h"], model.get("g_p", 1.0), model.get("p", Y.ndim))
            L_w, R = truth.L_w, truth.R
        if args.lw is not None:
            L_w = args.lw
            R = Y.shape[0] - L_w + 1
        elif model is None:
            raise CliError("--lw is required when the kernel file carries no model", EXIT_CONFIG)
    elif args.config:
        cfg = _load(args)
        truth = cfg.params()
        Y = volterra_kernel(truth)
        if args.snr_db is not None:
            noise = draw_noise(truth.M, truth.p, np.random.SeedSequence([cfg.seed, 0, 0]))
            Y = Y + np.sqrt(sigma2_from_db(args.snr_db)) * noise
        L_w, R = truth.L_w, truth.R
    else:
        raise CliError("one of --kernel or --config is required", EXIT_CONFIG)
    if truth is not None and not truth.is_canonical:
        truth = canonicalize(truth.w, truth.h, truth.g_p, truth.p)
    if R < 1 or L_w < 1:
        raise CliError(f"invalid filter lengths L_w={L_w}, R={R}", EXIT_CONFIG)
    seed = args.seed if args.seed is not None else 0
    try:
        res = estimate(Y, args.method, L_w, R, seed=seed, n_starts=args.starts)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    out = {"method": args.method, "L_w": L_w, "R": R, **res.to_dict()}
    if truth is not None and not res.failed:
        out["eps_eta"] = float(np.sum((res.eta_hat - truth.eta) ** 2))
    text = _dump_json(out)
    if args.out:
        _write(Path(args.out) / "estimate.json", text)
    sys.stdout.write(text)
    if res.failed:
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_mc(args):
    cfg = _load(args)
    _canonical_params(cfg)
    mc_cfg = cfg.mc_config()

    def progress(done, total):
        log.info("trial %d/%d", done, total)

    report = run_sweep(mc_cfg, progress)
    table, csv_text = format_table(report)
    out = Path(cfg.out_dir)
    if "table" in cfg.formats:
        _write(out / "table.txt", table)
    if "csv" in cfg.formats:
        _write(out / "results.csv", csv_text)
        _write(out / "plot.csv", plot_csv(report))
    if "json" in cfg.formats:
        _write(out / "report.json", _dump_json(report.to_dict()))
    sys.stdout.write(table)
    if report.partial:
        return EXIT_INTERRUPTED
    if any(c.n_used == 0 for c in report.cells):
        log.error("some cells have no successful runs")
        return EXIT_NUMERIC
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="whcpd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="TOML run configuration")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="overrides experiment.seed")
        p.add_argument("--trials", type=int, help="overrides experiment.trials")
        p.add_argument("--format", choices=["csv", "json", "table"])

    p = sub.add_parser("synth", help="write the noiseless kernel of the configured model")
    common(p)
    p.add_argument("--kernel", help="output file (default: <out>/kernel.json)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("crb", help="tabulate the Cramér-Rao bound over the SNR grid")
    common(p)
    p.set_defaults(func=cmd_crb)

    p = sub.add_parser("estimate", help="estimate the model from a kernel file or a config")
    common(p, config_required=False)
    p.add_argument("--kernel", help="kernel container written by 'synth'")
    p.add_argument("--method", choices=METHODS, default="cptoep_qn")
    p.add_argument("--starts", type=int, default=10, help="random starts for n_cals")
    p.add_argument("--lw", type=int, help="input filter length (if not in the kernel file)")
    p.add_argument("--snr-db", type=float, help="add noise at this 1/sigma^2 (config mode)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("mc", help="run the Monte Carlo sweep")
    common(p)
    p.set_defaults(func=cmd_mc)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"whcpd: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
