"""Batch experiment runner: CDF validation, outage sweeps and SNIS parameter searches.

Every subcommand writes a table (CSV or JSON) that starts with a provenance header
(tool version, config digest, seed, arguments). Output is a pure function of the
arguments, so a fixed seed gives byte-identical files.

Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 every requested point infeasible.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import (Geometry, SystemConfig, config_digest, derive_gains, load_config,
                     section5_config, section5_geometry, varrho)
from .errors import BdRisError, InvalidParameterError
from .montecarlo import validate
from .snis import SamplerSettings, SnisProblem, snis_solve
from .statistics import (ParameterMapping, calibrate_hop_gain_db, comm_op_asymptotic,
                         comm_sinr_cdf, radar_op_asymptotic, radar_snr_cdf)

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_INFEASIBLE = 0, 1, 2, 3

DEFAULT_POWERS = (10.0, 15.0, 20.0)
DEFAULT_TARGETS = (1e-3, 3e-3, 1e-2, 3e-2, 1e-1)
ASYMPTOTIC_REGION = 1e-3


class UsageError(Exception):
    pass


# -- helpers ---------------------------------------------------------------------

def _floats(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    return vals


def _ints(text: str) -> list[int]:
    vals = _floats(text)
    if any(v != int(v) for v in vals):
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    return [int(v) for v in vals]


def _nonempty(name, grid):
    if not grid:
        raise UsageError(f"grid {name} is empty")
    return sorted(set(grid))


def _load(args) -> tuple[SystemConfig, Geometry]:
    """Config from --config (or the urban-micro defaults) with the hop gain resolved."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if args.config:
            cfg, geom = load_config(args.config)
        else:
            cfg, geom = section5_config(), None
        if geom is None:
            geom = section5_geometry(cfg.K, seed=args.seed)
        hop = args.hop_gain_db
        if hop is None:
            hop = "auto" if not args.config else cfg.hop_gain_db
        if hop == "auto":
            hop = calibrate_hop_gain_db(cfg, geom)
        cfg = cfg.with_(hop_gain_db=float(hop))
    return cfg, geom


def _hop(text):
    if text == "auto":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("hop gain must be a number of dB or 'auto'")


def _provenance(args, cfg, geom) -> dict:
    return {
        "tool": "bdris-isac",
        "version": __version__,
        "command": args.command,
        "config_digest": config_digest(cfg, geom),
        "seed": args.seed,
        "hop_gain_db": cfg.hop_gain_db,
        "args": {k: v for k, v in sorted(vars(args).items())
                 if k not in ("func", "out", "samples_out") and v is not None},
    }


def _render(fmt: str, prov: dict, rows: list[dict], extra: dict | None = None) -> str:
    if fmt == "json":
        doc = {"provenance": prov, "rows": rows}
        if extra:
            doc.update(extra)
        return json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n"
    buf = io.StringIO()
    buf.write(f"# provenance: {json.dumps(prov, sort_keys=True, default=_jsonable)}\n")
    for key, val in sorted((extra or {}).items()):
        buf.write(f"# {key}: {json.dumps(val, sort_keys=True, default=_jsonable)}\n")
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _write(args, text: str, path=None) -> None:
    path = path or args.out
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    Path(path).write_text(text)


def _pmap(fn, items, workers):
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def loglog_slope(x, y) -> float | None:
    """Least-squares slope of log10 y against log10 x (None with fewer than two points)."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.size < 2:
        return None
    return float(np.polyfit(np.log10(x), np.log10(y), 1)[0])


# -- validate-cdf ----------------------------------------------------------------

def cmd_validate_cdf(args) -> int:
    cfg, geom = _load(args)
    grid_n = _nonempty("--grid-n", args.grid_n)
    powers = _nonempty("--grid-power", args.grid_power)
    points = [(n, p) for n in grid_n for p in powers]

    def run(pt):
        n, p = pt
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            c = cfg.with_(N=n, p_c_dbm=(p,) * cfg.K)
        rep = validate(c, geom, args.trials, args.seed, workers=1)
        row = {"M": c.M, "K": c.K, "N": n, "p_c_dbm": p, "p_r_dbm": c.p_r_dbm, "trials": rep.trials,
               "op_r_sim": rep.op_r, "op_r_se": rep.op_r_se, "op_r_analytic": rep.op_r_analytic,
               "ks_radar": rep.ks_radar}
        for k in range(c.K):
            row[f"op_c{k + 1}_sim"] = rep.op_c[k]
            row[f"op_c{k + 1}_se"] = rep.op_c_se[k]
            row[f"op_c{k + 1}_analytic"] = rep.op_c_analytic[k]
            row[f"ks_comm{k + 1}"] = rep.ks_comm[k]
        return row

    rows = _pmap(run, points, args.workers)
    rows.sort(key=lambda r: (r["N"], r["p_c_dbm"]))
    _write(args, _render(args.format, _provenance(args, cfg, geom), rows))
    return EXIT_OK


# -- outage-sweep ----------------------------------------------------------------

def outage_sweep(cfg: SystemConfig, geom: Geometry, grid_n, powers):
    """Analytic OP rows and asymptotic slope diagnostics.

    Radar rows vary (N, P_r) with P_c from the config; comm rows vary (N, P_c) with
    P_r from the config.
    """
    M, K = cfg.M, cfg.K
    rows = []
    base = derive_gains(cfg, geom)
    for p in powers:
        p_r_w = 10.0 ** ((p - 30.0) / 10.0)
        gbar_rt = base.gbar_rt * p_r_w / base.p_r_w
        for n in grid_n:
            rows.append({"metric": "radar", "N": n, "power_dbm": p,
                         "op": float(radar_snr_cdf(cfg.gamma_r_th, M, n, gbar_rt)),
                         "op_asymptotic": float(radar_op_asymptotic(cfg.gamma_r_th, M, n, gbar_rt))})
        sir = 10.0 ** ((p - cfg.p_r_dbm) / 10.0)
        for n in grid_n:
            rho = varrho(M, K, n)
            rows.append({"metric": "comm", "N": n, "power_dbm": p,
                         "op": float(comm_sinr_cdf(cfg.gamma_c_th, M, K, sir, rho)),
                         "op_asymptotic": float(comm_op_asymptotic(cfg.gamma_c_th, M, K, rho, sir))})
    rows.sort(key=lambda r: (r["metric"], r["power_dbm"], r["N"]))

    diag = {"radar_n_slope": {}, "comm_power_slope": {}, "comm_saturation": {}}
    for p in powers:
        sel = [r for r in rows if r["metric"] == "radar" and r["power_dbm"] == p
               and r["op_asymptotic"] < ASYMPTOTIC_REGION and r["op"] > 0]
        diag["radar_n_slope"][str(p)] = loglog_slope([r["N"] for r in sel], [r["op"] for r in sel])
    for n in grid_n:
        sel = [r for r in rows if r["metric"] == "comm" and r["N"] == n
               and r["op_asymptotic"] < ASYMPTOTIC_REGION and r["op"] > 0]
        p_lin = [10.0 ** (r["power_dbm"] / 10.0) for r in sel]
        diag["comm_power_slope"][str(n)] = loglog_slope(p_lin, [r["op"] for r in sel])
    limit_rho = M / K
    for p in powers:
        sir = 10.0 ** ((p - cfg.p_r_dbm) / 10.0)
        lim = float(comm_sinr_cdf(cfg.gamma_c_th, M, K, sir, limit_rho))
        n_max = max(grid_n)
        op = float(comm_sinr_cdf(cfg.gamma_c_th, M, K, sir, varrho(M, K, n_max)))
        diag["comm_saturation"][str(p)] = {"N": n_max, "op": op, "limit": lim,
                                           "rel_gap": abs(op - lim) / lim if lim > 0 else None}
    return rows, diag


def cmd_outage_sweep(args) -> int:
    cfg, geom = _load(args)
    grid_n = _nonempty("--grid-n", args.grid_n)
    powers = _nonempty("--grid-power", args.grid_power)
    rows, diag = outage_sweep(cfg, geom, grid_n, powers)
    _write(args, _render(args.format, _provenance(args, cfg, geom), rows, {"diagnostics": diag}))
    return EXIT_OK


# -- SNIS ------------------------------------------------------------------------

def _settings(args) -> SamplerSettings:
    return SamplerSettings(sigma_err=args.sigma_err, n_mc=args.n_mc, n_trap=args.n_trap,
                           anneal=not args.no_anneal)


def run_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def _solution_row(mapping: ParameterMapping, sol) -> dict:
    row = {}
    for name, v in zip(mapping.names, sol.x_hat if sol.feasible else [np.nan] * mapping.L):
        row[name] = float(v)
    if "n_elements" in mapping.names:
        row["N"] = int(mapping.n_elements(row["n_elements"])) if sol.feasible else -1
    row["achieved"] = sol.achieved
    return row


def cmd_snis_estimate(args) -> int:
    cfg, geom = _load(args)
    targets = _nonempty("--grid-target", args.grid_target)
    if any(not 0 < t < 1 for t in targets):
        raise UsageError("targets must lie in (0, 1)")
    mapping = ParameterMapping(("p_r_dbm", "n_elements"), (args.bound_p_r, args.bound_n), cfg, geom)
    settings = _settings(args)
    jobs = [(i, t, r) for i, t in enumerate(targets) for r in range(args.runs)]

    def run(job):
        i, t, r = job
        sol = snis_solve(SnisProblem.from_mapping(mapping, t), settings, run_rng(args.seed, i, r))
        row = {"target": t, "run": r, "feasible": sol.feasible}
        row.update(_solution_row(mapping, sol))
        row["log10_error"] = float(abs(np.log10(sol.achieved) - np.log10(t))) if sol.feasible else float("nan")
        return row

    rows = _pmap(run, jobs, args.workers)
    rows.sort(key=lambda r: (r["target"], r["run"]))
    feas = [r for r in rows if r["feasible"]]
    summary = {
        "feasible_runs": len(feas), "total_runs": len(rows),
        "within_0.25_decades": (sum(r["log10_error"] <= 0.25 for r in feas) / len(feas)) if feas else None,
        "median_by_target": {
            str(t): {"p_r_dbm": float(np.median([r["p_r_dbm"] for r in feas if r["target"] == t])),
                     "N": float(np.median([r["N"] for r in feas if r["target"] == t]))}
            for t in targets if any(r["target"] == t for r in feas)},
    }
    _write(args, _render(args.format, _provenance(args, cfg, geom), rows, {"summary": summary}))
    return EXIT_OK if feas else EXIT_INFEASIBLE


HISTOGRAM_NAMES = ("p_r_dbm", "n_elements", "target_x", "target_y")


def histogram_tables(mapping: ParameterMapping, X: np.ndarray, bins: int) -> list[dict]:
    rows = []
    for j, name in enumerate(mapping.names):
        counts, edges = np.histogram(X[:, j], bins=bins, range=(0.0, mapping.bounds[j]))
        width = edges[1] - edges[0]
        for b in range(bins):
            rows.append({"coordinate": name, "bin": b, "lo": float(edges[b]), "hi": float(edges[b + 1]),
                         "count": int(counts[b]),
                         "density": float(counts[b] / (max(X.shape[0], 1) * width))})
    return rows


def cmd_snis_histogram(args) -> int:
    cfg, geom = _load(args)
    bounds = (args.bound_p_r, args.bound_n, args.bound_x, args.bound_y)
    mapping = ParameterMapping(HISTOGRAM_NAMES, bounds, cfg, geom)
    problem = SnisProblem.from_mapping(mapping, args.target)
    settings = _settings(args)

    def run(r):
        sol = snis_solve(problem, settings, run_rng(args.seed, r))
        row = {"run": r, "feasible": sol.feasible}
        row.update(_solution_row(mapping, sol))
        return row

    rows = sorted(_pmap(run, range(args.runs), args.workers), key=lambda r: r["run"])
    feas = [r for r in rows if r["feasible"]]
    X = np.array([[r[n] for n in HISTOGRAM_NAMES] for r in feas]).reshape(-1, len(HISTOGRAM_NAMES))
    hist = histogram_tables(mapping, X, args.bins)
    prov = _provenance(args, cfg, geom)
    summary = {"feasible_runs": len(feas), "total_runs": len(rows)}
    if args.format == "json":
        _write(args, _render("json", prov, rows, {"histograms": hist, "summary": summary}))
    else:
        _write(args, _render("csv", prov, rows, {"summary": summary}))
        hist_path = args.hist_out
        if hist_path is None and args.out not in (None, "-"):
            p = Path(args.out)
            hist_path = str(p.with_name(p.stem + "_hist" + p.suffix))
        if hist_path is not None:
            _write(args, _render("csv", prov, hist), hist_path)
    return EXIT_OK if feas else EXIT_INFEASIBLE


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bdris-isac", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML system configuration (default: urban-micro setup)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="-", help="output path, '-' for stdout")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--hop-gain-db", type=_hop, default=None,
                        help="per-hop gain in dB, or 'auto' to calibrate the radar operating point "
                             "(default: the config file's value, 'auto' without a config)")

    snis = argparse.ArgumentParser(add_help=False)
    snis.add_argument("--n-mc", type=int, default=100_000)
    snis.add_argument("--n-trap", type=int, default=100)
    snis.add_argument("--sigma-err", type=float, default=1e-4)
    snis.add_argument("--no-anneal", action="store_true", help="use sigma_err for every step")
    snis.add_argument("--bound-p-r", type=float, default=20.0, help="radar power bound (dBm)")
    snis.add_argument("--bound-n", type=float, default=80.0, help="element-count bound")

    p = sub.add_parser("validate-cdf", parents=[common], help="simulated vs analytic CDFs and outages")
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--grid-n", type=_ints, default=[16, 32, 64])
    p.add_argument("--grid-power", type=_floats, default=list(DEFAULT_POWERS),
                   help="user transmit powers (dBm)")
    p.set_defaults(func=cmd_validate_cdf)

    p = sub.add_parser("outage-sweep", parents=[common], help="analytic outage curves and slopes")
    p.add_argument("--grid-n", type=_ints, default=[16, 24, 32, 48, 64, 96, 128, 192, 256, 320])
    p.add_argument("--grid-power", type=_floats, default=list(DEFAULT_POWERS))
    p.set_defaults(func=cmd_outage_sweep)

    p = sub.add_parser("snis-estimate", parents=[common, snis], help="(P_r, N) solutions per target")
    p.add_argument("--grid-target", type=_floats, default=list(DEFAULT_TARGETS))
    p.add_argument("--runs", type=int, default=20)
    p.set_defaults(func=cmd_snis_estimate)

    p = sub.add_parser("snis-histogram", parents=[common, snis],
                       help="marginals of (P_r, N, target x, target y) solutions")
    p.add_argument("--target", type=float, default=1e-2)
    p.add_argument("--runs", type=int, default=1000)
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--bound-x", type=float, default=100.0)
    p.add_argument("--bound-y", type=float, default=100.0)
    p.add_argument("--hist-out", default=None, help="histogram CSV path (default: <out>_hist.csv)")
    p.set_defaults(func=cmd_snis_histogram, n_mc=10_000)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    for name in ("trials", "runs", "workers", "bins"):
        if getattr(args, name, 1) is not None and getattr(args, name, 1) < 1:
            ap.error(f"--{name} must be >= 1")
    try:
        return args.func(args)
    except (UsageError, InvalidParameterError) as exc:
        ap.error(str(exc))
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    except BdRisError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
