"""Command-line front end: fit CSV files, simulate scenarios, run replication studies.

Exit codes: 0 success, 2 invalid input, 3 fit did not converge (report
still written), 4 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
import traceback
import warnings
from pathlib import Path

import numpy as np

from .baselines import OracleSpec, fit_naive, fit_oracle
from .errors import LinkAdjustError
from .extended import fit_extended
from .model import LinkedDataset, MismatchRateConstraint
from .plain import EmConfig, fit_plain
from .replication import default_threads, run_replications
from .simulate import SCENARIOS, ScenarioSpec, generate

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NOT_CONVERGED = 3
EXIT_INTERNAL = 4

METHODS = ("naive", "plain", "plain-constrained", "oracle", "extended")
DEFAULTS = {
    "command": None,
    "input": None,
    "response": None,
    "covariates": [],
    "m_covariates": [],
    "block_col": None,
    "true_m_col": None,
    "method": "extended",
    "assumed_rate": None,
    "max_iter": 500,
    "tol": 1e-8,
    "scenario": "motivating",
    "n": 1000,
    "replications": None,
    "seed": 0,
    "level": 0.95,
    "threads": None,
    "output": None,
    "methods": None,
}


class UsageError(Exception):
    """Bad configuration or input file; maps to exit code 2."""


def _split(v):
    if v is None:
        return None
    if isinstance(v, (list, tuple)):
        return list(v)
    return [s.strip() for s in str(v).split(",") if s.strip()]


def build_parser():
    p = argparse.ArgumentParser(prog="linkadjust", description=__doc__.splitlines()[0])
    p.add_argument("--command", choices=("fit", "simulate", "replicate"))
    p.add_argument("--config", help="JSON file with defaults for any of the flags below")
    p.add_argument("--input", help="input CSV (fit)")
    p.add_argument("--response", help="response column name")
    p.add_argument("--covariates", help="comma-separated outcome covariate columns")
    p.add_argument("--m-covariates", help="comma-separated mismatch-model covariate columns")
    p.add_argument("--block-col", help="optional block column")
    p.add_argument("--true-m-col", help="true mismatch flags, needed by --method oracle")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--methods", help="comma-separated methods for replicate")
    p.add_argument("--assumed-rate", type=float, help="upper bound on the mismatch rate (plain-constrained)")
    p.add_argument("--max-iter", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--scenario", choices=SCENARIOS)
    p.add_argument("--n", type=int)
    p.add_argument("--replications", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--level", type=float)
    p.add_argument("--threads", type=int, help="worker threads (default $LINKADJUST_THREADS or 1)")
    p.add_argument("--output", help="output file (JSON report or CSV dataset)")
    return p


def resolve_config(args) -> dict:
    """Flags override config-file values, which override defaults."""
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}") from exc
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key, val in vars(args).items():
        if key != "config" and val is not None:
            cfg[key] = val
    for key in ("covariates", "m_covariates", "methods"):
        cfg[key] = _split(cfg[key])
    if cfg["threads"] is None:
        cfg["threads"] = default_threads()
    if cfg["command"] is None:
        raise UsageError("--command is required")
    if cfg["method"] not in METHODS:
        raise UsageError(f"unknown method {cfg['method']!r}")
    if cfg["assumed_rate"] is not None and cfg["method"] != "plain-constrained" and cfg["command"] == "fit":
        raise UsageError("--assumed-rate is only used with --method plain-constrained")
    if cfg["method"] == "plain-constrained" and cfg["command"] == "fit" and cfg["assumed_rate"] is None:
        raise UsageError("--method plain-constrained needs --assumed-rate")
    if not 0.0 < float(cfg["level"]) < 1.0:
        raise UsageError("--level must lie in (0, 1)")
    if cfg["output"] is None:
        raise UsageError("--output is required")
    return cfg


def read_columns(path, names):
    """Read the named numeric columns of a CSV file.

    Raises :class:`UsageError` naming the offending rows or columns.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = list(reader)
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    if not header:
        raise UsageError(f"{path} is empty")
    header = [h.strip() for h in header]
    missing = [c for c in names if c not in header]
    if missing:
        raise UsageError(f"unknown column(s) {missing}; available: {header}")
    idx = {c: header.index(c) for c in names}
    out = {c: np.empty(len(rows)) for c in names}
    blank, bad = [], []
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise UsageError(f"row {i} has {len(row)} fields, header has {len(header)}")
        for c, j in idx.items():
            cell = row[j].strip()
            if cell == "" or cell.lower() in ("na", "nan"):
                blank.append((i, c))
                continue
            try:
                val = float(cell)
            except ValueError:
                bad.append((i, c, cell))
                continue
            if not math.isfinite(val):
                blank.append((i, c))
            out[c][i] = val
    if blank:
        raise UsageError(f"missing values at (row, column): {blank[:20]}")
    if bad:
        raise UsageError(f"non-numeric cells at (row, column, value): {bad[:20]}")
    return out


def dataset_from_csv(cfg) -> LinkedDataset:
    if not cfg["input"] or not cfg["response"]:
        raise UsageError("fit needs --input and --response")
    covs, mcovs = cfg["covariates"] or [], cfg["m_covariates"] or []
    extra = [c for c in (cfg["block_col"], cfg["true_m_col"]) if c]
    names = list(dict.fromkeys([cfg["response"], *covs, *mcovs, *extra]))
    cols = read_columns(cfg["input"], names)
    y = cols[cfg["response"]]
    n = y.size
    X = np.column_stack([np.ones(n)] + [cols[c] for c in covs])
    Z = np.column_stack([np.ones(n)] + [cols[c] for c in mcovs])
    if n <= X.shape[1]:
        raise UsageError(f"need more rows ({n}) than outcome coefficients ({X.shape[1]})")
    kw = {}
    if cfg["block_col"]:
        kw["block_id"] = cols[cfg["block_col"]]
    if cfg["true_m_col"]:
        kw["true_m"] = cols[cfg["true_m_col"]]
    return LinkedDataset(y, X, Z, x_names=["intercept", *covs], z_names=["intercept", *mcovs], **kw)


def _em_config(cfg):
    constraint = None
    if cfg["method"] == "plain-constrained":
        constraint = MismatchRateConstraint(float(cfg["assumed_rate"]))
    return EmConfig(max_iter=int(cfg["max_iter"]), tol=float(cfg["tol"]), constraint=constraint,
                    seed=int(cfg["seed"]))


def cmd_fit(cfg):
    data = dataset_from_csv(cfg)
    method, level = cfg["method"], float(cfg["level"])
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if method == "naive":
            fit = fit_naive(data, level=level)
        elif method in ("plain", "plain-constrained"):
            fit = fit_plain(data, _em_config(cfg), level=level, method=method)
        elif method == "oracle":
            if data.true_m is None:
                raise UsageError("--method oracle needs --true-m-col to build the mismatch density")
            fit = fit_oracle(data, OracleSpec.gaussian_from_mismatches(data), _em_config(cfg), level=level)
        else:
            fit = fit_extended(data, _em_config(cfg), level=level)
    timing = (time.perf_counter() - t0) * 1e3

    out = Path(cfg["output"])
    post_path = out.with_name(out.stem + "_posterior.csv")
    with open(post_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "posterior_correct"])
        w.writerows((i, repr(float(v))) for i, v in enumerate(fit.posterior_correct))
    report = {
        "config": cfg,
        "method": method,
        "estimates": fit.estimates(),
        "loglik_trace": [float(v) for v in fit.loglik_trace],
        "converged": bool(fit.converged),
        "iterations": int(fit.iterations),
        "timing_ms": timing,
        "posterior_correct": [float(v) for v in fit.posterior_correct],
        "posterior_correct_path": str(post_path),
        "diagnostics": _jsonable(fit.diagnostics),
        "warnings": sorted({str(w.message) for w in caught}),
    }
    _write_json(out, report)
    return EXIT_OK if fit.converged else EXIT_NOT_CONVERGED


def _scenario(cfg):
    return ScenarioSpec(cfg["scenario"], n=int(cfg["n"]), seed=int(cfg["seed"]))


def cmd_simulate(cfg):
    data, _ = generate(_scenario(cfg))
    cols = {"y": data.y}
    for j, name in enumerate(data.x_names[1:], start=1):
        cols[name] = data.X[:, j]
    for j, name in enumerate(data.z_names[1:], start=1):
        if name in cols and not np.array_equal(cols[name], data.Z[:, j]):
            name = f"m_{name}"
        cols[name] = data.Z[:, j]
    if data.block_id is not None:
        cols["block"] = data.block_id
    cols["true_m"] = data.true_m
    with open(cfg["output"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(cols))
        for i in range(data.n):
            w.writerow([_fmt(c[i]) for c in cols.values()])
    return EXIT_OK


def cmd_replicate(cfg):
    if not cfg["replications"]:
        raise UsageError("replicate needs --replications")
    report = run_replications(_scenario(cfg), int(cfg["replications"]), cfg["methods"], float(cfg["level"]),
                              parallelism=int(cfg["threads"]))
    out = Path(cfg["output"])
    csv_path = out.with_name(out.stem + "_replications.csv")
    rows = report.rows()
    fields = ["replication", "method", "param", "est", "se", "ci_lo", "ci_hi", "truth", "mismatch_rate"]
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow({k: "" if row[k] is None else _fmt(row[k]) for k in fields})
    body = report.to_dict()
    # the thread count does not affect results, so it is kept out of the summary
    body["config"] = {k: v for k, v in cfg.items() if k != "threads"}
    body["replications_csv"] = str(csv_path)
    body["failure_manifest"] = [{"replication": rec["r"], "errors": rec["errors"]}
                                for rec in report.records if rec["errors"]]
    _write_json(out, body)
    return EXIT_OK


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _write_json(path, body):
    Path(path).write_text(json.dumps(_jsonable(body), indent=2, sort_keys=True) + "\n")


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        command = {"fit": cmd_fit, "simulate": cmd_simulate, "replicate": cmd_replicate}[cfg["command"]]
        return command(cfg)
    except (UsageError, LinkAdjustError, ValueError) as exc:
        print(f"linkadjust: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception:  # noqa: BLE001
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
