"""Batch command-line front end.

Commands
--------
calibrate   calibrate smiles from a JSON file (or a seeded synthetic suite)
table       build one lookup table and report its size and error
price       price a coupon contract
sweep       R_c error sweep over table caps or calibration accuracies
synthetic   write a seeded synthetic smile suite as calibrate input

Exit codes: 0 success, 1 numerical or convergence failure, 2 invalid input.
All outputs are byte-identical for identical inputs, whatever ``--workers``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import pipeline, tables
from .baseline import GdConfig, calibrate_gd
from .errors import SmileGridError, SweepRowError, TableGrowthError
from .grid import CalibConfig, Variant, calibrate
from .models import MODEL_NAMES, make_model
from .sabr import MarketSmile, SabrParams
from .synthetic import synthetic_suite

SCHEMA_VERSION = pipeline.SCHEMA_VERSION
WORKERS_ENV = "SMILEGRID_WORKERS"
EXIT_OK, EXIT_NUMERIC, EXIT_INPUT = 0, 1, 2

TRACE_COLUMNS = ("smile", "iteration", "alpha_lo", "alpha_hi", "rho_lo", "rho_hi", "best_error")
STATS_COLUMNS = ("model", "builder", "zeta_cap", "N", "max_zeta", "evals", "passes", "insertions")


class InputError(ValueError):
    """Malformed input or flags; maps to exit status 2."""


@dataclass(frozen=True)
class RunManifest:
    command: str
    input: str | None
    output: str | None
    seed: int | None = None
    workers: int = 1
    overrides: dict = field(default_factory=dict)


# -- small helpers -----------------------------------------------------------

def _finite(v):
    return v if isinstance(v, (int, str)) or v is None or math.isfinite(v) else None


def _dump_json(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"
    _write_text(text, path)


def _write_text(text, path):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def _read_json(path):
    if path is None:
        return None
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    if not isinstance(data, dict):
        raise InputError(f"{path}: top level must be a JSON object")
    if data.get("schema_version") != SCHEMA_VERSION:
        raise InputError(f"{path}: schema_version must be {SCHEMA_VERSION}, "
                         f"got {data.get('schema_version')!r}")
    return data


def _workers(value):
    if value is None:
        value = os.environ.get(WORKERS_ENV, "1")
    try:
        w = int(value)
    except (TypeError, ValueError):
        raise InputError(f"worker count must be an integer, got {value!r}") from None
    if w < 1:
        raise InputError(f"worker count must be >= 1, got {w}")
    return w


def _pmap(fn, items, workers):
    """Ordered map; results keep input order for any worker count."""
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _parse_level(text, none_word):
    text = text.strip()
    if text.lower() == none_word.lower():
        return None if none_word == "FS" else pipeline.MACHINE_EPS
    try:
        return float(text)
    except ValueError:
        raise InputError(f"bad ladder value {text!r}") from None


# -- calibrate ---------------------------------------------------------------

def _load_smiles(data, seed):
    if data is None:
        data = {"synthetic": {}}
    if "smiles" in data:
        raw = data["smiles"]
        if not isinstance(raw, list):
            raise InputError("'smiles' must be a list")
        try:
            return [MarketSmile.from_dict(d) for d in raw]
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"bad smile record: {exc}") from None
    if "synthetic" in data:
        spec = dict(data["synthetic"] or {})
        if seed is not None:
            spec["seed"] = seed
        try:
            return [c.smile for c in synthetic_suite(int(spec.get("n", 192)), int(spec.get("seed", 0)))]
        except (TypeError, ValueError) as exc:
            raise InputError(f"bad synthetic spec: {exc}") from None
    raise InputError("input needs a 'smiles' list or a 'synthetic' section")


def cmd_calibrate(m: RunManifest) -> int:
    data = _read_json(m.input)
    smiles = _load_smiles(data, m.seed)
    conf = dict((data or {}).get("config", {}))
    conf.update(m.overrides.get("config", {}))
    method = m.overrides.get("method", "grid")
    try:
        if method == "gd":
            conf.pop("variant", None)
            cfg = GdConfig(**{k: v for k, v in conf.items() if k in GdConfig.__dataclass_fields__})
        else:
            cfg = CalibConfig(**conf)
    except (TypeError, ValueError) as exc:
        raise InputError(f"bad calibration config: {exc}") from None

    def run(smile):
        try:
            return calibrate_gd(smile, cfg) if method == "gd" else calibrate(smile, cfg), None
        except SmileGridError as exc:
            return None, f"{type(exc).__name__}: {exc}"

    outcomes = _pmap(run, smiles, m.workers)
    results, trace_rows = [], []
    for k, (res, err) in enumerate(outcomes):
        if res is None:
            results.append({"index": k, "converged": False, "error": err})
            continue
        d = {key: _finite(v) for key, v in res.to_dict().items() if key != "bounds_history"}
        d["index"] = k
        d["bounds_history"] = [[_finite(v) for v in b] for b in res.bounds_history]
        results.append(d)
        for row in res.trace:
            if method == "gd":
                it, best = row[0], row[1]
                trace_rows.append((k, it, "", "", "", "", repr(best)))
            else:
                it, bounds, best = row
                b = ("",) * 4 if bounds is None else tuple(repr(v) for v in bounds)
                trace_rows.append((k, it, *b, repr(best)))

    done = [r for r in results if r.get("converged")]
    mean_it = (sum(r["iterations"] for r in done) / len(done)) if done else None
    eps = cfg.epsilon_sabr
    summary = {"count": len(results), "converged": len(done), "epsilon": eps,
               "mean_iterations": mean_it, "method": method,
               "variant": cfg.variant.value if method == "grid" else None}
    _dump_json({"schema_version": SCHEMA_VERSION, "command": "calibrate",
                "summary": summary, "results": results}, m.output)
    if m.overrides.get("trace"):
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        w.writerows(trace_rows)
        _write_text(out.getvalue(), m.overrides["trace"])
    mean_txt = "n/a" if mean_it is None else f"{mean_it:.3f}"
    print(f"calibrated {len(done)}/{len(results)} epsilon={eps!r} mean_iterations={mean_txt}",
          file=sys.stderr)
    return EXIT_OK if len(done) == len(results) else EXIT_NUMERIC


# -- table -------------------------------------------------------------------

def _model_from(data, name):
    spec = dict((data or {}).get("model", {}))
    name = name or spec.pop("name", "normal")
    spec.pop("name", None)
    kw = dict(spec.get("params", {})) if "params" in spec else dict(spec)
    try:
        if name.lower() in ("sabr", "sabr-implied") and kw:
            p = SabrParams(**{k: float(v) for k, v in kw.items()
                              if k in SabrParams.__dataclass_fields__})
            rest = {k: float(v) for k, v in kw.items() if k in ("x_lo", "x_hi")}
            return name, make_model(name, params=p, **rest)
        return name, make_model(name, **{k: float(v) for k, v in kw.items()})
    except (TypeError, ValueError) as exc:
        raise InputError(f"bad model spec: {exc}") from None


def cmd_table(m: RunManifest) -> int:
    data = _read_json(m.input)
    name, model = _model_from(data, m.overrides.get("model"))
    tconf = dict((data or {}).get("table", {}))
    builder = m.overrides.get("builder") or tconf.pop("builder", "DS3")
    tconf.pop("builder", None)
    if "zeta" in m.overrides:
        tconf["zeta_cap"] = m.overrides["zeta"]
    if builder not in tables.BUILDERS:
        raise InputError(f"unknown builder {builder!r}; expected one of {', '.join(tables.BUILDERS)}")
    try:
        cfg = tables.TableBuildConfig(**tconf)
    except (TypeError, ValueError) as exc:
        raise InputError(f"bad table config: {exc}") from None
    if builder != "FS" and cfg.zeta_cap is None:
        raise InputError(f"builder {builder} needs --zeta")
    try:
        table = tables.build_table(model, cfg, builder)
    except TableGrowthError as exc:
        print(f"table growth error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    evals = table.stats.evals if table.stats else model.evals
    zeta = tables.midpoint_errors(table, model)
    max_zeta = float(zeta.max()) if zeta.size else 0.0
    if m.output:
        tables.save(table, m.output)
    s = table.stats
    row = (name, builder, "" if cfg.zeta_cap is None else repr(cfg.zeta_cap), table.n,
           repr(max_zeta), evals, s.passes if s else 0, s.insertions if s else 0)
    stats_path = m.overrides.get("stats")
    if stats_path:
        new = not os.path.exists(stats_path) or os.path.getsize(stats_path) == 0
        with open(stats_path, "a", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(STATS_COLUMNS)
            w.writerow(row)
    else:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerows([STATS_COLUMNS, row])
        sys.stdout.write(out.getvalue())
    ok = cfg.zeta_cap is None or max_zeta <= cfg.zeta_cap
    return EXIT_OK if ok else EXIT_NUMERIC


# -- price / sweep -----------------------------------------------------------

def _contract(data, seed, samples=None):
    try:
        c = pipeline.default_contract() if data is None else pipeline.Contract.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"bad contract: {exc}") from None
    if seed is not None or samples is not None:
        mc = c.mc
        c = pipeline.Contract(c.coupons, pipeline.McConfig(
            mc.samples if samples is None else samples, mc.seed if seed is None else seed,
            mc.copula_corr))
    return c


def _params_dict(p: SabrParams):
    return {"alpha": p.alpha, "beta": p.beta, "rho": p.rho, "s0": p.s0, "f0": p.f0, "T": p.T}


def cmd_price(m: RunManifest) -> int:
    c = _contract(_read_json(m.input), m.seed, m.overrides.get("samples"))
    eps = m.overrides.get("epsilon", pipeline.MACHINE_EPS)
    zeta = m.overrides.get("zeta", pipeline.SWEEP_ZETA)
    builder = m.overrides.get("builder") or "DS3"
    if builder not in tables.BUILDERS:
        raise InputError(f"unknown builder {builder!r}")
    try:
        results, total = pipeline.price_contract(c, eps, zeta, builder, m.workers)
    except SmileGridError as exc:
        print(f"pricing failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out = {
        "schema_version": SCHEMA_VERSION, "command": "price",
        "epsilon": eps, "zeta": zeta, "builder": builder, "mc": c.to_dict()["mc"],
        "coupons": [{"r_c": r.r_c, "pv": r.pv, "n_a": r.n_a, "n_b": r.n_b,
                     "params_a": _params_dict(r.params_a), "params_b": _params_dict(r.params_b)}
                    for r in results],
        "total_pv": total,
    }
    _dump_json(out, m.output)
    return EXIT_OK


def cmd_sweep(m: RunManifest) -> int:
    data = _read_json(m.input)
    c = _contract(data, m.seed, m.overrides.get("samples"))
    spec = dict((data or {}).get("sweep", {}))
    if data is not None and "sweep" in data and "benchmark" not in spec \
            and "benchmark" not in m.overrides:
        raise InputError("sweep spec lacks a benchmark level")
    param = m.overrides.get("param") or spec.get("param", "zeta")
    if param not in ("zeta", "epsilon"):
        raise InputError(f"sweep parameter must be 'zeta' or 'epsilon', got {param!r}")
    ladder = m.overrides.get("ladder", spec.get("ladder"))
    bench = m.overrides.get("benchmark", spec.get("benchmark", pipeline.BENCHMARK_ZETA))
    builder = m.overrides.get("builder") or spec.get("builder", "DS3")
    if builder not in tables.CAPPED_BUILDERS:
        raise InputError(f"sweep builder must be one of {', '.join(tables.CAPPED_BUILDERS)}")
    coupon_idx = int(spec.get("coupon", 0))
    if not 0 <= coupon_idx < len(c.coupons):
        raise InputError(f"coupon index {coupon_idx} out of range")
    coupon = c.coupons[coupon_idx]
    if isinstance(ladder, str):
        ladder = [_parse_level(v, "FS" if param == "zeta" else "machine") for v in ladder.split(",")]
    try:
        bench = float(bench)
    except (TypeError, ValueError):
        raise InputError(f"bad benchmark level {bench!r}") from None
    try:
        if param == "zeta":
            zetas = tuple(ladder) if ladder is not None else pipeline.ZETA_LADDER
            eps = m.overrides.get("epsilon", spec.get("epsilon", pipeline.MACHINE_EPS))
            if any(z is not None and z < bench for z in zetas):
                raise InputError("benchmark zeta must be the strictest level in the ladder")
            report = pipeline.error_sweep_zeta(coupon, c.mc, zetas, bench, eps, builder, m.workers)
        else:
            epsilons = tuple(ladder) if ladder is not None else pipeline.EPS_LADDER
            zeta = m.overrides.get("zeta", spec.get("zeta", pipeline.SWEEP_ZETA))
            bench_rc = pipeline.price_coupon(coupon, pipeline.MACHINE_EPS, bench, c.mc,
                                             builder, m.workers).r_c
            report = pipeline.error_sweep_epsilon(coupon, c.mc, bench_rc, epsilons, zeta,
                                                  builder, m.workers)
    except SweepRowError as exc:
        print(f"sweep failed at {exc.param}={exc.value!r}: {exc.cause}", file=sys.stderr)
        return EXIT_NUMERIC
    except SmileGridError as exc:
        print(f"sweep failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    _write_text(report.to_csv(), m.output)
    return EXIT_OK


# -- synthetic ---------------------------------------------------------------

def cmd_synthetic(m: RunManifest) -> int:
    n = m.overrides.get("count", 192)
    if n < 0:
        raise InputError("count must be non-negative")
    seed = 0 if m.seed is None else m.seed
    suite = synthetic_suite(n, seed)
    _dump_json({"schema_version": SCHEMA_VERSION,
                "smiles": [c.smile.to_dict() for c in suite],
                "truth": [{"alpha": c.truth.alpha, "rho": c.truth.rho, "s0": c.truth.s0}
                          for c in suite]}, m.output)
    return EXIT_OK


COMMANDS = {"calibrate": cmd_calibrate, "table": cmd_table, "price": cmd_price,
            "sweep": cmd_sweep, "synthetic": cmd_synthetic}


# -- argument parsing --------------------------------------------------------

def _nonneg_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v >= 0.0:
        raise argparse.ArgumentTypeError(f"must be non-negative: {text!r}")
    return v


def _pos_float(text):
    v = _nonneg_float(text)
    if v == 0.0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _seed(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("seed must be non-negative")
    return v


def build_parser():
    ap = argparse.ArgumentParser(prog="smilegrid", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--input", help="input JSON file (schema_version required)")
        p.add_argument("--output", help=out_help + " (default: stdout)")
        p.add_argument("--seed", type=_seed, help="seed override")
        p.add_argument("--workers", help=f"worker count (default: ${WORKERS_ENV} or 1)")

    p = sub.add_parser("calibrate", help="calibrate smiles")
    common(p, "result JSON")
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--epsilon", type=_nonneg_float, help="target accuracy (0 = machine)")
    p.add_argument("--method", choices=("grid", "gd"), default="grid")
    p.add_argument("--trace", help="per-iteration trace CSV")

    p = sub.add_parser("table", help="build a lookup table")
    common(p, "table file (.csv for text, binary otherwise)")
    p.add_argument("--model", choices=MODEL_NAMES + ("standard-normal", "sabr-implied"))
    p.add_argument("--builder", help=f"one of {', '.join(tables.BUILDERS)}")
    p.add_argument("--zeta", type=_pos_float, help="error cap")
    p.add_argument("--stats", help="CSV file to append the stats row to")

    p = sub.add_parser("price", help="price a contract")
    common(p, "result JSON")
    p.add_argument("--epsilon", type=_nonneg_float)
    p.add_argument("--zeta", type=_pos_float)
    p.add_argument("--builder")
    p.add_argument("--samples", type=int)

    p = sub.add_parser("sweep", help="R_c error sweep")
    common(p, "sweep CSV")
    p.add_argument("--param", choices=("zeta", "epsilon"))
    p.add_argument("--ladder", help="comma-separated levels; FS / machine allowed")
    p.add_argument("--benchmark", type=_pos_float, help="benchmark zeta")
    p.add_argument("--epsilon", type=_nonneg_float, help="fixed accuracy for a zeta sweep")
    p.add_argument("--zeta", type=_pos_float, help="fixed cap for an epsilon sweep")
    p.add_argument("--builder")
    p.add_argument("--samples", type=int)

    p = sub.add_parser("synthetic", help="write a synthetic smile suite")
    common(p, "suite JSON")
    p.add_argument("--count", type=int, default=192)
    return ap


def manifest_from_args(ns) -> RunManifest:
    ov = {}
    cfg = {}
    if getattr(ns, "variant", None):
        cfg["variant"] = ns.variant
    if getattr(ns, "epsilon", None) is not None:
        if ns.command == "calibrate":
            cfg["epsilon_sabr"] = ns.epsilon
        else:
            ov["epsilon"] = ns.epsilon
    if ns.command == "calibrate":
        cfg["workers"] = 1  # parallelism is across smiles
        ov["config"] = cfg
        ov["method"] = ns.method
        ov["trace"] = ns.trace
    for name in ("model", "builder", "zeta", "stats", "param", "ladder", "benchmark",
                 "samples", "count"):
        v = getattr(ns, name, None)
        if v is not None:
            ov[name] = v
    if ov.get("samples") is not None and ov["samples"] < 1:
        raise InputError("samples must be >= 1")
    return RunManifest(ns.command, ns.input, ns.output, ns.seed, _workers(ns.workers), ov)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INPUT
    try:
        manifest = manifest_from_args(ns)
        return COMMANDS[manifest.command](manifest)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
