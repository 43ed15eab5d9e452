"""Command-line front end: ``segment``, ``simulate``, ``evaluate``, ``oracle-check``."""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .distributions import make_rng
from .errors import InvalidArgumentError, NumericalDomainError
from .metrics import cp_f1, labels_ari
from .model import Hyperparameters
from .sampler import MODES, ChangePointSampler, summarize

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1
EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int, payload=None):
        super().__init__(message)
        self.code = code
        self.payload = payload


# -- JSON with 17 significant digits ----------------------------------------


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _scalar(v) -> str:
    if isinstance(v, bool) or v is None or isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if not math.isfinite(v):
            return "null"
        return format(v, ".17g")
    raise TypeError(f"cannot serialize {type(v).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """JSON text with every float written to 17 significant digits.

    Lists of scalars stay on one line, which keeps large matrices readable.
    """

    def walk(o, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{pad}{json.dumps(k)}: {walk(v, level + 1)}" for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(o, list):
            if all(not isinstance(v, (dict, list)) for v in o):
                return "[" + ", ".join(_scalar(v) for v in o) + "]"
            return "[\n" + ",\n".join(pad + walk(v, level + 1) for v in o) + "\n" + end + "]"
        return _scalar(o)

    return walk(_plain(obj), 0) + "\n"


# -- input -------------------------------------------------------------------


def read_series(path: str, column=None, has_header: bool = False) -> np.ndarray:
    """One numeric column of a CSV file; ``column`` is an index or a header name."""
    p = Path(path)
    if not p.is_file():
        raise CliError(f"input file not found: {path}", EXIT_INPUT)
    values = []
    with p.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        col = 0
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and has_header:
                if column is not None and not str(column).isdigit():
                    if column not in row:
                        raise CliError(f"{path}: no column named {column!r}", EXIT_INPUT)
                    col = row.index(column)
                elif column is not None:
                    col = int(column)
                continue
            if lineno == 1 and column is not None:
                if not str(column).isdigit():
                    raise CliError("a named --column needs --has-header", EXIT_INPUT)
                col = int(column)
            if not row or all(not c.strip() for c in row):
                continue
            if col >= len(row):
                raise CliError(f"{path}:{lineno}: missing column {col}", EXIT_INPUT)
            try:
                val = float(row[col])
            except ValueError:
                raise CliError(f"{path}:{lineno}: not a number: {row[col]!r}", EXIT_INPUT) from None
            if not math.isfinite(val):
                raise CliError(f"{path}:{lineno}: non-finite value {row[col]!r}", EXIT_INPUT)
            values.append(val)
    if not values:
        raise CliError(f"{path}: no data rows", EXIT_INPUT)
    return np.asarray(values)


def _read_toml(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"file not found: {path}", EXIT_INPUT)
    try:
        with p.open("rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise CliError(f"{path}: {exc}", EXIT_INVALID) from None


_HYPER_FIELDS = set(Hyperparameters.__dataclass_fields__)

# flag dest -> Hyperparameters field
_HYPER_FLAGS = {
    "d_model": "d_model",
    "delta": "delta",
    "beta": "beta",
    "nu": "nu",
    "gamma": "gamma",
    "alpha": "alpha",
    "k_max": "k_max",
    "l_min": "l_min",
    "iters": "n_iter",
    "nc_iter": "nc_iter",
    "m_aux": "m_aux",
    "burn_in": "burn_in",
    "thin": "thin",
    "seed": "seed",
}


def build_hyper(args) -> Hyperparameters:
    values = {}
    if args.config:
        cfg = _read_toml(args.config)
        unknown = sorted(set(cfg) - _HYPER_FIELDS)
        if unknown:
            raise CliError(f"{args.config}: unknown keys {unknown}", EXIT_INVALID)
        values.update(cfg)
    for dest, name in _HYPER_FLAGS.items():
        val = getattr(args, dest, None)
        if val is not None:
            values[name] = val
    try:
        return Hyperparameters(**values)
    except (InvalidArgumentError, TypeError, ValueError) as exc:
        raise CliError(f"invalid hyperparameters: {exc}", EXIT_INVALID) from None


# -- segment -------------------------------------------------------------------


def _run_one(x, hyper: Hyperparameters, mode: str, seed: int):
    sampler = ChangePointSampler(x, hyper.replace(seed=seed), mode, make_rng(seed))
    start = time.perf_counter()
    summary = sampler.run()
    return summary, time.perf_counter() - start


def _trace_summary(lp: np.ndarray) -> dict:
    return {
        "n": int(lp.size),
        "mean": float(np.mean(lp)),
        "sd": float(np.std(lp)),
        "min": float(np.min(lp)),
        "max": float(np.max(lp)),
        "last": float(lp[-1]),
    }


def cmd_segment(args) -> int:
    x = read_series(args.input, args.column, args.has_header)
    hyper = build_hyper(args)
    if args.chains < 1:
        raise CliError("--chains must be >= 1", EXIT_INVALID)
    seeds = [hyper.seed + i for i in range(args.chains)]
    try:
        if args.jobs > 1 and len(seeds) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                futures = [pool.submit(_run_one, x, hyper, args.mode, s) for s in seeds]
                results = [f.result() for f in futures]
        else:
            results = [_run_one(x, hyper, args.mode, s) for s in seeds]
    except InvalidArgumentError as exc:
        raise CliError(f"invalid arguments: {exc}", EXIT_INVALID) from None
    except NumericalDomainError as exc:
        raise CliError(f"numerical failure: {exc}", EXIT_NUMERICAL, payload=exc.payload) from None

    resolved = hyper.resolve(x)
    pooled = summarize(
        [s for summary, _ in results for s in summary.samples], x.size, resolved.k_max
    )
    chains = []
    for seed, (summary, runtime) in zip(seeds, results):
        entry = {
            "seed": seed,
            "k_histogram": summary.k_histogram,
            "map": {
                "k": summary.map_k,
                "tau": list(summary.map_tau),
                "labels": list(summary.map_labels),
                "log_post": summary.map_log_post,
            },
            "log_post_trace_summary": _trace_summary(summary.traces["log_post"]),
            "acceptance": summary.acceptance,
        }
        if not args.deterministic:
            entry["runtime_sec"] = runtime
        chains.append(entry)
    result = {
        "schema_version": SCHEMA_VERSION,
        "mode": args.mode,
        "n": int(x.size),
        "hyper": resolved.as_dict(),
        "chains": chains,
        "k_histogram": pooled.k_histogram,
        "cp_marginal": pooled.cp_marginal,
        "map": {
            "k": pooled.map_k,
            "tau": list(pooled.map_tau),
            "labels": list(pooled.map_labels),
            "log_post": pooled.map_log_post,
        },
        "estimate": {
            "k": len(pooled.estimate_tau),
            "tau": list(pooled.estimate_tau),
            "labels": list(pooled.estimate_labels),
        },
        "label_estimate": pooled.label_estimate,
    }
    if args.mode == "dp":
        result["co_cluster"] = pooled.co_cluster
    diagnostics = {"n_chains": len(seeds), "n_samples": pooled.n_samples}
    if not args.deterministic:
        diagnostics["timestamp"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
        diagnostics["runtime_sec"] = sum(r for _, r in results)
    result["diagnostics"] = diagnostics

    text = dumps(result)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.traces:
        with open(args.traces, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["chain", "seed", "sample", "k", "log_post"])
            for c, (seed, (summary, _)) in enumerate(zip(seeds, results)):
                for i, (k, lp) in enumerate(zip(summary.traces["k"], summary.traces["log_post"])):
                    w.writerow([c, seed, i, int(k), format(float(lp), ".17g")])
    if args.emit_plot_data:
        with open(args.emit_plot_data, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "cp_marginal", "label"])
            for t in range(x.size):
                w.writerow([t + 1, format(float(x[t]), ".17g"),
                            format(float(pooled.cp_marginal[t]), ".17g"),
                            int(pooled.label_estimate[t])])
    return EXIT_OK


# -- simulate --------------------------------------------------------------------


def _parse_plan(plan) -> list:
    out = []
    for step in plan:
        if isinstance(step, dict):
            name, length = step.get("class"), step.get("length")
        else:
            name, length = step
        if not isinstance(name, str) or not isinstance(length, int):
            raise CliError(f"bad plan entry {step!r}: need (class name, integer length)", EXIT_INVALID)
        out.append((name, length))
    return out


def cmd_simulate(args) -> int:
    from .synthetic import generate

    scenario = _read_toml(args.scenario)
    try:
        classes = scenario["classes"]
        plan = _parse_plan(scenario["plan"])
    except KeyError as exc:
        raise CliError(f"{args.scenario}: missing key {exc}", EXIT_INVALID) from None
    seed = args.seed if args.seed is not None else int(scenario.get("seed", 0))
    try:
        data = generate(classes, plan, seed)
    except (InvalidArgumentError, KeyError, TypeError, ValueError) as exc:
        raise CliError(f"invalid scenario: {exc}", EXIT_INVALID) from None
    x = data.series.samples
    if args.preview:
        print(f"samples: {x.size}  segments: {len(plan)}  seed: {seed}")
        print(f"change points: {list(data.segmentation.tau)}")
        print(f"mean: {np.mean(x):.6g}  sd: {np.std(x):.6g}  min: {np.min(x):.6g}  max: {np.max(x):.6g}")
        for name, length in plan:
            print(f"  {name}: {length}")
        return EXIT_OK
    if not args.out:
        raise CliError("--out is required unless --preview is given", EXIT_INVALID)
    out = Path(args.out)
    with out.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for v in x:
            w.writerow([format(float(v), ".17g")])
    truth_path = Path(args.truth) if args.truth else out.with_suffix(".truth.json")
    truth = {
        "schema_version": SCHEMA_VERSION,
        "n": int(x.size),
        "seed": seed,
        "tau": list(data.segmentation.tau),
        "labels": data.labels,
        "class_names": list(data.class_names),
        "sample_labels": data.sample_labels(),
    }
    truth_path.write_text(dumps(truth), encoding="utf-8")
    return EXIT_OK


# -- evaluate ----------------------------------------------------------------------


def _load_json(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"file not found: {path}", EXIT_INPUT)
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: {exc}", EXIT_INVALID) from None


def cmd_evaluate(args) -> int:
    result, truth = _load_json(args.result), _load_json(args.truth)
    try:
        for doc, keys in ((result, ("schema_version", "n", "estimate", "label_estimate")),
                          (truth, ("schema_version", "n", "tau", "sample_labels"))):
            missing = [k for k in keys if k not in doc]
            if missing:
                raise CliError(f"schema mismatch: missing {missing}", EXIT_INVALID)
            if doc["schema_version"] != SCHEMA_VERSION:
                raise CliError(f"schema mismatch: version {doc['schema_version']}", EXIT_INVALID)
        if result["n"] != truth["n"] or len(result["label_estimate"]) != len(truth["sample_labels"]):
            raise CliError("schema mismatch: series lengths differ", EXIT_INVALID)
        est_tau = result["estimate"]["tau"]
    except (TypeError, KeyError) as exc:
        raise CliError(f"schema mismatch: {exc}", EXIT_INVALID) from None
    if args.window < 0:
        raise CliError("--window must be >= 0", EXIT_INVALID)
    precision, recall, f1 = cp_f1(truth["tau"], est_tau, args.window)
    ari = labels_ari(truth["sample_labels"], result["label_estimate"])
    report = {"window": args.window, "precision": precision, "recall": recall, "f1": f1, "ari": ari}
    print(f"precision {precision:.4f}  recall {recall:.4f}  f1 {f1:.4f}  ari {ari:.4f}")
    if args.out:
        Path(args.out).write_text(dumps(report), encoding="utf-8")
    return EXIT_OK


# -- oracle-check --------------------------------------------------------------------


def _quadrature_suite(seed: int, n_instances: int = 20, tol: float = 1e-6):
    from .marginal import class_stat, log_marginal_class
    from .oracles import oracle_quadrature

    rng = make_rng(seed)
    rows = []
    for i in range(n_instances):
        dm = int(rng.integers(1, 3))
        d = int(rng.integers(dm + 1, 13))
        g = np.column_stack([np.ones(d)] + [rng.normal(size=d) for _ in range(dm - 1)])
        y = rng.normal(scale=rng.uniform(0.3, 3.0), size=d)
        hyper = Hyperparameters(
            d_model=dm,
            delta=float(rng.uniform(0.5, 20.0)),
            nu=float(rng.uniform(1.0, 5.0)),
            gamma=float(rng.uniform(0.3, 3.0)),
            lambda_phi=rng.normal(scale=0.5, size=dm),
        )
        closed = log_marginal_class(class_stat(y, g, hyper.delta, hyper.lambda_phi), hyper)
        quad = oracle_quadrature(y, g, hyper)
        err = abs(closed - quad.log_value)
        rows.append({
            "name": f"quadrature[{i}] D={dm} d={d}",
            "error": err,
            "passed": bool(err <= tol and quad.converged),
            "instance": {"y": y, "g": g, "hyper": hyper.as_dict(), "closed": closed,
                         "quadrature": quad.log_value},
        })
    return rows


def _enumeration_suite(seed: int, tv_threshold: float, n_post: int = 200_000):
    from .oracles import oracle_enumerate

    rng = make_rng(seed)
    x = np.concatenate([rng.normal(0.0, 1.0, 8), rng.normal(1.5, 1.0, 8)])
    burn = 0.1
    n_iter = int(math.ceil(n_post / (1 - burn)))
    hyper = Hyperparameters(d_model=1, k_max=2, seed=seed, burn_in=burn, n_iter=n_iter)
    exact = oracle_enumerate(x, hyper)
    summary = ChangePointSampler(x, hyper, "baseline", make_rng(seed)).run()
    counts: dict = {}
    for tau, _, _ in summary.samples:
        counts[tau] = counts.get(tau, 0) + 1
    total = len(summary.samples)
    tv = 0.5 * sum(abs(counts.get(t, 0) / total - p) for t, p in exact.items())
    return [{
        "name": "enumeration N=16 D=1 K_max=2",
        "error": tv,
        "passed": bool(tv <= tv_threshold),
        "instance": {"x": x, "hyper": hyper.as_dict(), "tv": tv},
    }]


def cmd_oracle_check(args) -> int:
    rows = []
    if args.suite in ("all", "quadrature"):
        rows += _quadrature_suite(args.seed)
    if args.suite in ("all", "enumeration"):
        rows += _enumeration_suite(args.seed, args.tv_threshold)
    width = max(len(r["name"]) for r in rows)
    for r in rows:
        status = "PASS" if r["passed"] else "FAIL"
        print(f"{r['name']:<{width}}  {r['error']:.3e}  {status}")
    failed = [r for r in rows if not r["passed"]]
    if failed:
        sys.stderr.write(dumps({"failed": [{"name": r["name"], **r["instance"]} for r in failed]}))
        return EXIT_FAIL
    return EXIT_OK


# -- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpchange", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    seg = sub.add_parser("segment", help="sample change points and segment classes")
    seg.add_argument("--input", required=True)
    seg.add_argument("--column", default=None, help="column index or header name (default: first)")
    seg.add_argument("--has-header", action="store_true")
    seg.add_argument("--mode", choices=MODES, default="dp")
    seg.add_argument("--config", help="flat TOML file of hyperparameters")
    seg.add_argument("--chains", type=int, default=4)
    seg.add_argument("--jobs", type=int, default=1)
    seg.add_argument("--out")
    seg.add_argument("--traces", help="CSV of per-sample K and log posterior")
    seg.add_argument("--emit-plot-data", help="CSV of cp_marginal and label estimate per time index")
    seg.add_argument("--deterministic", action="store_true",
                     help="omit timestamps and runtimes from the result")
    seg.add_argument("--iters", type=int)
    seg.add_argument("--seed", type=int)
    seg.add_argument("--d-model", type=int)
    seg.add_argument("--delta", type=float)
    seg.add_argument("--beta", type=float)
    seg.add_argument("--nu", type=float)
    seg.add_argument("--gamma", type=float)
    seg.add_argument("--alpha", type=float)
    seg.add_argument("--k-max", type=int)
    seg.add_argument("--l-min", type=int)
    seg.add_argument("--nc-iter", type=int)
    seg.add_argument("--m-aux", type=int)
    seg.add_argument("--burn-in", type=float)
    seg.add_argument("--thin", type=int)
    seg.set_defaults(func=cmd_segment)

    sim = sub.add_parser("simulate", help="generate a piecewise AR series from a scenario")
    sim.add_argument("--scenario", required=True)
    sim.add_argument("--out")
    sim.add_argument("--truth", help="truth JSON path (default: <out>.truth.json)")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--preview", action="store_true")
    sim.set_defaults(func=cmd_simulate)

    ev = sub.add_parser("evaluate", help="score a result against ground truth")
    ev.add_argument("--result", required=True)
    ev.add_argument("--truth", required=True)
    ev.add_argument("--window", type=int, default=10)
    ev.add_argument("--out")
    ev.set_defaults(func=cmd_evaluate)

    oc = sub.add_parser("oracle-check", help="closed-form and sampler self-tests")
    oc.add_argument("--suite", choices=("all", "quadrature", "enumeration"), default="all")
    oc.add_argument("--tv-threshold", type=float, default=0.05)
    oc.add_argument("--seed", type=int, default=0)
    oc.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        sys.stderr.write(f"error: {exc}\n")
        if exc.payload is not None:
            sys.stderr.write(dumps({"error": str(exc), "state": exc.payload}))
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
