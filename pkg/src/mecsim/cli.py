"""Command-line front end: run, sweep, verify, gen-catalog.

Environment overrides: MECSIM_OUT (default output directory when --out is
omitted) and MECSIM_WORKERS (worker processes for sweep, default 1).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import shutil
import sys
import tempfile
import traceback
from concurrent.futures import ProcessPoolExecutor

from .catalog import CatalogSpec, generate_synthetic_catalog, save_catalog
from .optimizer import (ORACLE_MAX_ITEMS, InstanceFormatError, brute_force_oracle, load_instance,
                        save_instance, solve_cache_transcode)
from .sim import ConfigError, ScenarioConfig, build_world, finalize_metrics, metrics_csv, step

AXES = {"total_cache_bytes": "total_cache_bytes", "client_count": "n_clients",
        "cache_fraction": "cache_fraction"}
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _out_dir(arg: str | None) -> str:
    out = arg or os.environ.get("MECSIM_OUT")
    if not out:
        raise ConfigError("no output directory: pass --out or set MECSIM_OUT")
    return out


def _workers() -> int:
    raw = os.environ.get("MECSIM_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"MECSIM_WORKERS must be an integer, got {raw!r}")
    return max(1, n)


def run_to_dir(cfg: ScenarioConfig, out: str, dump_instances: int = 0) -> dict:
    """Simulate and write metrics.csv, summary.json and config.json atomically."""
    parent = os.path.dirname(os.path.abspath(out)) or "."
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".partial-", dir=parent)
    try:
        world = build_world(cfg)
        if dump_instances > 0 and hasattr(world.policy, "instance_log"):
            inst_dir = os.path.join(tmp, "instances")
            os.makedirs(inst_dir)
            saved = []

            def log(inst):
                if inst.n and len(saved) < dump_instances:
                    path = os.path.join(inst_dir, f"p{world.period:05d}_s{inst.server_id}.json")
                    save_instance(inst, path)
                    saved.append(path)
            world.policy.instance_log = log
        for _ in range(cfg.total_periods):
            step(world)
        summary = finalize_metrics(world)
        with open(os.path.join(tmp, "metrics.csv"), "w", newline="") as fh:
            fh.write(metrics_csv(world))
        with open(os.path.join(tmp, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=1, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(tmp, "config.json"), "w") as fh:
            json.dump(cfg.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        if os.path.exists(out):
            shutil.rmtree(out)
        os.replace(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return summary


def _load_config(path: str, seed: int | None) -> ScenarioConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    cfg = ScenarioConfig.load(path)
    if seed is not None:
        cfg = cfg.replace(seed=seed)
    return cfg


def cmd_run(args) -> int:
    cfg = _load_config(args.config, args.seed)
    out = _out_dir(args.out)
    summary = run_to_dir(cfg, out, args.dump_instances)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _parse_values(axis: str, raw: str) -> list:
    conv = float if axis == "cache_fraction" else int
    try:
        vals = [conv(float(v)) if conv is int else conv(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--values: cannot parse {raw!r}")
    if not vals:
        raise ConfigError("--values: need at least one value")
    if len(set(vals)) != len(vals):
        raise ConfigError("--values: values must be distinct")
    return vals


def _sweep_point(job):
    cfg_dict, out = job
    try:
        cfg = ScenarioConfig.from_dict(cfg_dict)
        return out, run_to_dir(cfg, out), None
    except Exception:
        return out, None, traceback.format_exc()


def cmd_sweep(args) -> int:
    base = _load_config(args.config, None)
    if args.axis not in AXES:
        raise ConfigError(f"--axis must be one of {sorted(AXES)}")
    values = _parse_values(args.axis, args.values)
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [base.seed]
    for p in policies:
        base.replace(policy=p)  # validates the name
    out = _out_dir(args.out)
    os.makedirs(out, exist_ok=True)
    field = AXES[args.axis]
    jobs, meta = [], {}
    for p in policies:
        for v in values:
            for s in seeds:
                d = base.to_dict()
                d.update(policy=p, seed=s)
                d[field] = v
                sub = os.path.join(out, p, f"{args.axis}={v}", f"seed={s}")
                jobs.append((d, sub))
                meta[sub] = (p, v, s)
    results, failures = {}, []
    workers = _workers()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            outcomes = list(ex.map(_sweep_point, jobs))
    else:
        outcomes = [_sweep_point(j) for j in jobs]
    for sub, summary, err in outcomes:
        if err is None:
            results[sub] = summary
        else:
            p, v, s = meta[sub]
            failures.append({"policy": p, "axis": args.axis, "value": v, "seed": s, "error": err})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "axis", "value", "seed", "metric", "metric_value"])
    for d, sub in jobs:
        if sub not in results:
            continue
        p, v, s = meta[sub]
        for k, val in sorted(results[sub].items()):
            if isinstance(val, (int, float)) and not isinstance(val, bool) or val is None:
                w.writerow([p, args.axis, v, s, k, "" if val is None else repr(val)])
    with open(os.path.join(out, "combined.csv"), "w", newline="") as fh:
        fh.write(buf.getvalue())
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump({"points": len(jobs), "completed": len(results), "failures": failures},
                  fh, indent=1)
        fh.write("\n")
    for f in failures:
        print(f"FAILED {f['policy']} {f['axis']}={f['value']} seed={f['seed']}", file=sys.stderr)
    return EXIT_OK if not failures else EXIT_FAIL


def cmd_verify(args) -> int:
    inst = load_instance(args.instance)
    bb = solve_cache_transcode(inst)
    print(f"items: {inst.n}")
    print(f"branch-and-bound objective: {bb.objective!r} (nodes {bb.nodes})")
    if not inst.feasible(bb.state):
        print("FAIL: branch-and-bound solution violates the instance constraints")
        return EXIT_FAIL
    if inst.n > ORACLE_MAX_ITEMS:
        print(f"brute force skipped: {inst.n} items exceeds the limit of {ORACLE_MAX_ITEMS}")
        print("PASS (solver only)")
        return EXIT_OK
    bf = brute_force_oracle(inst)
    print(f"brute-force objective: {bf.objective!r}")
    if abs(bb.objective - bf.objective) <= 1e-6:
        print("PASS")
        return EXIT_OK
    print("FAIL")
    return EXIT_FAIL


def cmd_gen_catalog(args) -> int:
    d = {}
    if args.spec:
        try:
            with open(args.spec) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"--spec: {exc}")
        if not isinstance(d, dict):
            raise ConfigError("--spec: expected a JSON object")
    try:
        spec = CatalogSpec(**d)
    except TypeError as exc:
        raise ConfigError(f"--spec: {exc}")
    cat = generate_synthetic_catalog(spec, args.seed)
    save_catalog(cat, args.out)
    print(f"wrote {len(cat.videos)} videos, {cat.total_bytes()} bytes to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mecsim",
        description="Multi-MEC DASH simulator with joint cache/transcode/RB optimization.",
        epilog="Environment: MECSIM_OUT sets the default --out; MECSIM_WORKERS sets sweep workers.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="simulate one scenario")
    r.add_argument("--config", required=True, help="scenario JSON (unknown keys are errors)")
    r.add_argument("--seed", type=int, help="override the config seed")
    r.add_argument("--out", help="output directory (default $MECSIM_OUT)")
    r.add_argument("--dump-instances", type=int, default=0, metavar="N",
                   help="also save the first N nonempty cache-decision instances")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a parameter sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--axis", required=True, choices=sorted(AXES))
    s.add_argument("--values", required=True, help="comma-separated axis values")
    s.add_argument("--policies", default="ctra,lru-rr,lfu-rr", help="comma-separated policy names")
    s.add_argument("--seeds", help="comma-separated seeds (default: the config seed)")
    s.add_argument("--out", help="output directory (default $MECSIM_OUT)")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="re-solve a saved instance with B&B and brute force")
    v.add_argument("--instance", required=True)
    v.set_defaults(func=cmd_verify)

    g = sub.add_parser("gen-catalog", help="write a synthetic catalog CSV")
    g.add_argument("--spec", help="JSON object of catalog-generation parameters")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_catalog)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InstanceFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
