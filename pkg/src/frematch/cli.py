"""Command-line front end.

Subcommands: train (one run), ablate (mode grid over seeds), sweep
(one hyperparameter over a value list), eval (score a checkpoint),
propcheck (the property suite).  Exit codes: 0 success, 1 usage error,
2 training aborted on non-finite numbers, 3 property failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import config as cfgmod
from . import data as dat
from . import nets
from . import propcheck
from . import trainer

SWEEPABLE = ("lambda", "eta", "m", "beta", "lr0", "mu")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; this tool reserves 2 for aborts
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="frematch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="config file path (key = value lines)")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--out", default="runs", help="run directory root")

    p_train = sub.add_parser("train", help="single training run")
    common(p_train)
    p_train.add_argument("--seed", type=int, help="override the run seed")

    p_ablate = sub.add_parser("ablate", help="mode ablation over seeds")
    common(p_ablate)
    p_ablate.add_argument("--seeds", default="0,1,2,3,4,5,6",
                          help="comma-separated seed list (>= 3)")
    p_ablate.add_argument("--modes",
                          default="frematch,pl_only,fsr_only,supervised",
                          help="comma-separated mode list")
    p_ablate.add_argument("--parallel", type=int, default=1, metavar="N",
                          help="independent runs in N worker threads")

    p_sweep = sub.add_parser("sweep", help="one-at-a-time hyperparameter sweep")
    common(p_sweep)
    p_sweep.add_argument("--param", required=True,
                         help=f"one of {', '.join(SWEEPABLE)}")
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated numeric values")
    p_sweep.add_argument("--seeds", default="0,1,2",
                         help="comma-separated seed list")
    p_sweep.add_argument("--parallel", type=int, default=1, metavar="N")

    p_eval = sub.add_parser("eval", help="score a checkpoint on the test split")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--seed", type=int, help="override the split seed")

    p_prop = sub.add_parser("propcheck", help="run the property suite")
    p_prop.add_argument("--seed", type=int, default=0)

    return parser


def _load_experiment(args) -> cfgmod.ExperimentConfig:
    if args.config is not None:
        if not os.path.exists(args.config):
            raise UsageError(f"config file not found: {args.config}")
        exp = cfgmod.load_config(args.config)
    else:
        exp = cfgmod.default_experiment()
    exp = cfgmod.apply_overrides(exp, args.overrides)
    if getattr(args, "seed", None) is not None:
        exp = cfgmod.apply_overrides(exp, [f"seed={args.seed}"])
    return exp


def _parse_seeds(raw: str):
    try:
        seeds = [int(part) for part in raw.split(",") if part.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"bad seed list {raw!r}: {exc}") from exc
    if not seeds:
        raise UsageError("empty seed list")
    return seeds


def _make_run_dir(root: str, mode: str, seed: int) -> str:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = os.path.join(root, f"{stamp}-{mode}-seed{seed}")
    path, k = base, 1
    while os.path.exists(path):
        k += 1
        path = f"{base}-{k}"
    os.makedirs(path)
    return path


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S")


def _execute(exp: cfgmod.ExperimentConfig, out_root: str):
    """One run with full artifacts.  Returns (final empirical test error
    or None on abort, run directory)."""
    seed = exp.train.seed
    ds = cfgmod.build_dataset(exp.dataset, seed)
    split = dat.split_ssl(ds, exp.split.labels_per_class, exp.split.test_frac,
                          seed)
    run_dir = _make_run_dir(out_root, exp.train.mode, seed)
    with open(os.path.join(run_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(cfgmod.render_config(exp))
    outputs = {"metrics": "metrics.csv", "checkpoint": "checkpoint.bin",
               "config": "config.txt"}
    manifest_path = os.path.join(run_dir, "manifest.json")
    started = _now()
    cfgmod.write_manifest(manifest_path, exp, seed, started, outputs)
    try:
        log = trainer.run(exp.train, ds, split, out_dir=run_dir)
    except trainer.TrainAbort:
        cfgmod.write_manifest(manifest_path, exp, seed, started, outputs,
                              finished=_now())
        raise
    cfgmod.write_manifest(manifest_path, exp, seed, started, outputs,
                          finished=_now())
    return log.epochs[-1].err_emp, run_dir


def cmd_train(args) -> int:
    exp = _load_experiment(args)
    try:
        err, run_dir = _execute(exp, args.out)
    except trainer.TrainAbort as abort:
        print(f"aborted: {abort}", file=sys.stderr)
        return 2
    print(f"run dir: {run_dir}")
    print(f"final test error (empirical model): {err:.9g}")
    return 0


def _run_jobs(jobs, parallel: int):
    """jobs: list of zero-arg callables returning (key, error or None)."""
    if parallel <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=parallel) as pool:
        return [f.result() for f in [pool.submit(job) for job in jobs]]


def _summary_rows(results):
    """(key, err) pairs -> {key: (median, min, max, n_ok, n_failed)}."""
    by_key = {}
    for key, err in results:
        by_key.setdefault(key, []).append(err)
    rows = {}
    for key, errs in by_key.items():
        ok = [e for e in errs if e is not None]
        failed = len(errs) - len(ok)
        if ok:
            rows[key] = (float(np.median(ok)), float(np.min(ok)),
                         float(np.max(ok)), len(ok), failed)
        else:
            rows[key] = (float("nan"),) * 3 + (0, failed)
    return rows


def cmd_ablate(args) -> int:
    exp = _load_experiment(args)
    seeds = _parse_seeds(args.seeds)
    if len(seeds) < 3:
        raise UsageError(f"ablation needs >= 3 seeds, got {len(seeds)}")
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for mode in modes:
        if mode not in trainer.MODES:
            raise UsageError(f"unknown mode {mode!r}")

    def job_for(mode, seed):
        run_exp = cfgmod.apply_overrides(exp, [f"mode={mode}", f"seed={seed}"])

        def job():
            try:
                err, _ = _execute(run_exp, args.out)
            except trainer.TrainAbort as abort:
                print(f"failed: mode={mode} seed={seed}: {abort}",
                      file=sys.stderr)
                return (mode, None)
            return (mode, err)
        return job

    results = _run_jobs([job_for(m, s) for m in modes for s in seeds],
                        args.parallel)
    rows = _summary_rows(results)
    lines = ["mode,median,min,max,runs,failed"]
    for mode in modes:
        med, lo, hi, n_ok, n_failed = rows[mode]
        lines.append(f"{mode},{med:.9g},{lo:.9g},{hi:.9g},{n_ok},{n_failed}")
    table = "\n".join(lines) + "\n"
    os.makedirs(args.out, exist_ok=True)
    out_csv = os.path.join(args.out,
                           f"ablation-{time.strftime('%Y%m%d-%H%M%S')}.csv")
    with open(out_csv, "w", encoding="utf-8") as fh:
        fh.write(table)
    print(table, end="")
    print(f"written: {out_csv}")
    return 0


def cmd_sweep(args) -> int:
    exp = _load_experiment(args)
    if args.param not in SWEEPABLE:
        raise UsageError(f"cannot sweep {args.param!r}; choose from "
                         f"{', '.join(SWEEPABLE)}")
    values = []
    for part in args.values.split(","):
        part = part.strip()
        try:
            values.append(float(part))
        except ValueError:
            raise UsageError(f"non-numeric sweep value {part!r}")
    if not values:
        raise UsageError("empty value list")
    seeds = _parse_seeds(args.seeds)

    def job_for(value, seed):
        run_exp = cfgmod.apply_overrides(
            exp, [f"{args.param}={value!r}", f"seed={seed}"])

        def job():
            try:
                err, _ = _execute(run_exp, args.out)
            except trainer.TrainAbort as abort:
                print(f"failed: {args.param}={value} seed={seed}: {abort}",
                      file=sys.stderr)
                return (value, None)
            return (value, err)
        return job

    results = _run_jobs([job_for(v, s) for v in values for s in seeds],
                        args.parallel)
    rows = _summary_rows(results)
    lines = [f"{args.param},median,min,max,runs,failed"]
    for value in values:
        med, lo, hi, n_ok, n_failed = rows[value]
        lines.append(f"{value:.9g},{med:.9g},{lo:.9g},{hi:.9g},{n_ok},{n_failed}")
    table = "\n".join(lines) + "\n"
    os.makedirs(args.out, exist_ok=True)
    out_csv = os.path.join(args.out,
                           f"sweep-{args.param}-{time.strftime('%Y%m%d-%H%M%S')}.csv")
    with open(out_csv, "w", encoding="utf-8") as fh:
        fh.write(table)
    print(table, end="")
    print(f"written: {out_csv}")
    return 0


def cmd_eval(args) -> int:
    exp = _load_experiment(args)
    if not os.path.exists(args.checkpoint):
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    ck = nets.load_checkpoint(args.checkpoint)
    seed = exp.train.seed
    ds = cfgmod.build_dataset(exp.dataset, seed)
    split = dat.split_ssl(ds, exp.split.labels_per_class, exp.split.test_frac,
                          seed)
    test_x = ds.samples[split.test_idx]
    test_y = ds.labels[split.test_idx]
    err_basic = trainer.evaluate(ck.dual.basic, ck.dual.spec, test_x, test_y)
    err_emp = trainer.evaluate(ck.dual.empirical, ck.dual.spec, test_x, test_y)
    print(f"test error basic: {err_basic:.9g}")
    print(f"test error empirical: {err_emp:.9g}")
    return 0


def cmd_propcheck(args) -> int:
    results = propcheck.run_all(args.seed)
    print(propcheck.format_report(results))
    return 0 if all(r.passed for r in results) else 3


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {"train": cmd_train, "ablate": cmd_ablate,
                   "sweep": cmd_sweep, "eval": cmd_eval,
                   "propcheck": cmd_propcheck}[args.command]
        return handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except cfgmod.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
