"""Command-line front end: run a search, evaluate a dataset, report on a
finished run.

Exit codes: 0 success, 1 usage/config, 2 data/schema, 3 runtime failure.
The default output directory may be set via the FEATGEN_OUT environment
variable.  Manifests are written even when a run fails partway; a transformed
CSV is only ever written for a completed run.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from .errors import ConfigError, SchemaError
from .evaluator import (LearnerConfig, check_metric, default_metric, evaluate_cv)
from .search import (SearchConfig, SearchResult, order_report, run_search)
from .tabular import Dataset, load_csv, read_schema, split_folds, Task
from .transforms import evaluate_expression

USAGE_EXIT = 1
DATA_EXIT = 2
RUNTIME_EXIT = 3

MANIFEST_NAME = "manifest.json"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def _fmt(x: float) -> str:
    return repr(float(x))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _cell(value, discrete: bool) -> str:
    return str(int(value)) if discrete else _fmt(value)


def _export_names(result: SearchResult) -> list[str]:
    used = {result.searched.target.name}
    names = []
    for j, feat in enumerate(result.best_features):
        if feat.expr.op is None:
            name = feat.expr.name
        else:
            name = f"f{j}"
            while name in used or any(c.name == name for c in result.searched.features):
                name += "_"
        used.add(name)
        names.append(name)
    return names


def _write_outputs(result: SearchResult, out: Path) -> dict[str, str]:
    """Transformed CSV (re-evaluated from the searched dataset), its schema,
    the expressions manifest and the trace log."""
    d = result.searched
    names = _export_names(result)
    columns = [evaluate_expression(f.expr, d) for f in result.best_features]
    discrete = [c.dtype.kind in "iu" for c in columns]

    csv_path = out / "transformed.csv"
    with csv_path.open("w", encoding="utf-8") as fh:
        fh.write(",".join(names + [d.target.name]) + "\n")
        t_discrete = d.target.values.dtype.kind in "iu"
        for r in range(d.n):
            cells = [_cell(col[r], disc) for col, disc in zip(columns, discrete)]
            cells.append(_cell(d.target.values[r], t_discrete))
            fh.write(",".join(cells) + "\n")

    schema_path = out / "transformed.schema"
    with schema_path.open("w", encoding="utf-8") as fh:
        for name, disc in zip(names, discrete):
            fh.write(f"{name}={'discrete' if disc else 'continuous'}\n")
        sub = "discrete" if t_discrete else "continuous"
        fh.write(f"{d.target.name}=target:{sub}\n")

    expr_path = out / "expressions.txt"
    with expr_path.open("w", encoding="utf-8") as fh:
        for name, feat in zip(names, result.best_features):
            fh.write(f"{name}={feat.expr}\n")

    trace_path = out / "trace.csv"
    with trace_path.open("w", encoding="utf-8") as fh:
        fh.write("epoch,step,score,r1,mean_r2,epsilon,n_features,error\n")
        for rec in result.trace:
            fh.write(f"{rec.epoch},{rec.step},{_fmt(rec.score)},{_fmt(rec.r1)},"
                     f"{_fmt(rec.mean_r2)},{_fmt(rec.epsilon)},{rec.n_features},"
                     f"{rec.error or ''}\n")

    rewards_path = out / "rewards.csv"
    with rewards_path.open("w", encoding="utf-8") as fh:
        fh.write("epoch,step,feature,r_del,r_rep,r_add,r_imp,r2\n")
        for epoch, step, feat, bd in result.reward_log:
            fh.write(f"{epoch},{step},{feat},{_fmt(bd.r_del)},{_fmt(bd.r_rep)},"
                     f"{_fmt(bd.r_add)},{_fmt(bd.r_imp)},{_fmt(bd.r2)}\n")

    return {"transformed_csv": csv_path.name, "schema": schema_path.name,
            "expressions": expr_path.name, "trace": trace_path.name,
            "rewards": rewards_path.name}


def _write_manifest(out: Path, payload: dict) -> None:
    (out / MANIFEST_NAME).write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _config_from_args(args, task: Task) -> SearchConfig:
    metric = args.metric
    if metric is not None:
        check_metric(metric, task)
    learner = LearnerConfig(kind=args.learner, trees=args.trees, seed=args.seed)
    return SearchConfig(
        epochs=args.epochs, steps=args.steps, seed=args.seed,
        learner=learner, cap=args.cap, folds=args.folds, metric=metric,
        ablation=args.ablation, chain_epochs=args.chain_epochs)


def cmd_run(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    manifest: dict = {"command": "run", "status": "failed",
                      "timing": {"started_at": started}}
    try:
        schema = read_schema(args.schema)
        d = load_csv(args.data, schema)
        cfg = _config_from_args(args, d.task)
        cfg.validate(len(d.features))
        manifest.update({
            "seed": args.seed,
            "input": {"path": str(args.data), "sha256": _sha256(Path(args.data))},
            "config": dataclasses.asdict(cfg),
            "task": d.task.value,
        })
        result = run_search(d, cfg)
        outputs = _write_outputs(result, out)
        low, high, proportion = order_report(result)
        manifest.update({
            "status": "ok",
            "metric": result.metric,
            "base_score": result.base_score,
            "best_score": result.best_score,
            "delta": result.delta,
            "order_report": {"low": low, "high": high, "proportion": proportion},
            "epoch_best": result.epoch_best,
            "epochs": cfg.epochs,
            "steps": cfg.steps,
            "flagged_steps": [list(f) for f in result.flagged_steps],
            "outputs": outputs,
        })
        manifest["timing"]["duration_sec"] = time.time() - started
        _write_manifest(out, manifest)
        print(f"task: {d.task.value}  metric: {result.metric}")
        print(f"base score: {_fmt(result.base_score)}")
        print(f"best score: {_fmt(result.best_score)}")
        print(f"delta:      {_fmt(result.delta)}")
        print(f"outputs in {out}")
        return 0
    except Exception as exc:
        manifest["error"] = str(exc)
        manifest["timing"]["duration_sec"] = time.time() - started
        _write_manifest(out, manifest)
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc, SchemaError):
            return DATA_EXIT
        if isinstance(exc, ConfigError):
            return USAGE_EXIT
        return RUNTIME_EXIT


def cmd_evaluate(args) -> int:
    try:
        schema = read_schema(args.schema)
        d = load_csv(args.data, schema)
        metric = args.metric or default_metric(d.task)
        check_metric(metric, d.task)
        lc = LearnerConfig(kind=args.learner, trees=args.trees, seed=args.seed)
        folds = split_folds(d, args.folds, args.seed)
        score = evaluate_cv(d, lc, folds, metric)
        print(f"{args.folds}-fold CV {score.metric}: {_fmt(score.value)}")
        return 0
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


def cmd_report(args) -> int:
    try:
        mdir = Path(args.manifest)
        mpath = mdir / MANIFEST_NAME
        if not mpath.exists():
            print(f"error: no {MANIFEST_NAME} in {mdir}", file=sys.stderr)
            return DATA_EXIT
        try:
            manifest = json.loads(mpath.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            print(f"error: corrupt manifest: {exc}", file=sys.stderr)
            return DATA_EXIT
        if manifest.get("status") != "ok" or "order_report" not in manifest:
            print("error: manifest does not describe a completed run", file=sys.stderr)
            return DATA_EXIT
        rep = manifest["order_report"]
        print("feature order report")
        print(f"  low-order  (order <= 1): {rep['low']}")
        print(f"  high-order (order >= 2): {rep['high']}")
        print(f"  high-order proportion:   {100.0 * rep['proportion']:.1f}%")
        series = manifest["epoch_best"]
        conv_path = mdir / "convergence.csv"
        with conv_path.open("w", encoding="utf-8") as fh:
            fh.write("epoch,best_score\n")
            for e, s in enumerate(series):
                fh.write(f"{e},{_fmt(s)}\n")
        print(f"convergence series ({len(series)} epochs) written to {conv_path}")
        return 0
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="featgen",
                     description="dual-agent feature generation for tabular data")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="search for an improved feature set")
    run.add_argument("--data", required=True, help="input CSV")
    run.add_argument("--schema", required=True, help="schema spec file")
    run.add_argument("--out", default=None, help="output directory "
                     "(default: $FEATGEN_OUT)")
    run.add_argument("--epochs", type=int, default=200)
    run.add_argument("--steps", type=int, default=6)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--learner", choices=("rf", "logreg"), default="rf")
    run.add_argument("--trees", type=int, default=50)
    run.add_argument("--folds", type=int, default=5)
    run.add_argument("--metric", choices=("f1-macro", "f1-weighted", "1rae"),
                     default=None)
    run.add_argument("--ablation", choices=("k", "t", "c"), default=None)
    run.add_argument("--cap", type=int, default=None)
    run.add_argument("--chain-epochs", action="store_true")
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("evaluate", help="cross-validated score of a dataset")
    ev.add_argument("--data", required=True)
    ev.add_argument("--schema", required=True)
    ev.add_argument("--learner", choices=("rf", "logreg"), default="rf")
    ev.add_argument("--trees", type=int, default=50)
    ev.add_argument("--folds", type=int, default=5)
    ev.add_argument("--metric", choices=("f1-macro", "f1-weighted", "1rae"),
                    default=None)
    ev.add_argument("--seed", type=int, default=0)
    ev.set_defaults(func=cmd_evaluate)

    rep = sub.add_parser("report", help="order report + convergence series")
    rep.add_argument("--manifest", required=True, help="directory of a finished run")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    import os
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "run" and args.out is None:
        args.out = os.environ.get("FEATGEN_OUT")
        if not args.out:
            print("error: --out or $FEATGEN_OUT required", file=sys.stderr)
            return USAGE_EXIT
    code = args.func(args)
    return code


if __name__ == "__main__":
    sys.exit(main())
