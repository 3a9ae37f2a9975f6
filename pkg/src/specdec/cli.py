"""Command line entry point: ``specdec {train,run,report,selftest}``."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .errors import SpecDecError
from .experiment import (
    ExperimentConfig,
    fixture_config_path,
    run_experiment,
    summary_csv,
    summary_json,
    train_models,
)
from .metrics import compare_report, comparison_csv, comparison_table


def _load_config(args) -> ExperimentConfig:
    path = args.config or fixture_config_path()
    return ExperimentConfig.load(path, seed=args.seed)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    for path in train_models(cfg, args.out or "snapshots"):
        print(path)
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    report = run_experiment(cfg, args.out, args.format)
    if args.out is None:
        sys.stdout.write(summary_json(report) if args.format == "json" else summary_csv(report))
    else:
        for run in report["runs"]:
            print(f"{run['scenario']:>12} {run['method']:>20}  "
                  f"tau={run['block_efficiency']:.3f}  speedup={run['modeled_speedup']:.3f}")
    return 0


def cmd_report(args) -> int:
    reports = []
    for path in args.summaries:
        try:
            reports.append(json.loads(Path(path).read_text(encoding="utf-8")))
        except OSError as exc:
            raise SpecDecError(f"cannot read summary {path}: {exc}") from exc
    rows = compare_report(reports)
    print(comparison_table(rows), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.format == "csv":
            (out / "comparison.csv").write_text(comparison_csv(rows), encoding="utf-8")
        else:
            data = [r.__dict__ for r in rows]
            (out / "comparison.json").write_text(json.dumps(data, indent=1, sort_keys=True) + "\n",
                                                 encoding="utf-8")
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    seed = args.seed if args.seed is not None else 0
    ok = True
    for name, passed, detail, seconds in run_selftest(seed=seed, quick=args.quick):
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name:<32} {detail}  ({seconds:.1f}s)")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specdec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", help="experiment config (YAML or JSON); defaults to the bundled fixture")
        p.add_argument("--seed", type=int, help="override the config seed (u64)")
        p.add_argument("--out", help=out_help)
        p.add_argument("--format", choices=("json", "csv"), default="json")

    common(sub.add_parser("train", help="fit the k-gram models of a config"), "snapshot directory")
    common(sub.add_parser("run", help="run an experiment config"), "output directory")
    p = sub.add_parser("report", help="compare run summaries")
    p.add_argument("summaries", nargs="+", help="summary.json files")
    p.add_argument("--out", help="directory for comparison.{json,csv}")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p = sub.add_parser("selftest", help="run the lossless-decoding oracle suite")
    p.add_argument("--seed", type=int)
    p.add_argument("--quick", action="store_true", help="smaller Monte-Carlo sample sizes")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"train": cmd_train, "run": cmd_run, "report": cmd_report, "selftest": cmd_selftest}
    started = time.perf_counter()
    try:
        code = handler[args.command](args)
    except SpecDecError as exc:
        print(f"specdec: error: {exc}", file=sys.stderr)
        return 2
    if args.command != "selftest" and getattr(args, "out", None):
        print(f"done in {time.perf_counter() - started:.1f}s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
