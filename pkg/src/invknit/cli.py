"""Command line entry point.

Subcommands: dataset build, train, predict, eval, inspect. Every successful
invocation prints exactly one machine-readable JSON line to stdout. Exit
codes: 0 success, 1 usage error (the message names the offending flag),
2 runtime failure. Setting INVKNIT_SEED overrides any configured seed.
All outputs stay under the directory named by --out / --checkpoint-dir.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import EvalError, InvknitError
from .eval import per_class_f1, run_scenario, write_report
from .labels import load_grid, load_label_map
from .models import count_parameters, load_checkpoint
from .synthgen import DatasetConfig, build_dataset, split_ids
from .train import TrainConfig, materialize_frompred, train_generation, train_inference


class _UsageError(Exception):
    """Bad invocation; the message names the flag at fault."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _env_seed() -> int | None:
    raw = os.environ.get("INVKNIT_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise _UsageError(f"INVKNIT_SEED must be an integer, got {raw!r}") from None


# ------------------------------------------------------------ subcommands

def _cmd_dataset(args) -> dict:
    if args.action != "build":
        raise _UsageError(f"unknown dataset action {args.action!r}; use 'build'")
    seed = _env_seed()
    config = DatasetConfig(
        seed=args.seed if seed is None else seed,
        sj_count=args.sj,
        mj_count=args.mj,
    )
    manifest = build_dataset(config, args.out)
    return {
        "command": "dataset",
        "out": str(args.out),
        "seed": config.seed,
        "counts": manifest["counts"],
        "fk_front_fraction": manifest["fk_front_fraction"],
    }


def _cmd_train(args) -> dict:
    config_path = Path(args.config)
    if not config_path.exists():
        raise _UsageError(f"--config: no such file: {config_path}")
    config = TrainConfig.from_dict(json.loads(config_path.read_text()))
    seed = _env_seed()
    if seed is not None:
        from dataclasses import replace
        config = replace(config, seed=seed)
    run_dir = Path(args.checkpoint_dir) / args.name
    if config.phase == "generation":
        summary = train_generation(config, run_dir, resume_step=args.resume)
    else:
        summary = train_inference(config, run_dir, resume_step=args.resume)
    summary["command"] = "train"
    summary["phase"] = config.phase
    return summary


def _cmd_predict(args) -> dict:
    scenario = args.scenario
    if scenario in (1, 2, 3) and not args.gen_ckpt:
        raise _UsageError(f"--gen-ckpt is required for scenario {scenario}")
    if scenario in (2, 3, 4) and not args.infer_ckpt:
        raise _UsageError(f"--infer-ckpt is required for scenario {scenario}")
    if scenario in (3, 4) and not args.yarn:
        raise _UsageError(f"--yarn is required for scenario {scenario}")

    checkpoints: dict[str, str] = {}
    if scenario in (1, 2, 3):
        checkpoints["generation"] = args.gen_ckpt
    if scenario == 2:
        checkpoints["inference"] = args.infer_ckpt
    elif scenario in (3, 4):
        checkpoints[f"inference_{args.yarn}"] = args.infer_ckpt

    if args.ids:
        ids = [s for s in args.ids.split(",") if s]
    else:
        ids = split_ids(args.input, args.split)
    if args.yarn:
        ids = [sid for sid in ids if sid.startswith(args.yarn)]
    report = run_scenario(scenario, args.input, ids, checkpoints, args.out,
                          input_source=args.input_source)
    return {
        "command": "predict",
        "scenario": scenario,
        "out": str(args.out),
        "samples": report.sample_count,
        "space": report.space,
        "macro_f1": report.macro_f1,
        "weighted_f1": report.weighted_f1,
    }


def _cmd_materialize(args) -> dict:
    out = materialize_frompred(args.input, args.gen_ckpt, args.out)
    count = len(list(Path(out).glob("*.npy")))
    return {"command": "materialize", "out": str(out), "samples": count}


def _cmd_eval(args) -> dict:
    pred_dir, truth_dir = Path(args.pred), Path(args.truth)
    map_path = Path(args.map)
    if not pred_dir.is_dir():
        raise _UsageError(f"--pred: no such directory: {pred_dir}")
    if not truth_dir.is_dir():
        raise _UsageError(f"--truth: no such directory: {truth_dir}")
    if not map_path.exists():
        raise _UsageError(f"--map: no such file: {map_path}")
    label_map = load_label_map(map_path)

    pred_ids = {p.stem for p in pred_dir.glob("*.csv")}
    truth_ids = {p.stem for p in truth_dir.glob("*.csv")}
    if pred_ids != truth_ids:
        raise EvalError(
            f"prediction/truth sets differ: {sorted(pred_ids ^ truth_ids)[:5]}"
        )
    if not pred_ids:
        raise EvalError("no grid CSVs to compare")
    ids = sorted(pred_ids)
    preds = [load_grid(pred_dir / f"{i}.csv", label_map) for i in ids]
    truths = [load_grid(truth_dir / f"{i}.csv", label_map) for i in ids]
    report = per_class_f1(preds, truths, label_map)

    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    write_report(report, report_path.parent)
    return {
        "command": "eval",
        "report": str(report_path),
        "samples": report.sample_count,
        "macro_f1": report.macro_f1,
        "weighted_f1": report.weighted_f1,
    }


def _cmd_inspect(args) -> dict:
    path = Path(args.ckpt)
    if not path.exists():
        raise _UsageError(f"--ckpt: no such file: {path}")
    store = load_checkpoint(path)
    return {
        "command": "inspect",
        "ckpt": str(path),
        "config": store.config.to_dict(),
        "parameters": count_parameters(store.config),
        "tensors": len(store.tensors),
    }


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="invknit",
                     description="Fabric images to stitch instruction grids.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="build a synthetic dataset")
    p.add_argument("action", choices=["build"])
    p.add_argument("--out", required=True, help="dataset output directory")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--sj", type=int, default=200, help="single-yarn sample count")
    p.add_argument("--mj", type=int, default=130, help="multi-yarn sample count")
    p.set_defaults(func=_cmd_dataset)

    p = sub.add_parser("train", help="run a training phase")
    p.add_argument("--config", required=True, help="TrainConfig JSON file")
    p.add_argument("--checkpoint-dir", required=True)
    p.add_argument("--name", default="run", help="run directory name")
    p.add_argument("--resume", type=int, default=None, help="resume from step")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="run a usage scenario over samples")
    p.add_argument("--scenario", type=int, choices=[1, 2, 3, 4], required=True)
    p.add_argument("--input", required=True, help="dataset directory")
    p.add_argument("--gen-ckpt", help="generation run directory")
    p.add_argument("--infer-ckpt", help="inference checkpoint file")
    p.add_argument("--yarn", choices=["sj", "mj"])
    p.add_argument("--input-source", choices=["frompred", "fromtrue"],
                   default="frompred")
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--ids", help="comma-separated sample ids (overrides --split)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("materialize", help="write predicted front planes")
    p.add_argument("--input", required=True, help="dataset directory")
    p.add_argument("--gen-ckpt", required=True, help="generation run directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_materialize)

    p = sub.add_parser("eval", help="score prediction CSVs against truth CSVs")
    p.add_argument("--pred", required=True, help="directory of predicted grids")
    p.add_argument("--truth", required=True, help="directory of true grids")
    p.add_argument("--map", required=True, help="label map CSV")
    p.add_argument("--report", required=True, help="report JSON output path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("inspect", help="print a checkpoint's config and size")
    p.add_argument("--ckpt", required=True)
    p.set_defaults(func=_cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        summary = args.func(args)
    except _UsageError as exc:
        print(f"invknit: error: {exc}", file=sys.stderr)
        return 1
    except InvknitError as exc:
        print(f"invknit: error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
