"""Command-line episode runner.

    trimanip run --config scenario.json --seed 3 [--out DIR]
    trimanip batch --config scenario.json --episodes 10 --out DIR
    trimanip validate --config scenario.json

Exit codes: 0 success, 1 configuration error, 2 internal error. All
outputs are files; there is no interactive mode.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path as FilePath

from .config import ConfigError, load_config
from .episode import run_batch, run_episode


def _write_json(path: FilePath, data: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cmd_run(args) -> int:
    config = load_config(args.config)
    seed = args.seed if args.seed is not None else config.seed
    report = run_episode(config, seed)
    print(
        f"level {report.level} seed {seed}: reward {report.cumulative_reward:.2f}, "
        f"final pos err {report.final_pos_err:.4f} m, ang err {report.final_ang_err:.4f} rad"
    )
    if args.out:
        out = FilePath(args.out)
        _write_json(out / f"report_L{report.level}_s{seed}.json", report.to_dict())
        with open(out / f"events_L{report.level}_s{seed}.jsonl", "w") as fh:
            for event in report.events:
                fh.write(json.dumps(event, sort_keys=True) + "\n")
    return 0


def _cmd_batch(args) -> int:
    config = load_config(args.config)
    summary = run_batch(config, args.episodes)
    out = FilePath(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "summary.json", summary.to_dict())
    (out / "episodes.csv").write_text(summary.csv_text())
    (out / "table.txt").write_text(summary.table() + "\n")
    print(summary.table())
    if summary.errors:
        print(f"{len(summary.errors)} episode(s) failed; see summary.json", file=sys.stderr)
    return 0


def _cmd_validate(args) -> int:
    config = load_config(args.config)
    print(f"ok: scenario '{config.name}' (levels {config.levels}, label {config.ablation_label()})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trimanip", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a single episode")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_run.set_defaults(func=_cmd_run)

    p_batch = sub.add_parser("batch", help="run a batch of episodes")
    p_batch.add_argument("--config", required=True)
    p_batch.add_argument("--episodes", type=int, required=True)
    p_batch.add_argument("--out", required=True)
    p_batch.set_defaults(func=_cmd_batch)

    p_val = sub.add_parser("validate", help="validate a scenario config")
    p_val.add_argument("--config", required=True)
    p_val.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # internal failure
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
