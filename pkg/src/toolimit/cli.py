"""Command line entry point.

    toolimit align       --config run.ini [--seed N] [--out DIR]
    toolimit optimize    --config run.ini [--candidates FILE]
    toolimit train       --config run.ini [--pairs FILE]
    toolimit eval        --config run.ini [--checkpoint FILE] [--episodes N]
    toolimit baseline    --config run.ini --kind sparse|dense
    toolimit demo-replay --config run.ini [--solution FILE]
    toolimit run         --config run.ini          (align, optimize, train, eval)

Exit codes: 0 ok, 1 bad usage/config or missing input, 2 alignment found no
candidate, 3 no candidate is feasible for the robot, 4 training aborted.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import ConfigError, load_config
from .pipeline import (EXIT_INPUT, StageError, cmd_align, cmd_baseline, cmd_demo_replay, cmd_eval,
                       cmd_optimize, cmd_train, run_all)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="toolimit", description="Tool trajectory to robot policy pipeline.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help_text):
        c = sub.add_parser(name, help=help_text)
        c.add_argument("--config", required=True, help="run configuration (INI)")
        c.add_argument("--seed", type=int, help="override the master seed")
        c.add_argument("--out", help="override the output directory")
        return c

    command("align", "sample scenes that reward the tool trajectory")
    command("optimize", "solve base placement and tracking per candidate").add_argument("--candidates")
    command("train", "behavior cloning and PPO").add_argument("--pairs", help="external demo pairs CSV")
    c = command("eval", "evaluate a checkpoint")
    c.add_argument("--checkpoint")
    c.add_argument("--episodes", type=int)
    command("baseline", "PPO from scratch").add_argument("--kind", choices=("sparse", "dense"), default="sparse")
    command("demo-replay", "replay a tracking solution").add_argument("--solution")
    command("run", "align, optimize, train and eval")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    log = lambda msg: print(msg, flush=True)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out = args.out
        if args.command == "align":
            cs = cmd_align(cfg, progress=lambda n, k: log(f"draws {n} candidates {k}"))
            log(f"{len(cs)} candidates from {cs.draws} draws ({cs.flagged} flagged)")
        elif args.command == "optimize":
            sel = cmd_optimize(cfg, args.candidates, log=log)
            log(f"selected candidate {sel.index}: robot reward {sel.robot_reward:.3f}")
        elif args.command == "train":
            cmd_train(cfg, args.pairs, log=log)
        elif args.command == "eval":
            log(json.dumps(cmd_eval(cfg, args.checkpoint, args.episodes), sort_keys=True))
        elif args.command == "baseline":
            log(json.dumps(cmd_baseline(cfg, args.kind, log=log), sort_keys=True))
        elif args.command == "demo-replay":
            log(json.dumps(cmd_demo_replay(cfg, args.solution), sort_keys=True))
        elif args.command == "run":
            log(json.dumps(run_all(cfg, log=log), sort_keys=True))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StageError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return exc.code
    return 0


if __name__ == "__main__":
    sys.exit(main())
