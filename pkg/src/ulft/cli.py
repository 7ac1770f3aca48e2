"""Command line front end: ``ulft <stage> [options]``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import pipeline
from .config import RunConfig, load_config
from .errors import UlftError

SUBCOMMANDS = tuple(pipeline.STAGE_FUNCS) + ("run-all",)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ulft", description=__doc__)
    p.add_argument("stage", choices=SUBCOMMANDS)
    p.add_argument("--config", metavar="PATH", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", metavar="DIR", default="runs/out", help="output directory")
    p.add_argument("--threads", type=int, help="cap on worker threads (results do not change)")
    p.add_argument("--mode", choices=("assignment", "contrastive"), help="instance field mode")
    p.add_argument("--tau", type=float, help="cross-view grouping threshold")
    p.add_argument("--offset", type=float, help="far-view offset for label fusion")
    p.add_argument("--height-threshold-m", type=float, help="nested-mask height threshold")
    p.add_argument("--variant", choices=("raw", "filter", "cross"), help="grouping variant")
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.mode is not None:
        over["instance"] = {"mode": args.mode}
    if args.offset is not None:
        over["fusion"] = {"offset": args.offset}
    grp = {k: v for k, v in (("tau", args.tau), ("height_threshold_m", args.height_threshold_m),
                             ("variant", args.variant)) if v is not None}
    if grp:
        over["grouping"] = grp
    return cfg.replace(**over) if over else cfg


def set_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        from .errors import ConfigError
        raise ConfigError("--threads must be >= 1")
    import numba
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("ULFT_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        set_threads(args.threads)
        if args.stage == "run-all":
            pipeline.run_all(cfg, args.out)
        else:
            os.makedirs(args.out, exist_ok=True)
            pipeline.STAGE_FUNCS[args.stage](cfg, args.out)
    except UlftError as e:
        print(f"ulft {args.stage}: {e}", file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
