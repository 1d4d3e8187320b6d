"""``subdiff <experiment> --config FILE [--seed N] [--workers N] [--out DIR]``.

Exit status: 0 when every gating check passes, 2 when any fails, 1 on a
configuration or usage error.
"""
from __future__ import annotations

import argparse
import sys

from .config import EXPERIMENTS, load_config
from .errors import ConfigError
from .harness import run, write_outputs

__all__ = ["main", "build_parser"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="subdiff", description="Run a verification experiment and write its report.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, help="TOML configuration file")
    p.add_argument("--seed", type=int, default=None, help="override the configured seed")
    p.add_argument("--workers", type=int, default=None, help="worker processes (results do not depend on it)")
    p.add_argument("--out", default=None, help="output directory (default from config)")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config, args.experiment).with_overrides(
            seed=args.seed, workers=args.workers, out=args.out
        )
        report = run(cfg)
    except ConfigError as exc:
        print(f"subdiff: error: {exc}", file=sys.stderr)
        return 1
    write_outputs(report, cfg.out)
    with open(f"{cfg.out}/summary.txt") as fh:
        sys.stdout.write(fh.read())
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
