import argparse
import sys
from typing import List, Optional

from robustfair import __version__
from robustfair.cli import cmd_adversary, cmd_bounds, cmd_eval, cmd_game, cmd_samples, cmd_solve, run
from robustfair.config import configure_logging
from robustfair.models import Direction


def _shared_flags() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--seed", type=int, default=None, help="Seed for randomized routines")
    shared.add_argument("--tol", type=float, default=None, help="Solver or interchange tolerance")
    shared.add_argument("--json-indent", type=int, default=None, help="Indentation of the JSON report")
    shared.add_argument("--no-timing", action="store_true", help="Leave the timing section out of the report")
    shared.add_argument("--log-level", default=None, help="Log level for messages on stderr")
    return shared


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robustfair",
        description="Robust fair objectives: aggregators, adversarial weights, allocations, games and bounds",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    shared = _shared_flags()
    commands = parser.add_subparsers(dest="command", required=True)

    def command(name: str, handler, help_text: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, parents=[shared], help=help_text)
        sub.add_argument("path", help="Instance file (JSON)")
        sub.set_defaults(handler=handler)
        return sub

    evaluate = command("eval", cmd_eval, "Evaluate an aggregator")
    evaluate.add_argument("--grad", action="store_true", help="Also report the gradient")

    adversary = command("adversary", cmd_adversary, "Best-response weights over a weight set")
    adversary.add_argument("--direction", choices=[d.value for d in Direction], default=None)

    solve = command("solve", cmd_solve, "Solve a robust allocation")
    solve.add_argument("--trace", metavar="OUT_CSV", default=None, help="Write the iteration trace as CSV")

    game = command("game", cmd_game, "Analyze a Daemon/Angel game")
    game.add_argument("--verify-equilibrium", action="store_true", help="Search the gridded Daemon space for deviations")
    game.add_argument("--grid", type=float, default=1e-2, help="Grid resolution for equilibrium checks")
    game.add_argument("--interchange", action="store_true", help="Compare max-min against min-max")

    bounds = command("bounds", cmd_bounds, "Sandwich, gap and continuity bounds")
    bounds.add_argument("--trials", type=int, default=None, help="Trials of the empirical continuity check")

    command("samples", cmd_samples, "Sample complexity of a query")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    flags = build_parser().parse_args(argv)
    configure_logging(flags.log_level)
    return run(flags.handler, flags)


if __name__ == "__main__":
    sys.exit(main())
