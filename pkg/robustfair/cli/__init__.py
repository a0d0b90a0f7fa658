from robustfair.cli.commands import (
    cmd_adversary,
    cmd_bounds,
    cmd_eval,
    cmd_game,
    cmd_samples,
    cmd_solve,
    run,
)

__all__ = ["cmd_eval", "cmd_adversary", "cmd_solve", "cmd_game", "cmd_bounds", "cmd_samples", "run"]
