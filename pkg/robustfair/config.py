import logging
import sys
from functools import lru_cache

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Runtime settings, read from ROBUSTFAIR_* environment variables or a .env file"""
    model_config = SettingsConfigDict(env_prefix="ROBUSTFAIR_", env_file=".env", extra="ignore")

    log_level: str = Field("WARNING", description="Root log level for the robustfair logger")
    json_indent: int = Field(2, ge=0, description="Indentation of JSON reports")
    seed: int = Field(0, ge=0, description="Default seed for randomized routines")
    max_iters: int = Field(5000, ge=1, description="Default solver iteration cap")
    solver_tolerance: float = Field(1e-6, gt=0, description="Default solver gap tolerance")
    membership_tolerance: float = Field(1e-7, gt=0, description="Tolerance for weight-set membership of actions")
    l2_max_iterations: int = Field(10000, ge=1, description="Iteration cap of the L2 ball oracle")
    l2_feasibility_tolerance: float = Field(1e-8, gt=0, description="Feasibility tolerance of the L2 ball oracle")
    grid_max_points: int = Field(2_000_000, ge=1, description="Largest grid the brute-force searches will build")
    permutation_enumeration_limit: int = Field(7, ge=1, description="Largest g for exact permutation-orbit ball responses")
    holder_trials: int = Field(10000, ge=1, description="Default trial count for empirical Hölder checks")


@lru_cache
def get_settings() -> Settings:
    return Settings()


def configure_logging(level: str = None) -> None:
    """Send robustfair logs to stderr; stdout is reserved for reports"""
    level = (level or get_settings().log_level).upper()
    root = logging.getLogger("robustfair")
    root.handlers.clear()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(level)
    root.propagate = False
