"""Robust fair objectives: welfare and malfare under uncertain group weights."""
__version__ = "1.0.0"

from robustfair.aggregators import aggregate, gini, gini_power_mean, gradient, power_mean, umswf
from robustfair.allocation import closed_form_optimum, solve_allocation
from robustfair.bounds import holder_certificate, robust_gap_bound, sample_complexity, sandwich
from robustfair.games import check_interchange, daemon_strategic_value, verify_equilibrium
from robustfair.solvers import solve_maximin
from robustfair.weightsets import best_response, robust_aggregate, robust_power_mean
