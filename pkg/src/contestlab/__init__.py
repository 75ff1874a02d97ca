"""contestlab: a simulation laboratory for winning-probability martingales.

Systems of continuous martingales in [0, 1] that sum to one model the
evolving win probabilities of contestants in a competition. This package
provides exact time-free samplers for the extremal constructions, a
Wright-Fisher diffusion sampler with crossing monitors, a degenerate
elliptic PDE solver for a two-contestant covariance functional, a
statistics harness, and analyzers for real probability time series.
"""

from contestlab.analytic import (
    BoundBundle,
    ThresholdPair,
    bounds,
    exp_downcrossings,
    hit_prob,
    mod_geometric_pmf,
)
from contestlab.constructions import (
    embed_prefix_program,
    sequential_program,
    small_spread_program,
    survivor_program,
    survivor_zero_prefix_program,
)
from contestlab.engine import run_program
from contestlab.market import crossing_stats_from_series, ingest_market_csv
from contestlab.pde import solve_pde
from contestlab.sampling import simulate_many
from contestlab.stats import bounds_report, gof_geometric, merge, summarize
from contestlab.wf import WfRunParams, cov3_mc, wf_many, wf_run

__version__ = "0.1.0"

__all__ = [
    "BoundBundle",
    "ThresholdPair",
    "WfRunParams",
    "bounds",
    "bounds_report",
    "cov3_mc",
    "crossing_stats_from_series",
    "embed_prefix_program",
    "exp_downcrossings",
    "gof_geometric",
    "hit_prob",
    "ingest_market_csv",
    "merge",
    "mod_geometric_pmf",
    "run_program",
    "sequential_program",
    "simulate_many",
    "small_spread_program",
    "solve_pde",
    "summarize",
    "survivor_program",
    "survivor_zero_prefix_program",
    "wf_many",
    "wf_run",
    "__version__",
]
