"""catmon: chart-based monitoring of many heterogeneous categorical streams.

Per-stream likelihood-ratio statistics are smoothed with an EWMA, mapped to
uniform-scale scores, and fused into one chart statistic whose control limit
is calibrated by Monte Carlo to a target in-control average run length.
"""

from .calibration import (
    CalibrationError,
    CalibrationResult,
    RunLengthSummary,
    calibrate_limit,
    calibrate_limits,
    estimate_arl,
    simulate_run_length,
)
from .global_monitor import ChartConfig, ChartPoint, chart_step, max_stat, sum_stat, zhang_gof
from .local_monitor import EwmaState, ewma_update, init_state, normalize, smoothed_stat
from .simulate import ResultTable, Scenario, ShiftAssignment, build_population, export_table, run_table
from .stat_math import chi_square_cdf, make_rng, multinomial_sample
from .streams import (
    NominalShift,
    NominalSpec,
    NoShift,
    OrdinalShift,
    OrdinalSpec,
    ordinal_scores,
    shifted_probs_nominal,
    shifted_probs_ordinal,
)

__version__ = "0.1.0"
