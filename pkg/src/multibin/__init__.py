"""Multi-bin batching for LLM-style inference: closed-form analytics and a discrete-event simulator."""

from .analytics import (
    c_max,
    exp_service_upper_bound,
    expected_latency,
    expected_service_time_k,
    min_bins_for_throughput,
    throughput_k,
)
from .binning import (
    BinConfig,
    Confusion,
    Perfect,
    Symmetric,
    assign_bin,
    empirical_boundaries,
    exponential_boundaries,
    predict_bin,
    uniform_boundaries,
)
from .service_models import Empirical, Exponential, Uniform
from .simulator import OVERLOAD, SimConfig, SimMetrics, replay_trace, run_simulation, simulate

__version__ = "0.1.0"
