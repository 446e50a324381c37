"""Group network Hawkes processes: simulation, estimation and influence analysis."""

from .estimate import FitConfig, FitResult, fit
from .estimator import GroupNetworkHawkes, GroupSelector
from .influence import group_impact_curves, group_influence_matrix, influence_report, node_influence
from .kernels import TriggeringKernel, TruncatedExponentialKernel
from .model import (
    EventData,
    GnhpModel,
    History,
    InfeasibleModelError,
    SplineBaseline,
    intensity,
    log_likelihood,
    node_log_likelihood,
    score,
    score_and_hessian_plugin,
)
from .network import InstabilityError, Network, TransitionMatrix, build_transition, generate_power_law, generate_sbm
from .presets import preset_model, three_group_model
from .select import lic_lambda, select_groups
from .simulate import simulate_branching, simulate_families, simulate_thinning
from .splines import PeriodicSplineBasis

__version__ = "0.1.0"
