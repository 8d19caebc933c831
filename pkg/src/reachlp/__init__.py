"""Reachability for finite MDPs via multichain average-reward linear programs."""
from .avg import (GainSolution, SolverError, absorption_probability, cesaro_average,
                  evaluate_policy_gain, extract_policy, solve_gain, value_iteration_reach)
from .model import (Model, ModelError, StationaryPolicy, TwoPhasePolicy, load_model,
                    make_model, save_model, validate_model)
from .reach import (Feasibility, constrained_reach, infeasible_region, min_avoid_probability,
                    p_domain, reach_avoid)
from .sim import estimate_hitting, sample_trajectory
from .transform import IndicatorReward, augment, make_absorbing

__version__ = "0.1.0"

__all__ = [
    "Model", "ModelError", "StationaryPolicy", "TwoPhasePolicy", "make_model",
    "load_model", "save_model", "validate_model",
    "IndicatorReward", "augment", "make_absorbing",
    "GainSolution", "SolverError", "solve_gain", "extract_policy",
    "absorption_probability", "cesaro_average", "evaluate_policy_gain",
    "value_iteration_reach",
    "Feasibility", "p_domain", "reach_avoid", "constrained_reach",
    "min_avoid_probability", "infeasible_region",
    "estimate_hitting", "sample_trajectory",
]
