"""Multi-fidelity Bayesian optimization with cost-aware acquisition and budget-aligned discount metrics."""

__version__ = "0.1.0"

from .acquisition import AcquisitionSpec, QueryDecision, next_query
from .campaign import CampaignConfig, CampaignResult, run_campaign, run_suite
from .core import HF, LF, CampaignTrace, FidelityModel, Observation, RngStream, SearchSpace
from .experiments import advise, fidelity_query_ratio, run_paired, run_scenario, run_sweep
from .metrics import discount, simple_regret_mf, simple_regret_sf
from .problems import SyntheticProblem, TabularProblem, estimate_informativeness, load_tabular
from .surrogate import KernelParams, MultiFidelityGP, fit

__all__ = [
    "AcquisitionSpec",
    "CampaignConfig",
    "CampaignResult",
    "CampaignTrace",
    "FidelityModel",
    "HF",
    "KernelParams",
    "LF",
    "MultiFidelityGP",
    "Observation",
    "QueryDecision",
    "RngStream",
    "SearchSpace",
    "SyntheticProblem",
    "TabularProblem",
    "advise",
    "discount",
    "estimate_informativeness",
    "fidelity_query_ratio",
    "fit",
    "load_tabular",
    "next_query",
    "run_campaign",
    "run_paired",
    "run_scenario",
    "run_suite",
    "run_sweep",
    "simple_regret_mf",
    "simple_regret_sf",
]
