"""Sequential Monte Carlo inference for dynamic latent space network models."""

__version__ = "0.1.0"

from . import kernels
from .girf import GirfConfig, GirfFilter, intermediary_kernel, run_girf
from .model import Likelihood, Link, ScenarioSpec, StaticParams, simulate_scenario
from .smc import FilterCollapse, FilterTrace, ParticleEnsemble, bootstrap_filter

__all__ = [
    "FilterCollapse",
    "FilterTrace",
    "GirfConfig",
    "GirfFilter",
    "Likelihood",
    "Link",
    "ParticleEnsemble",
    "ScenarioSpec",
    "StaticParams",
    "bootstrap_filter",
    "intermediary_kernel",
    "kernels",
    "run_girf",
    "simulate_scenario",
]
