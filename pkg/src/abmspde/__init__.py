"""Agent-based and stochastic density (Dean-Kawasaki / finite element) models
of diffusing agents that change type on contact."""

from .abm import AgentState, ContactNetwork, build_contact_network, simulate_abm
from .config import SimulationConfig, config_from_dict, load_config, load_preset
from .fem import AssembledSystem, FemMesh, NoiseBasis, assemble_drift_diffusion, assemble_mass
from .model import (
    ConfigError,
    Domain1D,
    DomainError,
    DoubleWell,
    InteractionRule,
    ModelParams,
    PolynomialLandscape,
    SeedPolicy,
    build_rule,
    eval_gradient,
)
from .spde import DensityState, SpdeSolver, em_step, simulate_spde

__all__ = [
    "AgentState", "ContactNetwork", "build_contact_network", "simulate_abm",
    "SimulationConfig", "config_from_dict", "load_config", "load_preset",
    "AssembledSystem", "FemMesh", "NoiseBasis", "assemble_drift_diffusion", "assemble_mass",
    "ConfigError", "Domain1D", "DomainError", "DoubleWell", "InteractionRule", "ModelParams",
    "PolynomialLandscape", "SeedPolicy", "build_rule", "eval_gradient",
    "DensityState", "SpdeSolver", "em_step", "simulate_spde",
]
