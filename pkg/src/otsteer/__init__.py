"""Optimal-transport density steering for discrete-time linear time-varying systems."""

from .closed_form import (Density1D, Gaussian, gaussian_map, gaussian_map_matrix,
                          solve_1d_cdf)
from .config import ExperimentConfig, load_config
from .cost import (CostAssembly, MinEnergyCost, cost_matrix, lq_cost,
                   lq_cost_assembly, lq_optimal_controls, min_energy_controls,
                   min_energy_cost, stage_cost, whiten)
from .errors import (AssemblyError, ConfigError, DegenerateDensityError,
                     InfeasibleError, OtSteerError, OutOfDomainError,
                     ProvenanceError, SolverError, UncontrollableSystemError)
from .grid import GridDensity, GridSpec, discretize, total_variation
from .ltv import (Gramian, LtvSystem, StackedCost, StackedDynamics, gramian,
                  simulate, stack_dynamics, state_transition)
from .steering import (Assignment, MonteCarloResult, SteeringPlan, Trajectory,
                       agent_lattice, assign_target, assign_targets,
                       build_steering_plan, make_evaluator, monte_carlo,
                       rollout, rollout_batch, sample_density, swarm_assignment)
from .transport import (MongeMapImage, TransportPlan, extract_map,
                        optimality_certificate, solve_kantorovich, transport_cost)

__version__ = "0.1.0"

__all__ = [
    "Density1D", "Gaussian", "gaussian_map", "gaussian_map_matrix", "solve_1d_cdf",
    "ExperimentConfig", "load_config", "CostAssembly", "MinEnergyCost", "cost_matrix",
    "lq_cost", "lq_cost_assembly", "lq_optimal_controls", "min_energy_controls",
    "min_energy_cost", "stage_cost", "whiten", "AssemblyError", "ConfigError",
    "DegenerateDensityError", "InfeasibleError", "OtSteerError", "OutOfDomainError",
    "ProvenanceError", "SolverError", "UncontrollableSystemError", "GridDensity",
    "GridSpec", "discretize", "total_variation", "Gramian", "LtvSystem", "StackedCost",
    "StackedDynamics", "gramian", "simulate", "stack_dynamics", "state_transition",
    "Assignment", "MonteCarloResult", "SteeringPlan", "Trajectory", "agent_lattice",
    "assign_target", "assign_targets", "build_steering_plan", "make_evaluator",
    "monte_carlo", "rollout", "rollout_batch", "sample_density", "swarm_assignment",
    "MongeMapImage", "TransportPlan", "extract_map", "optimality_certificate",
    "solve_kantorovich", "transport_cost",
]
