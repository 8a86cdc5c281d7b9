"""Cloud controllers: peak pauser, BFD baseline, GA hybrid with BCF repair, BCFFS."""
from .base import (CONTROLLERS, BCFController, BCFFSController, BFDController, Controller,
                   GAHybridController, PeakPauserController, StepView, net_moves)
from .bcf import UNDERUTIL_THRESHOLD, bcf_repair, frequency_scaling_stage, pm_energy_cost, pm_revenue
from .bfd import bfd_consolidate, bfd_place
from .context import FitnessWeights, PlanningContext, QoSParams, build_context
from .fitness import FitnessBreakdown, assignment_matrix, evaluate, fitness
from .ga import GAParams, crossover_at, ga_create, ga_crossover, ga_mutate, ga_run
from .peak_pauser import peak_pauser

__all__ = [
    "CONTROLLERS", "BCFController", "BCFFSController", "BFDController", "Controller", "GAHybridController",
    "PeakPauserController", "StepView", "net_moves", "UNDERUTIL_THRESHOLD", "bcf_repair", "frequency_scaling_stage",
    "pm_energy_cost", "pm_revenue", "bfd_consolidate", "bfd_place", "FitnessWeights", "PlanningContext",
    "QoSParams", "build_context", "FitnessBreakdown", "assignment_matrix", "evaluate", "fitness",
    "GAParams", "crossover_at", "ga_create", "ga_crossover", "ga_mutate", "ga_run", "peak_pauser",
]
