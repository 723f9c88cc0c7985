"""Coupling certificates and ergodicity experiments for switched
piecewise-deterministic Markov processes and Poisson-driven SDEs."""

from .errors import (
    BracketError,
    ConfigError,
    CouplingError,
    EnvelopeError,
    IntegrationError,
    ModelError,
    PdmpError,
    SolverError,
)
from .space import HybridMetric, StatePoint, rho_c, state
from .model import ModelSpec, build_model, lm1d, validate_model
from .flow import evolve, hazard, inverse_hazard
from .kernel import run_chain, run_ensemble, run_pdmp_path, step
from .coupling import coupled_step, density_ratio, run_coupled_chain
from .metric import EmpiricalMeasure, fm_bruteforce, fm_distance
from .constants import ConstantsLedger, build_ledger, spotcheck_A_conditions
from .pdsde import PdsdeSpec, gen_poisson, lm1d_pdsde, map_constants, solve_pdsde

__version__ = "0.1.0"
