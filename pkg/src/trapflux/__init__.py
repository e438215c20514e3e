"""Numerically exact open-system dynamics of exciton aggregates with lossy traps.

Units throughout: energies in cm^-1, times in ps, temperatures in K.
"""

from .bath import (BathAttachment, EtaTable, SpectralDensity, bath_correlation, build_eta_table,
                   select_memory_length)
from .fit import FitError, FitResult, fit_all_traps, fit_exponential, fit_quality_gate
from .flux import FluxRecord, loss_partition_check, pairwise_transfer, total_loss, transfer_rates
from .influence import BathCoupling
from .model import (DEFAULT_UNITS, InitialCondition, InvalidParameterError, SystemHamiltonian,
                    UnitSystem, build_excitonic_chain, embed_cavity, excitonic_trimer,
                    loss_energy_from_lifetime, polaritonic_trimer)
from .oracle import PathBudgetExceeded, propagate_bare, propagate_pathsum
from .simulation import Problem, simulate
from .tempo import (CompressedPathState, ConvergenceReport, NumericalFailure, TempoPropagator,
                    TruncationPolicy, convergence_scan, propagate_tempo)
from .trajectory import Trajectory

__version__ = "0.1.0"
