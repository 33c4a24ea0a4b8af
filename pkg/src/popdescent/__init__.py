"""Population-based hyper-parameter tuning with gradient-based local search."""
from .core import PopDescentConfig, RunResult, init_population, popdescent_iteration, replace_weakest, run
from .errors import ConfigError, DomainError, IdxFormatError, NumericalError, TestSetAccessError
from .individual import Batch, Individual, Population
from .localsearch import AnalyticModel, MlpModel, MlpSpec, local_update
from .mutation import MutationConfig, init_hyperparams, mutate

__all__ = [
    "AnalyticModel",
    "Batch",
    "ConfigError",
    "DomainError",
    "IdxFormatError",
    "Individual",
    "MlpModel",
    "MlpSpec",
    "MutationConfig",
    "NumericalError",
    "PopDescentConfig",
    "Population",
    "RunResult",
    "TestSetAccessError",
    "init_hyperparams",
    "init_population",
    "local_update",
    "mutate",
    "popdescent_iteration",
    "replace_weakest",
    "run",
]
