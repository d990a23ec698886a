"""Robust rho-estimation for finite mixture models."""
from .emission import EmissionParams, EmissionSpec
from .errors import BudgetError, DomainError, NumericalError, SearchError, StudyError
from .mixtures import CandidateSet, MixtureCandidate, ModelDescriptor
from .simplex import WeightVector

__version__ = "0.1.0"
