"""Periodic minimizers of relativistic-oscillator actions and parameters with two global minima."""
from .dsl import DSLSyntaxError, FieldEvaluationError, ScalarField, parse_field
from .model import (InstanceError, PhiModel, ProblemInstance, SlopeDomainError, builtin_instance,
                    builtin_names, make_relativistic_phi)
from .path import PeriodicPath, ProjectionError, project_feasible, project_slopes, sample_path
from .functional import ObjectiveValue, gradient, objective, psi
from .optimize import MinimaReport, MinimizeOptions, minimize_local, multistart

__version__ = "0.1.0"
