"""Constraint guided gradient descent for dense networks, in numpy."""

from .autodiff import ContractError, GradientVector, Tape, global_norm, grad, vjp
from .constraints import (ConstraintSet, LinearConstraint, OutputScaling, UndefinedMetricError,
                          evaluate, load_constraints, output_direction, satisfaction_ratio,
                          weight_direction)
from .data import (Dataset, DatasetSpec, IngestionError, load_and_split, prepare,
                   synthetic_dataset)
from .experiment import RunReport, emit_report, run_experiment
from .model import ConfigError, MlpModel, forward, init_mlp, load_checkpoint, save_checkpoint
from .optim import (CggdConfig, ExponentialDecay, FixedStep, FuzzyConfig, Lemma1Schedule,
                    NumericError, cggd_step, fuzzy_loss, lemma1_next_eta, train)

__version__ = "0.1.0"
