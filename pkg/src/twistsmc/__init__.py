"""Twisted sequential Monte Carlo with contrastive twist learning and
self-distillation, plus exact oracles and DPO/GRPO baselines, on small
synthetic language models."""

from .ctl import CtlConfig, train_twist
from .distill import DistillConfig, run_pipeline
from .errors import (CapacityError, ConfigError, DegenerateBatchError, DegeneracyError, InputDomainError,
                     StarvationError, TwistSMCError)
from .oracle import enumerate_target, exact_kl_target_vs_proposal, rejection_sample
from .potential import EffectivePotential, LogisticPotential, TablePotential
from .seqmodel import NeuralModel, Prompt, TabularModel, Vocab, fit_mle
from .smc import sis_sample, tsmc_sample
from .twist import ConstantTwist, TwistNetwork, optimal_twist_table

__all__ = [
    "CapacityError", "ConfigError", "ConstantTwist", "CtlConfig", "DegenerateBatchError", "DegeneracyError",
    "DistillConfig", "EffectivePotential", "InputDomainError", "LogisticPotential", "NeuralModel", "Prompt",
    "StarvationError", "TablePotential", "TabularModel", "TwistNetwork", "TwistSMCError", "Vocab",
    "enumerate_target", "exact_kl_target_vs_proposal", "fit_mle", "optimal_twist_table", "rejection_sample",
    "run_pipeline", "sis_sample", "train_twist", "tsmc_sample",
]
