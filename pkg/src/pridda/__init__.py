"""Differentially private distributed dual averaging with node sampling."""

from .engine import Reference, RunConfig, RunTrace, mean_dual_recursion_check, run
from .privacy import PrivacyBudget, calibrate, compose, privacy_loss_at
from .problems import ProblemInstance, Regularizer, generate_synthetic, partition_even
from .schedules import Schedule
from .topology import GossipSampler, build_complete_graph, estimate_beta

__version__ = "0.1.0"
