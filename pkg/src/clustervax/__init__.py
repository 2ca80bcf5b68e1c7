"""Estimands, estimators and simulation for cluster-randomized vaccine trials
with self-selected participation."""

from clustervax.trial_model import (
    ClusterOutcome,
    ClusterRecord,
    IndividualRecord,
    PrincipalStratum,
    Stratum,
    TrialDataset,
    cluster_outcome,
    infer_strata,
)
from clustervax.estimators import (
    Contrast,
    EffectEstimate,
    EffectKind,
    EmptyPolicy,
    arm_mean,
    control_arm_stratum_contrast,
    estimate_effect,
    naive_direct_estimate,
)
from clustervax.randomization import CompletelyRandomized, StratifiedBlocked, assign

__version__ = "0.1.0"

__all__ = [
    "ClusterOutcome",
    "ClusterRecord",
    "CompletelyRandomized",
    "Contrast",
    "EffectEstimate",
    "EffectKind",
    "EmptyPolicy",
    "IndividualRecord",
    "PrincipalStratum",
    "StratifiedBlocked",
    "Stratum",
    "TrialDataset",
    "arm_mean",
    "assign",
    "cluster_outcome",
    "control_arm_stratum_contrast",
    "estimate_effect",
    "infer_strata",
    "naive_direct_estimate",
]
