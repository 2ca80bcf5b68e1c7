"""Difference-in-means effect estimators over cluster-level outcomes.

Clusters are the units: each contributes one proportion, unweighted by its
size.  Standard errors use the unpooled two-sample variance of the cluster
proportions; intervals are Wald intervals with a normal critical value.
"""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, replace
from typing import NamedTuple

import numpy as np

from clustervax.trial_model import (
    Stratum,
    TrialDataset,
    cluster_outcome,
)

Z_CRIT = 1.96

NON_CAUSAL_WARNING = (
    "not a causal effect: compares participants with non-participants, "
    "two self-selected groups, within the same clusters"
)


class EffectKind(enum.Enum):
    OVERALL = "overall"
    INDIRECT = "indirect"
    TOTAL = "total"
    NAIVE_DIRECT = "naive-direct"
    CONTROL_ARM_STRATUM_CONTRAST = "control-contrast"


CAUSAL_KINDS = (EffectKind.OVERALL, EffectKind.INDIRECT, EffectKind.TOTAL)

STRATUM_FOR_KIND = {
    EffectKind.OVERALL: Stratum.OVERALL,
    EffectKind.INDIRECT: Stratum.NON_PARTICIPATORS,
    EffectKind.TOTAL: Stratum.PARTICIPATORS,
}


class Contrast(enum.Enum):
    RISK_DIFFERENCE = "rd"
    RISK_RATIO = "rr"

    def __call__(self, x: float, y: float) -> float:
        if self is Contrast.RISK_DIFFERENCE:
            return x - y
        return x / y

    @property
    def null_value(self) -> float:
        return 0.0 if self is Contrast.RISK_DIFFERENCE else 1.0


class EmptyPolicy(enum.Enum):
    ERROR = "error"
    DROP = "drop"


class EstimationError(Exception):
    """Base class for failures of a single estimate."""


class EmptyArm(EstimationError):
    pass


class UndefinedOutcome(EstimationError):
    pass


class AllClustersDropped(EstimationError):
    pass


class InsufficientClusters(EstimationError):
    pass


class ZeroControlMean(EstimationError):
    pass


class ZeroTreatedMean(EstimationError):
    pass


@dataclass(frozen=True)
class EffectEstimate:
    """A point estimate with its Wald interval.

    For the risk ratio ``standard_error`` is on the log scale and the
    interval is the exponentiated log-scale interval.
    """

    effect_kind: EffectKind
    contrast: Contrast
    point: float
    standard_error: float
    ci_lower: float
    ci_upper: float
    n_treated_clusters: int
    n_control_clusters: int
    dropped_clusters: tuple[str, ...] = ()
    warning: str | None = None

    @property
    def causal(self) -> bool:
        return self.effect_kind in CAUSAL_KINDS

    def scaled(self, factor: float) -> EffectEstimate:
        """Rescale a risk difference (e.g. ``1000`` for cases per 1000). Ratios are unitless."""
        if self.contrast is Contrast.RISK_RATIO:
            return self
        return replace(
            self,
            point=self.point * factor,
            standard_error=self.standard_error * factor,
            ci_lower=self.ci_lower * factor,
            ci_upper=self.ci_upper * factor,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["effect_kind"] = self.effect_kind.value
        d["contrast"] = self.contrast.value
        d["dropped_clusters"] = list(self.dropped_clusters)
        return d


class ArmMean(NamedTuple):
    mean: float
    k: int
    dropped: tuple[str, ...]


class _Summary(NamedTuple):
    point: float
    se: float
    lower: float
    upper: float


def _sample_variance(x: np.ndarray) -> float:
    if x.size < 2:
        return math.nan
    if np.all(x == x[0]):
        return 0.0
    return float(np.var(x, ddof=1))


def _wald(point: float, se: float, z: float) -> _Summary:
    return _Summary(point, se, point - z * se, point + z * se)


def difference_in_means(
    treated: np.ndarray,
    control: np.ndarray,
    contrast: Contrast = Contrast.RISK_DIFFERENCE,
    z: float = Z_CRIT,
    require_se: bool = True,
) -> _Summary:
    """Contrast of two arm means of cluster outcomes with a Wald interval."""
    treated = np.asarray(treated, dtype=float)
    control = np.asarray(control, dtype=float)
    if treated.size == 0 or control.size == 0:
        raise EmptyArm("each arm needs at least one cluster")
    k1, k0 = treated.size, control.size
    if require_se and (k1 < 2 or k0 < 2):
        raise InsufficientClusters(f"standard error needs >= 2 clusters per arm, have {k1} and {k0}")
    m1, m0 = float(treated.mean()), float(control.mean())
    v1, v0 = _sample_variance(treated), _sample_variance(control)
    if contrast is Contrast.RISK_DIFFERENCE:
        return _wald(m1 - m0, math.sqrt(v1 / k1 + v0 / k0), z)
    if m0 == 0:
        raise ZeroControlMean("risk ratio undefined: control-arm mean is 0")
    if m1 == 0:
        raise ZeroTreatedMean("log risk ratio undefined: treated-arm mean is 0")
    log_se = math.sqrt(v1 / (k1 * m1**2) + v0 / (k0 * m0**2))
    log_rr = math.log(m1 / m0)
    return _Summary(m1 / m0, log_se, math.exp(log_rr - z * log_se), math.exp(log_rr + z * log_se))


def paired_mean_difference(d: np.ndarray, z: float = Z_CRIT, require_se: bool = True) -> _Summary:
    """Mean of within-cluster differences; SE from their sample variance."""
    d = np.asarray(d, dtype=float)
    if d.size == 0:
        raise EmptyArm("no clusters")
    if require_se and d.size < 2:
        raise InsufficientClusters("standard error needs >= 2 clusters")
    return _wald(float(d.mean()), math.sqrt(_sample_variance(d) / d.size), z)


def _outcomes(clusters, stratum: Stratum, empty_policy: EmptyPolicy):
    values, dropped = [], []
    for c in clusters:
        out = cluster_outcome(c, stratum)
        if out is None:
            if empty_policy is EmptyPolicy.ERROR:
                raise UndefinedOutcome(
                    f"cluster {c.cluster_id} has no {stratum.value}; use the drop policy to exclude it"
                )
            dropped.append(c.cluster_id)
        else:
            values.append(out.value)
    return np.array(values, dtype=float), tuple(dropped)


def _arm_outcomes(dataset: TrialDataset, arm: int, stratum: Stratum, empty_policy: EmptyPolicy):
    clusters = dataset.arm(arm)
    if not clusters:
        raise EmptyArm(f"no clusters assigned to arm {arm}")
    values, dropped = _outcomes(clusters, stratum, empty_policy)
    if values.size == 0:
        raise AllClustersDropped(f"every arm-{arm} cluster lacks {stratum.value}")
    return values, dropped


def arm_mean(
    dataset: TrialDataset,
    arm: int,
    stratum: Stratum,
    empty_policy: EmptyPolicy = EmptyPolicy.ERROR,
) -> ArmMean:
    """Unweighted mean of the cluster outcomes of one arm."""
    values, dropped = _arm_outcomes(dataset, arm, stratum, empty_policy)
    return ArmMean(float(values.mean()), int(values.size), dropped)


def estimate_effect(
    dataset: TrialDataset,
    effect_kind: EffectKind,
    contrast: Contrast = Contrast.RISK_DIFFERENCE,
    empty_policy: EmptyPolicy = EmptyPolicy.ERROR,
    require_se: bool = True,
    z: float = Z_CRIT,
) -> EffectEstimate:
    """Estimate an overall, indirect or total effect (or dispatch to the two stratum contrasts).

    With ``require_se=False`` an arm may hold a single cluster; the standard
    error and interval are then NaN.
    """
    if effect_kind is EffectKind.NAIVE_DIRECT:
        _rd_only(contrast, effect_kind)
        return naive_direct_estimate(dataset, empty_policy, require_se, z)
    if effect_kind is EffectKind.CONTROL_ARM_STRATUM_CONTRAST:
        _rd_only(contrast, effect_kind)
        return control_arm_stratum_contrast(dataset, empty_policy, require_se, z)

    stratum = STRATUM_FOR_KIND[effect_kind]
    y1, dropped1 = _arm_outcomes(dataset, 1, stratum, empty_policy)
    y0, dropped0 = _arm_outcomes(dataset, 0, stratum, empty_policy)
    s = difference_in_means(y1, y0, contrast, z, require_se)
    return EffectEstimate(
        effect_kind, contrast, s.point, s.se, s.lower, s.upper,
        int(y1.size), int(y0.size), dropped1 + dropped0,
    )


def _rd_only(contrast: Contrast, kind: EffectKind):
    if contrast is not Contrast.RISK_DIFFERENCE:
        raise ValueError(f"{kind.value} is only defined as a risk difference")


def stratum_differences(clusters, empty_policy: EmptyPolicy) -> tuple[np.ndarray, tuple[str, ...]]:
    """Per-cluster participant minus non-participant disease proportion."""
    diffs, dropped = [], []
    for c in clusters:
        part = cluster_outcome(c, Stratum.PARTICIPATORS)
        non = cluster_outcome(c, Stratum.NON_PARTICIPATORS)
        if part is None or non is None:
            if empty_policy is EmptyPolicy.ERROR:
                raise UndefinedOutcome(
                    f"cluster {c.cluster_id} lacks participants or non-participants"
                )
            dropped.append(c.cluster_id)
            continue
        diffs.append(part.value - non.value)
    return np.array(diffs, dtype=float), tuple(dropped)


def _within_arm_contrast(dataset, arm, kind, empty_policy, require_se, z) -> EffectEstimate:
    clusters = dataset.arm(arm)
    if not clusters:
        raise EmptyArm(f"no clusters assigned to arm {arm}")
    d, dropped = stratum_differences(clusters, empty_policy)
    if d.size == 0:
        raise AllClustersDropped(f"no arm-{arm} cluster has both participants and non-participants")
    s = paired_mean_difference(d, z, require_se)
    k = int(d.size)
    return EffectEstimate(
        kind, Contrast.RISK_DIFFERENCE, s.point, s.se, s.lower, s.upper,
        k if arm == 1 else 0, k if arm == 0 else 0, dropped,
        NON_CAUSAL_WARNING if kind is EffectKind.NAIVE_DIRECT else None,
    )


def naive_direct_estimate(
    dataset: TrialDataset,
    empty_policy: EmptyPolicy = EmptyPolicy.ERROR,
    require_se: bool = True,
    z: float = Z_CRIT,
) -> EffectEstimate:
    """Participants minus non-participants within vaccine-arm clusters.

    The mean of per-cluster participant proportions minus the mean of
    per-cluster non-participant proportions, both over vaccine clusters.
    It converges to a contrast of two different outcomes, so the result
    carries a non-causal warning.
    """
    return _within_arm_contrast(dataset, 1, EffectKind.NAIVE_DIRECT, empty_policy, require_se, z)


def control_arm_stratum_contrast(
    dataset: TrialDataset,
    empty_policy: EmptyPolicy = EmptyPolicy.ERROR,
    require_se: bool = True,
    z: float = Z_CRIT,
) -> EffectEstimate:
    """The naive contrast computed in control clusters.

    Nobody there is vaccinated, so without confounding (and without a
    placebo effect) this is centred on 0; a clear departure is evidence of
    confounding between participation and risk.
    """
    return _within_arm_contrast(
        dataset, 0, EffectKind.CONTROL_ARM_STRATUM_CONTRAST, empty_policy, require_se, z
    )


ALL_KINDS = tuple(EffectKind)


def parse_effects(text: str) -> list[EffectKind]:
    kinds = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        try:
            kinds.append(EffectKind(token))
        except ValueError:
            valid = ", ".join(k.value for k in EffectKind)
            raise ValueError(f"unknown effect {token!r}; choose from {valid}") from None
    return kinds
