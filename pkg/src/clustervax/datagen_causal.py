"""Simulated cluster populations with both potential outcomes materialized.

Every individual gets a participation indicator (the same under either
assignment) and two disease outcomes, one per arm of their cluster.  The
true overall, indirect and total effects, and the limit of the naive
participant/non-participant contrast, are then plain averages over the
generated clusters.
"""
from __future__ import annotations

import math
from collections.abc import Callable, Mapping
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np

from clustervax.rng import stream
from clustervax.trial_model import ClusterRecord, TrialDataset


def _expit(x):
    return 1.0 / (1.0 + np.exp(-x))


class RiskOutOfRange(ValueError):
    pass


class MissingAssignment(KeyError):
    pass


@dataclass(frozen=True)
class GenerativeConfig:
    """Parameters of the simulated population.

    Cluster sizes are ``1 + Poisson(lambda)`` with a gamma-distributed
    ``lambda`` of mean ``size_mean - 1`` and coefficient of variation
    ``size_dispersion`` (0 gives plain Poisson sizes).  ``frailty`` is a
    standard normal per individual; it raises disease risk through
    ``risk_heterogeneity`` and participation through
    ``confounding_strength``.  ``cluster_heterogeneity`` is the log-scale SD
    of a cluster-wide risk multiplier.
    """

    n_clusters: int = 40
    size_mean: float = 150.0
    size_dispersion: float = 0.3
    baseline_risk: float = 0.04
    risk_heterogeneity: float = 0.5
    cluster_heterogeneity: float = 0.0
    participation_intercept: float = 0.4
    confounding_strength: float = 0.0
    direct_efficacy: float = 0.0
    spillover_strength: float = 0.0
    n_strata: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_clusters < 2:
            raise ValueError("n_clusters must be at least 2")
        if self.size_mean < 1:
            raise ValueError("size_mean must be at least 1")
        if not 0 <= self.baseline_risk <= 1:
            raise ValueError("baseline_risk must be a probability")
        if not 0 <= self.direct_efficacy <= 1:
            raise ValueError("direct_efficacy must lie in [0, 1]")
        for name in ("size_dispersion", "risk_heterogeneity", "cluster_heterogeneity", "spillover_strength"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 1 <= self.n_strata <= self.n_clusters:
            raise ValueError("n_strata must lie in [1, n_clusters]")

    @classmethod
    def from_dict(cls, d: Mapping) -> GenerativeConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown generative parameters: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def exponential_spillover(coverage: np.ndarray | float, strength: float):
    """Risk multiplier for everyone in a vaccinated cluster with the given coverage."""
    return np.exp(-strength * coverage)


SpilloverFn = Callable[[float, float], float]


@dataclass(frozen=True, eq=False)
class WorldCluster:
    cluster_id: str
    stratum_label: str | None
    participation: np.ndarray
    y1: np.ndarray
    y0: np.ndarray

    @property
    def size(self) -> int:
        return int(self.participation.size)


@dataclass(frozen=True, eq=False)
class PotentialWorld:
    clusters: tuple[WorldCluster, ...]
    config: GenerativeConfig | None = None

    @property
    def n(self) -> int:
        return len(self.clusters)

    @property
    def cluster_ids(self) -> list[str]:
        return [c.cluster_id for c in self.clusters]

    def counts(self) -> WorldCounts:
        return WorldCounts.from_world(self)


def _frozen(a, dtype=np.int8) -> np.ndarray:
    a = np.asarray(a, dtype=dtype)
    a.flags.writeable = False
    return a


def _cluster_size(rng: np.random.Generator, config: GenerativeConfig) -> int:
    lam = config.size_mean - 1.0
    if config.size_dispersion > 0 and lam > 0:
        shape = 1.0 / config.size_dispersion**2
        lam = rng.gamma(shape, lam / shape)
    return 1 + int(rng.poisson(lam))


def generate_world(config: GenerativeConfig, spillover: SpilloverFn = exponential_spillover) -> PotentialWorld:
    """Draw a population of clusters with both potential outcomes per person.

    Each cluster draws from its own stream, so cluster ``i`` is the same
    whatever ``n_clusters`` is.  Both potential outcomes compare one shared
    uniform against the arm-specific risk, so without any vaccine effect
    ``y1 == y0`` exactly.
    """
    h = config.risk_heterogeneity
    width = len(str(config.n_clusters - 1))
    clusters = []
    for i in range(config.n_clusters):
        rng = stream(config.seed, "world", i)
        m = _cluster_size(rng, config)
        cluster_mult = math.exp(config.cluster_heterogeneity * rng.standard_normal()
                                - config.cluster_heterogeneity**2 / 2)
        frailty = rng.standard_normal(m)
        p_part = _expit(config.participation_intercept + config.confounding_strength * frailty)
        s = (rng.random(m) < p_part).astype(np.int8)
        u = rng.random(m)

        base = config.baseline_risk * cluster_mult * np.exp(h * frailty - h * h / 2)
        coverage = s.mean()
        risk1 = base * (1.0 - config.direct_efficacy * s) * spillover(coverage, config.spillover_strength)
        risk0 = base
        worst = max(float(risk0.max()), float(risk1.max()))
        if worst > 1.0:
            raise RiskOutOfRange(
                f"cluster {i}: an individual risk of {worst:.3f} exceeds 1; "
                "lower baseline_risk or the heterogeneity parameters"
            )
        label = f"s{i % config.n_strata}" if config.n_strata > 1 else None
        clusters.append(WorldCluster(
            f"k{i:0{width}d}", label, _frozen(s), _frozen(u < risk1), _frozen(u < risk0),
        ))
    return PotentialWorld(tuple(clusters), config)


class WorldCounts(NamedTuple):
    """Per-cluster counts of a world, enough to form every cluster outcome under either arm."""

    size: np.ndarray
    n_part: np.ndarray
    n_non: np.ndarray
    events1_part: np.ndarray
    events1_non: np.ndarray
    events0_part: np.ndarray
    events0_non: np.ndarray

    @classmethod
    def from_world(cls, world: PotentialWorld) -> WorldCounts:
        rows = []
        for c in world.clusters:
            part = c.participation == 1
            rows.append((
                c.size, int(part.sum()), int((~part).sum()),
                int(c.y1[part].sum()), int(c.y1[~part].sum()),
                int(c.y0[part].sum()), int(c.y0[~part].sum()),
            ))
        cols = np.array(rows, dtype=np.int64).reshape(-1, 7).T
        return cls(*cols)

    def _ratio(self, num, den) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(den > 0, num / np.maximum(den, 1), np.nan)

    def outcomes(self, arm: int) -> dict[str, np.ndarray]:
        """Cluster outcomes if every cluster got ``arm``; NaN where a stratum is empty."""
        ep, en = (self.events1_part, self.events1_non) if arm == 1 else (self.events0_part, self.events0_non)
        return {
            "overall": (ep + en) / self.size,
            "participators": self._ratio(ep, self.n_part),
            "non_participators": self._ratio(en, self.n_non),
        }


@dataclass(frozen=True)
class TrueEstimands:
    """Finite-population truths of a world; None where a stratum is empty in some cluster.

    ``naive_limit`` is what the naive participant/non-participant contrast in
    vaccine clusters estimates; ``control_contrast_limit`` is the same
    contrast under control.
    """

    overall: float
    indirect: float | None
    total: float | None
    naive_limit: float | None
    control_contrast_limit: float | None
    undefined: tuple[str, ...] = ()


def true_estimands(world: PotentialWorld) -> TrueEstimands:
    counts = world.counts()
    o1, o0 = counts.outcomes(1), counts.outcomes(0)
    overall = float(np.mean(o1["overall"] - o0["overall"]))
    both = bool(np.all(counts.n_part > 0) and np.all(counts.n_non > 0))
    if not both:
        undefined = ("indirect", "total", "naive_limit", "control_contrast_limit")
        return TrueEstimands(overall, None, None, None, None, undefined)
    return TrueEstimands(
        overall=overall,
        indirect=float(np.mean(o1["non_participators"] - o0["non_participators"])),
        total=float(np.mean(o1["participators"] - o0["participators"])),
        naive_limit=float(np.mean(o1["participators"]) - np.mean(o1["non_participators"])),
        control_contrast_limit=float(np.mean(o0["participators"]) - np.mean(o0["non_participators"])),
    )


def observe(world: PotentialWorld, assignment: Mapping[str, int]) -> TrialDataset:
    """The trial that would be seen under ``assignment`` (cluster id to arm)."""
    clusters = []
    for c in world.clusters:
        try:
            a = int(assignment[c.cluster_id])
        except KeyError:
            raise MissingAssignment(f"no arm assigned to cluster {c.cluster_id}") from None
        clusters.append(ClusterRecord(c.cluster_id, a, c.participation, c.y1 if a == 1 else c.y0, c.stratum_label))
    return TrialDataset(tuple(clusters))


def control_stratum_risk(config: GenerativeConfig, participates: bool) -> float:
    """Expected disease risk under control among participants (or non-participants).

    Integrates the frailty out against the participation probability; the
    cluster multiplier has mean 1 and is independent, so it drops out.
    """
    from scipy import integrate, stats

    h, g, alpha = config.risk_heterogeneity, config.confounding_strength, config.participation_intercept

    def p(f):
        q = _expit(alpha + g * f)
        return q if participates else 1.0 - q

    def weighted(f):
        return p(f) * stats.norm.pdf(f)

    # the normal density is below 1e-30 beyond |f| = 12
    num, _ = integrate.quad(lambda f: np.exp(h * f - h * h / 2) * weighted(f), -12, 12)
    den, _ = integrate.quad(weighted, -12, 12)
    return config.baseline_risk * num / den
