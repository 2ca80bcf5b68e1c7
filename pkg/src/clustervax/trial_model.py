"""Trial data model and cluster-level outcome summaries.

Individuals are stored per cluster as two binary arrays (participation and
disease outcome).  Cluster outcomes for the overall, participator and
non-participator groups are computed on demand from those arrays, so the
three summaries of one cluster always agree with each other.
"""
from __future__ import annotations

import enum
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np


class Stratum(enum.Enum):
    """Which individuals of a cluster enter the cluster outcome."""

    OVERALL = "overall"
    PARTICIPATORS = "participators"
    NON_PARTICIPATORS = "non_participators"


class PrincipalStratum(enum.Enum):
    ALWAYS_PARTICIPATOR = "always_participator"
    NEVER_PARTICIPATOR = "never_participator"


def _binary_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} values must be 0 or 1")
    arr = arr.astype(np.int8, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class IndividualRecord:
    cluster_id: str
    participation: int
    outcome: int

    def __post_init__(self):
        if self.participation not in (0, 1) or self.outcome not in (0, 1):
            raise ValueError("participation and outcome must be 0 or 1")


@dataclass(frozen=True, eq=False)
class ClusterRecord:
    """One randomized cluster.

    ``participation`` and ``outcome`` hold one entry per individual, in a
    fixed order.  Use :meth:`from_individuals` to build a cluster from
    :class:`IndividualRecord` objects.
    """

    cluster_id: str
    arm: int
    participation: np.ndarray
    outcome: np.ndarray
    stratum_label: str | None = None

    def __post_init__(self):
        if self.arm not in (0, 1):
            raise ValueError(f"cluster {self.cluster_id}: arm must be 0 or 1, got {self.arm!r}")
        s = _binary_array(self.participation, "participation")
        y = _binary_array(self.outcome, "outcome")
        if s.shape != y.shape:
            raise ValueError(f"cluster {self.cluster_id}: participation/outcome length mismatch")
        if s.size == 0:
            raise ValueError(f"cluster {self.cluster_id}: a cluster needs at least one individual")
        object.__setattr__(self, "arm", int(self.arm))
        object.__setattr__(self, "participation", s)
        object.__setattr__(self, "outcome", y)

    @classmethod
    def from_individuals(
        cls,
        cluster_id: str,
        arm: int,
        individuals: Iterable[IndividualRecord],
        stratum_label: str | None = None,
    ) -> ClusterRecord:
        people = list(individuals)
        for p in people:
            if p.cluster_id != cluster_id:
                raise ValueError(f"individual belongs to {p.cluster_id!r}, not {cluster_id!r}")
        return cls(
            cluster_id,
            arm,
            [p.participation for p in people],
            [p.outcome for p in people],
            stratum_label,
        )

    @property
    def size(self) -> int:
        return int(self.participation.size)

    @property
    def individuals(self) -> tuple[IndividualRecord, ...]:
        return tuple(
            IndividualRecord(self.cluster_id, int(s), int(y))
            for s, y in zip(self.participation, self.outcome)
        )

    def __eq__(self, other):
        if not isinstance(other, ClusterRecord):
            return NotImplemented
        return (
            self.cluster_id == other.cluster_id
            and self.arm == other.arm
            and self.stratum_label == other.stratum_label
            and np.array_equal(self.participation, other.participation)
            and np.array_equal(self.outcome, other.outcome)
        )

    __hash__ = None


@dataclass(frozen=True)
class TrialDataset:
    clusters: tuple[ClusterRecord, ...] = field(default_factory=tuple)

    def __post_init__(self):
        clusters = tuple(self.clusters)
        ids = [c.cluster_id for c in clusters]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate cluster ids: {dupes}")
        object.__setattr__(self, "clusters", clusters)

    @property
    def n(self) -> int:
        return len(self.clusters)

    def arm(self, a: int) -> tuple[ClusterRecord, ...]:
        return tuple(c for c in self.clusters if c.arm == a)

    def __getitem__(self, cluster_id: str) -> ClusterRecord:
        for c in self.clusters:
            if c.cluster_id == cluster_id:
                return c
        raise KeyError(cluster_id)

    def __iter__(self):
        return iter(self.clusters)

    def __len__(self):
        return len(self.clusters)

    @property
    def n_individuals(self) -> int:
        return sum(c.size for c in self.clusters)


@dataclass(frozen=True)
class ClusterOutcome:
    cluster_id: str
    arm: int
    events: int
    denominator: int

    @property
    def value(self) -> float:
        return self.events / self.denominator


def stratum_mask(participation: np.ndarray, stratum: Stratum) -> np.ndarray:
    if stratum is Stratum.OVERALL:
        return np.ones(participation.shape, dtype=bool)
    if stratum is Stratum.PARTICIPATORS:
        return participation == 1
    if stratum is Stratum.NON_PARTICIPATORS:
        return participation == 0
    raise TypeError(f"not a Stratum: {stratum!r}")


def cluster_outcome(cluster: ClusterRecord, stratum: Stratum) -> ClusterOutcome | None:
    """Disease proportion among the cluster members in ``stratum``.

    Returns None when the stratum is empty in this cluster; the caller
    decides whether that is an error or the cluster is dropped.
    """
    mask = stratum_mask(cluster.participation, stratum)
    denom = int(mask.sum())
    if denom == 0:
        return None
    events = int(cluster.outcome[mask].sum())
    return ClusterOutcome(cluster.cluster_id, cluster.arm, events, denom)


def infer_strata(dataset: TrialDataset) -> dict[str, tuple[PrincipalStratum, ...]]:
    """Principal stratum of every individual, keyed by cluster id.

    Participation is unaffected by assignment, so observed participation
    identifies the stratum: participators are always participators and
    non-participators never participators.
    """
    return {
        c.cluster_id: tuple(
            PrincipalStratum.ALWAYS_PARTICIPATOR if s == 1 else PrincipalStratum.NEVER_PARTICIPATOR
            for s in c.participation
        )
        for c in dataset.clusters
    }


def make_cluster(
    cluster_id: str,
    arm: int,
    participation: Sequence[int],
    outcome: Sequence[int],
    stratum_label: str | None = None,
) -> ClusterRecord:
    return ClusterRecord(cluster_id, arm, np.asarray(participation), np.asarray(outcome), stratum_label)
