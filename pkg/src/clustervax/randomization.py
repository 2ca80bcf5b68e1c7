"""Cluster-level treatment assignment."""
from __future__ import annotations

from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Protocol, Union

import numpy as np

from clustervax.rng import stream


class InfeasibleScheme(ValueError):
    pass


class UnknownStratumLabel(KeyError):
    pass


class _Cluster(Protocol):
    cluster_id: str
    stratum_label: str | None


@dataclass(frozen=True)
class CompletelyRandomized:
    """Exactly ``n_treated`` clusters get vaccine; every such subset is equally likely."""

    n_treated: int
    seed: int = 0


@dataclass(frozen=True)
class StratifiedBlocked:
    """Complete randomization within each stratum, with a fixed treated count per stratum label."""

    treated_per_stratum: Mapping[str, int] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "treated_per_stratum", dict(self.treated_per_stratum))


RandomizationScheme = Union[CompletelyRandomized, StratifiedBlocked]


def half_per_stratum(clusters: Sequence[_Cluster], seed: int = 0) -> StratifiedBlocked:
    """Stratified scheme treating half of every stratum (strata sizes must be even)."""
    sizes = Counter(c.stratum_label for c in clusters)
    odd = sorted(str(k) for k, v in sizes.items() if v % 2)
    if odd:
        raise InfeasibleScheme(f"strata with an odd number of clusters: {odd}")
    return StratifiedBlocked({k: v // 2 for k, v in sizes.items()}, seed)


def check_scheme(clusters: Sequence[_Cluster], scheme: RandomizationScheme) -> None:
    n = len(clusters)
    if isinstance(scheme, CompletelyRandomized):
        if not 1 <= scheme.n_treated <= n - 1:
            raise InfeasibleScheme(f"need 1 <= n_treated <= {n - 1}, got {scheme.n_treated}")
        return
    if not isinstance(scheme, StratifiedBlocked):
        raise TypeError(f"unknown randomization scheme {scheme!r}")
    sizes = Counter(c.stratum_label for c in clusters)
    unlabeled = set(sizes) - set(scheme.treated_per_stratum)
    if unlabeled:
        raise UnknownStratumLabel(f"clusters carry strata missing from the scheme: {sorted(map(str, unlabeled))}")
    extra = set(scheme.treated_per_stratum) - set(sizes)
    if extra:
        raise UnknownStratumLabel(f"scheme names strata with no clusters: {sorted(map(str, extra))}")
    for label, k in scheme.treated_per_stratum.items():
        if not 0 <= k <= sizes[label]:
            raise InfeasibleScheme(f"stratum {label!r}: {k} treated of {sizes[label]} clusters")
    treated = sum(scheme.treated_per_stratum.values())
    if not 1 <= treated <= n - 1:
        raise InfeasibleScheme("need at least one treated and one control cluster overall")


def assign(clusters: Sequence[_Cluster], scheme: RandomizationScheme) -> dict[str, int]:
    """Map each cluster id to its arm (1 = vaccine).

    Deterministic in ``scheme.seed``.  Within a stratum the clusters are
    shuffled with one Fisher-Yates pass and the first ``k`` are treated.
    """
    clusters = list(clusters)
    check_scheme(clusters, scheme)
    rng = stream(scheme.seed, "assignment")
    arms = {c.cluster_id: 0 for c in clusters}
    if isinstance(scheme, CompletelyRandomized):
        groups = [(clusters, scheme.n_treated)]
    else:
        by_label: dict = {}
        for c in clusters:
            by_label.setdefault(c.stratum_label, []).append(c)
        # sorted labels so the draw order is independent of input order
        groups = [(by_label[k], scheme.treated_per_stratum[k]) for k in sorted(by_label, key=str)]
    for members, k in groups:
        order = rng.permutation(len(members))
        for idx in order[:k]:
            arms[members[idx].cluster_id] = 1
    return arms


def assignment_vector(cluster_ids: Sequence[str], arms: Mapping[str, int]) -> np.ndarray:
    return np.fromiter((arms[c] for c in cluster_ids), dtype=np.int8, count=len(cluster_ids))
