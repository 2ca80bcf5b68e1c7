"""Monte Carlo evaluation of the estimators over re-randomizations of a world.

The potential outcomes stay fixed; each replicate draws a fresh assignment,
forms the observed cluster outcomes, and computes every effect kind.  Truths
are the finite-population estimands of the world (for the naive contrast,
its non-causal limit).
"""
from __future__ import annotations

import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from clustervax import estimators as est
from clustervax.datagen_causal import (
    GenerativeConfig,
    PotentialWorld,
    WorldCounts,
    generate_world,
    true_estimands,
)
from clustervax.estimators import EffectKind
from clustervax.randomization import RandomizationScheme, assign, assignment_vector, check_scheme
from clustervax.rng import derive_seed

KINDS = tuple(EffectKind)

_STRATUM_KEY = {
    EffectKind.OVERALL: "overall",
    EffectKind.INDIRECT: "non_participators",
    EffectKind.TOTAL: "participators",
}


@dataclass(frozen=True)
class EffectSummary:
    effect_kind: EffectKind
    true_value: float
    mean_estimate: float
    bias: float
    empirical_sd: float
    mean_estimated_se: float
    coverage: float
    n_replicates: int
    n_failed: int
    mc_standard_error: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["effect_kind"] = self.effect_kind.value
        return d


@dataclass(frozen=True, eq=False)
class MCReport:
    """Summary rows per effect kind plus the replicate-level results.

    ``points``, ``ses``, ``lower``, ``upper`` and ``truths`` are arrays of
    shape ``(n_replicates,)`` per kind, NaN where a replicate failed.
    """

    rows: dict
    points: dict
    ses: dict
    lower: dict
    upper: dict
    truths: dict
    n_replicates: int
    seed: int

    def __getitem__(self, kind: EffectKind) -> EffectSummary:
        return self.rows[kind]

    def to_dict(self) -> dict:
        return {
            "n_replicates": self.n_replicates,
            "seed": self.seed,
            "effects": [self.rows[k].to_dict() for k in KINDS],
        }

    def replicate_rows(self):
        for r in range(self.n_replicates):
            for k in KINDS:
                yield {
                    "replicate": r,
                    "effect_kind": k.value,
                    "point": self.points[k][r],
                    "standard_error": self.ses[k][r],
                    "ci_lower": self.lower[k][r],
                    "ci_upper": self.upper[k][r],
                    "true_value": self.truths[k][r],
                }


def _truth_row(world: PotentialWorld) -> dict:
    t = true_estimands(world)
    return {
        EffectKind.OVERALL: t.overall,
        EffectKind.INDIRECT: t.indirect,
        EffectKind.TOTAL: t.total,
        EffectKind.NAIVE_DIRECT: t.naive_limit,
        EffectKind.CONTROL_ARM_STRATUM_CONTRAST: t.control_contrast_limit,
    }


def estimate_from_counts(counts: WorldCounts, a: np.ndarray, z: float = est.Z_CRIT) -> dict:
    """All effect kinds for one assignment vector, with drop-on-empty-stratum.

    Same arithmetic as the dataset-level estimators, applied to precomputed
    per-cluster counts.  Failed estimates are NaN.
    """
    treated = a == 1
    o1, o0 = counts.outcomes(1), counts.outcomes(0)
    out = {}
    for kind, key in _STRATUM_KEY.items():
        y1 = o1[key][treated]
        y0 = o0[key][~treated]
        try:
            out[kind] = est.difference_in_means(y1[~np.isnan(y1)], y0[~np.isnan(y0)], z=z)
        except est.EstimationError:
            out[kind] = None
    for kind, arm_mask, o in (
        (EffectKind.NAIVE_DIRECT, treated, o1),
        (EffectKind.CONTROL_ARM_STRATUM_CONTRAST, ~treated, o0),
    ):
        d = o["participators"][arm_mask] - o["non_participators"][arm_mask]
        try:
            out[kind] = est.paired_mean_difference(d[~np.isnan(d)], z=z)
        except est.EstimationError:
            out[kind] = None
    return out


def _run_chunk(world: PotentialWorld, scheme, seed: int, replicates: range, z: float):
    counts = world.counts()
    ids = world.cluster_ids
    res = np.full((len(replicates), len(KINDS), 4), np.nan)
    for row, r in enumerate(replicates):
        arms = assign(world.clusters, replace(scheme, seed=derive_seed(seed, "mc", r)))
        fits = estimate_from_counts(counts, assignment_vector(ids, arms), z)
        for col, kind in enumerate(KINDS):
            if fits[kind] is not None:
                res[row, col] = fits[kind]
    return res


def _run_super_chunk(config: GenerativeConfig, scheme, seed: int, replicates: range, z: float):
    res = np.full((len(replicates), len(KINDS), 5), np.nan)
    for row, r in enumerate(replicates):
        world = generate_world(replace(config, seed=derive_seed(seed, "world", r)))
        truth = _truth_row(world)
        res[row, :, :4] = _run_chunk(world, scheme, seed, range(r, r + 1), z)[0]
        res[row, :, 4] = [np.nan if truth[k] is None else truth[k] for k in KINDS]
    return res


def _chunks(n: int, n_jobs: int) -> list[range]:
    size = max(1, math.ceil(n / (4 * n_jobs)))
    return [range(i, min(i + size, n)) for i in range(0, n, size)]


def _execute(fn, payload, scheme, seed, n_replicates, n_jobs, z, progress):
    parts = _chunks(n_replicates, max(1, n_jobs))
    results = []
    if n_jobs <= 1:
        for i, chunk in enumerate(parts):
            results.append(fn(payload, scheme, seed, chunk, z))
            if progress:
                print(f"\rreplicates {chunk.stop}/{n_replicates}", end="", file=sys.stderr)
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futures = [pool.submit(fn, payload, scheme, seed, chunk, z) for chunk in parts]
            for f in futures:
                results.append(f.result())
    if progress:
        print(file=sys.stderr)
    return np.concatenate(results, axis=0)


def _summarize(res: np.ndarray, truths: np.ndarray, seed: int) -> MCReport:
    n = res.shape[0]
    rows, points, ses, lower, upper, truth_cols = {}, {}, {}, {}, {}, {}
    for col, kind in enumerate(KINDS):
        p, s, lo, hi = (res[:, col, j] for j in range(4))
        t = truths[:, col]
        ok = ~np.isnan(p) & ~np.isnan(t)
        k = int(ok.sum())
        if k:
            mean = float(p[ok].mean())
            sd = float(p[ok].std(ddof=1)) if k > 1 else math.nan
            truth = float(t[ok].mean())
            bias = float((p[ok] - t[ok]).mean())
            cover = float(np.mean((lo[ok] <= t[ok]) & (t[ok] <= hi[ok])))
            mean_se = float(s[ok].mean())
        else:
            mean = sd = bias = cover = mean_se = math.nan
            truth = float(np.nanmean(t)) if np.any(~np.isnan(t)) else math.nan
        rows[kind] = EffectSummary(
            effect_kind=kind,
            true_value=truth,
            mean_estimate=mean,
            bias=bias,
            empirical_sd=sd,
            mean_estimated_se=mean_se,
            coverage=cover,
            n_replicates=k,
            n_failed=n - k,
            mc_standard_error=sd / math.sqrt(k) if k else math.nan,
        )
        points[kind], ses[kind], lower[kind], upper[kind], truth_cols[kind] = p, s, lo, hi, t
    return MCReport(rows, points, ses, lower, upper, truth_cols, n, seed)


def run_mc(
    world: PotentialWorld,
    scheme: RandomizationScheme,
    n_replicates: int,
    seed: int,
    n_jobs: int = 1,
    z: float = est.Z_CRIT,
    progress: bool = False,
) -> MCReport:
    """Re-randomize a fixed world ``n_replicates`` times.

    Replicate ``r`` always uses the same assignment stream, so results do
    not depend on ``n_jobs`` and the first ``k`` replicates of a longer run
    equal a run of length ``k``.  The seed inside ``scheme`` is ignored.
    Clusters with an empty stratum are dropped from that estimate; a
    replicate whose estimate fails entirely counts in ``n_failed``.
    """
    if n_replicates < 2:
        raise ValueError("n_replicates must be at least 2")
    check_scheme(world.clusters, scheme)
    res = _execute(_run_chunk, world, scheme, seed, n_replicates, n_jobs, z, progress)
    truth = _truth_row(world)
    row = np.array([np.nan if truth[k] is None else truth[k] for k in KINDS])
    return _summarize(res, np.tile(row, (n_replicates, 1)), seed)


def run_superpopulation_mc(
    config: GenerativeConfig,
    scheme: RandomizationScheme,
    n_replicates: int,
    seed: int,
    n_jobs: int = 1,
    z: float = est.Z_CRIT,
    progress: bool = False,
) -> MCReport:
    """Like :func:`run_mc`, but every replicate regenerates the world.

    Bias and coverage are taken against each replicate's own world truth;
    ``true_value`` in the report is the mean of those truths.
    """
    if n_replicates < 2:
        raise ValueError("n_replicates must be at least 2")
    res = _execute(_run_super_chunk, config, scheme, seed, n_replicates, n_jobs, z, progress)
    return _summarize(res[:, :, :4], res[:, :, 4], seed)
