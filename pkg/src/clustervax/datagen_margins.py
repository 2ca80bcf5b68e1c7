"""Individual-level trial data that reproduces a table of cluster summaries.

A :class:`MarginSpec` holds, per arm, the cluster count, the mean and SD of
people and of participants per cluster (as printed, i.e. rounded), and the
exact participant/non-participant and event totals.  :func:`synthesize`
builds integer cluster sizes and participant counts that hit the totals
exactly and the rounded moments, then spreads the events over clusters.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from clustervax.rng import stream
from clustervax.trial_model import ClusterRecord, TrialDataset

ARMS = {"vaccine": 1, "control": 0}


class InfeasibleMargins(ValueError):
    """Raised when no integer dataset can satisfy a margin table.

    ``constraint`` names the failing requirement; the message says why.
    """

    def __init__(self, arm: str, constraint: str, detail: str):
        self.arm = arm
        self.constraint = constraint
        self.detail = detail
        super().__init__(f"{arm} arm, {constraint}: {detail}")


@dataclass(frozen=True)
class ArmMargins:
    n_clusters: int
    mean_size: float
    sd_size: float
    mean_participants: float
    sd_participants: float
    total_participants: int
    total_nonparticipants: int
    events_participants: int
    events_nonparticipants: int
    precision: int = 0

    @property
    def total_size(self) -> int:
        return self.total_participants + self.total_nonparticipants

    @property
    def needs_both_strata(self) -> bool:
        return self.total_participants > 0 and self.total_nonparticipants > 0


@dataclass(frozen=True)
class MarginSpec:
    """Margin targets for both arms.

    ``overdispersion`` is the Dirichlet concentration used when spreading
    events over clusters; ``None`` means plain multinomial allocation
    proportional to stratum size.  Smaller values give more between-cluster
    variation in event rates.
    """

    vaccine: ArmMargins
    control: ArmMargins
    overdispersion: float | None = None

    def arms(self):
        return (("vaccine", self.vaccine), ("control", self.control))

    @classmethod
    def from_dict(cls, d: dict) -> MarginSpec:
        return cls(
            vaccine=ArmMargins(**d["vaccine"]),
            control=ArmMargins(**d["control"]),
            overdispersion=d.get("overdispersion"),
        )

    def to_dict(self) -> dict:
        return asdict(self)


def _sd(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1)) if x.size > 1 else 0.0


def _rounds_to(value: float, target: float, precision: int) -> bool:
    return round(value, precision) == round(target, precision)


def validate(spec: MarginSpec) -> None:
    """Raise :class:`InfeasibleMargins` if a necessary condition fails."""
    for name, arm in spec.arms():
        n = arm.n_clusters
        if n < 1:
            raise InfeasibleMargins(name, "n_clusters", "need at least one cluster")
        for field in ("total_participants", "total_nonparticipants", "events_participants", "events_nonparticipants"):
            if getattr(arm, field) < 0:
                raise InfeasibleMargins(name, field, "must be non-negative")
        if arm.events_participants > arm.total_participants:
            raise InfeasibleMargins(name, "events_participants", "more events than participants")
        if arm.events_nonparticipants > arm.total_nonparticipants:
            raise InfeasibleMargins(name, "events_nonparticipants", "more events than non-participants")
        if not _rounds_to(arm.total_size / n, arm.mean_size, arm.precision):
            raise InfeasibleMargins(
                name, "mean_size",
                f"totals give {arm.total_size}/{n} = {arm.total_size / n:.4f}, printed {arm.mean_size}",
            )
        if not _rounds_to(arm.total_participants / n, arm.mean_participants, arm.precision):
            raise InfeasibleMargins(
                name, "mean_participants",
                f"totals give {arm.total_participants / n:.4f}, printed {arm.mean_participants}",
            )
        per_cluster = 2 if arm.needs_both_strata else 1
        if arm.total_size < per_cluster * n:
            raise InfeasibleMargins(name, "total_size", f"fewer than {per_cluster} people per cluster")
        if arm.needs_both_strata and (arm.total_participants < n or arm.total_nonparticipants < n):
            raise InfeasibleMargins(
                name, "strata", "every cluster needs a participant and a non-participant"
            )
        if n == 1 and (arm.sd_size != 0 or arm.sd_participants != 0):
            raise InfeasibleMargins(name, "sd", "a single cluster has SD 0")
        if arm.total_nonparticipants == 0 and not _rounds_to(arm.sd_participants, arm.sd_size, arm.precision):
            raise InfeasibleMargins(name, "sd_participants", "everyone participates, so SDs must agree")
    if spec.overdispersion is not None and not spec.overdispersion > 0:
        raise InfeasibleMargins("both", "overdispersion", "concentration must be positive")


def _standardized(z: np.ndarray) -> np.ndarray:
    s = z.std(ddof=1) if z.size > 1 else 0.0
    return (z - z.mean()) / s if s > 0 else np.zeros_like(z)


def _round_to_total(x: np.ndarray, total: int, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Integer vector within bounds summing to ``total``, close to real ``x``."""
    x = np.clip(x, lower, upper)
    out = np.floor(x).astype(np.int64)
    out = np.clip(out, lower, upper)
    remainder = x - out
    short = total - int(out.sum())
    # largest remainders first; stable sort keeps ties deterministic
    order = np.argsort(-remainder, kind="stable")
    while short != 0:
        step = 1 if short > 0 else -1
        moved = False
        seq = order if step > 0 else order[::-1]
        for i in seq:
            if short == 0:
                break
            if lower[i] <= out[i] + step <= upper[i]:
                out[i] += step
                short -= step
                moved = True
        if not moved:
            raise ValueError("bounds cannot accommodate the total")
    return out


def _match_sd(x: np.ndarray, target: float, precision: int, lower, upper, max_steps: int = 100_000) -> np.ndarray:
    """Pairwise +1/-1 moves (sum preserved) until the SD rounds to ``target``."""
    x = x.copy()
    n = x.size
    if n < 2:
        return x
    target_ss = target**2 * (n - 1)
    for _ in range(max_steps):
        sd = _sd(x)
        if _rounds_to(sd, target, precision):
            return x
        ss = float(((x - x.mean()) ** 2).sum())
        need = target_ss - ss
        up = np.flatnonzero(x + 1 <= upper)
        down = np.flatnonzero(x - 1 >= lower)
        if up.size == 0 or down.size == 0:
            break
        # +1 at i, -1 at j changes the sum of squares by 2(x_i - x_j) + 2
        change = 2.0 * (x[up][:, None] - x[down][None, :]) + 2.0
        change[up[:, None] == down[None, :]] = np.nan
        score = np.abs(change - need)
        score[np.isnan(score)] = np.inf
        if not np.any(score < abs(need)):
            break
        i, j = np.unravel_index(np.argmin(score), score.shape)
        x[up[i]] += 1
        x[down[j]] -= 1
    raise ValueError(f"could not reach SD {target} (at {_sd(x):.4f})")


def _integer_vector(rng, total, mean, sd, precision, lower, upper, base=None, name="", arm=""):
    n = lower.size
    if int(lower.sum()) > total or int(upper.sum()) < total:
        raise InfeasibleMargins(arm, name, f"total {total} outside achievable range [{lower.sum()}, {upper.sum()}]")
    z = rng.standard_normal(n) if base is None else base
    real = total / n + sd * _standardized(z)
    try:
        x = _round_to_total(real, total, lower, upper)
        return _match_sd(x, sd, precision, lower, upper)
    except ValueError as exc:
        raise InfeasibleMargins(arm, name, str(exc)) from None


def _allocate(rng, events: int, capacity: np.ndarray, concentration: float | None) -> np.ndarray:
    """Spread ``events`` over clusters, proportional to capacity, never exceeding it."""
    out = np.zeros(capacity.size, dtype=np.int64)
    remaining = events
    while remaining > 0:
        room = capacity - out
        open_ = room > 0
        w = np.where(open_, capacity, 0).astype(float)
        w /= w.sum()
        if concentration is not None:
            alpha = concentration * w[open_]
            q = np.zeros_like(w)
            q[open_] = rng.dirichlet(alpha)
        else:
            q = w
        draw = rng.multinomial(remaining, q)
        take = np.minimum(draw, room)
        out += take
        remaining -= int(take.sum())
    return out


_MAX_ATTEMPTS = 64
# how strongly participant counts follow cluster size, cycled over attempts
_SIZE_TRACKING = (0.8, 0.95, 0.5, 1.0, 0.2)


def _sizes_and_participants(rng, name: str, arm: ArmMargins):
    n = arm.n_clusters
    size_lower = np.full(n, 2 if arm.needs_both_strata else 1)
    size_upper = np.full(n, arm.total_size)
    last = None
    # the two integer vectors interact through participants < size; a bad size
    # draw can make the participant SD unreachable, so redraw a bounded number of times
    for attempt in range(_MAX_ATTEMPTS):
        try:
            sizes = _integer_vector(
                rng, arm.total_size, arm.mean_size, arm.sd_size, arm.precision,
                size_lower, size_upper, name="sd_size", arm=name,
            )
            if arm.total_nonparticipants == 0:
                return sizes, sizes.copy()
            if arm.total_participants == 0:
                return sizes, np.zeros(n, dtype=np.int64)
            rho = _SIZE_TRACKING[attempt % len(_SIZE_TRACKING)]
            z_part = rho * _standardized(sizes.astype(float)) + math.sqrt(1 - rho**2) * rng.standard_normal(n)
            parts = _integer_vector(
                rng, arm.total_participants, arm.mean_participants, arm.sd_participants, arm.precision,
                np.ones(n, dtype=np.int64), sizes - 1, base=z_part, name="sd_participants", arm=name,
            )
            return sizes, parts
        except InfeasibleMargins as exc:
            last = exc
    raise InfeasibleMargins(name, last.constraint, f"{last.detail}; gave up after {_MAX_ATTEMPTS} draws")


def _synthesize_arm(name: str, arm: ArmMargins, overdispersion, seed: int) -> list[ClusterRecord]:
    rng = stream(seed, "margins", ARMS[name])
    n = arm.n_clusters
    sizes, parts = _sizes_and_participants(rng, name, arm)
    nonparts = sizes - parts

    ev_part = _allocate(rng, arm.events_participants, parts, overdispersion)
    ev_non = _allocate(rng, arm.events_nonparticipants, nonparts, overdispersion)

    prefix = "v" if ARMS[name] == 1 else "c"
    width = len(str(n))
    clusters = []
    for i in range(n):
        s = np.repeat(np.array([1, 0], dtype=np.int8), [parts[i], nonparts[i]])
        y = np.zeros(sizes[i], dtype=np.int8)
        y[: ev_part[i]] = 1
        y[parts[i] : parts[i] + ev_non[i]] = 1
        order = rng.permutation(sizes[i])
        clusters.append(ClusterRecord(f"{prefix}{i + 1:0{width}d}", ARMS[name], s[order], y[order]))
    return clusters


def synthesize(spec: MarginSpec, seed: int) -> TrialDataset:
    """Build a dataset matching ``spec``; deterministic in ``(spec, seed)``."""
    validate(spec)
    clusters = []
    for name, arm in spec.arms():
        clusters.extend(_synthesize_arm(name, arm, spec.overdispersion, seed))
    return TrialDataset(tuple(clusters))


def summarize(dataset: TrialDataset, precision: int = 0) -> MarginSpec:
    """Recompute the margin table of a dataset (means and SDs unrounded)."""
    arms = {}
    for name, a in ARMS.items():
        cl = dataset.arm(a)
        sizes = np.array([c.size for c in cl], dtype=float)
        parts = np.array([int(c.participation.sum()) for c in cl], dtype=float)
        ev_p = sum(int(c.outcome[c.participation == 1].sum()) for c in cl)
        ev_n = sum(int(c.outcome[c.participation == 0].sum()) for c in cl)
        arms[name] = ArmMargins(
            n_clusters=len(cl),
            mean_size=float(sizes.mean()) if cl else math.nan,
            sd_size=_sd(sizes),
            mean_participants=float(parts.mean()) if cl else math.nan,
            sd_participants=_sd(parts),
            total_participants=int(parts.sum()),
            total_nonparticipants=int(sizes.sum() - parts.sum()),
            events_participants=ev_p,
            events_nonparticipants=ev_n,
            precision=precision,
        )
    return MarginSpec(arms["vaccine"], arms["control"])


def mismatches(summary: MarginSpec, spec: MarginSpec) -> list[str]:
    """Fields where a summary disagrees with a spec: counts exactly, moments after rounding."""
    bad = []
    for (name, got), (_, want) in zip(summary.arms(), spec.arms()):
        for f in ("n_clusters", "total_participants", "total_nonparticipants",
                  "events_participants", "events_nonparticipants"):
            if getattr(got, f) != getattr(want, f):
                bad.append(f"{name}.{f}: {getattr(got, f)} != {getattr(want, f)}")
        for f in ("mean_size", "sd_size", "mean_participants", "sd_participants"):
            if not _rounds_to(getattr(got, f), getattr(want, f), want.precision):
                bad.append(f"{name}.{f}: {getattr(got, f):.4f} does not round to {getattr(want, f)}")
    return bad


def calibrate(
    spec: MarginSpec,
    targets: dict[str, tuple[float, float]],
    concentrations,
    seeds,
    scale: float = 1000.0,
) -> tuple[float | None, int, float]:
    """Grid search over (overdispersion, seed) for a dataset closest to reported estimates.

    ``targets`` maps effect names (``overall``, ``indirect``, ``total``,
    ``naive-direct``, ``control-contrast``) to ``(point, se)`` on the
    ``scale`` used for reporting.  Returns the best concentration, seed and
    the sum of squared deviations.
    """
    from clustervax.estimators import EffectKind, estimate_effect

    kinds = {k: EffectKind(k) for k in targets}
    best = (None, 0, math.inf)
    for conc, seed in itertools.product(concentrations, seeds):
        ds = synthesize(replace(spec, overdispersion=conc), seed)
        loss = 0.0
        for name, (point, se) in targets.items():
            est = estimate_effect(ds, kinds[name]).scaled(scale)
            loss += (est.point - point) ** 2 + (est.standard_error - se) ** 2
        if loss < best[2]:
            best = (conc, seed, loss)
    return best
