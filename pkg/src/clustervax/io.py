"""Dataset files, configuration documents and reports."""
from __future__ import annotations

import csv
import io
import json
import math
from collections.abc import Mapping
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from clustervax.datagen_causal import GenerativeConfig, PotentialWorld
from clustervax.datagen_margins import MarginSpec
from clustervax.estimators import EffectEstimate, EffectKind
from clustervax.randomization import CompletelyRandomized, RandomizationScheme, StratifiedBlocked, half_per_stratum
from clustervax.trial_model import ClusterRecord, TrialDataset

COLUMNS = ("cluster_id", "arm", "participation", "outcome")
STRATUM_COLUMN = "stratum_label"
COUNTERFACTUAL_COLUMNS = ("cluster_id", "stratum_label", "participation", "y1", "y0")
SCALES = {"per1000": 1000.0, "raw": 1.0}
BUILTIN_CONFIGS = ("trial_margins", "acceptance_world", "null_world")


class DatasetFormatError(ValueError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


class ConfigError(ValueError):
    pass


def _binary(value: str, name: str, row: int) -> int:
    if value not in ("0", "1"):
        raise DatasetFormatError(f"{name} must be 0 or 1, got {value!r}", row)
    return int(value)


def parse_dataset(text: str) -> TrialDataset:
    """Parse the individual-level CSV format; row numbers count the header as row 1."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetFormatError("empty file") from None
    header = [h.strip() for h in header]
    if tuple(header[:4]) != COLUMNS or header[4:] not in ([], [STRATUM_COLUMN]):
        raise DatasetFormatError(
            f"header must be {','.join(COLUMNS)}[,{STRATUM_COLUMN}], got {','.join(header)}", 1
        )
    width = len(header)
    has_label = width == 5
    order: list[str] = []
    parts: dict[str, tuple[int, str | None, list, list]] = {}
    for row_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != width:
            raise DatasetFormatError(f"expected {width} fields, got {len(row)}", row_no)
        if any(f == "" for f in row[:4]):
            raise DatasetFormatError("missing field", row_no)
        cid = row[0]
        arm = _binary(row[1], "arm", row_no)
        s = _binary(row[2], "participation", row_no)
        y = _binary(row[3], "outcome", row_no)
        label = (row[4] or None) if has_label else None
        if cid not in parts:
            order.append(cid)
            parts[cid] = (arm, label, [], [])
        entry = parts[cid]
        if entry[0] != arm:
            raise DatasetFormatError(f"cluster {cid} has more than one arm", row_no)
        if entry[1] != label:
            raise DatasetFormatError(f"cluster {cid} has more than one stratum label", row_no)
        entry[2].append(s)
        entry[3].append(y)
    clusters = tuple(
        ClusterRecord(cid, parts[cid][0], np.array(parts[cid][2]), np.array(parts[cid][3]), parts[cid][1])
        for cid in order
    )
    return TrialDataset(clusters)


def read_dataset(path: str | Path) -> TrialDataset:
    return parse_dataset(Path(path).read_text(encoding="utf-8"))


def format_dataset(dataset: TrialDataset) -> str:
    labelled = any(c.stratum_label is not None for c in dataset.clusters)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS + ((STRATUM_COLUMN,) if labelled else ()))
    for c in dataset.clusters:
        tail = (c.stratum_label or "",) if labelled else ()
        arm = str(c.arm)
        for s, y in zip(c.participation.tolist(), c.outcome.tolist()):
            w.writerow((c.cluster_id, arm, s, y) + tail)
    return buf.getvalue()


def write_dataset(dataset: TrialDataset, path: str | Path) -> None:
    Path(path).write_bytes(format_dataset(dataset).encode("utf-8"))


def format_counterfactuals(world: PotentialWorld) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COUNTERFACTUAL_COLUMNS)
    for c in world.clusters:
        label = c.stratum_label or ""
        for s, y1, y0 in zip(c.participation.tolist(), c.y1.tolist(), c.y0.tolist()):
            w.writerow((c.cluster_id, label, s, y1, y0))
    return buf.getvalue()


def parse_counterfactuals(text: str) -> PotentialWorld:
    from clustervax.datagen_causal import WorldCluster

    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != COUNTERFACTUAL_COLUMNS:
        raise DatasetFormatError(f"header must be {','.join(COUNTERFACTUAL_COLUMNS)}", 1)
    order, cols = [], {}
    for row_no, row in enumerate(reader, start=2):
        if len(row) != 5:
            raise DatasetFormatError("expected 5 fields", row_no)
        cid, label = row[0], row[1] or None
        vals = [_binary(v, n, row_no) for v, n in zip(row[2:], COUNTERFACTUAL_COLUMNS[2:])]
        if cid not in cols:
            order.append(cid)
            cols[cid] = (label, [], [], [])
        for lst, v in zip(cols[cid][1:], vals):
            lst.append(v)
    clusters = []
    for cid in order:
        label, s, y1, y0 = cols[cid]
        arrays = [np.asarray(a, dtype=np.int8) for a in (s, y1, y0)]
        for a in arrays:
            a.flags.writeable = False
        clusters.append(WorldCluster(cid, label, *arrays))
    return PotentialWorld(tuple(clusters))


# -- configuration ---------------------------------------------------------

def builtin_config_path(name: str) -> Path:
    return Path(str(resources.files("clustervax") / "data" / f"{name}.yaml"))


def load_config(path: str | Path) -> dict:
    """Read a YAML config; bare builtin names (``trial_margins``, ...) resolve to shipped files."""
    p = Path(path)
    if not p.exists() and str(path) in BUILTIN_CONFIGS:
        p = builtin_config_path(str(path))
    try:
        doc = yaml.safe_load(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    if not doc:
        raise ConfigError(f"config {path} is empty")
    if not isinstance(doc, Mapping):
        raise ConfigError(f"config {path} must be a key-value document")
    return dict(doc)


def margin_spec(config: Mapping) -> MarginSpec:
    try:
        return MarginSpec.from_dict(config["margins"])
    except KeyError as exc:
        raise ConfigError(f"margins section missing {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"bad margins section: {exc}") from None


def generative_config(config: Mapping, seed: int | None = None) -> GenerativeConfig:
    section = config.get("generative")
    if not isinstance(section, Mapping):
        raise ConfigError("config needs a 'generative' section")
    section = dict(section)
    if seed is not None:
        section["seed"] = seed
    try:
        return GenerativeConfig.from_dict(section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad generative section: {exc}") from None


def randomization_scheme(config: Mapping, clusters, kind: str | None = None, seed: int = 0) -> RandomizationScheme:
    """Scheme from the ``randomization`` section; ``kind`` overrides its ``scheme`` key.

    Without explicit counts: half the clusters (rounded down) for
    ``complete``, half of each stratum for ``stratified``.
    """
    section = dict(config.get("randomization") or {})
    kind = kind or section.get("scheme", "complete")
    if kind == "complete":
        n_treated = section.get("n_treated", len(clusters) // 2)
        return CompletelyRandomized(int(n_treated), seed)
    if kind == "stratified":
        counts = section.get("treated_per_stratum")
        if counts is None:
            try:
                return half_per_stratum(clusters, seed)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        return StratifiedBlocked({str(k): int(v) for k, v in counts.items()}, seed)
    raise ConfigError(f"unknown randomization scheme {kind!r}; use complete or stratified")


# -- reports ---------------------------------------------------------------

def _num(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def estimate_entry(estimate: EffectEstimate, factor: float) -> dict:
    d = estimate.scaled(factor).to_dict()
    warning = d.pop("warning")
    d = {k: _num(v) for k, v in d.items()}
    d["status"] = "ok"
    d["warnings"] = [warning] if warning else []
    return d


def error_entry(kind: EffectKind, contrast: str, exc: Exception) -> dict:
    return {
        "effect_kind": kind.value,
        "contrast": contrast,
        "status": "error",
        "error": type(exc).__name__,
        "message": str(exc),
    }


def dump_json(doc, path: str | Path | None) -> str:
    text = json.dumps(doc, indent=2, sort_keys=False, allow_nan=False) + "\n"
    if path is not None:
        Path(path).write_bytes(text.encode("utf-8"))
    return text
