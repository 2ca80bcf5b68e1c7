"""Command-line interface: ``generate``, ``estimate`` and ``mc``.

Exit codes: 0 success, 2 usage or parse error, 3 infeasible margins,
4 every requested estimate failed.
"""
from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

from clustervax import io as cio
from clustervax.datagen_causal import RiskOutOfRange, generate_world, observe, true_estimands
from clustervax.datagen_margins import InfeasibleMargins, synthesize
from clustervax.estimators import Contrast, EmptyPolicy, EstimationError, estimate_effect, parse_effects
from clustervax.mc import run_mc, run_superpopulation_mc
from clustervax.randomization import assign
from clustervax.rng import SEED_MAX

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_ESTIMATION = 0, 2, 3, 4
DEFAULT_EFFECTS = "overall,indirect,total,naive-direct,control-contrast"


class UsageError(Exception):
    pass


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v <= SEED_MAX:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _clean(x):
    if isinstance(x, float):
        return x if math.isfinite(x) else None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


def _resolve_seed(args, config) -> int:
    if args.seed is not None:
        return args.seed
    if "seed" in config:
        return _seed(str(config["seed"]))
    raise UsageError("no --seed given and the config has no seed")


def cmd_generate(args) -> int:
    config = cio.load_config(args.config)
    seed = _resolve_seed(args, config)
    out = Path(args.out)
    if args.source == "margins":
        spec = cio.margin_spec(config)
        try:
            dataset = synthesize(spec, seed)
        except InfeasibleMargins as exc:
            print(f"infeasible margins: {exc}", file=sys.stderr)
            return EXIT_INFEASIBLE
        cio.write_dataset(dataset, out)
        print(f"wrote {dataset.n} clusters, {dataset.n_individuals} individuals to {out}", file=sys.stderr)
        return EXIT_OK

    gen = cio.generative_config(config, seed)
    try:
        world = generate_world(gen)
    except RiskOutOfRange as exc:
        raise cio.ConfigError(str(exc)) from None
    scheme = cio.randomization_scheme(config, world.clusters, args.scheme, seed)
    try:
        arms = assign(world.clusters, scheme)
    except (ValueError, KeyError) as exc:
        raise cio.ConfigError(f"randomization: {exc}") from None
    cio.write_dataset(observe(world, arms), out)
    side = Path(args.counterfactual_out) if args.counterfactual_out else out.with_suffix(".counterfactual.csv")
    side.write_bytes(cio.format_counterfactuals(world).encode("utf-8"))
    truths = _clean(vars(true_estimands(world)))
    truths["undefined"] = list(truths["undefined"])
    cio.dump_json({"seed": seed, "true_estimands": truths}, out.with_suffix(".truth.json"))
    print(f"wrote {out}, {side}", file=sys.stderr)
    return EXIT_OK


def _format_row(entry: dict) -> str:
    if entry["status"] != "ok":
        return f"{entry['effect_kind']:<17} ERROR {entry['error']}: {entry['message']}"
    flag = "  [non-causal]" if entry["warnings"] else ""
    se = entry["standard_error"]
    lo, hi = entry["ci_lower"], entry["ci_upper"]
    if se is None:
        return f"{entry['effect_kind']:<17} {entry['point']:9.3f}{flag}"
    return f"{entry['effect_kind']:<17} {entry['point']:9.3f} ({se:.3f})  ({lo:.3f}, {hi:.3f}){flag}"


def cmd_estimate(args) -> int:
    try:
        dataset = cio.read_dataset(args.dataset)
    except OSError as exc:
        raise UsageError(f"cannot read {args.dataset}: {exc.strerror}") from None
    try:
        kinds = parse_effects(args.effects)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    contrast = Contrast(args.contrast)
    policy = EmptyPolicy(args.empty_policy)
    factor = cio.SCALES[args.scale]
    entries = []
    for kind in kinds:
        try:
            e = estimate_effect(dataset, kind, contrast, policy)
            entries.append(cio.estimate_entry(e, factor))
        except (EstimationError, ValueError) as exc:
            entries.append(cio.error_entry(kind, contrast.value, exc))
    report = {
        "dataset": Path(args.dataset).name,
        "scale": args.scale,
        "contrast": contrast.value,
        "empty_policy": policy.value,
        "n_clusters": dataset.n,
        "effects": entries,
    }
    cio.dump_json(_clean(report), args.out)
    for entry in entries:
        print(_format_row(entry))
    if entries and all(e["status"] != "ok" for e in entries):
        return EXIT_ESTIMATION
    return EXIT_OK


def cmd_mc(args) -> int:
    config = cio.load_config(args.config)
    seed = _resolve_seed(args, config)
    gen = cio.generative_config(config)
    mc_section = config.get("mc") or {}
    n_reps = args.n_replicates or int(mc_section.get("n_replicates", 1000))
    try:
        world = generate_world(gen)
    except RiskOutOfRange as exc:
        raise cio.ConfigError(str(exc)) from None
    scheme = cio.randomization_scheme(config, world.clusters, args.scheme, seed)
    try:
        if args.superpopulation:
            report = run_superpopulation_mc(gen, scheme, n_reps, seed, args.jobs, progress=not args.quiet)
        else:
            report = run_mc(world, scheme, n_reps, seed, args.jobs, progress=not args.quiet)
    except (ValueError, KeyError) as exc:
        raise cio.ConfigError(f"randomization: {exc}") from None
    doc = report.to_dict()
    doc["scheme"] = type(scheme).__name__
    doc["mode"] = "superpopulation" if args.superpopulation else "fixed-world"
    for row in doc["effects"]:
        row["truth_definition"] = (
            "non-causal limit of the naive contrast" if row["effect_kind"] == "naive-direct"
            else "control-arm stratum contrast limit" if row["effect_kind"] == "control-contrast"
            else "causal estimand"
        )
    cio.dump_json(_clean(doc), args.out)
    if args.replicates_out:
        with open(args.replicates_out, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(next(report.replicate_rows()).keys()), lineterminator="\n")
            w.writeheader()
            for row in report.replicate_rows():
                w.writerow({k: ("" if isinstance(v, float) and math.isnan(v) else v) for k, v in row.items()})
    for row in doc["effects"]:
        print(
            f"{row['effect_kind']:<17} truth={row['true_value']} mean={row['mean_estimate']} "
            f"bias={row['bias']} coverage={row['coverage']} n={row['n_replicates']}"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clustervax", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a simulated trial dataset")
    g.add_argument("source", choices=("margins", "causal"))
    g.add_argument("--config", required=True, help="YAML config, or a builtin name: " + ", ".join(cio.BUILTIN_CONFIGS))
    g.add_argument("--seed", type=_seed)
    g.add_argument("--out", required=True)
    g.add_argument("--scheme", choices=("complete", "stratified"))
    g.add_argument("--counterfactual-out")
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("estimate", help="estimate effects from a dataset file")
    e.add_argument("dataset")
    e.add_argument("--effects", default=DEFAULT_EFFECTS)
    e.add_argument("--contrast", choices=("rd", "rr"), default="rd")
    e.add_argument("--empty-policy", choices=("error", "drop"), default="error")
    e.add_argument("--scale", choices=tuple(cio.SCALES), default="per1000")
    e.add_argument("--out")
    e.set_defaults(func=cmd_estimate)

    m = sub.add_parser("mc", help="Monte Carlo study on a generated world")
    m.add_argument("--config", required=True)
    m.add_argument("--scheme", choices=("complete", "stratified"))
    m.add_argument("--n-replicates", type=int)
    m.add_argument("--seed", type=_seed)
    m.add_argument("--out")
    m.add_argument("--replicates-out")
    m.add_argument("--jobs", type=int, default=1)
    m.add_argument("--superpopulation", action="store_true", help="regenerate the world every replicate")
    m.add_argument("--quiet", action="store_true")
    m.set_defaults(func=cmd_mc)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, cio.ConfigError, cio.DatasetFormatError) as exc:
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
