"""Command-line interface.

Exit codes: 0 success, 2 configuration or input error, 3 run finished
with partial failures, 4 worker-protocol failure.
"""
from __future__ import annotations

import argparse
import json
import shlex
import sys
from pathlib import Path

from .errors import (
    ConfigError,
    LabelMapError,
    ManifestError,
    ProtocolError,
    SegcurateError,
    TaxonomyError,
    WorkerError,
)
from .labelmap import center_crop_ratio, load_label_map, save_label_map
from .manifest import DatasetManifest, canonical_json
from .mcoc import score_candidate
from .metrics import render_table
from .pipeline import PipelineConfig, run_curation, run_evaluate, run_subset
from .regularize import ConditionSchedule, ErosionPolicy, emit_condition_set, erode_components
from .sampling import cached_class_frequencies, class_frequencies, rcs_class_distribution
from .taxonomy import ClassTaxonomy, harmonize, load_mapping

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARTIAL = 3
EXIT_PROTOCOL = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segcurate", description=__doc__)
    parser.add_argument("--config", help="JSON config file mirroring the pipeline config")
    parser.add_argument("--seed", type=int, help="global seed (overrides config)")
    parser.add_argument("--workers", type=int, help="parallel lanes (overrides config)")
    parser.add_argument("--out", help="output root directory (overrides config)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("curate", help="generate, score, and select candidates per source map")
    p.add_argument("--manifest", help="source dataset manifest")
    p.add_argument("--mapping", help="dataset-to-canonical mapping file")
    p.add_argument("-N", "--candidates", type=int, help="candidates per map (default 10)")
    p.add_argument("-k", "--select", type=int, help="selected per map (default 3)")
    p.add_argument("--tau", type=float, help="component acceptance threshold (default 0.7)")
    p.add_argument("--mode", choices=("literal", "strict"), help="acceptance mode")
    p.add_argument("--connectivity", type=int, choices=(4, 8))
    p.add_argument("--pairing", choices=("pseudo", "original"))
    p.add_argument("--no-crop", action="store_true", help="skip the 2:1 centre crop")
    p.add_argument("--generator-cmd", help="external generator command (shell syntax)")
    p.add_argument("--labeller-cmd", help="external labeller command (shell syntax)")
    p.add_argument("--mock-corruption", type=float, help="mock generator component-swap rate")
    p.add_argument("--mock-noise", type=float, help="mock labeller pixel noise rate")
    p.add_argument("--retries", type=int, help="worker retries per entry (default 2)")

    p = sub.add_parser("subset", help="build a dataset subset from a recipe")
    p.add_argument("--manifest", required=True)
    p.add_argument(
        "--recipe",
        required=True,
        help="JSON list of steps, or @file, e.g. "
        '\'[{"op":"filter_multiclass","min_classes":2},{"op":"stride","stride":10}]\'',
    )
    p.add_argument("--out-manifest", required=True)

    p = sub.add_parser("evaluate", help="mIoU of a prediction manifest against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--classes", default="all", help='comma-separated class names or "all"')
    p.add_argument("--json", dest="json_out", help="also write the report as JSON")

    p = sub.add_parser("conditions", help="emit the condition-record set for a trainer")
    p.add_argument("--manifest", required=True)
    p.add_argument("--p-depth", type=float, default=0.20)
    p.add_argument("--p-black", type=float, default=0.10)
    p.add_argument("--p-coarse", type=float, default=0.20)
    p.add_argument("--strength", type=float, default=0.15, help="erosion strength")
    p.add_argument("--radius-mode", choices=("linear", "sqrt"), default="linear")
    p.add_argument("--radius-cap", type=int)
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=4)

    p = sub.add_parser("score", help="one-shot consistency score of a map pair")
    p.add_argument("--source", required=True, help="source label map (PNG)")
    p.add_argument("--prediction", required=True, help="predicted label map (PNG)")
    p.add_argument("--tau", type=float, default=0.7)
    p.add_argument("--mode", choices=("literal", "strict"), default="literal")
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=4)
    p.add_argument("--json", dest="json_out", help="write the full report as JSON")

    p = sub.add_parser("erode", help="component-proportional erosion of a label map")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--strength", type=float, default=0.15)
    p.add_argument("--radius-mode", choices=("linear", "sqrt"), default="linear")
    p.add_argument("--radius-cap", type=int)
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=4)

    p = sub.add_parser("harmonize", help="remap a label map through a dataset mapping")
    p.add_argument("--input", required=True)
    p.add_argument("--mapping", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--lenient", action="store_true", help="map unknown source ids to void")

    p = sub.add_parser("crop", help="largest centered crop with a fixed aspect ratio")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--ratio", default="2:1")

    p = sub.add_parser("freq", help="class pixel frequencies of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--no-cache", action="store_true")
    p.add_argument("--temperature", type=float, help="also print the sampling distribution")

    return parser


def _load_config(args) -> PipelineConfig:
    if args.config:
        config = PipelineConfig.from_json_file(args.config)
    else:
        config = PipelineConfig()
    overrides = {
        "seed": args.seed,
        "workers": args.workers,
        "out_root": args.out,
        "source_manifest": getattr(args, "manifest", None),
        "mapping": getattr(args, "mapping", None),
        "candidates": getattr(args, "candidates", None),
        "select": getattr(args, "select", None),
        "tau": getattr(args, "tau", None),
        "mode": getattr(args, "mode", None),
        "connectivity": getattr(args, "connectivity", None),
        "pairing": getattr(args, "pairing", None),
        "generator_cmd": getattr(args, "generator_cmd", None),
        "labeller_cmd": getattr(args, "labeller_cmd", None),
        "mock_corruption": getattr(args, "mock_corruption", None),
        "mock_noise": getattr(args, "mock_noise", None),
        "retries": getattr(args, "retries", None),
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(config, key, value)
    if getattr(args, "no_crop", False):
        config.crop_ratio = None
    return config


def _cmd_curate(args) -> int:
    config = _load_config(args)
    result = run_curation(config)
    print(f"run {result.run_id}: {result.summary['entries_done']}/{result.summary['entries_total']} entries", flush=True)
    if result.summary["mean_selected_mcoc"] is not None:
        print(f"mean selected score: {result.summary['mean_selected_mcoc']:.4f}")
    if result.manifest_path:
        print(f"curated manifest: {result.manifest_path}")
    if result.failed_entries:
        print(f"failed entries: {', '.join(result.failed_entries)}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _cmd_subset(args) -> int:
    recipe_text = args.recipe
    if recipe_text.startswith("@"):
        recipe_text = Path(recipe_text[1:]).read_text(encoding="utf-8")
    try:
        recipe = json.loads(recipe_text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"recipe is not valid JSON: {exc}") from exc
    if not isinstance(recipe, list):
        raise ConfigError("recipe must be a JSON list of steps")
    manifest = DatasetManifest.load(args.manifest)
    seed = args.seed if args.seed is not None else 0
    result = run_subset(manifest, recipe, seed=seed)
    result.root = manifest.root
    out_path = Path(args.out_manifest)
    if out_path.resolve().parent != Path(args.manifest).resolve().parent:
        raise ConfigError("out-manifest must live next to the source manifest (shared refs)")
    result.save(out_path)
    print(f"{len(result)} entries -> {out_path}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    taxonomy = ClassTaxonomy.urban()
    if args.classes == "all":
        evaluated = frozenset(taxonomy.class_ids)
    else:
        names = [n.strip() for n in args.classes.split(",") if n.strip()]
        evaluated = frozenset(taxonomy.id_of(n) for n in names)
    report = run_evaluate(
        DatasetManifest.load(args.pred), DatasetManifest.load(args.gt), evaluated, taxonomy
    )
    print(render_table(report, taxonomy))
    if args.json_out:
        payload = {
            "miou": report.miou_float,
            "evaluated": sorted(report.evaluated),
            "per_class": {
                taxonomy.name_of(c): report.iou_float(c) for c in taxonomy.class_ids
            },
        }
        Path(args.json_out).write_text(canonical_json(payload) + "\n", encoding="utf-8")
    return EXIT_OK


def _cmd_conditions(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    out_dir = Path(args.out) if args.out else Path("conditions")
    schedule = ConditionSchedule(
        p_depth=args.p_depth,
        p_black=args.p_black,
        p_coarse=args.p_coarse,
        seed=args.seed if args.seed is not None else 0,
    )
    policy = ErosionPolicy(
        strength=args.strength, radius_mode=args.radius_mode, radius_cap=args.radius_cap
    )
    result = emit_condition_set(
        manifest, schedule, policy, out_dir, ClassTaxonomy.urban(), connectivity=args.connectivity
    )
    print(f"{len(result)} condition records -> {out_dir / 'conditions.jsonl'}")
    return EXIT_OK


def _cmd_score(args) -> int:
    taxonomy = ClassTaxonomy.urban()
    source = load_label_map(args.source, taxonomy)
    prediction = load_label_map(args.prediction, taxonomy)
    report = score_candidate(
        source, prediction, tau=args.tau, mode=args.mode, connectivity=args.connectivity
    )
    print(f"score: {report.score_float:.6f} ({report.score.numerator}/{report.score.denominator})")
    for class_id in sorted(report.classes_present):
        rate = report.per_class_acceptance[class_id]
        print(f"  {taxonomy.name_of(class_id)}: {rate.numerator}/{rate.denominator}")
    if args.json_out:
        Path(args.json_out).write_text(canonical_json(report.to_record()) + "\n", encoding="utf-8")
    return EXIT_OK


def _cmd_erode(args) -> int:
    taxonomy = ClassTaxonomy.urban()
    policy = ErosionPolicy(
        strength=args.strength, radius_mode=args.radius_mode, radius_cap=args.radius_cap
    )
    eroded = erode_components(load_label_map(args.input, taxonomy), policy, args.connectivity)
    save_label_map(args.output, eroded)
    print(f"eroded map -> {args.output}")
    return EXIT_OK


def _cmd_harmonize(args) -> int:
    taxonomy = ClassTaxonomy.urban()
    mapping = load_mapping(args.mapping, taxonomy)
    source = load_label_map(args.input, ClassTaxonomy.urban())
    remapped = harmonize(source, mapping, strict=not args.lenient)
    save_label_map(args.output, remapped)
    print(f"harmonized map -> {args.output}")
    return EXIT_OK


def _cmd_crop(args) -> int:
    try:
        ratio_w, ratio_h = (int(part) for part in args.ratio.split(":"))
    except ValueError as exc:
        raise ConfigError(f"ratio must look like 2:1, got {args.ratio!r}") from exc
    taxonomy = ClassTaxonomy.urban()
    cropped = center_crop_ratio(load_label_map(args.input, taxonomy), ratio_w, ratio_h)
    save_label_map(args.output, cropped)
    print(f"{cropped.width}x{cropped.height} crop -> {args.output}")
    return EXIT_OK


def _cmd_freq(args) -> int:
    taxonomy = ClassTaxonomy.urban()
    table = cached_class_frequencies(args.manifest, taxonomy, cache=not args.no_cache)
    for class_id in table.present_classes:
        print(
            f"{taxonomy.name_of(class_id):>14}: f={table.fractions[class_id]:.6f}"
            f"  images={len(table.occurrence[class_id])}"
        )
    if args.temperature is not None:
        dist = rcs_class_distribution(table, args.temperature)
        print(f"sampling distribution at T={args.temperature}:")
        for class_id in sorted(dist):
            print(f"{taxonomy.name_of(class_id):>14}: P={dist[class_id]:.6g}")
    return EXIT_OK


_HANDLERS = {
    "curate": _cmd_curate,
    "subset": _cmd_subset,
    "evaluate": _cmd_evaluate,
    "conditions": _cmd_conditions,
    "score": _cmd_score,
    "erode": _cmd_erode,
    "harmonize": _cmd_harmonize,
    "crop": _cmd_crop,
    "freq": _cmd_freq,
}

# load_mapping/decode failures and bad manifests are user-input problems.
_CONFIG_ERRORS = (ConfigError, TaxonomyError, ManifestError, LabelMapError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ProtocolError, WorkerError) as exc:
        print(f"worker error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except SegcurateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
