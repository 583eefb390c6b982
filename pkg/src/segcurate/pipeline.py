"""End-to-end curation: prepare each source map, generate candidates,
pseudo-label them, score, select, and persist curated manifests with full
audit records.

Every run is content-addressed: the run directory is named by a hash of
the effective configuration, per-entry records are written atomically,
and a rerun skips entries whose records are already complete, so an
interrupted run resumes to the same final output. Nothing in the output
depends on wall-clock time or scheduling; reruns are byte-identical.
"""
from __future__ import annotations

import concurrent.futures
import hashlib
import json
import os
import queue
import re
import shlex
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path

from .bridge import MockGenerator, MockLabeller, SubprocessGenerator, SubprocessLabeller
from .errors import ConfigError, LabelMapError, ManifestError, WorkerError
from .labelmap import SemanticMap, center_crop_ratio, load_label_map, save_label_map
from .manifest import DatasetManifest, ManifestEntry, canonical_json
from .mcoc import MODES, pair_with_pseudolabels, rank_and_select, score_candidate
from .metrics import ConfusionMatrix, IouReport, accumulate, iou_report
from .regularize import ConditionSchedule, ErosionPolicy, emit_condition_set
from .rng import derive_seed
from .sampling import (
    RcsConfig,
    class_frequencies,
    filter_condition,
    filter_multiclass,
    rcs_sample_subset,
    stride_subset,
)
from .taxonomy import ClassTaxonomy, DatasetMapping, harmonize, load_mapping


@dataclass
class PipelineConfig:
    """Everything a curation run depends on; hashed into the run id."""

    source_manifest: str = ""
    out_root: str = "out"
    mapping: str | None = None
    candidates: int = 10
    select: int = 3
    tau: float = 0.7
    mode: str = "strict"
    connectivity: int = 4
    crop_ratio: tuple[int, int] | None = (2, 1)
    pairing: str = "pseudo"
    seed: int = 0
    workers: int = 1
    generator_cmd: list[str] | None = None
    labeller_cmd: list[str] | None = None
    retries: int = 2
    mock_corruption: float = 0.0
    mock_noise: float = 0.0
    mock_corrupt_index: int | None = None
    p_depth: float = 0.20
    p_black: float = 0.10
    p_coarse: float = 0.20
    erosion_strength: float = 0.15
    erosion_radius_mode: str = "linear"
    erosion_radius_cap: int | None = None

    def __post_init__(self):
        if isinstance(self.crop_ratio, list):
            self.crop_ratio = tuple(self.crop_ratio)
        if isinstance(self.generator_cmd, str):
            self.generator_cmd = shlex.split(self.generator_cmd)
        if isinstance(self.labeller_cmd, str):
            self.labeller_cmd = shlex.split(self.labeller_cmd)

    def validate(self) -> "PipelineConfig":
        # Re-normalize: fields may have been assigned after construction
        # (CLI overrides land via setattr).
        self.__post_init__()
        if not self.source_manifest:
            raise ConfigError("source_manifest is required")
        if not 1 <= self.select <= self.candidates:
            raise ConfigError(
                f"need 1 <= select <= candidates, got select={self.select} candidates={self.candidates}"
            )
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must be in (0, 1], got {self.tau}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.connectivity not in (4, 8):
            raise ConfigError(f"connectivity must be 4 or 8, got {self.connectivity}")
        if self.pairing not in ("pseudo", "original"):
            raise ConfigError(f"pairing must be 'pseudo' or 'original', got {self.pairing!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.retries < 0:
            raise ConfigError("retries must be >= 0")
        if self.crop_ratio is not None and (len(self.crop_ratio) != 2 or min(self.crop_ratio) < 1):
            raise ConfigError(f"crop_ratio must be two positive integers, got {self.crop_ratio}")
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**data)

    @classmethod
    def from_json_file(cls, path) -> "PipelineConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        data = asdict(self)
        if data["crop_ratio"] is not None:
            data["crop_ratio"] = list(data["crop_ratio"])
        return data

    def run_id(self) -> str:
        """Content hash of the run.

        Excludes ``workers`` (parallelism cannot change output content)
        and ``out_root`` (where results land is not what they are), so
        the same curation at any lane count or destination shares one id
        and one resumable record set.
        """
        data = self.to_dict()
        data.pop("workers")
        data.pop("out_root")
        return hashlib.sha256(canonical_json(data).encode("ascii")).hexdigest()[:12]


@dataclass
class CurationResult:
    run_id: str
    out_dir: Path
    manifest_path: Path | None
    summary: dict
    failed_entries: list[str] = field(default_factory=list)


_SLUG_RE = re.compile(r"[^A-Za-z0-9._-]+")


def _slug(entry_id: str) -> str:
    safe = _SLUG_RE.sub("_", entry_id)[:40] or "entry"
    digest = hashlib.sha256(entry_id.encode("utf-8")).hexdigest()[:8]
    return f"{safe}-{digest}"


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


class _Lane:
    """One generator + one labeller, exclusively owned while processing."""

    def __init__(self, config: PipelineConfig, out_dir: Path, taxonomy: ClassTaxonomy):
        self.config = config
        self.out_dir = out_dir
        self.taxonomy = taxonomy
        self.generator = self._make_generator()
        self.labeller = self._make_labeller()

    def _make_generator(self):
        if self.config.generator_cmd:
            return SubprocessGenerator(self.config.generator_cmd, self.out_dir)
        return MockGenerator(
            self.out_dir,
            self.taxonomy,
            corruption=self.config.mock_corruption,
            corrupt_index=self.config.mock_corrupt_index,
        )

    def _make_labeller(self):
        if self.config.labeller_cmd:
            return SubprocessLabeller(self.config.labeller_cmd, self.out_dir)
        return MockLabeller(
            self.out_dir,
            self.taxonomy,
            noise=self.config.mock_noise,
            seed=derive_seed(self.config.seed, "labeller"),
        )

    def recover(self):
        for client in (self.generator, self.labeller):
            if hasattr(client, "respawn"):
                try:
                    client.respawn()
                except WorkerError:
                    pass

    def close(self):
        self.generator.close()
        self.labeller.close()


def _prepare_map(
    source: SemanticMap, mapping: DatasetMapping | None, crop: tuple[int, int] | None
) -> SemanticMap:
    prepared = source
    if mapping is not None:
        prepared = harmonize(prepared, mapping, strict=True)
    if crop is not None:
        prepared = center_crop_ratio(prepared, crop[0], crop[1])
    return prepared


def run_curation(config: PipelineConfig, progress=None) -> CurationResult:
    """Run the full curation flow over a source manifest.

    ``progress(entry_id, status)`` is invoked after each entry finishes
    with status "done", "resumed", or "failed"; exceptions it raises abort
    the run (the processed entries stay resumable on disk).
    """
    config.validate()
    taxonomy = ClassTaxonomy.urban()
    source = DatasetManifest.load(config.source_manifest)
    mapping = load_mapping(config.mapping, taxonomy) if config.mapping else None
    run_id = config.run_id()
    out_dir = Path(config.out_root) / run_id
    records_dir = out_dir / "records"
    for sub in ("prepared", "images", "labels", "records"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    _atomic_write_text(out_dir / "config.json", canonical_json(config.to_dict()) + "\n")

    lanes: queue.SimpleQueue[_Lane] = queue.SimpleQueue()
    for _ in range(config.workers):
        lanes.put(_Lane(config, out_dir, taxonomy))

    def process(entry: ManifestEntry) -> dict:
        slug = _slug(entry.id)
        record_path = records_dir / f"{slug}.json"
        if record_path.exists():
            try:
                record = json.loads(record_path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError):
                record = None
            if record and record.get("run_id") == run_id and record.get("complete"):
                record["resumed"] = True
                return record
        if entry.label is None:
            raise ManifestError(f"entry {entry.id!r} has no label reference")
        raw = load_label_map(source.resolve(entry.label), taxonomy)
        prepared = _prepare_map(raw, mapping, config.crop_ratio)
        prepared_ref = f"prepared/{slug}.png"
        save_label_map(out_dir / prepared_ref, prepared)

        lane = lanes.get()
        try:
            attempt = 0
            while True:
                try:
                    image_refs = lane.generator.generate(
                        prepared_ref,
                        derive_seed(config.seed, "gen", entry.id),
                        config.candidates,
                        f"images/{slug}_",
                    )
                    pseudo_refs = [
                        lane.labeller.label(ref, f"labels/{slug}_{i:03d}.png")
                        for i, ref in enumerate(image_refs)
                    ]
                    break
                except WorkerError:
                    attempt += 1
                    if attempt > config.retries:
                        raise
                    lane.recover()
        finally:
            lanes.put(lane)

        reports = []
        for i, ref in enumerate(pseudo_refs):
            prediction = load_label_map(out_dir / ref, taxonomy)
            reports.append(
                score_candidate(
                    prepared,
                    prediction,
                    tau=config.tau,
                    mode=config.mode,
                    connectivity=config.connectivity,
                    candidate_id=i,
                )
            )
        selection = rank_and_select(entry.id, reports, config.select)
        pairs = pair_with_pseudolabels(
            selection,
            {i: ref for i, ref in enumerate(image_refs)},
            {i: ref for i, ref in enumerate(pseudo_refs)},
            pairing=config.pairing,
            original_label_ref=prepared_ref,
        )
        record = {
            "run_id": run_id,
            "complete": True,
            "entry_id": entry.id,
            "slug": slug,
            "dataset": entry.dataset,
            "prepared": prepared_ref,
            "ranked": list(selection.ranked),
            "selected": list(selection.selected),
            "pairs": [
                {"candidate": p.candidate_id, "image": p.image_ref, "label": p.label_ref}
                for p in sorted(pairs, key=lambda p: p.candidate_id)
            ],
            "reports": [r.to_record() for r in sorted(reports, key=lambda r: r.candidate_id)],
        }
        _atomic_write_text(record_path, canonical_json(record) + "\n")
        return record

    outcomes: dict[str, dict] = {}
    failures: dict[str, str] = {}
    # Worker trouble and unreadable entry data fail one entry, not the run;
    # protocol violations and config problems still abort.
    entry_failures = (WorkerError, LabelMapError, ManifestError, OSError)

    def finish(entry: ManifestEntry, record: dict | None, error: str | None):
        if record is not None:
            outcomes[entry.id] = record
            status = "resumed" if record.get("resumed") else "done"
        else:
            failures[entry.id] = error or "unknown error"
            status = "failed"
        if progress is not None:
            progress(entry.id, status)

    try:
        if config.workers == 1:
            for entry in source:
                try:
                    record = process(entry)
                except entry_failures as exc:
                    finish(entry, None, str(exc))
                    continue
                finish(entry, record, None)
        else:
            with concurrent.futures.ThreadPoolExecutor(max_workers=config.workers) as pool:
                futures = {pool.submit(process, entry): entry for entry in source}
                for future in concurrent.futures.as_completed(futures):
                    entry = futures[future]
                    try:
                        record = future.result()
                    except entry_failures as exc:
                        finish(entry, None, str(exc))
                        continue
                    finish(entry, record, None)
    finally:
        while not lanes.empty():
            lanes.get().close()

    ordered_ids = sorted(outcomes)
    curated_entries = []
    audit_lines = []
    selected_scores: list[Fraction] = []
    class_accept: dict[str, list[int]] = {}
    for entry_id in ordered_ids:
        record = outcomes[entry_id]
        selected = set(record["selected"])
        for report in record["reports"]:
            audit = dict(report)
            audit["source_id"] = entry_id
            audit["selected"] = report["candidate_id"] in selected
            audit_lines.append(canonical_json(audit))
            for class_id, cell in report["per_class"].items():
                bucket = class_accept.setdefault(class_id, [0, 0])
                bucket[0] += cell["accepted"]
                bucket[1] += cell["total"]
            if audit["selected"]:
                num, den = report["score_exact"].split("/")
                selected_scores.append(Fraction(int(num), int(den)))
        for pair in record["pairs"]:
            curated_entries.append(
                ManifestEntry(
                    id=f"{entry_id}/{pair['candidate']}",
                    label=pair["label"],
                    image=pair["image"],
                    dataset=record.get("dataset"),
                    extra={
                        "source_id": entry_id,
                        "candidate": pair["candidate"],
                        "source_label": record["prepared"],
                    },
                )
            )

    mean_mcoc = (
        float(sum(selected_scores, Fraction(0)) / len(selected_scores))
        if selected_scores
        else None
    )
    summary = {
        "run_id": run_id,
        "entries_total": len(source),
        "entries_done": len(outcomes),
        "entries_failed": sorted(failures),
        "curated_records": len(curated_entries),
        "mean_selected_mcoc": mean_mcoc,
        "class_acceptance": {
            cid: {"accepted": acc, "total": tot, "rate": acc / tot if tot else None}
            for cid, (acc, tot) in sorted(class_accept.items(), key=lambda kv: int(kv[0]))
        },
    }
    manifest_path = None
    if curated_entries or not failures:
        curated = DatasetManifest(
            tuple(curated_entries),
            header={
                "kind": "curated",
                "run_id": run_id,
                "taxonomy_hash": taxonomy.content_hash(),
                "mapping": mapping.dataset_name if mapping else None,
                "tau": config.tau,
                "mode": config.mode,
                "candidates": config.candidates,
                "select": config.select,
                "pairing": config.pairing,
                "seed": config.seed,
            },
        )
        manifest_path = curated.save(out_dir / "manifest.jsonl")
    (out_dir / "audit.jsonl").write_text(
        "".join(line + "\n" for line in audit_lines), encoding="utf-8"
    )
    _atomic_write_text(out_dir / "summary.json", canonical_json(summary) + "\n")
    return CurationResult(
        run_id=run_id,
        out_dir=out_dir,
        manifest_path=manifest_path,
        summary=summary,
        failed_entries=sorted(failures),
    )


SUBSET_OPS = ("filter_multiclass", "filter_condition", "stride", "rcs")


def run_subset(
    manifest: DatasetManifest,
    recipe: list[dict],
    taxonomy: ClassTaxonomy | None = None,
    seed: int = 0,
) -> DatasetManifest:
    """Apply a recipe of subset operations in order.

    Recipe steps are {"op": <name>, ...params}; see SUBSET_OPS. The recipe
    and seed are recorded in the output header.
    """
    taxonomy = taxonomy or ClassTaxonomy.urban()
    current = manifest
    for index, step in enumerate(recipe):
        if not isinstance(step, dict) or "op" not in step:
            raise ConfigError(f"recipe step {index} must be an object with an 'op' key")
        op = step["op"]
        params = {k: v for k, v in step.items() if k != "op"}
        try:
            if op == "filter_multiclass":
                current = filter_multiclass(
                    current, taxonomy, min_classes=int(params.pop("min_classes", 2))
                )
            elif op == "filter_condition":
                current = filter_condition(current, set(params.pop("allowed")))
            elif op == "stride":
                current = stride_subset(
                    current, int(params.pop("stride")), int(params.pop("offset", 0))
                )
            elif op == "rcs":
                table = class_frequencies(current, taxonomy)
                rcs = RcsConfig(
                    count=int(params.pop("count")),
                    temperature=float(params.pop("temperature", 0.05)),
                    with_replacement=bool(params.pop("with_replacement", False)),
                    seed=derive_seed(seed, "rcs", index),
                )
                current = rcs_sample_subset(current, table, rcs)
            else:
                raise ConfigError(f"recipe step {index}: unknown op {op!r} (known: {SUBSET_OPS})")
        except KeyError as exc:
            raise ConfigError(f"recipe step {index} ({op}): missing parameter {exc}") from exc
        if params:
            raise ConfigError(f"recipe step {index} ({op}): unknown parameters {sorted(params)}")
    return current.with_entries(current.entries, recipe=recipe, seed=seed)


def run_evaluate(
    pred_manifest: DatasetManifest,
    gt_manifest: DatasetManifest,
    evaluated: frozenset[int] | set[int],
    taxonomy: ClassTaxonomy | None = None,
) -> IouReport:
    """Accumulate the confusion matrix over id-aligned manifests and report."""
    taxonomy = taxonomy or ClassTaxonomy.urban()
    pred_by_id = {e.id: e for e in pred_manifest}
    gt_ids = [e.id for e in gt_manifest]
    missing = [i for i in gt_ids if i not in pred_by_id]
    extra = sorted(set(pred_by_id) - set(gt_ids))
    if missing or extra:
        raise ManifestError(
            f"manifests not aligned: missing predictions {missing[:5]}, extra {extra[:5]}"
        )
    cm = ConfusionMatrix.zeros(len(taxonomy))
    for gt_entry in gt_manifest:
        pred_entry = pred_by_id[gt_entry.id]
        if gt_entry.label is None or pred_entry.label is None:
            raise ManifestError(f"entry {gt_entry.id!r} lacks a label reference")
        gt_map = load_label_map(gt_manifest.resolve(gt_entry.label), taxonomy)
        pred_map = load_label_map(pred_manifest.resolve(pred_entry.label), taxonomy)
        accumulate(cm, pred_map, gt_map)
    return iou_report(cm, evaluated)


def run_conditions(
    manifest: DatasetManifest,
    out_dir,
    schedule: ConditionSchedule | None = None,
    policy: ErosionPolicy | None = None,
    taxonomy: ClassTaxonomy | None = None,
    connectivity: int = 4,
) -> DatasetManifest:
    """Materialize the condition-record set for an external trainer."""
    return emit_condition_set(
        manifest,
        schedule or ConditionSchedule(),
        policy or ErosionPolicy(),
        out_dir,
        taxonomy or ClassTaxonomy.urban(),
        connectivity=connectivity,
    )
