"""Dataset subset construction: class statistics, rare-class sampling,
frame striding, and scene filters.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ManifestError
from .labelmap import SemanticMap, load_label_map
from .manifest import DatasetManifest, ManifestEntry
from .taxonomy import ClassTaxonomy


@dataclass(frozen=True)
class ClassFrequencyTable:
    """Pixel-fraction statistics of one manifest.

    ``fractions[c]`` is class c's share of all non-void pixels;
    ``occurrence[c]`` lists the ids of entries containing class c, in
    manifest order. Classes that never occur are absent from both.
    """

    fractions: dict[int, float]
    occurrence: dict[int, tuple[str, ...]]
    pixel_counts: dict[int, int]
    total_pixels: int

    @property
    def present_classes(self) -> tuple[int, ...]:
        return tuple(sorted(self.fractions))


@dataclass(frozen=True)
class RcsConfig:
    count: int
    temperature: float = 0.05
    with_replacement: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError("rcs temperature must be > 0")
        if self.count < 1:
            raise ConfigError("rcs count must be >= 1")


class _LabelScanner:
    """Loads entry labels with per-path memoization (manifests may share files)."""

    def __init__(self, manifest: DatasetManifest, taxonomy: ClassTaxonomy):
        self.manifest = manifest
        self.taxonomy = taxonomy
        self._cache: dict[Path, SemanticMap] = {}

    def load(self, entry: ManifestEntry) -> SemanticMap:
        if entry.label is None:
            raise ManifestError(f"entry {entry.id!r} has no label reference")
        path = self.manifest.resolve(entry.label)
        if path not in self._cache:
            try:
                self._cache[path] = load_label_map(path, self.taxonomy)
            except Exception as exc:
                raise ManifestError(f"entry {entry.id!r}: cannot load label {path}: {exc}") from exc
        return self._cache[path]


def class_frequencies(manifest: DatasetManifest, taxonomy: ClassTaxonomy) -> ClassFrequencyTable:
    """Exact per-class pixel fractions and image-occurrence index."""
    scanner = _LabelScanner(manifest, taxonomy)
    pixel_counts: dict[int, int] = {}
    occurrence: dict[int, list[str]] = {}
    total = 0
    for entry in manifest:
        grid = scanner.load(entry).grid
        counts = np.bincount(grid.ravel(), minlength=256)
        counts[taxonomy.void_id] = 0
        for class_id in np.flatnonzero(counts).tolist():
            pixel_counts[class_id] = pixel_counts.get(class_id, 0) + int(counts[class_id])
            occurrence.setdefault(class_id, []).append(entry.id)
        total += int(counts.sum())
    if total == 0:
        raise ManifestError("no labeled pixels: every entry is void-only")
    fractions = {c: n / total for c, n in pixel_counts.items()}
    return ClassFrequencyTable(
        fractions=fractions,
        occurrence={c: tuple(ids) for c, ids in occurrence.items()},
        pixel_counts=pixel_counts,
        total_pixels=total,
    )


def _cache_fingerprint(manifest_path: Path, manifest: DatasetManifest) -> dict:
    files = []
    for entry in manifest:
        if entry.label is None:
            continue
        path = manifest.resolve(entry.label)
        try:
            stat = os.stat(path)
        except OSError:
            stat = None
        files.append(
            [entry.label, stat.st_size if stat else -1, stat.st_mtime_ns if stat else -1]
        )
    manifest_hash = hashlib.sha256(manifest_path.read_bytes()).hexdigest()
    return {"manifest_sha256": manifest_hash, "files": files}


def cached_class_frequencies(
    manifest_path, taxonomy: ClassTaxonomy, cache: bool = True
) -> ClassFrequencyTable:
    """class_frequencies with a sidecar cache keyed by manifest content.

    The cache is invalidated when the manifest bytes change or when any
    label file's size or mtime changes.
    """
    manifest_path = Path(manifest_path)
    manifest = DatasetManifest.load(manifest_path)
    cache_path = manifest_path.with_name(manifest_path.name + ".freq.json")
    fingerprint = _cache_fingerprint(manifest_path, manifest) if cache else None
    if cache and cache_path.exists():
        try:
            stored = json.loads(cache_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            stored = None
        if stored and stored.get("fingerprint") == fingerprint:
            t = stored["table"]
            return ClassFrequencyTable(
                fractions={int(k): v for k, v in t["fractions"].items()},
                occurrence={int(k): tuple(v) for k, v in t["occurrence"].items()},
                pixel_counts={int(k): v for k, v in t["pixel_counts"].items()},
                total_pixels=t["total_pixels"],
            )
    table = class_frequencies(manifest, taxonomy)
    if cache:
        payload = {
            "fingerprint": fingerprint,
            "table": {
                "fractions": {str(k): v for k, v in table.fractions.items()},
                "occurrence": {str(k): list(v) for k, v in table.occurrence.items()},
                "pixel_counts": {str(k): v for k, v in table.pixel_counts.items()},
                "total_pixels": table.total_pixels,
            },
        }
        cache_path.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")
    return table


def rcs_class_distribution(table: ClassFrequencyTable, temperature: float) -> dict[int, float]:
    """Sampling probability per present class: P(c) proportional to
    exp((1 - f_c) / T), computed with max-subtraction so small
    temperatures cannot overflow.
    """
    if temperature <= 0:
        raise ConfigError("rcs temperature must be > 0")
    classes = table.present_classes
    if not classes:
        raise ConfigError("frequency table is empty")
    scores = [(1.0 - table.fractions[c]) / temperature for c in classes]
    peak = max(scores)
    weights = [math.exp(s - peak) for s in scores]
    z = sum(weights)
    return {c: w / z for c, w in zip(classes, weights)}


def sample_class_sequence(
    table: ClassFrequencyTable, temperature: float, n: int, seed: int
) -> list[int]:
    """The raw class-draw stream underlying rare-class sampling (seeded)."""
    dist = rcs_class_distribution(table, temperature)
    classes = sorted(dist)
    probs = np.array([dist[c] for c in classes])
    probs = probs / probs.sum()
    rng = np.random.default_rng(seed)
    draws = rng.choice(len(classes), size=n, p=probs)
    return [classes[i] for i in draws.tolist()]


def rcs_sample_subset(
    manifest: DatasetManifest, table: ClassFrequencyTable, config: RcsConfig
) -> DatasetManifest:
    """Rare-class-weighted subset of a manifest.

    Each draw picks a class from the temperature-weighted distribution,
    then one uniform entry among the not-yet-taken entries containing that
    class. Classes whose entries are exhausted are dropped from the
    distribution and the rest renormalized. Deterministic for a given
    seed. With replacement, an entry drawn again gets a ``~n`` id suffix
    to keep manifest ids unique.
    """
    by_id = {entry.id: entry for entry in manifest}
    unknown = [
        eid for ids in table.occurrence.values() for eid in ids if eid not in by_id
    ]
    if unknown:
        raise ManifestError(f"frequency table references unknown entry ids: {unknown[:5]}")
    pool_ids = {eid for ids in table.occurrence.values() for eid in ids}
    if not config.with_replacement and config.count > len(pool_ids):
        raise ConfigError(
            f"cannot draw {config.count} entries without replacement from a pool of {len(pool_ids)}"
        )
    dist = rcs_class_distribution(table, config.temperature)
    pools: dict[int, list[str]] = {c: list(ids) for c, ids in table.occurrence.items()}
    active = sorted(dist)
    rng = np.random.default_rng(config.seed)
    taken: set[str] = set()
    picked: list[str] = []
    times_seen: dict[str, int] = {}
    while len(picked) < config.count:
        probs = np.array([dist[c] for c in active])
        probs = probs / probs.sum()
        class_id = active[int(rng.choice(len(active), p=probs))]
        pool = pools[class_id]
        entry_id = None
        # Uniform draw among remaining entries; lazily evict taken ones.
        while pool:
            pos = int(rng.integers(len(pool)))
            candidate = pool[pos]
            if not config.with_replacement and candidate in taken:
                pool[pos] = pool[-1]
                pool.pop()
                continue
            entry_id = candidate
            break
        if entry_id is None:
            active = [c for c in active if pools[c]]
            continue
        picked.append(entry_id)
        if not config.with_replacement:
            taken.add(entry_id)
    entries = []
    for eid in picked:
        seen = times_seen.get(eid, 0)
        times_seen[eid] = seen + 1
        src = by_id[eid]
        if seen == 0:
            entries.append(src)
        else:
            extra = dict(src.extra)
            extra["source_id"] = eid
            entries.append(
                ManifestEntry(
                    id=f"{eid}~{seen + 1}",
                    label=src.label,
                    image=src.image,
                    dataset=src.dataset,
                    condition=src.condition,
                    split=src.split,
                    extra=extra,
                )
            )
    return manifest.with_entries(entries)


def stride_subset(manifest: DatasetManifest, stride: int, offset: int = 0) -> DatasetManifest:
    """Keep entries at indices offset, offset+stride, ... in manifest order."""
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    if offset < 0:
        raise ConfigError(f"offset must be >= 0, got {offset}")
    return manifest.with_entries(manifest.entries[offset::stride])


def filter_multiclass(
    manifest: DatasetManifest, taxonomy: ClassTaxonomy, min_classes: int = 2
) -> DatasetManifest:
    """Keep entries whose label contains at least ``min_classes`` distinct
    non-void classes."""
    scanner = _LabelScanner(manifest, taxonomy)
    kept = []
    for entry in manifest:
        grid = scanner.load(entry).grid
        distinct = np.unique(grid)
        count = len(distinct) - int(taxonomy.void_id in distinct)
        if count >= min_classes:
            kept.append(entry)
    return manifest.with_entries(kept)


WILDCARD_CONDITION = "*"


def filter_condition(manifest: DatasetManifest, allowed: set[str]) -> DatasetManifest:
    """Keep entries whose condition tag is allowed.

    The wildcard "*" admits everything, including untagged entries;
    without it, untagged entries are dropped.
    """
    if WILDCARD_CONDITION in allowed:
        return manifest.with_entries(manifest.entries)
    kept = [e for e in manifest if e.condition is not None and e.condition in allowed]
    return manifest.with_entries(kept)
