"""Conditioning-input regularization: component erosion and the stochastic
condition-kind schedule for an external generator trainer.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import rng
from .errors import ConfigError, ManifestError
from .labelmap import SemanticMap, connected_components, load_label_map, save_label_map
from .manifest import DatasetManifest, ManifestEntry
from .taxonomy import ClassTaxonomy


@dataclass(frozen=True)
class ErosionPolicy:
    """How much to erode each connected component.

    The disc radius for a component of ``size`` pixels is
    ``floor(strength * size)`` in linear mode or ``floor(strength * sqrt(size))``
    in sqrt mode, clamped to ``radius_cap``. With no explicit cap, the radius
    is clamped per component to half its shorter bounding-box side, so large
    regions are thinned instead of annihilated.
    """

    strength: float = 0.15
    radius_mode: str = "linear"
    radius_cap: int | None = None

    def __post_init__(self):
        if self.strength < 0:
            raise ConfigError("erosion strength must be >= 0")
        if self.radius_mode not in ("linear", "sqrt"):
            raise ConfigError(f"radius_mode must be 'linear' or 'sqrt', got {self.radius_mode!r}")
        if self.radius_cap is not None and self.radius_cap < 0:
            raise ConfigError("radius_cap must be >= 0")

    def radius_for(self, size: int, bbox_w: int, bbox_h: int) -> int:
        if self.radius_mode == "linear":
            r = int(self.strength * size)
        else:
            r = int(self.strength * math.sqrt(size))
        cap = self.radius_cap if self.radius_cap is not None else min(bbox_w, bbox_h) // 2
        return min(r, cap)


class ConditionKind(enum.Enum):
    FULL = "full"
    COARSE = "coarse"
    DEPTH = "depth"
    BLACK = "black"


@dataclass(frozen=True)
class ConditionSchedule:
    """Marginal probabilities for replacing the full label condition."""

    p_depth: float = 0.20
    p_black: float = 0.10
    p_coarse: float = 0.20
    seed: int = 0

    def __post_init__(self):
        for name in ("p_depth", "p_black", "p_coarse"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {p}")
        if self.p_depth + self.p_black + self.p_coarse > 1.0 + 1e-12:
            raise ConfigError("condition probabilities must sum to at most 1")


def erode_components(m: SemanticMap, policy: ErosionPolicy, connectivity: int = 4) -> SemanticMap:
    """Erode every connected component independently by its own disc.

    Pixels removed by erosion become void; surviving pixels keep their
    class. Each component is treated against its own binary mask, so
    neighboring components do not shield each other, and everything
    outside the image counts as background.
    """
    out = np.full(m.grid.shape, m.void_id, dtype=np.uint8)
    for comp in connected_components(m, connectivity):
        r = policy.radius_for(comp.size, comp.bbox_width, comp.bbox_height)
        if r == 0:
            out[comp.ys, comp.xs] = comp.class_id
            continue
        min_x, min_y, max_x, max_y = comp.bbox
        # Window = bbox padded by one background ring; the ring dominates any
        # background farther out, so the distance transform stays exact.
        win_w = max_x - min_x + 3
        win_h = max_y - min_y + 3
        mask = np.zeros((win_h, win_w), dtype=bool)
        mask[comp.ys - min_y + 1, comp.xs - min_x + 1] = True
        dist = ndimage.distance_transform_edt(mask)
        # Survive iff no background pixel lies within the disc: squared
        # distance (an integer) strictly greater than r^2.
        keep = dist * dist > r * r + 0.5
        ky, kx = np.nonzero(keep)
        out[ky + min_y - 1, kx + min_x - 1] = comp.class_id
    return m.with_grid(out)


def sample_condition(schedule: ConditionSchedule, step: int) -> ConditionKind:
    """Deterministic condition kind for one training step.

    A pure function of (schedule.seed, step); marginal frequencies over
    steps converge to (p_depth, p_black, p_coarse, remainder full).
    """
    u = rng.uniform_at(schedule.seed, step)
    if u < schedule.p_depth:
        return ConditionKind.DEPTH
    if u < schedule.p_depth + schedule.p_black:
        return ConditionKind.BLACK
    if u < schedule.p_depth + schedule.p_black + schedule.p_coarse:
        return ConditionKind.COARSE
    return ConditionKind.FULL


def emit_condition_set(
    manifest: DatasetManifest,
    schedule: ConditionSchedule,
    policy: ErosionPolicy,
    out_dir,
    taxonomy: ClassTaxonomy,
    connectivity: int = 4,
) -> DatasetManifest:
    """Materialize per-step condition records for an external trainer.

    Step ``i`` covers manifest entry ``i``. Full records reference the
    original label, coarse records reference a freshly eroded copy, depth
    records carry an empty slot for the external depth worker, and black
    records reference nothing. Output entries are sorted by id; each keeps
    its step index.
    """
    out_dir = Path(out_dir)
    eroded_dir = out_dir / "eroded"
    records: list[ManifestEntry] = []
    for step, entry in enumerate(manifest):
        kind = sample_condition(schedule, step)
        extra: dict = {"step": step, "kind": kind.value}
        label = None
        image = entry.image
        if kind in (ConditionKind.FULL, ConditionKind.COARSE):
            if entry.label is None:
                raise ManifestError(f"entry {entry.id!r} has no label for a {kind.value} condition")
            src = manifest.resolve(entry.label)
            if not src.exists():
                raise ManifestError(f"entry {entry.id!r}: missing label file {src}")
        if kind == ConditionKind.FULL:
            label = entry.label
        elif kind == ConditionKind.COARSE:
            eroded_dir.mkdir(parents=True, exist_ok=True)
            eroded = erode_components(load_label_map(src, taxonomy), policy, connectivity)
            ref = f"eroded/{entry.id}.png"
            save_label_map(out_dir / ref, eroded)
            extra["eroded"] = ref
        elif kind == ConditionKind.DEPTH:
            extra["depth"] = None
        records.append(
            ManifestEntry(id=entry.id, label=label, image=image, dataset=entry.dataset, extra=extra)
        )
    records.sort(key=lambda e: e.id)
    header = {
        "kind": "conditions",
        "seed": schedule.seed,
        "p_depth": schedule.p_depth,
        "p_black": schedule.p_black,
        "p_coarse": schedule.p_coarse,
        "taxonomy_hash": taxonomy.content_hash(),
    }
    result = DatasetManifest(tuple(records), header=header)
    result.save(out_dir / "conditions.jsonl")
    return result
