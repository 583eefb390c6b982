"""Mean class-wise object consistency (MCOC) scoring and candidate selection.

A generated candidate is scored against the semantic map it was generated
from: every connected component of the source map is checked for whether
the candidate's re-estimated labels are dominated by a single class, the
per-class acceptance rates are averaged over the classes present in the
source, and the top-k candidates per map are kept.

All score arithmetic is exact (integer rationals); floats only appear at
serialization boundaries. The threshold is interpreted as its decimal
literal, so ``tau=0.7`` means exactly 7/10.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .labelmap import Component, SemanticMap, connected_components

MODES = ("literal", "strict")


def _as_fraction(value) -> Fraction:
    if isinstance(value, float):
        return Fraction(str(value))
    return Fraction(value)


@dataclass(frozen=True)
class ComponentScore:
    """Dominance verdict for one source component under one candidate."""

    component_id: int
    source_class: int
    dominant_class: int | None
    dominant_fraction: Fraction
    accepted: bool


@dataclass(frozen=True)
class McocReport:
    """Full per-component and per-class scoring detail for one candidate."""

    candidate_id: int | str
    tau: Fraction
    mode: str
    per_component: tuple[ComponentScore, ...]
    per_class_acceptance: dict[int, Fraction]
    classes_present: frozenset[int]
    score: Fraction

    @property
    def score_float(self) -> float:
        return float(self.score)

    def to_record(self) -> dict:
        per_class = {}
        for class_id in sorted(self.classes_present):
            total = sum(1 for c in self.per_component if c.source_class == class_id)
            accepted = sum(
                1 for c in self.per_component if c.source_class == class_id and c.accepted
            )
            per_class[str(class_id)] = {
                "accepted": accepted,
                "total": total,
                "rate": accepted / total,
            }
        return {
            "candidate_id": self.candidate_id,
            "tau": float(self.tau),
            "mode": self.mode,
            "score": self.score_float,
            "score_exact": f"{self.score.numerator}/{self.score.denominator}",
            "classes_present": sorted(self.classes_present),
            "per_class": per_class,
            "components": [
                {
                    "component_id": c.component_id,
                    "source_class": c.source_class,
                    "dominant_class": c.dominant_class,
                    "dominant_fraction": float(c.dominant_fraction),
                    "accepted": c.accepted,
                }
                for c in self.per_component
            ],
        }


@dataclass(frozen=True)
class SelectionResult:
    source_id: str
    ranked: tuple[int | str, ...]
    selected: tuple[int | str, ...]
    reports: tuple[McocReport, ...]


@dataclass(frozen=True)
class CuratedPair:
    candidate_id: int | str
    image_ref: str
    label_ref: str


def component_alpha(comp: Component, prediction: SemanticMap) -> tuple[int | None, Fraction]:
    """Dominant predicted class over one component and its pixel share.

    Void predictions count toward no class. Ties break toward the lowest
    class id. Returns ``(None, 0)`` when every covered pixel is void.
    """
    if comp.bbox[2] >= prediction.width or comp.bbox[3] >= prediction.height:
        raise ValueError(
            f"component bbox {comp.bbox} outside prediction {prediction.width}x{prediction.height}"
        )
    values = prediction.grid[comp.ys, comp.xs]
    counts = np.bincount(values, minlength=256).astype(np.int64)
    counts[prediction.void_id] = 0
    dominant = int(np.argmax(counts))
    top = int(counts[dominant])
    if top == 0:
        return None, Fraction(0)
    return dominant, Fraction(top, comp.size)


def score_candidate(
    source: SemanticMap,
    prediction: SemanticMap,
    tau: float | Fraction = 0.7,
    mode: str = "literal",
    connectivity: int = 4,
    candidate_id: int | str = 0,
) -> McocReport:
    """Score one candidate's predicted labels against its source map.

    A component is accepted when its dominant fraction reaches ``tau``;
    strict mode additionally requires the dominant class to equal the
    component's source class (literal mode scores any single-class
    prediction 1.0, so strict is the defensible production default).
    Per-class acceptance is grouped by source class; the score averages
    those rates over the classes present in the source map.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if source.grid.shape != prediction.grid.shape:
        raise ValueError(
            f"dimension mismatch: source {source.grid.shape} vs prediction {prediction.grid.shape}"
        )
    tau = _as_fraction(tau)
    components = connected_components(source, connectivity)
    if not components:
        raise ValueError("source map has no non-void pixels")
    scored = []
    for comp in components:
        dominant, fraction = component_alpha(comp, prediction)
        accepted = dominant is not None and fraction >= tau
        if mode == "strict":
            accepted = accepted and dominant == comp.class_id
        scored.append(
            ComponentScore(comp.component_id, comp.class_id, dominant, fraction, accepted)
        )
    classes_present = frozenset(c.source_class for c in scored)
    per_class: dict[int, Fraction] = {}
    for class_id in classes_present:
        of_class = [c for c in scored if c.source_class == class_id]
        per_class[class_id] = Fraction(
            sum(1 for c in of_class if c.accepted), len(of_class)
        )
    score = sum(per_class.values(), Fraction(0)) / len(per_class)
    return McocReport(
        candidate_id=candidate_id,
        tau=tau,
        mode=mode,
        per_component=tuple(scored),
        per_class_acceptance=per_class,
        classes_present=classes_present,
        score=score,
    )


def rank_and_select(source_id: str, reports: Sequence[McocReport], k: int) -> SelectionResult:
    """Rank candidates by descending score and keep the first ``min(k, N)``.

    Ties break by ascending candidate id, so selection is reproducible
    regardless of how the reports were produced or ordered.
    """
    if not reports:
        raise ValueError("cannot select from an empty report list")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ids = [r.candidate_id for r in reports]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate candidate ids in reports")
    ranked_reports = sorted(reports, key=lambda r: (-r.score, r.candidate_id))
    ranked = tuple(r.candidate_id for r in ranked_reports)
    return SelectionResult(
        source_id=source_id,
        ranked=ranked,
        selected=ranked[: min(k, len(ranked))],
        reports=tuple(ranked_reports),
    )


def pair_with_pseudolabels(
    selection: SelectionResult,
    image_refs: Mapping[int | str, str],
    pseudo_label_refs: Mapping[int | str, str],
    pairing: str = "pseudo",
    original_label_ref: str | None = None,
) -> tuple[CuratedPair, ...]:
    """Pair each selected candidate image with its training label reference.

    Default pairing uses the candidate's own re-estimated pseudo-label;
    the ``original`` mode pairs every selected image with the source label
    instead (kept for ablation runs only).
    """
    if pairing not in ("pseudo", "original"):
        raise ValueError(f"pairing must be 'pseudo' or 'original', got {pairing!r}")
    if pairing == "original" and original_label_ref is None:
        raise ValueError("original pairing requires the source label reference")
    pairs = []
    for cid in selection.selected:
        if cid not in image_refs:
            raise ValueError(f"missing image for selected candidate {cid!r}")
        if pairing == "pseudo":
            if cid not in pseudo_label_refs:
                raise ValueError(f"missing pseudo-label for selected candidate {cid!r}")
            label_ref = pseudo_label_refs[cid]
        else:
            label_ref = original_label_ref
        pairs.append(CuratedPair(cid, image_refs[cid], label_ref))
    return tuple(pairs)
