"""Canonical class taxonomy and cross-dataset label harmonization.

The canonical taxonomy is the 19 evaluable urban classes (ids 0..18, void
255). Heterogeneous source datasets are pulled into it through per-dataset
mapping files, so that one class id means one thing everywhere downstream.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import HarmonizeError, TaxonomyError
from .labelmap import VOID_ID, SemanticMap

# Canonical class order; also the column order of evaluation tables.
URBAN_CLASS_NAMES = (
    "road", "sidewalk", "building", "wall", "fence", "pole",
    "traffic light", "traffic sign", "vegetation", "terrain",
    "sky", "person", "rider", "car", "truck", "bus",
    "train", "motorcycle", "bicycle",
)

URBAN_SHORT_NAMES = (
    "Rd", "Sdwk", "Bldg", "Wall", "Fnc", "Pole", "TLgt", "TSign", "Veg",
    "Terr", "Sky", "Pers", "Rdr", "Car", "Trck", "Bus", "Train", "Mcy",
    "Bike",
)

# Standard urban color coding, class id -> RGB.
URBAN_PALETTE = (
    (128, 64, 128), (244, 35, 232), (70, 70, 70), (102, 102, 156),
    (190, 153, 153), (153, 153, 153), (250, 170, 30), (220, 220, 0),
    (107, 142, 35), (152, 251, 152), (70, 130, 180), (220, 20, 60),
    (255, 0, 0), (0, 0, 142), (0, 0, 70), (0, 60, 100),
    (0, 80, 100), (0, 0, 230), (119, 11, 32),
)

VOID_COLOR = (0, 0, 0)


@dataclass(frozen=True)
class ClassDef:
    id: int
    name: str
    evaluable: bool = True


@dataclass(frozen=True)
class ClassTaxonomy:
    """Ordered class list with dense unique ids and a reserved void id."""

    classes: tuple[ClassDef, ...]
    void_id: int = VOID_ID

    def __post_init__(self):
        ids = [c.id for c in self.classes]
        names = [c.name for c in self.classes]
        if not self.classes:
            raise TaxonomyError("taxonomy must define at least one class")
        if ids != list(range(len(ids))):
            raise TaxonomyError(f"class ids must be dense from 0, got {ids}")
        if len(set(names)) != len(names):
            raise TaxonomyError("class names must be unique")
        if self.void_id in ids:
            raise TaxonomyError(f"void id {self.void_id} collides with a class id")

    @classmethod
    def urban(cls) -> "ClassTaxonomy":
        """The default 19-class urban taxonomy."""
        return cls(tuple(ClassDef(i, n) for i, n in enumerate(URBAN_CLASS_NAMES)))

    @property
    def class_ids(self) -> tuple[int, ...]:
        return tuple(c.id for c in self.classes)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.classes)

    def __len__(self) -> int:
        return len(self.classes)

    def __contains__(self, class_id: int) -> bool:
        return 0 <= class_id < len(self.classes)

    def id_of(self, name: str) -> int:
        for c in self.classes:
            if c.name == name:
                return c.id
        raise TaxonomyError(f"unknown class name {name!r}")

    def name_of(self, class_id: int) -> str:
        if class_id == self.void_id:
            return "void"
        if class_id not in self:
            raise TaxonomyError(f"unknown class id {class_id}")
        return self.classes[class_id].name

    def content_hash(self) -> str:
        text = ";".join(f"{c.id}:{c.name}:{int(c.evaluable)}" for c in self.classes)
        text += f";void:{self.void_id}"
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True)
class Palette:
    """Color-to-class association for RGB-coded label files."""

    color_to_class: dict[tuple[int, int, int], int]
    void_id: int = VOID_ID

    @classmethod
    def urban(cls) -> "Palette":
        return cls({color: cid for cid, color in enumerate(URBAN_PALETTE)})


@dataclass(frozen=True)
class DatasetMapping:
    """Association of one dataset's raw label ids to canonical ids or void."""

    dataset_name: str
    entries: dict[int, int]
    declared_present: frozenset[int] = field(default=frozenset())

    @classmethod
    def identity(cls, taxonomy: ClassTaxonomy, name: str = "identity") -> "DatasetMapping":
        ids = {i: i for i in taxonomy.class_ids}
        return cls(name, ids, frozenset(taxonomy.class_ids))


def load_mapping(path, taxonomy: ClassTaxonomy) -> DatasetMapping:
    """Parse a mapping file.

    Format: UTF-8 text, ``#`` comments, lines ``<int> -> <class-name|void>``,
    optional headers ``dataset: <name>`` and ``present: <name,...>``. If no
    ``present`` header is given, the declared-present set is derived from
    the non-void targets of the entries.
    """
    dataset_name = "unnamed"
    declared: frozenset[int] | None = None
    entries: dict[int, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("dataset:"):
                dataset_name = line.split(":", 1)[1].strip()
                continue
            if line.startswith("present:"):
                names = [n.strip() for n in line.split(":", 1)[1].split(",") if n.strip()]
                try:
                    declared = frozenset(taxonomy.id_of(n) for n in names)
                except TaxonomyError as exc:
                    raise TaxonomyError(f"{path}:{lineno}: {exc}") from exc
                continue
            if "->" not in line:
                raise TaxonomyError(f"{path}:{lineno}: expected '<id> -> <class>', got {line!r}")
            left, right = (part.strip() for part in line.split("->", 1))
            try:
                source_id = int(left)
            except ValueError as exc:
                raise TaxonomyError(f"{path}:{lineno}: source id {left!r} is not an integer") from exc
            if not 0 <= source_id <= 255:
                raise TaxonomyError(f"{path}:{lineno}: source id {source_id} outside 0..255")
            if source_id == taxonomy.void_id:
                raise TaxonomyError(f"{path}:{lineno}: source id {source_id} is the reserved void id")
            if source_id in entries:
                raise TaxonomyError(f"{path}:{lineno}: duplicate source id {source_id}")
            if right == "void":
                target = taxonomy.void_id
            elif right.isdigit() or (right.startswith("-") and right[1:].isdigit()):
                target = int(right)
                if target not in taxonomy and target != taxonomy.void_id:
                    raise TaxonomyError(f"{path}:{lineno}: target id {target} outside taxonomy")
            else:
                try:
                    target = taxonomy.id_of(right)
                except TaxonomyError as exc:
                    raise TaxonomyError(f"{path}:{lineno}: {exc}") from exc
            entries[source_id] = target
    if not entries:
        raise TaxonomyError(f"{path}: mapping defines no entries")
    if declared is None:
        declared = frozenset(t for t in entries.values() if t != taxonomy.void_id)
    return DatasetMapping(dataset_name, entries, declared)


def harmonize(m: SemanticMap, mapping: DatasetMapping, strict: bool = True) -> SemanticMap:
    """Remap every pixel through the mapping entries.

    Void pixels pass through untouched. Source ids without an entry raise
    in strict mode (id and pixel count reported) and become void otherwise.
    """
    lut = np.full(256, m.void_id, dtype=np.uint8)
    has_entry = np.zeros(256, dtype=bool)
    for source_id, target in mapping.entries.items():
        lut[source_id] = target
        has_entry[source_id] = True
    lut[m.void_id] = m.void_id
    has_entry[m.void_id] = True
    if strict:
        present, counts = np.unique(m.grid, return_counts=True)
        missing = [
            f"id {int(v)} ({int(c)} px)"
            for v, c in zip(present.tolist(), counts.tolist())
            if not has_entry[v]
        ]
        if missing:
            raise HarmonizeError(
                f"dataset {mapping.dataset_name!r}: unmapped source ids: " + ", ".join(missing)
            )
    return m.with_grid(lut[m.grid])


def present_classes(m: SemanticMap) -> frozenset[int]:
    """Exact set of non-void class ids occurring in the map."""
    values = np.unique(m.grid)
    return frozenset(int(v) for v in values.tolist() if v != m.void_id)
