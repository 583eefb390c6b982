"""Semantic label maps: decoding, encoding, components, and cropping.

A label map is a rectangular grid of small unsigned class ids with one
reserved void id. Void pixels carry no semantics: they spawn no connected
components and are excluded from every statistic downstream.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterator

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import LabelMapError

if TYPE_CHECKING:
    from .taxonomy import ClassTaxonomy, Palette

VOID_ID = 255

_STRUCT_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_STRUCT_8 = np.ones((3, 3), dtype=bool)


def _connectivity_structure(connectivity: int) -> np.ndarray:
    if connectivity == 4:
        return _STRUCT_4
    if connectivity == 8:
        return _STRUCT_8
    raise ValueError(f"connectivity must be 4 or 8, got {connectivity!r}")


@dataclass(frozen=True, eq=False)
class SemanticMap:
    """Immutable per-pixel class-id grid, shape (height, width), dtype uint8."""

    grid: np.ndarray
    void_id: int = VOID_ID

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.uint8)
        if grid.ndim != 2 or grid.size == 0:
            raise LabelMapError(f"label grid must be non-empty 2-D, got shape {grid.shape}")
        grid = np.ascontiguousarray(grid)
        grid.flags.writeable = False
        object.__setattr__(self, "grid", grid)

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, SemanticMap):
            return NotImplemented
        return self.void_id == other.void_id and np.array_equal(self.grid, other.grid)

    def __hash__(self):
        return hash((self.grid.shape, self.void_id, self.grid.tobytes()))

    def with_grid(self, grid: np.ndarray) -> "SemanticMap":
        return SemanticMap(grid, void_id=self.void_id)


@dataclass(frozen=True)
class Component:
    """One maximal connected region of same-class non-void pixels.

    Pixel coordinates are stored as parallel ``xs``/``ys`` arrays in
    scanline order; ``bbox`` is (min_x, min_y, max_x, max_y) inclusive.
    """

    component_id: int
    class_id: int
    size: int
    xs: np.ndarray = field(repr=False)
    ys: np.ndarray = field(repr=False)
    bbox: tuple[int, int, int, int]

    @property
    def pixels(self) -> set[tuple[int, int]]:
        return set(zip(self.xs.tolist(), self.ys.tolist()))

    @property
    def bbox_width(self) -> int:
        return self.bbox[2] - self.bbox[0] + 1

    @property
    def bbox_height(self) -> int:
        return self.bbox[3] - self.bbox[1] + 1


@dataclass(frozen=True)
class ComponentSet:
    """All components of one map, ordered by scanline position of first pixel."""

    components: tuple[Component, ...]
    connectivity: int
    width: int
    height: int

    def __iter__(self) -> Iterator[Component]:
        return iter(self.components)

    def __len__(self) -> int:
        return len(self.components)


def decode_label_map(data: bytes, taxonomy: "ClassTaxonomy") -> SemanticMap:
    """Decode a single-channel 8-bit image into a validated SemanticMap.

    Every pixel value must be a class id of ``taxonomy`` or its void id;
    the first offending pixel is reported with its coordinate.
    """
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except (UnidentifiedImageError, OSError) as exc:
        raise LabelMapError(f"cannot decode label image: {exc}") from exc
    if img.mode != "L":
        raise LabelMapError(f"label image must be single-channel 8-bit, got mode {img.mode!r}")
    grid = np.asarray(img, dtype=np.uint8)
    valid = np.zeros(256, dtype=bool)
    valid[list(taxonomy.class_ids)] = True
    valid[taxonomy.void_id] = True
    bad = ~valid[grid]
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise LabelMapError(
            f"unknown class id {int(grid[y, x])} at pixel ({int(x)}, {int(y)})"
        )
    return SemanticMap(grid, void_id=taxonomy.void_id)


def encode_label_map(m: SemanticMap) -> bytes:
    """Encode a map as a single-channel PNG; byte-identical for equal maps."""
    buf = io.BytesIO()
    Image.fromarray(m.grid, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def load_label_map(path, taxonomy: "ClassTaxonomy") -> SemanticMap:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise LabelMapError(f"cannot read label map {path}: {exc}") from exc
    return decode_label_map(data, taxonomy)


def save_label_map(path, m: SemanticMap) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_label_map(m))


def decode_color_map(data: bytes, palette: "Palette", strict: bool = True) -> SemanticMap:
    """Decode an RGB-coded label image through a color-to-class palette.

    Unknown colors raise in strict mode (color and pixel count reported)
    and fall back to void otherwise.
    """
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except (UnidentifiedImageError, OSError) as exc:
        raise LabelMapError(f"cannot decode color label image: {exc}") from exc
    rgb = np.asarray(img.convert("RGB"), dtype=np.uint8)
    # Pack colors into one int per pixel for a single vectorized lookup pass.
    packed = (
        rgb[..., 0].astype(np.int32) << 16
        | rgb[..., 1].astype(np.int32) << 8
        | rgb[..., 2].astype(np.int32)
    )
    table = {(r << 16 | g << 8 | b): cid for (r, g, b), cid in palette.color_to_class.items()}
    grid = np.full(packed.shape, palette.void_id, dtype=np.uint8)
    known = np.zeros(packed.shape, dtype=bool)
    for key, cid in table.items():
        hit = packed == key
        grid[hit] = cid
        known |= hit
    if strict and not known.all():
        unknown = packed[~known]
        key = int(unknown[0])
        count = int((unknown == key).sum())
        color = (key >> 16 & 0xFF, key >> 8 & 0xFF, key & 0xFF)
        raise LabelMapError(f"color {color} not in palette ({count} pixels)")
    return SemanticMap(grid, void_id=palette.void_id)


def connected_components(m: SemanticMap, connectivity: int = 4) -> ComponentSet:
    """Partition non-void pixels into maximal same-class connected regions.

    Components are numbered in scanline order of each component's first
    pixel, which makes every downstream per-component report reproducible.
    """
    structure = _connectivity_structure(connectivity)
    grid = m.grid
    h, w = grid.shape
    found: list[tuple[int, Component]] = []
    for class_id in np.unique(grid).tolist():
        if class_id == m.void_id:
            continue
        labels, count = ndimage.label(grid == class_id, structure=structure)
        if count == 0:
            continue
        flat_labels = labels.ravel()
        pixel_idx = np.flatnonzero(flat_labels)
        region_of = flat_labels[pixel_idx]
        order = np.argsort(region_of, kind="stable")
        pixel_idx = pixel_idx[order]
        sizes = np.bincount(region_of, minlength=count + 1)[1:]
        start = 0
        for size in sizes.tolist():
            flat = pixel_idx[start : start + size]
            start += size
            ys, xs = np.divmod(flat, w)
            comp = Component(
                component_id=-1,
                class_id=class_id,
                size=int(size),
                xs=xs,
                ys=ys,
                bbox=(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())),
            )
            first = int(flat[0])
            found.append((first, comp))
    found.sort(key=lambda item: item[0])
    ordered = tuple(
        Component(i, c.class_id, c.size, c.xs, c.ys, c.bbox)
        for i, (_, c) in enumerate(found)
    )
    return ComponentSet(ordered, connectivity=connectivity, width=w, height=h)


def center_crop_ratio(m: SemanticMap, ratio_w: int = 2, ratio_h: int = 1) -> SemanticMap:
    """Largest centered crop whose width:height equals ``ratio_w:ratio_h``.

    Output dimensions are the largest integer multiples of the ratio that
    fit; odd margins put the extra cropped pixel on the top/left edge.
    """
    if ratio_w < 1 or ratio_h < 1:
        raise ValueError("crop ratio terms must be positive")
    scale = min(m.width // ratio_w, m.height // ratio_h)
    if scale < 1:
        raise LabelMapError(
            f"map {m.width}x{m.height} smaller than crop ratio {ratio_w}:{ratio_h}"
        )
    out_w = scale * ratio_w
    out_h = scale * ratio_h
    left = (m.width - out_w + 1) // 2
    top = (m.height - out_h + 1) // 2
    if out_w == m.width and out_h == m.height:
        return m
    return m.with_grid(m.grid[top : top + out_h, left : left + out_w])
