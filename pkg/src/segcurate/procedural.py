"""Procedural candidate rendering: the desk-scale stand-in for a real
conditional image generator and pseudo-labeller.

This is a compatibility contract, version 1. Conforming external workers
re-implement these functions bit for bit, so in-process mocks and
subprocess workers are interchangeable in every test and pipeline run:

- candidate i of a request with seed s is rendered with
  ``derive_seed(s, "cand", i)``;
- per-component class swaps draw from the "swap" and "swapclass" streams,
  walking components in scanline order under 4-connectivity; a swapped
  component is re-rendered as a class drawn uniformly from the other
  taxonomy classes;
- the image is the per-class palette color plus per-pixel jitter from the
  "jitter" stream: ``(word % (2*amplitude+1)) - amplitude`` per channel in
  row-major (H, W, 3) order, clipped to [0, 255];
- every image ``X.png`` is written with an ``X.sidecar.png`` label map
  recording what was actually rendered;
- labeller noise flips each pixel with probability ``noise_rate`` to a
  class drawn uniformly from the full taxonomy ("noise" and "noiseclass"
  streams, row-major order); a labeller with base seed b labels image
  ref R with ``derive_seed(b, "label", R)``.
"""
from __future__ import annotations

import io
from pathlib import PurePath

import numpy as np
from PIL import Image

from .labelmap import SemanticMap, connected_components
from .rng import derive_seed, stream, uniform
from .taxonomy import ClassTaxonomy, URBAN_PALETTE, VOID_COLOR

JITTER_AMPLITUDE = 8


def candidate_seed(request_seed: int, index: int) -> int:
    return derive_seed(request_seed, "cand", index)


def sidecar_ref(image_ref: str) -> str:
    """Path of the effective-map sidecar next to an image file."""
    p = PurePath(image_ref)
    return str(p.with_suffix(".sidecar.png"))


def _palette_lut(taxonomy: ClassTaxonomy) -> np.ndarray:
    lut = np.zeros((256, 3), dtype=np.uint8)
    for class_id, color in zip(taxonomy.class_ids, URBAN_PALETTE):
        lut[class_id] = color
    lut[taxonomy.void_id] = VOID_COLOR
    return lut


def render_candidate(
    m: SemanticMap,
    seed: int,
    corruption: float,
    taxonomy: ClassTaxonomy,
    jitter: int = JITTER_AMPLITUDE,
) -> tuple[np.ndarray, SemanticMap]:
    """Render one candidate image for a semantic map.

    With probability ``corruption`` per connected component, the component
    is re-rendered as a different class, emulating a generator that draws
    the wrong object kind. Returns the (H, W, 3) uint8 image and the
    effective map that was actually rendered.
    """
    effective = m.grid.copy()
    components = connected_components(m, connectivity=4)
    n = len(components)
    if corruption > 0 and n:
        swap_u = uniform(derive_seed(seed, "swap"), n)
        class_u = uniform(derive_seed(seed, "swapclass"), n)
        for j, comp in enumerate(components):
            if swap_u[j] < corruption:
                others = [c for c in taxonomy.class_ids if c != comp.class_id]
                replacement = others[int(class_u[j] * len(others))]
                effective[comp.ys, comp.xs] = replacement
    image = _palette_lut(taxonomy)[effective].astype(np.int16)
    if jitter > 0:
        h, w = effective.shape
        words = stream(derive_seed(seed, "jitter"), h * w * 3)
        span = np.uint64(2 * jitter + 1)
        offsets = (words % span).astype(np.int16).reshape(h, w, 3) - jitter
        image = image + offsets
    image = np.clip(image, 0, 255).astype(np.uint8)
    return image, SemanticMap(effective, void_id=m.void_id)


def apply_label_noise(
    m: SemanticMap, seed: int, noise_rate: float, taxonomy: ClassTaxonomy
) -> SemanticMap:
    """Independently replace each pixel with a uniform random class with
    probability ``noise_rate``. At rate 1 the expected per-pixel agreement
    with the input is 1/K."""
    if noise_rate <= 0:
        return m
    h, w = m.grid.shape
    flip = uniform(derive_seed(seed, "noise"), h * w).reshape(h, w) < noise_rate
    picks = uniform(derive_seed(seed, "noiseclass"), h * w).reshape(h, w)
    replacement = (picks * len(taxonomy)).astype(np.uint8)
    return m.with_grid(np.where(flip, replacement, m.grid))


def encode_image_png(image: np.ndarray) -> bytes:
    """Deterministic PNG bytes for an (H, W, 3) uint8 image."""
    buf = io.BytesIO()
    Image.fromarray(image, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_image_png(data: bytes) -> np.ndarray:
    img = Image.open(io.BytesIO(data))
    return np.asarray(img.convert("RGB"), dtype=np.uint8)


def encode_gray_png(grid: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(grid, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def render_depth(image: np.ndarray) -> np.ndarray:
    """Deterministic pseudo-depth for a rendered image: a vertical ramp
    shaded by pixel luminance. Stands in for a real depth estimator."""
    h, w = image.shape[:2]
    ramp = np.linspace(0.0, 200.0, num=h, dtype=np.float64)[:, None]
    luma = image.astype(np.float64).mean(axis=2) * (55.0 / 255.0)
    return np.clip(ramp + luma, 0, 255).astype(np.uint8)
