"""Procedural rendering contract, version 1.

This module re-implements, bit for bit, the deterministic procedural
backend that pipeline hosts also ship in-process, so a subprocess worker
and an in-process stand-in are interchangeable: same seeds, same bytes,
same scores. Everything below is frozen interface, not implementation
detail. Do not change constants, stream indexing, draw order, or the
seed-derivation encoding.

- randomness: splitmix64; stream word i for a seed is
  finalize(seed + (i+1) * golden); uniforms take the top 53 bits;
- seed derivation: sha256("scv1|<seed>|<part>|<part>...") first 8 bytes,
  big-endian;
- candidate i of a generate request with seed s uses
  derive(s, "cand", i);
- component walk: connected components of the semantic map under
  4-connectivity, ordered by scanline position of each component's first
  pixel; swap decisions come from the "swap" stream, replacement classes
  from the "swapclass" stream (uniform over the other 18 classes);
- image: per-class palette color plus per-pixel jitter
  (word % (2*amplitude+1)) - amplitude, amplitude 8, row-major (H, W, 3);
  clipped to [0, 255];
- every image X.png gets an X.sidecar.png label map of what was rendered;
- labeller noise: pixel flips from the "noise" stream, replacement class
  floor(u * 19) from the "noiseclass" stream, row-major; image ref R is
  labelled with derive(worker_seed, "label", R);
- depth: vertical ramp 0..200 plus luminance * 55/255, clipped, uint8.
"""
from __future__ import annotations

import hashlib
import io
from pathlib import PurePath

import numpy as np
from PIL import Image
from scipy import ndimage

MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

VOID_ID = 255
NUM_CLASSES = 19
JITTER_AMPLITUDE = 8

URBAN_PALETTE = (
    (128, 64, 128), (244, 35, 232), (70, 70, 70), (102, 102, 156),
    (190, 153, 153), (153, 153, 153), (250, 170, 30), (220, 220, 0),
    (107, 142, 35), (152, 251, 152), (70, 130, 180), (220, 20, 60),
    (255, 0, 0), (0, 0, 142), (0, 0, 70), (0, 60, 100),
    (0, 80, 100), (0, 0, 230), (119, 11, 32),
)

_STRUCT_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def stream(seed: int, n: int, offset: int = 0) -> np.ndarray:
    idx = np.arange(offset + 1, offset + n + 1, dtype=np.uint64)
    z = np.uint64(seed & MASK64) + idx * _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def uniform(seed: int, n: int, offset: int = 0) -> np.ndarray:
    return (stream(seed, n, offset) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def derive_seed(base: int, *parts: int | str) -> int:
    text = "scv1|" + str(base & MASK64) + "".join("|" + str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode("ascii")).digest()[:8], "big")


def candidate_seed(request_seed: int, index: int) -> int:
    return derive_seed(request_seed, "cand", index)


def sidecar_ref(image_ref: str) -> str:
    return str(PurePath(image_ref).with_suffix(".sidecar.png"))


def components_scanline(grid: np.ndarray) -> list[tuple[int, np.ndarray, np.ndarray]]:
    """(class_id, xs, ys) per component, scanline order of first pixel."""
    h, w = grid.shape
    found = []
    for class_id in np.unique(grid).tolist():
        if class_id == VOID_ID:
            continue
        labels, count = ndimage.label(grid == class_id, structure=_STRUCT_4)
        flat = labels.ravel()
        pixel_idx = np.flatnonzero(flat)
        region_of = flat[pixel_idx]
        order = np.argsort(region_of, kind="stable")
        pixel_idx = pixel_idx[order]
        sizes = np.bincount(region_of, minlength=count + 1)[1:]
        start = 0
        for size in sizes.tolist():
            indices = pixel_idx[start : start + size]
            start += size
            ys, xs = np.divmod(indices, w)
            found.append((int(indices[0]), class_id, xs, ys))
    found.sort(key=lambda item: item[0])
    return [(cls, xs, ys) for _, cls, xs, ys in found]


def _palette_lut() -> np.ndarray:
    lut = np.zeros((256, 3), dtype=np.uint8)
    for class_id, color in enumerate(URBAN_PALETTE):
        lut[class_id] = color
    lut[VOID_ID] = (0, 0, 0)
    return lut


def render_candidate(
    grid: np.ndarray, seed: int, corruption: float, jitter: int = JITTER_AMPLITUDE
) -> tuple[np.ndarray, np.ndarray]:
    """Render one candidate; returns (image HxWx3, effective label grid)."""
    effective = grid.copy()
    components = components_scanline(grid)
    n = len(components)
    if corruption > 0 and n:
        swap_u = uniform(derive_seed(seed, "swap"), n)
        class_u = uniform(derive_seed(seed, "swapclass"), n)
        for j, (class_id, xs, ys) in enumerate(components):
            if swap_u[j] < corruption:
                others = [c for c in range(NUM_CLASSES) if c != class_id]
                effective[ys, xs] = others[int(class_u[j] * len(others))]
    image = _palette_lut()[effective].astype(np.int16)
    if jitter > 0:
        h, w = grid.shape
        words = stream(derive_seed(seed, "jitter"), h * w * 3)
        span = np.uint64(2 * jitter + 1)
        image = image + ((words % span).astype(np.int16).reshape(h, w, 3) - jitter)
    return np.clip(image, 0, 255).astype(np.uint8), effective


def apply_label_noise(grid: np.ndarray, seed: int, noise_rate: float) -> np.ndarray:
    if noise_rate <= 0:
        return grid
    h, w = grid.shape
    flip = uniform(derive_seed(seed, "noise"), h * w).reshape(h, w) < noise_rate
    picks = uniform(derive_seed(seed, "noiseclass"), h * w).reshape(h, w)
    return np.where(flip, (picks * NUM_CLASSES).astype(np.uint8), grid)


def render_depth(image: np.ndarray) -> np.ndarray:
    h = image.shape[0]
    ramp = np.linspace(0.0, 200.0, num=h, dtype=np.float64)[:, None]
    luma = image.astype(np.float64).mean(axis=2) * (55.0 / 255.0)
    return np.clip(ramp + luma, 0, 255).astype(np.uint8)


def decode_label_png(data: bytes) -> np.ndarray:
    img = Image.open(io.BytesIO(data))
    if img.mode != "L":
        raise ValueError(f"label image must be single-channel 8-bit, got {img.mode!r}")
    return np.asarray(img, dtype=np.uint8)


def encode_gray_png(grid: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(grid, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def encode_rgb_png(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(image, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_rgb_png(data: bytes) -> np.ndarray:
    return np.asarray(Image.open(io.BytesIO(data)).convert("RGB"), dtype=np.uint8)
