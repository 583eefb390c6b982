import numpy as np
import pytest

from segcurate.labelmap import SemanticMap, encode_label_map
from segcurate.manifest import DatasetManifest, ManifestEntry
from segcurate.taxonomy import ClassTaxonomy


@pytest.fixture(scope="session")
def taxonomy():
    return ClassTaxonomy.urban()


def make_map(rows, void_id=255):
    return SemanticMap(np.array(rows, dtype=np.uint8), void_id=void_id)


def random_map(rng, height, width, num_classes=5, void_prob=0.15):
    """Random small map over class ids 0..num_classes-1 with some void."""
    grid = rng.integers(0, num_classes, size=(height, width)).astype(np.uint8)
    grid[rng.random((height, width)) < void_prob] = 255
    return SemanticMap(grid)


def write_label(path, semantic_map):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_label_map(semantic_map))


def build_manifest(root, maps, dataset="test", conditions=None, header=None):
    """Write label files and a manifest referencing them; returns the manifest path."""
    entries = []
    for i, m in enumerate(maps):
        ref = f"labels/{i:05d}.png"
        write_label(root / ref, m)
        entries.append(
            ManifestEntry(
                id=f"e{i:05d}",
                label=ref,
                dataset=dataset,
                condition=None if conditions is None else conditions[i],
            )
        )
    manifest = DatasetManifest(tuple(entries), header=header or {})
    return manifest.save(root / "manifest.jsonl")
