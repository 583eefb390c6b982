"""Acceptance suite: one test per release criterion, each printing a
PASS line with its measured runtime (run with ``pytest -v -s``).

Numeric checks are exact (integer rationals) wherever the contract is
exact; statistical checks use the stated tolerances and fixed seeds.
"""
import json
import math
import shutil
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from conftest import build_manifest, make_map, write_label
from oracles import brute_erode, brute_iou, flood_components
from segcurate.labelmap import center_crop_ratio
from segcurate.manifest import DatasetManifest, ManifestEntry
from segcurate.mcoc import score_candidate
from segcurate.metrics import ConfusionMatrix, accumulate, iou_report, render_table
from segcurate.pipeline import PipelineConfig, run_curation, run_subset
from segcurate.regularize import ErosionPolicy, erode_components
from segcurate.sampling import (
    RcsConfig,
    class_frequencies,
    rcs_class_distribution,
    rcs_sample_subset,
    sample_class_sequence,
)
from segcurate.taxonomy import ClassTaxonomy

TAXONOMY = ClassTaxonomy.urban()


class _Budget:
    def __init__(self, name, seconds):
        self.name = name
        self.seconds = seconds

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        if exc_type is None:
            assert elapsed < self.seconds, f"{self.name}: {elapsed:.1f}s over {self.seconds}s budget"
            print(f"[ACCEPT] {self.name}: PASS ({elapsed:.2f}s)")
        return False


def random_pair(rng):
    """Random (source, prediction) pair <= 16x16 with <= 5 classes."""
    h = int(rng.integers(1, 17))
    w = int(rng.integers(1, 17))
    k = int(rng.integers(1, 6))
    source = rng.integers(0, k, size=(h, w)).astype(np.uint8)
    source[rng.random((h, w)) < 0.15] = 255
    prediction = rng.integers(0, k, size=(h, w)).astype(np.uint8)
    prediction[rng.random((h, w)) < 0.1] = 255
    return source, prediction


def oracle_mcoc_scores(source, prediction, tau):
    """Literal and strict scores from the flood-fill oracle in one pass."""
    per_literal = {}
    per_strict = {}
    for connectivity in (4, 8):
        for cls, pixels in flood_components(source, 255, connectivity):
            counts = {}
            for x, y in pixels:
                v = int(prediction[y, x])
                if v != 255:
                    counts[v] = counts.get(v, 0) + 1
            if counts:
                top = max(counts.values())
                dominant = min(c for c, n in counts.items() if n == top)
                fraction = Fraction(top, len(pixels))
            else:
                dominant, fraction = None, Fraction(0)
            literal = dominant is not None and fraction >= tau
            strict = literal and dominant == cls
            for table, flag in ((per_literal, literal), (per_strict, strict)):
                acc, tot = table.get((connectivity, cls), (0, 0))
                table[(connectivity, cls)] = (acc + int(flag), tot + 1)
    scores = {}
    for mode, table in (("literal", per_literal), ("strict", per_strict)):
        for connectivity in (4, 8):
            rates = [
                Fraction(acc, tot)
                for (conn, _), (acc, tot) in table.items()
                if conn == connectivity
            ]
            scores[(mode, connectivity)] = sum(rates, Fraction(0)) / len(rates)
    return scores


def test_mcoc_oracle_equivalence():
    """>= 1000 random pairs match the brute-force scorer exactly, in both
    modes and both connectivities."""
    with _Budget("mcoc-oracle-equivalence", 10):
        rng = np.random.default_rng(1001)
        tau = Fraction(7, 10)
        checked = 0
        while checked < 1000:
            source, prediction = random_pair(rng)
            if (source == 255).all():
                continue
            expected = oracle_mcoc_scores(source, prediction, tau)
            for mode in ("literal", "strict"):
                for connectivity in (4, 8):
                    report = score_candidate(
                        make_map(source),
                        make_map(prediction),
                        tau=0.7,
                        mode=mode,
                        connectivity=connectivity,
                    )
                    assert report.score == expected[(mode, connectivity)], (
                        f"pair {checked}, {mode}/{connectivity}"
                    )
            checked += 1


def test_mcoc_fixed_points():
    """Self-score 1.0; constant-class prediction separates the modes; all
    scores within [0, 1]."""
    with _Budget("mcoc-fixed-points", 5):
        rng = np.random.default_rng(1002)
        for _ in range(25):
            source, _ = random_pair(rng)
            if (source == 255).all():
                continue
            m = make_map(source)
            assert score_candidate(m, m).score == 1

        grid = np.full((8, 8), 255, dtype=np.uint8)
        grid[0, :] = 0       # road
        grid[3, :4] = 10     # sky
        grid[6, 2:5] = 13    # car
        fixture = make_map(grid)
        constant = make_map(np.zeros((8, 8), dtype=np.uint8))
        assert score_candidate(fixture, constant, mode="literal").score == 1
        strict = score_candidate(fixture, constant, mode="strict")
        assert strict.score == Fraction(1, len(strict.classes_present))

        for _ in range(100):
            source, prediction = random_pair(rng)
            if (source == 255).all():
                continue
            score = score_candidate(make_map(source), make_map(prediction)).score
            assert 0 <= score <= 1


def test_erosion_suite():
    """Zero strength is identity; erosion only voids pixels; the non-void
    set shrinks monotonically with strength; output equals the
    per-component brute-force disc oracle."""
    with _Budget("erosion-suite", 10):
        rng = np.random.default_rng(1003)
        for trial in range(15):
            h = int(rng.integers(4, 33))
            w = int(rng.integers(4, 33))
            grid = rng.integers(0, 3, size=(h, w)).astype(np.uint8)
            grid[rng.random((h, w)) < 0.1] = 255
            m = make_map(grid)

            assert erode_components(m, ErosionPolicy(strength=0.0)) == m

            previous = None
            for strength in (0.05, 0.15, 0.5):
                out = erode_components(m, ErosionPolicy(strength=strength))
                changed = out.grid != m.grid
                assert (out.grid[changed] == 255).all()
                nonvoid = out.grid != 255
                if previous is not None:
                    assert bool((nonvoid <= previous).all())
                previous = nonvoid

            mode = "sqrt" if trial % 2 else "linear"
            cap = None if trial % 3 else 3
            policy = ErosionPolicy(strength=0.15, radius_mode=mode, radius_cap=cap)
            mine = erode_components(m, policy)
            reference = brute_erode(grid, 255, strength=0.15, mode=mode, cap=cap)
            assert mine.grid.tolist() == reference.tolist()


def test_rcs_suite():
    """Sampling distribution matches the closed form to 1e-12 (including
    the exp(16) spread), empirical draws land within +-0.01, and
    without-replacement subsets are exact-sized and duplicate-free."""
    with _Budget("rcs-suite", 30):
        from test_sampling import table_for

        spread = rcs_class_distribution(table_for({0: 0.9, 1: 0.1}), 0.05)
        assert spread[1] / spread[0] == pytest.approx(math.exp(16), rel=1e-12)
        z = math.exp((1 - 0.9) / 0.05 - 18.0) + math.exp((1 - 0.1) / 0.05 - 18.0)
        for cls, f in ((0, 0.9), (1, 0.1)):
            direct = math.exp((1 - f) / 0.05 - 18.0) / z
            assert abs(spread[cls] - direct) < 1e-12

        fractions = {0: 0.4, 1: 0.3, 2: 0.2, 3: 0.1}
        table = table_for(fractions)
        for temperature in (0.05, 0.5, 2.0):
            dist = rcs_class_distribution(table, temperature)
            norm = sum(math.exp((1 - f) / temperature) for f in fractions.values())
            for cls, f in fractions.items():
                assert abs(dist[cls] - math.exp((1 - f) / temperature) / norm) < 1e-12
            assert abs(sum(dist.values()) - 1.0) < 1e-12

        dist = rcs_class_distribution(table, 0.5)
        draws = sample_class_sequence(table, 0.5, 100_000, seed=777)
        for cls in fractions:
            assert abs(draws.count(cls) / 100_000 - dist[cls]) < 0.01

        rng = np.random.default_rng(1004)
        maps = []
        for i in range(30):
            grid = np.zeros((4, 4), dtype=np.uint8)
            grid[0, 0] = int(rng.integers(0, 19))
            maps.append(make_map(grid))
        root = Path("/tmp") / f"rcs-accept-{time.time_ns()}"
        try:
            manifest = DatasetManifest.load(build_manifest(root, maps))
            freq = class_frequencies(manifest, TAXONOMY)
            for count in (5, 17, 30):
                subset = rcs_sample_subset(manifest, freq, RcsConfig(count=count, seed=9))
                ids = [e.id for e in subset]
                assert len(ids) == count
                assert len(set(ids)) == count
        finally:
            shutil.rmtree(root, ignore_errors=True)


def test_subset_recipes(tmp_path):
    """The multi-class filter plus stride 10 turns a 61305-entry manifest
    with 30180 multi-class scenes into exactly 3018 entries; the condition
    filter removes every adverse-tagged entry."""
    with _Budget("subset-recipes", 10):
        multi = make_map([[0, 10], [0, 10]])
        single = make_map([[0, 0], [0, 0]])
        write_label(tmp_path / "multi.png", multi)
        write_label(tmp_path / "single.png", single)
        entries = []
        remaining_multi = 30180
        for i in range(61305):
            # Spread single-class frames through the sequence like skipped
            # video frames; exactly 30180 entries stay multi-class.
            take_multi = remaining_multi > 0 and (i % 2 == 0 or 61305 - i <= remaining_multi)
            if take_multi:
                remaining_multi -= 1
            entries.append(
                ManifestEntry(id=f"f{i:06d}", label="multi.png" if take_multi else "single.png")
            )
        manifest = DatasetManifest(tuple(entries))
        manifest.save(tmp_path / "frames.jsonl")
        manifest = DatasetManifest.load(tmp_path / "frames.jsonl")

        recipe = [{"op": "filter_multiclass", "min_classes": 2}, {"op": "stride", "stride": 10}]
        out = run_subset(manifest, recipe, TAXONOMY)
        assert len(out) == 3018

        tagged = DatasetManifest(
            tuple(
                ManifestEntry(
                    id=f"s{i}",
                    label="multi.png",
                    condition=("night", "rain", "clear", "cloudy", "overcast")[i % 5],
                )
                for i in range(1000)
            ),
            root=tmp_path,
        )
        filtered = run_subset(tagged, [{"op": "filter_condition", "allowed": ["clear", "cloudy", "overcast"]}])
        assert len(filtered) == 600
        assert all(e.condition in ("clear", "cloudy", "overcast") for e in filtered)


def test_metrics_suite():
    """Hand-computed IoU fixtures match exactly, absent classes are
    excluded from the mean and rendered as "-", and accumulation order
    cannot change the result."""
    with _Budget("metrics-suite", 5):
        gt = make_map([[0, 0, 13, 255]])
        pred = make_map([[0, 10, 13, 13]])
        cm = accumulate(ConfusionMatrix.zeros(19), pred, gt)
        report = iou_report(cm, {0, 10, 13})
        oracle_per_class, oracle_miou = brute_iou([(pred.grid, gt.grid)], [0, 10, 13])
        assert report.per_class[0] == oracle_per_class[0] == Fraction(1, 2)
        assert report.per_class[10] == oracle_per_class[10] == Fraction(0)
        assert report.per_class[13] == oracle_per_class[13] == Fraction(1)
        assert report.miou == oracle_miou

        m = make_map([[0, 1]])
        cm = accumulate(ConfusionMatrix.zeros(19), m, m)
        evaluated = frozenset(range(19)) - {3, 4}
        partial = iou_report(cm, evaluated)
        assert partial.per_class[3] is None and partial.per_class[4] is None
        assert partial.miou == Fraction(2, 17)
        table = render_table(partial, TAXONOMY)
        wall_column = table.splitlines()[0].split().index("Wall")
        assert table.splitlines()[1].split()[wall_column] == "-"

        rng = np.random.default_rng(1005)
        pairs = [
            (
                make_map(rng.integers(0, 6, size=(6, 6)).astype(np.uint8)),
                make_map(rng.integers(0, 6, size=(6, 6)).astype(np.uint8)),
            )
            for _ in range(8)
        ]
        forward = ConfusionMatrix.zeros(19)
        backward = ConfusionMatrix.zeros(19)
        for p, g in pairs:
            accumulate(forward, p, g)
        for p, g in reversed(pairs):
            accumulate(backward, p, g)
        assert forward == backward
        assert iou_report(forward, set(range(6))).miou == iou_report(backward, set(range(6))).miou


def _scene_maps(count=50, height=64, width=128, seed=2001):
    """Blocky synthetic street scenes: solid class rectangles over road."""
    rng = np.random.default_rng(seed)
    maps = []
    for _ in range(count):
        grid = np.zeros((height, width), dtype=np.uint8)
        for _ in range(6):
            cls = int(rng.integers(1, 19))
            y = int(rng.integers(0, height - 8))
            x = int(rng.integers(0, width - 12))
            grid[y : y + int(rng.integers(4, 9)), x : x + int(rng.integers(6, 13))] = cls
        maps.append(make_map(grid))
    return maps


def _e2e_config(source_path, out_root, **overrides):
    values = dict(
        source_manifest=str(source_path),
        out_root=str(out_root),
        candidates=10,
        select=3,
        tau=0.7,
        mode="strict",
        seed=424242,
    )
    values.update(overrides)
    return PipelineConfig(**values)


def test_end_to_end_mock_pipeline(tmp_path):
    """50 maps, N=10, k=3, tau=0.7 against in-process mocks: clean runs
    score 1.0 with 150 curated records, a forced-bad candidate is never
    selected, output is byte-identical across reruns and lane counts, and
    resume-after-kill converges to the uninterrupted result."""
    with _Budget("end-to-end-mock-pipeline", 120):
        source_path = build_manifest(tmp_path / "src", _scene_maps())

        # (a) clean generation: every candidate perfect, k * entries records
        clean = run_curation(_e2e_config(source_path, tmp_path / "a"))
        assert clean.failed_entries == []
        assert clean.summary["mean_selected_mcoc"] == 1.0
        assert clean.summary["curated_records"] == 150
        manifest_a = clean.manifest_path.read_bytes()
        assert len(DatasetManifest.load(clean.manifest_path)) == 150

        # (b) one forced-bad candidate per entry is never selected
        corrupt = run_curation(
            _e2e_config(source_path, tmp_path / "b", mock_corrupt_index=7)
        )
        audit = [
            json.loads(line)
            for line in (corrupt.out_dir / "audit.jsonl").read_text().splitlines()
        ]
        bad = [a for a in audit if a["candidate_id"] == 7]
        assert len(bad) == 50
        assert sum(a["selected"] for a in bad) == 0
        assert all(a["score"] < 1.0 for a in bad)

        # (c) rerun determinism: byte-identical at W=1, id-sorted-identical
        # (here: also byte-identical) at W=4
        rerun = run_curation(_e2e_config(source_path, tmp_path / "c1"))
        assert rerun.manifest_path.read_bytes() == manifest_a
        parallel = run_curation(_e2e_config(source_path, tmp_path / "c4", workers=4))
        records_w4 = [
            json.loads(line)
            for line in parallel.manifest_path.read_bytes().splitlines()[1:]
        ]
        keys = [(r["source_id"], r["candidate"]) for r in records_w4]
        assert keys == sorted(keys)
        assert parallel.manifest_path.read_bytes() == manifest_a

        # (d) kill after 20 entries, resume, compare with uninterrupted
        config_d = _e2e_config(source_path, tmp_path / "d")

        class Kill(Exception):
            pass

        seen = []

        def killer(entry_id, status):
            seen.append(entry_id)
            if len(seen) == 20:
                raise Kill()

        with pytest.raises(Kill):
            run_curation(config_d, progress=killer)
        statuses = []
        resumed = run_curation(config_d, progress=lambda e, s: statuses.append(s))
        assert statuses.count("resumed") == 20
        assert resumed.manifest_path.read_bytes() == manifest_a


def test_crop_rule():
    """GTA5-sized input crops to 1914x957 centered; 2:1 inputs are fixed
    points."""
    with _Budget("crop-rule", 5):
        grid = np.arange(1052 * 1914, dtype=np.uint64).reshape(1052, 1914)
        grid = (grid % 19).astype(np.uint8)
        m = make_map(grid)
        out = center_crop_ratio(m, 2, 1)
        assert (out.width, out.height) == (1914, 957)
        top = (1052 - 957 + 1) // 2
        assert np.array_equal(out.grid, grid[top : top + 957, :])
        assert abs(top - (1052 - 957 - top)) <= 1  # centered within one pixel

        again = center_crop_ratio(out, 2, 1)
        assert again == out

        exact = make_map(np.zeros((512, 1024), dtype=np.uint8))
        assert center_crop_ratio(exact, 2, 1) == exact
