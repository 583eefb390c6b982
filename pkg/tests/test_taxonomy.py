import numpy as np
import pytest

from conftest import make_map, random_map
from segcurate.errors import HarmonizeError, TaxonomyError
from segcurate.labelmap import SemanticMap
from segcurate.taxonomy import (
    ClassDef,
    ClassTaxonomy,
    DatasetMapping,
    harmonize,
    load_mapping,
    present_classes,
)


class TestTaxonomy:
    def test_urban_has_nineteen_classes(self, taxonomy):
        assert len(taxonomy) == 19
        assert taxonomy.names[0] == "road"
        assert taxonomy.names[-1] == "bicycle"
        assert taxonomy.void_id == 255

    def test_ids_dense_and_named(self, taxonomy):
        assert taxonomy.class_ids == tuple(range(19))
        assert taxonomy.id_of("car") == 13
        assert taxonomy.name_of(10) == "sky"
        assert taxonomy.name_of(255) == "void"

    def test_invalid_taxonomies_rejected(self):
        with pytest.raises(TaxonomyError, match="dense"):
            ClassTaxonomy((ClassDef(1, "a"),))
        with pytest.raises(TaxonomyError, match="unique"):
            ClassTaxonomy((ClassDef(0, "a"), ClassDef(1, "a")))
        with pytest.raises(TaxonomyError, match="void"):
            ClassTaxonomy((ClassDef(0, "a"),), void_id=0)

    def test_content_hash_stable(self, taxonomy):
        assert taxonomy.content_hash() == ClassTaxonomy.urban().content_hash()
        smaller = ClassTaxonomy((ClassDef(0, "road"),))
        assert smaller.content_hash() != taxonomy.content_hash()


class TestLoadMapping:
    def test_identity_file(self, tmp_path, taxonomy):
        path = tmp_path / "identity.map"
        path.write_text(
            "dataset: ident\n" + "\n".join(f"{i} -> {i}" for i in range(19)) + "\n"
        )
        mapping = load_mapping(path, taxonomy)
        assert mapping.dataset_name == "ident"
        assert mapping.entries == {i: i for i in range(19)}
        assert mapping.declared_present == frozenset(range(19))

    def test_names_comments_and_void(self, tmp_path, taxonomy):
        path = tmp_path / "gta.map"
        path.write_text(
            "dataset: gta5\n"
            "# pickup trucks are a per-dataset call\n"
            "7 -> road\n"
            "26 -> car\n"
            "27 -> truck  # heavy trucks\n"
            "34 -> void\n"
        )
        mapping = load_mapping(path, taxonomy)
        assert mapping.entries == {7: 0, 26: 13, 27: 14, 34: 255}
        assert mapping.declared_present == frozenset({0, 13, 14})

    def test_pickup_truck_is_configuration(self, tmp_path, taxonomy):
        # The same source id can legitimately target car in one dataset
        # and truck in another; both must load.
        a = tmp_path / "a.map"
        a.write_text("50 -> car\n")
        b = tmp_path / "b.map"
        b.write_text("50 -> truck\n")
        assert load_mapping(a, taxonomy).entries[50] == taxonomy.id_of("car")
        assert load_mapping(b, taxonomy).entries[50] == taxonomy.id_of("truck")

    def test_target_outside_taxonomy_rejected(self, tmp_path, taxonomy):
        path = tmp_path / "bad.map"
        path.write_text("3 -> 42\n")
        with pytest.raises(TaxonomyError, match="42"):
            load_mapping(path, taxonomy)

    def test_unknown_target_name_rejected(self, tmp_path, taxonomy):
        path = tmp_path / "bad.map"
        path.write_text("3 -> lorry\n")
        with pytest.raises(TaxonomyError, match="lorry"):
            load_mapping(path, taxonomy)

    def test_reserved_void_source_rejected(self, tmp_path, taxonomy):
        path = tmp_path / "bad.map"
        path.write_text("255 -> road\n")
        with pytest.raises(TaxonomyError, match="reserved"):
            load_mapping(path, taxonomy)

    def test_explicit_present_header(self, tmp_path, taxonomy):
        path = tmp_path / "veis.map"
        path.write_text("present: road, car\n1 -> road\n2 -> car\n3 -> sky\n")
        mapping = load_mapping(path, taxonomy)
        assert mapping.declared_present == frozenset({0, 13})


class TestHarmonize:
    def test_identity_is_noop(self, taxonomy):
        m = make_map([[0, 5], [13, 255]])
        out = harmonize(m, DatasetMapping.identity(taxonomy))
        assert out == m

    def test_table_substitution(self, taxonomy):
        m = make_map([[3, 7], [3, 255]])
        mapping = DatasetMapping("x", {3: taxonomy.id_of("car"), 7: 255})
        out = harmonize(m, mapping)
        assert out.grid.tolist() == [[13, 255], [13, 255]]

    def test_strict_reports_unmapped_id_and_count(self, taxonomy):
        m = make_map([[9, 9], [9, 0]])
        mapping = DatasetMapping("x", {0: 0})
        with pytest.raises(HarmonizeError, match=r"id 9 \(3 px\)"):
            harmonize(m, mapping, strict=True)

    def test_lenient_maps_unknown_to_void(self, taxonomy):
        m = make_map([[9, 0]])
        out = harmonize(m, DatasetMapping("x", {0: 0}), strict=False)
        assert out.grid.tolist() == [[255, 0]]

    def test_void_always_preserved(self, taxonomy):
        m = make_map([[255, 1]])
        out = harmonize(m, DatasetMapping("x", {1: 2}), strict=True)
        assert out.grid[0, 0] == 255

    def test_composition_on_random_maps(self, taxonomy):
        rng = np.random.default_rng(5)
        g = DatasetMapping("g", {i: (i + 3) % 19 for i in range(19)})
        f = DatasetMapping("f", {i: (i * 7) % 19 for i in range(19)})
        fg = DatasetMapping("fg", {i: (((i + 3) % 19) * 7) % 19 for i in range(19)})
        for _ in range(20):
            m = random_map(rng, 8, 8, num_classes=19)
            assert harmonize(m, fg) == harmonize(harmonize(m, g), f)


class TestPresentClasses:
    def test_all_void_is_empty(self):
        assert present_classes(make_map([[255, 255]])) == frozenset()

    def test_road_and_sky(self, taxonomy):
        m = make_map([[0, 10], [10, 255]])
        assert present_classes(m) == frozenset({0, 10})

    def test_invariant_under_identity(self, taxonomy):
        rng = np.random.default_rng(6)
        for _ in range(10):
            m = random_map(rng, 6, 6)
            out = harmonize(m, DatasetMapping.identity(taxonomy))
            assert present_classes(out) == present_classes(m)
