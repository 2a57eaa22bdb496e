import pytest
from hypothesis import given, strategies as st

from indfind.errors import DataError
from indfind.features import (AGE_FEATURES, EXCLUDED_CHAPTERS, GENDER_FEATURES, FeatureDef,
                              FeatureKind, FeatureVocabulary, Role, build_vocabulary, bucket_age,
                              data_path, icd10_chapter, inclusion_code_sets, map_code,
                              rankable_features, read_mapping_file)

from conftest import write_csv

TABLE1 = data_path("table1_roles.csv")
ASTHMA = data_path("asthma_overrides.csv")


@pytest.fixture(scope="module")
def table1_vocab():
    return build_vocabulary([TABLE1], icd10_codes=["K501", "L400", "L409", "M0511", "R074", "Z00"])


def test_stems_group_codes():
    vocab = build_vocabulary(icd10_codes=["K501", "K5012"])
    assert map_code(vocab, "ICD10", "K501") == map_code(vocab, "ICD10", "K5012") == vocab.id("K50")


def test_excluded_chapters_are_unmapped():
    vocab = build_vocabulary(icd10_codes=["R074", "S001", "Z00", "K50"])
    assert map_code(vocab, "ICD10", "R07.4") is None
    assert map_code(vocab, "ICD10", "Z00") is None
    assert map_code(vocab, "ICD10", "") is None
    assert "R07" not in vocab.names and "Z00" not in vocab.names


def test_override_beats_stem():
    vocab = build_vocabulary(granular_overrides={"plaque_psoriasis": ["L400"]},
                             icd10_codes=["L400", "L409"])
    assert map_code(vocab, "ICD10", "L400") == vocab.id("plaque_psoriasis")
    assert map_code(vocab, "ICD10", "L409") == vocab.id("L40")


def test_table1_groupings(table1_vocab):
    v = table1_vocab
    assert v.map_code("ICD10", "M0511") == v.id("Rheumatoid arthritis")
    assert v.map_code("ICD10", "L400") == v.id("Plaque psoriasis")
    assert v.map_code("ICD10", "L409") == v.id("L40")
    assert v.map_code("ICD10", "K501") == v.id("Crohn's disease")
    assert len(v.referentials) == 3 and len(v.positives) == 5 and len(v.negatives) == 5
    assert not set(v.referentials) & (set(v.positives) | set(v.negatives))


def test_asthma_overrides_split_j45():
    vocab = build_vocabulary([ASTHMA], icd10_codes=["J4530", "J4541", "J4550", "J459"])
    assert vocab[vocab.map_code("ICD10", "J4541")].name == "Moderate persistent asthma"
    assert vocab[vocab.map_code("ICD10", "J459")].name == "J45"


def test_bundled_inclusion_table():
    sets = inclusion_code_sets()
    assert len(sets) == 17
    assert ("L40",) in sets


@pytest.mark.parametrize("age,label", [(18, "18-27"), (27, "18-27"), (30, "28-37"), (67, "58-67"),
                                       (68, "67+"), (70, "67+"), (99, "67+")])
def test_bucket_age(age, label):
    assert bucket_age(age) == label


def test_bucket_age_rejects_minors():
    with pytest.raises(ValueError):
        bucket_age(17)


def test_demographics_always_eight():
    vocab = build_vocabulary(icd10_codes=["K50"])
    demo = [f for f in vocab.entries if f.kind is FeatureKind.DEMOGRAPHIC]
    assert [f.name for f in demo] == list(GENDER_FEATURES + AGE_FEATURES)
    assert len(demo) == 8


@pytest.mark.parametrize("code,chapter", [("A00", "I"), ("D49", "II"), ("D50", "III"), ("H59", "VII"),
                                          ("H60", "VIII"), ("R07", "XVIII"), ("S00", "XIX"),
                                          ("T88", "XIX"), ("U07", "XXII"), ("V01", "XX"),
                                          ("Y99", "XX"), ("Z00", "XXI")])
def test_chapters(code, chapter):
    assert icd10_chapter(code) == chapter


def test_rankable_rules():
    entries = [
        FeatureDef("K50 Crohn's disease", FeatureKind.DIAGNOSIS, (("ICD10", "K50"),)),
        FeatureDef("L98 Other disorders of skin", FeatureKind.DIAGNOSIS, (("ICD10", "L98"),)),
        FeatureDef("R69 UNSPECIFIED illness", FeatureKind.DIAGNOSIS, (("ICD10", "K99"),)),
        FeatureDef("W19 fall", FeatureKind.DIAGNOSIS, (("ICD10", "W19"),)),
        FeatureDef("L40 psoriasis", FeatureKind.DIAGNOSIS, (("ICD10", "L40"),), True, Role.REFERENTIAL),
        FeatureDef("statins", FeatureKind.PRESCRIPTION, (("RX_CLASS", "C10"),)),
        FeatureDef("flagged", FeatureKind.DIAGNOSIS, (("ICD10", "B01"),), False),
    ]
    vocab = FeatureVocabulary(entries + [FeatureDef(n, FeatureKind.DEMOGRAPHIC)
                                         for n in GENDER_FEATURES + AGE_FEATURES])
    assert rankable_features(vocab) == {0}


def test_build_errors(tmp_path):
    with pytest.raises(DataError, match="empty"):
        build_vocabulary()
    with pytest.raises(DataError):
        build_vocabulary(granular_overrides={"a": ["L400"], "b": ["L400"]})
    with pytest.raises(DataError):
        FeatureDef("age_x", FeatureKind.DEMOGRAPHIC, (("ICD10", "A00"),))
    with pytest.raises(DataError):
        FeatureDef("statin", FeatureKind.PRESCRIPTION, (("RX_CLASS", "C10"),), True, Role.REFERENTIAL)
    bad = write_csv(tmp_path / "v.csv", ["x"], [])
    with pytest.raises(DataError):
        read_mapping_file(bad)


def test_vocabulary_round_trip(tmp_path, table1_vocab):
    table1_vocab.write(tmp_path / "v.csv")
    again = build_vocabulary([tmp_path / "v.csv"])
    assert again.names == table1_vocab.names
    assert [f.role for f in again.entries] == [f.role for f in table1_vocab.entries]


# ---------------------------------------------------------------- properties

letters = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
icd_codes = st.builds(lambda a, d, rest: a + d + rest, st.sampled_from(letters),
                      st.text("0123456789", min_size=2, max_size=2),
                      st.text("0123456789AX", max_size=3))


@given(st.lists(icd_codes, min_size=1, max_size=30))
def test_partition_property(codes):
    """Without overrides every non-excluded code maps to its own 3-character stem."""
    kept = [c for c in codes if icd10_chapter(c) not in EXCLUDED_CHAPTERS]
    if not kept:
        return
    vocab = build_vocabulary(icd10_codes=codes)
    for c in codes:
        fid = vocab.map_code("ICD10", c)
        if icd10_chapter(c) in EXCLUDED_CHAPTERS:
            assert fid is None
        else:
            assert vocab[fid].name == c[:3]


@given(st.lists(st.text("0123456789", min_size=1, max_size=3), min_size=1, max_size=6, unique=True),
       st.lists(icd_codes, min_size=1, max_size=20))
def test_longest_prefix_resolution(suffixes, codes):
    """The matched prefix is the longest declared prefix of the code (brute force)."""
    overrides = {f"g{i}": ["K" + s] for i, s in enumerate(suffixes)}
    vocab = build_vocabulary(granular_overrides=overrides, icd10_codes=codes + ["K00"])
    declared = [p for f in vocab.entries for s, p in f.code_patterns if s == "ICD10"]
    for c in codes + ["K" + s + "9" for s in suffixes]:
        fid = vocab.map_code("ICD10", c)
        if icd10_chapter(c) in EXCLUDED_CHAPTERS:
            assert fid is None
            continue
        matches = [p for p in declared if c.startswith(p)]
        if not matches:
            assert fid is None
            continue
        longest = max(matches, key=len)
        assert vocab.matched_prefix("ICD10", c) == longest
        assert ("ICD10", longest) in vocab[fid].code_patterns
        assert vocab.map_code("ICD10", c) == fid
