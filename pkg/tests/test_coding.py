import pytest
from hypothesis import given, strategies as st

from livingmeta.coding import MISSING, SCHEMA, CodingError, ModeratorCodes, reconcile_codes

FULL = {"isced_level": ["2", "3"], "age_mean": 13.5, "school_type": "general", "location": "europe",
        "prior_knowledge": "mixed", "ses": "mixed", "content_area": ["C", "Q"],
        "learning_arrangement": "individual", "instructional_context": "classroom",
        "assessment_stakes": "low", "ai_purpose": ["instructor"], "ai_role": ["supplement"],
        "teacher_autonomy": "partial", "ai_familiarity": "some", "familiarization": "brief",
        "duration_weeks": 6, "intensity_minutes": 90, "tool_type": "custom_chatbot",
        "ai_system_modification": [2], "knowledge_type": "procedural"}


def test_schema_covers_four_groups():
    assert {f.group for f in SCHEMA.values()} == {"participant", "context", "intervention", "outcome"}


def test_unfilled_fields_become_missing():
    codes = ModeratorCodes({"ai_role": ["replacement"]})
    assert codes["ai_role"] == ["replacement"]
    assert codes["ses"] == MISSING and not codes.coded("ses")


@pytest.mark.parametrize("field, value", [("ai_role", ["sometimes"]), ("ses", "very high"),
                                          ("age_mean", "twelve"), ("isced_level", []),
                                          ("nonexistent", "x")])
def test_free_form_values_rejected(field, value):
    with pytest.raises(CodingError):
        ModeratorCodes({field: value})


def test_sets_are_normalized():
    assert ModeratorCodes({"content_area": ["U", "C", "C"]})["content_area"] == ["C", "U"]


def test_identical_codings_agree():
    a, b = ModeratorCodes(FULL), ModeratorCodes(FULL)
    rec = reconcile_codes(a, b, "s1")
    assert rec.conflicts == {} and rec.analyzable
    assert rec.consensus().values == a.values


def test_one_disagreement_among_twenty():
    coded = {k: v for k, v in FULL.items()}
    assert len(coded) == 20
    other = dict(coded, ses="low")
    rec = reconcile_codes(ModeratorCodes(coded), ModeratorCodes(other), "s1")
    agreed_coded = [k for k in rec.agreed if k in coded]
    assert len(agreed_coded) == 19
    assert rec.conflict_list() == [{"field": "ses", "rater_a": "mixed", "rater_b": "low"}]
    assert not rec.analyzable
    with pytest.raises(CodingError):
        rec.consensus()


def test_resolving_every_conflict_makes_study_analyzable():
    other = dict(FULL, ses="low", ai_role=["replacement"])
    rec = reconcile_codes(ModeratorCodes(FULL), ModeratorCodes(other), "s1")
    rec.resolve({"ses": "low"})
    assert rec.open_conflicts == ["ai_role"]
    rec.resolve({"ai_role": ["supplement", "replacement"]})
    assert rec.analyzable
    assert rec.consensus()["ai_role"] == ["supplement", "replacement"]
    with pytest.raises(CodingError):
        rec.resolve({"location": "asia"})
    with pytest.raises(CodingError):
        reconcile_codes(ModeratorCodes(FULL), ModeratorCodes(other), "s1").resolve({"ses": "bogus"})


def test_schema_version_mismatch():
    with pytest.raises(CodingError):
        reconcile_codes(ModeratorCodes(FULL), ModeratorCodes(FULL, schema_version=2))


enum_fields = [k for k, f in SCHEMA.items() if f.kind == "enum"]


@given(st.sampled_from(enum_fields), st.data())
def test_conflicts_are_exactly_the_differing_fields(field, data):
    levels = SCHEMA[field].levels
    va = data.draw(st.sampled_from(levels + (MISSING,)))
    vb = data.draw(st.sampled_from(levels + (MISSING,)))
    rec = reconcile_codes(ModeratorCodes({field: va}), ModeratorCodes({field: vb}))
    assert set(rec.conflicts) == ({field} if va != vb else set())
    assert set(rec.agreed) | set(rec.conflicts) == set(SCHEMA)
