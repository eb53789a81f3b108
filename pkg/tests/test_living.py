import copy
import datetime as dt

import pytest
from hypothesis import given, strategies as st

from livingmeta.inference import summarize, fit
from livingmeta.ledger import load_v1_fixture
from livingmeta.living import (FIRST_VERSION_NOTE, NO_CHANGES, IntegrityError, SnapshotStore, VersionError,
                               VersionRecord, advance_ledger, bump_version, cumulative_fit, diff_ledgers,
                               diff_versions, format_label, gate_from_counts, gate_moderator, parse_label,
                               retire, retire_ledger)
from livingmeta.effects import compute_effects
from livingmeta.model import MetaData
from livingmeta.sampler import McmcConfig

TINY = McmcConfig(n_chains=2, warmup_iterations=100, sampling_iterations=100, master_seed=5)


# -- gating ----------------------------------------------------------------------

def test_gate_boundaries():
    assert gate_from_counts("m", "categorical", [12, 10]).eligible
    g = gate_from_counts("m", "categorical", {"supplement": 10, "replacement": 9})
    assert not g.eligible and "'replacement'" in g.deficit
    assert gate_from_counts("m", "continuous", 20).eligible
    assert not gate_from_counts("m", "continuous", 19).eligible
    assert not gate_from_counts("m", "categorical", [30]).eligible


counts = st.lists(st.integers(0, 40), min_size=2, max_size=6)


@given(counts, st.data())
def test_gate_is_monotone_in_counts(cs, data):
    more = [c + data.draw(st.integers(0, 10)) for c in cs]
    if gate_from_counts("m", "categorical", cs).eligible:
        assert gate_from_counts("m", "categorical", more).eligible


@given(st.integers(0, 100), st.integers(0, 10))
def test_continuous_gate_is_monotone(n, extra):
    if gate_from_counts("m", "continuous", n).eligible:
        assert gate_from_counts("m", "continuous", n + extra).eligible


def test_v1_ai_role_not_eligible():
    g = gate_moderator(load_v1_fixture(), "ai_role")
    assert not g.eligible
    # counted by hand from the role column of the study table
    assert g.level_counts == {"supplement": 7, "replacement": 10}
    assert "supplement" in g.deficit


def test_gate_on_level_subset_and_missing_codes():
    ledger = load_v1_fixture()
    g = gate_moderator(ledger, "isced_level", levels=["2", "3"])
    assert set(g.level_counts) == {"2", "3"}
    assert gate_moderator(ledger, "age_mean").study_count == 0


# -- versions --------------------------------------------------------------------

def v1():
    return VersionRecord.first(dt.date(2026, 1, 1), dt.date(2025, 12, 1), dt.date(2026, 2, 1),
                               dt.date(2026, 3, 1))


def test_labels():
    assert v1().version_label == "Version 1, 01/26"
    assert v1().changelog == [FIRST_VERSION_NOTE]
    assert parse_label("Version 12, 11/27") == (12, 11, 27)
    for bad in ("Version 0, 01/26", "version 1, 01/26", "Version 1, 13/26", "Version 1, 1/26"):
        with pytest.raises(VersionError):
            parse_label(bad)


@given(st.integers(1, 999), st.dates(dt.date(2000, 1, 1), dt.date(2099, 12, 31)))
def test_label_round_trip(n, d):
    assert parse_label(format_label(n, d)) == (n, d.month, d.year % 100)


def test_bump_uses_scheduled_date():
    v2 = bump_version(v1(), ["Two studies added."])
    assert v2.version_label == "Version 2, 03/26" and v2.status == "ongoing"
    with pytest.raises(VersionError):
        bump_version(v1(), [])
    assert bump_version(v1(), [NO_CHANGES]).changelog == [NO_CHANGES]


def test_retire_is_final():
    r = retire(v1())
    assert r.status == "retired" and r.next_version_date is None
    with pytest.raises(VersionError):
        bump_version(r, ["x"])
    with pytest.raises(VersionError):
        retire(r)


def test_version_record_round_trip():
    v = v1()
    assert VersionRecord.from_dict(v.to_dict()) == v


# -- snapshots and diffs ------------------------------------------------------------

def test_snapshot_store_detects_tampering(tmp_path):
    store = SnapshotStore(tmp_path)
    ref = store.put(b'{"a": 1}\n')
    assert store.get(ref) == b'{"a": 1}\n'
    (tmp_path / f"{ref}.json").write_bytes(b'{"a": 2}\n')
    with pytest.raises(IntegrityError):
        store.get(ref)
    with pytest.raises(IntegrityError):
        store.get("0" * 64)


def test_identical_snapshots_give_empty_diff():
    a = load_v1_fixture()
    rep = diff_ledgers(a, copy.deepcopy(a))
    assert rep.empty and rep.lines() == []


def _two_new_studies(ledger):
    out = copy.deepcopy(ledger)
    for k, src in enumerate(out.studies[:2]):
        s = copy.deepcopy(src)
        s.study_id = f"new{k}"
        out.studies.append(s)
    return out


def test_added_studies_and_pooled_delta():
    a = load_v1_fixture()
    b = _two_new_studies(a)
    res_a = {"parameters": {"mu": {"mean": 0.31}}}
    res_b = {"summary": {"parameters": {"mu": {"mean": 0.29}}}}
    rep = diff_ledgers(a, b, res_a, res_b)
    assert rep.studies_added == ["new0", "new1"] and rep.reincluded == []
    assert rep.pooled_mu_delta == pytest.approx(-0.02)
    assert rep.effects_delta == len(a.studies[0].effects) + len(a.studies[1].effects)


def test_reinclusion_flagged():
    a = load_v1_fixture()
    a.exclusions.append({"record_id": "v1-00099", "study_id": "new0", "reason": "insufficient_statistics",
                         "version": 1})
    rep = diff_ledgers(a, _two_new_studies(a))
    assert rep.reincluded == ["new0"] and rep.studies_added == ["new1"]
    assert any("Re-included" in line for line in rep.lines())


def test_advance_then_diff_versions(tmp_path):
    store = SnapshotStore(tmp_path)
    ledger = load_v1_fixture()
    advance_ledger(ledger, store, ["Two studies added."], {"parameters": {"mu": {"mean": 0.31}}})
    assert ledger.version["version_label"] == "Version 2, 03/26"
    v1_record = VersionRecord.from_dict(ledger.history[0])
    ledger.studies = _two_new_studies(ledger).studies
    advance_ledger(ledger, store, ["Two more."], {"parameters": {"mu": {"mean": 0.33}}},
                   version_date=dt.date(2026, 5, 1))
    v2_record = VersionRecord.from_dict(ledger.history[1])
    rep = diff_versions(v1_record, v2_record, store)
    assert rep.studies_added == ["new0", "new1"]
    assert rep.pooled_mu_delta == pytest.approx(0.02)
    with pytest.raises(VersionError):
        diff_versions(v2_record, v1_record, store)
    (tmp_path / f"{v1_record.ledger_snapshot_ref}.json").write_text("{}")
    with pytest.raises(IntegrityError):
        diff_versions(v1_record, v2_record, store)
    retire_ledger(ledger)
    assert ledger.version["status"] == "retired"


# -- cumulative ----------------------------------------------------------------------

def test_cumulative_single_study_equals_full_fit():
    ledger = load_v1_fixture()
    ledger.studies = [s for s in ledger.studies if s.study_id == "bastani2025"]
    traj = cumulative_fit(ledger, cfg=TINY)
    assert len(traj.points) == 1
    full = summarize(fit(MetaData.from_effects(compute_effects(ledger.studies)), cfg=TINY))
    assert traj.points[0].mean == full["mu"].mean
    header = traj.to_csv().splitlines()[0]
    assert header == "date,n_studies,median,lo95,hi95,precision"


def test_version_record_optional_dates_and_missing_keys():
    v = VersionRecord.from_dict({"version_number": 1, "version_label": "Version 1, 01/26",
                                 "version_date": "2026-01-01"})
    assert v.next_version_date is None
    with pytest.raises(VersionError):
        VersionRecord.from_dict({"version_number": 1, "version_label": "Version 1, 01/26"})
