"""Living mode: gating, version bumps, diffs and the accrual trajectory."""

import copy
import datetime as dt
import tempfile

from livingmeta.ledger import load_v1_fixture
from livingmeta.living import SnapshotStore, VersionRecord, advance_ledger, cumulative_fit, diff_versions, gate_all
from livingmeta.sampler import McmcConfig

ledger = load_v1_fixture()
print(ledger.version["version_label"], "-", ledger.version["changelog"][0])

# moderators wait until every level holds 10 studies (20 for continuous ones)
for g in gate_all(ledger):
    if g.kind == "categorical" and g.study_count:
        print(f"  {g.moderator_id:<24} {g.counts_text():<60} {'eligible' if g.eligible else g.deficit}")

# a new version with two added studies; versions are snapshotted by content hash
store = SnapshotStore(tempfile.mkdtemp())
advance_ledger(ledger, store, ["Two studies added after the February search."],
               {"parameters": {"mu": {"mean": 0.31}}},
               version_date=dt.date(2026, 3, 1), search_date=dt.date(2026, 2, 15))
for k in range(2):
    extra = copy.deepcopy(ledger.studies[k])
    extra.study_id = f"new{k}"
    ledger.studies.append(extra)
advance_ledger(ledger, store, ["No new studies."], {"parameters": {"mu": {"mean": 0.33}}},
               version_date=dt.date(2026, 6, 1), search_date=dt.date(2026, 5, 15))
v1, v2 = (VersionRecord.from_dict(v) for v in ledger.history)
print("\n".join(diff_versions(v1, v2, store).lines()))
print("now at", ledger.version["version_label"])

# cumulative refits, one per publication date
traj = cumulative_fit(load_v1_fixture(), cfg=McmcConfig(warmup_iterations=300, sampling_iterations=500))
for p in traj.points:
    print(f"{p.cutoff}  k={p.n_studies:>2}  median {p.median:+.3f}  [{p.lo95:+.2f}, {p.hi95:+.2f}]")
