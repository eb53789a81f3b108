"""From a search export to PRISMA counts, with a replayable decision log."""

import tempfile
from pathlib import Path

from livingmeta.ledger import DecisionLog, Ledger, import_search_results, record_screening_decision

ledger = Ledger(title="demo review", version={"version_number": 1, "version_label": "Version 1, 01/26"})

# an export with one near-duplicate and one record lacking a year
export = "\n".join(
    ["Title,Authors,Year"]
    + [f"Study {k} of chatbot tutoring,Author {k},2024" for k in range(40)]
    + ["STUDY 3 of Chatbot Tutoring!,Author 3,2024", "Undated preprint,Someone,"]
)
report = import_search_results(export, ledger)
print(f"queued {len(report.queued)}, duplicates {report.duplicates}, quarantined {report.quarantined}")

log = DecisionLog(Path(tempfile.mkdtemp()) / "decisions.jsonl")
snapshot = ledger.to_json()


def decide(record_id, stage, decision, reason=None, study_id=None):
    record_screening_decision(ledger, record_id, stage, decision, reason, study_id)
    log.append(record_id, stage, decision, reason, study_id)


queue = report.queued
for rid in queue[10:]:
    decide(rid, "title_abstract", "exclude")
for rid in queue[:10]:
    decide(rid, "title_abstract", "include")
decide(queue[0], "fulltext", "not_retrieved")
for rid in queue[1:6]:
    decide(rid, "fulltext", "exclude", "no_control_group")
for k, rid in enumerate(queue[6:10]):
    decide(rid, "fulltext", "include", study_id=f"study{k}")

for key, value in ledger.prisma.to_dict().items():
    print(f"{key:>22}: {value}")
print("invariant problems:", ledger.prisma.problems())

# replaying the log on the pre-screening snapshot reproduces the ledger byte for byte
replayed = log.replay(Ledger.from_json(snapshot))
print("replay identical:", replayed.to_json() == ledger.to_json())
