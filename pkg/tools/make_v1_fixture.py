"""Regenerate src/livingmeta/data/v1_ledger.json from the first-version study overview.

Only study-level pooled g and total n are published, so arm statistics are
reconstructed: equal arms (treatment gets the odd participant), unit SDs,
and a treatment mean chosen so the recomputed Hedges' g equals the pooled
value exactly. Every coded effect of a study carries that pooled value on a
separate outcome label at timepoint 0.
"""

import datetime as dt
from pathlib import Path

from livingmeta.coding import AI_PURPOSES, ModeratorCodes
from livingmeta.effects import hedges_correction
from livingmeta.ledger import (ArmData, ArmOutcome, EffectSpec, Ledger, PrismaFlow,
                               StudyRecord, validate_ledger)

SEARCH_STRING = (
    '("generative AI" OR "generative Artificial Intelligence" OR genAI* OR "large language model*" '
    'OR LLM* OR "chatbot*" OR "AI tutor*" OR "AI assistant*" OR ChatGPT OR "Chat GPT") AND '
    '(educat* OR teach* OR instruct* OR pedagogy OR curriculum OR classroom OR student* OR school* '
    'OR "higher education" OR "K-12") AND (math* OR algebra OR geometry OR arithmetic OR calculus '
    'OR "word problem*" OR numeracy OR fraction* OR "quantitative reasoning") AND (intervention* '
    'OR experiment* OR "control group" OR RCT OR "randomized control*" OR treatment OR pretest OR '
    'posttest OR (pre* AND post*))')

# study, date, format, n, isced, content, purpose, role, modification, n_effects, pooled g
ROWS = """\
Bastani et al. (2025)|25.06.2025|jour|943|2;3|C;Q;U|1;2;3;4|sup|1;2|8|0.00
Bešlić et al. (2024)|03.07.2024|proc|86|2|Q|3|sup|2|1|-0.40
Canonigo (2024)|13.09.2024|jour|60|3|C|3|rep|1|1|1.62
Cheng et al. (2024)|31.01.2024|jour|79|2;3|C;Q;S|2;3|rep|3|1|-0.34
El-Shara et al. (2025)|18.04.2025|jour|94|6|C|2;3|rep|1|2|0.59
Fardian et al. (2025)|15.04.2025|jour|30|6|C|2;3|rep;sup|1|2|0.34
Henkel et al. (2024)|05.05.2024|proc|477|1;2|C;Q|2;3|rep|3|1|0.34
Kretzschmar and Seitz (2024)|30.07.2024|proc|275|3;2|C|3|rep|3|2|0.09
Lademann et al. (2025)|07.05.2025|jour|214|2|C|3|rep|2|1|0.00
Liu et al. (2025)|25.04.2025|proc|90|1|S|3|sup|2|1|1.04
Pardos and Bhandari (2024)|24.05.2024|jour|274|adults|C;U|3|sup;rep|1|2|0.30
Serrano Heredia et al. (2025)|03.06.2025|proc|550|6|C|3|rep|3|2|0.26
Steinbach et al. (2025)|17.07.2025|proc|131|adults|U|3|sup|2|1|0.34
Wahba et al. (2024)|01.07.2024|jour|56|6|U|2;3|rep|1|1|1.38
Xing et al. (2025)|17.04.2025|jour|212|2|C;Q;S|2;3|sup|2|1|0.46
"""

FORMAT = {"jour": "journal", "proc": "proceedings"}
ROLE = {"sup": "supplement", "rep": "replacement"}
NOTE = ("Arm statistics reconstructed from the pooled study effect and total sample size "
        "(equal arms, unit SDs); control condition type not reported.")


def study_id(citation):
    first = citation.split()[0].lower().replace("š", "s").replace("ć", "c").replace("-", "")
    return first + citation[-5:-1]


def split(s):
    return [t.strip() for t in s.split(";")]


def build_study(row):
    cit, date, fmt, n, isced, content, purpose, role, mod, k, g = row.split("|")
    n, k, g = int(n), int(k), float(g)
    sid = study_id(cit)
    n_t, n_c = (n + 1) // 2, n // 2
    d = g / hedges_correction(n_t + n_c - 2).J
    outcomes = [f"outcome_{i + 1}" for i in range(k)]
    arms = [ArmData("ai", "treatment", n_t, [ArmOutcome(o, 0, d, 1.0) for o in outcomes]),
            ArmData("control", "control_active", n_c, [ArmOutcome(o, 0, 0.0, 1.0) for o in outcomes])]
    effects = [EffectSpec(f"{sid}_e{i + 1}", "ai", "control", o) for i, o in enumerate(outcomes)]
    codes = ModeratorCodes({
        "isced_level": split(isced), "content_area": split(content),
        "ai_purpose": [AI_PURPOSES[int(p) - 1] for p in split(purpose)],
        "ai_role": [ROLE[r] for r in split(role)],
        "ai_system_modification": [int(m) for m in split(mod)]})
    return StudyRecord(sid, cit, dt.datetime.strptime(date, "%d.%m.%Y").date(), FORMAT[fmt], n,
                       arms, effects, codes, note=NOTE)


def build():
    ledger = Ledger(
        title="Living meta-analysis: generative AI interventions and mathematics learning",
        version={"version_number": 1, "version_label": "Version 1, 01/26",
                 "version_date": "2026-01-01", "search_date": "2025-12-01",
                 "next_search_date": "2026-02-01", "next_version_date": "2026-03-01",
                 "status": "ongoing", "changelog": ["This is the first version."],
                 "ledger_snapshot_ref": None, "results_snapshot_ref": None},
        search={"date": "2025-12-01", "database": "SCOPUS", "search_string": SEARCH_STRING},
        prisma=PrismaFlow(identified=932, screened=932, sought_fulltext=45, not_retrieved=1,
                          assessed=44, excluded_with_reasons={"unspecified": 29},
                          included_studies=15, included_reports=15, stage="complete"),
        studies=[build_study(r) for r in ROWS.strip().splitlines()])
    return validate_ledger(ledger)


if __name__ == "__main__":
    out = Path(__file__).resolve().parents[1] / "src" / "livingmeta" / "data" / "v1_ledger.json"
    out.write_text(build().to_json(), encoding="utf-8")
    print(f"wrote {out}")
