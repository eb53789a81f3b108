"""Versioned study ledger: search records, screening decisions, PRISMA counts
and included studies with their arm statistics and moderator codes.

The ledger is one JSON document per version with a stable field order, so
two ledgers built from the same inputs serialize to identical bytes.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field, fields
from pathlib import Path

from .coding import CONDITIONS, MISSING, PUBLICATION_FORMATS, CodingError, ModeratorCodes
from .effects import DERIVATIONS

LEDGER_SCHEMA_VERSION = 1

STAGES = ("title_abstract", "fulltext")
DECISIONS = {"title_abstract": ("include", "exclude"),
             "fulltext": ("include", "exclude", "not_retrieved")}
EXCLUSION_REASONS = ("wrong_population", "wrong_intervention", "no_generative_ai", "not_mathematics",
                     "no_control_group", "insufficient_statistics", "not_empirical", "duplicate_report",
                     "unspecified")
REINCLUSION_RULES = {"now_retrieved": "not_retrieved", "author_data": "excluded_fulltext"}


class LedgerError(ValueError):
    pass


class ImportFormatError(LedgerError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ScreeningError(LedgerError):
    pass


class ValidationError(LedgerError):
    def __init__(self, problems):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


def _date(s):
    if s is None or isinstance(s, dt.date):
        return s
    return dt.date.fromisoformat(s)


def _iso(d):
    return None if d is None else d.isoformat()


def _drop_none(d):
    return {k: v for k, v in d.items() if v is not None}


# -- study data -----------------------------------------------------------------

@dataclass
class ArmOutcome:
    outcome: str
    timepoint: int
    mean: float
    sd: float
    pre_mean: float | None = None
    pre_sd: float | None = None


@dataclass
class ArmData:
    arm_id: str
    condition: str
    n: int
    outcomes: list = field(default_factory=list)

    @classmethod
    def from_dict(cls, d):
        return cls(d["arm_id"], d["condition"], int(d["n"]),
                   [ArmOutcome(**o) for o in d.get("outcomes", [])])

    def to_dict(self):
        return {"arm_id": self.arm_id, "condition": self.condition, "n": self.n,
                "outcomes": [_drop_none(vars(o)) for o in self.outcomes]}


@dataclass
class EffectSpec:
    """How to compute one coded effect from a study's arms.

    The effect is ``first_arm`` minus ``second_arm``; ``ai_arm_is_first``
    tells orientation whether to flip the sign.
    """

    effect_id: str
    first_arm: str
    second_arm: str
    outcome: str
    timepoint: int = 0
    derivation: str = "posttest"
    ai_arm_is_first: bool = True
    analyzable: bool = True
    r_prepost: float | None = None
    same_scale: bool = True
    statistic: dict | None = None

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_dict(self):
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        return _drop_none(out)


@dataclass
class StudyRecord:
    study_id: str
    citation: str
    publication_date: dt.date
    publication_format: str
    n_participants: int
    arms: list
    effects: list
    codes: ModeratorCodes
    open_conflicts: list = field(default_factory=list)
    record_id: str | None = None
    note: str | None = None

    # Table-level moderator views
    @property
    def isced_levels(self):
        return self.codes["isced_level"]

    @property
    def content_areas(self):
        return self.codes["content_area"]

    @property
    def ai_purpose(self):
        return self.codes["ai_purpose"]

    @property
    def ai_role(self):
        return self.codes["ai_role"]

    @property
    def ai_system_modification(self):
        return self.codes["ai_system_modification"]

    @classmethod
    def from_dict(cls, d):
        return cls(study_id=d["study_id"], citation=d["citation"],
                   publication_date=_date(d["publication_date"]),
                   publication_format=d["publication_format"],
                   n_participants=int(d["n_participants"]),
                   arms=[ArmData.from_dict(a) for a in d["arms"]],
                   effects=[EffectSpec.from_dict(e) for e in d["effects"]],
                   codes=ModeratorCodes.from_dict(d["codes"]),
                   open_conflicts=list(d.get("open_conflicts", [])),
                   record_id=d.get("record_id"), note=d.get("note"))

    def to_dict(self):
        return _drop_none({
            "study_id": self.study_id, "citation": self.citation,
            "publication_date": _iso(self.publication_date),
            "publication_format": self.publication_format,
            "n_participants": self.n_participants,
            "arms": [a.to_dict() for a in self.arms],
            "effects": [e.to_dict() for e in self.effects],
            "codes": self.codes.to_dict(),
            "open_conflicts": list(self.open_conflicts),
            "record_id": self.record_id, "note": self.note})


# -- screening ------------------------------------------------------------------

@dataclass
class SearchRecord:
    record_id: str
    title: str
    year: int | None = None
    authors: str = ""
    abstract: str = ""
    doi: str = ""
    screen_version: int = 1
    status: str = "queued"
    duplicate_of: str | None = None
    reason: str | None = None
    study_id: str | None = None
    reinclusion: str | None = None

    @property
    def stage(self):
        return {"queued": "title_abstract", "sought": "fulltext"}.get(self.status)

    @property
    def dedup_key(self):
        return dedup_key(self.title, self.year)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_dict(self):
        return _drop_none({f.name: getattr(self, f.name) for f in fields(self)})


@dataclass
class PrismaFlow:
    identified: int = 0
    duplicates_removed: int = 0
    quarantined: int = 0
    screened: int = 0
    awaiting_screening: int = 0
    sought_fulltext: int = 0
    not_retrieved: int = 0
    awaiting_assessment: int = 0
    assessed: int = 0
    excluded_with_reasons: dict = field(default_factory=dict)
    included_studies: int = 0
    included_reports: int = 0
    stage: str = "identification"

    def problems(self):
        out = []
        counts = {f.name: getattr(self, f.name) for f in fields(self)
                  if f.name not in ("excluded_with_reasons", "stage")}
        out += [f"{k} < 0" for k, v in counts.items() if v < 0]
        out += [f"excluded[{k}] < 0" for k, v in self.excluded_with_reasons.items() if v < 0]
        if self.screened != self.identified - self.duplicates_removed - self.quarantined:
            out.append("screened != identified - duplicates_removed - quarantined")
        if self.sought_fulltext > self.screened - self.awaiting_screening:
            out.append("sought_fulltext exceeds screened records")
        if self.assessed != self.sought_fulltext - self.not_retrieved - self.awaiting_assessment:
            out.append("assessed != sought_fulltext - not_retrieved - awaiting_assessment")
        if self.included_studies > self.assessed:
            out.append("included_studies > assessed")
        if self.included_studies > self.included_reports:
            out.append("included_studies > included_reports")
        if sum(self.excluded_with_reasons.values()) != self.assessed - self.included_reports:
            out.append("excluded_with_reasons does not sum to assessed - included_reports")
        return out

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["excluded_with_reasons"] = dict(sorted(self.excluded_with_reasons.items()))
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def prisma_from_records(records, version: int, stage: str) -> PrismaFlow:
    recs = [r for r in records if r.screen_version == version]
    c = Counter(r.status for r in recs)
    sought = c["sought"] + c["not_retrieved"] + c["excluded_fulltext"] + c["included"]
    flow = PrismaFlow(
        identified=len(recs), duplicates_removed=c["duplicate"], quarantined=c["quarantined"],
        awaiting_screening=c["queued"], sought_fulltext=sought, not_retrieved=c["not_retrieved"],
        awaiting_assessment=c["sought"],
        excluded_with_reasons=dict(Counter(r.reason for r in recs if r.status == "excluded_fulltext")),
        included_reports=c["included"],
        included_studies=len({r.study_id or r.record_id for r in recs if r.status == "included"}),
        stage=stage)
    flow.screened = flow.identified - flow.duplicates_removed - flow.quarantined
    flow.assessed = flow.sought_fulltext - flow.not_retrieved - flow.awaiting_assessment
    return flow


# -- ledger -----------------------------------------------------------------------

@dataclass
class Ledger:
    title: str = ""
    version: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    search: dict = field(default_factory=dict)
    prisma: PrismaFlow = field(default_factory=PrismaFlow)
    records: list = field(default_factory=list)
    studies: list = field(default_factory=list)
    exclusions: list = field(default_factory=list)
    schema_version: int = LEDGER_SCHEMA_VERSION

    @property
    def version_number(self) -> int:
        return int(self.version.get("version_number", 1))

    @property
    def search_date(self):
        return _date(self.search.get("date"))

    def record(self, record_id) -> SearchRecord:
        for r in self.records:
            if r.record_id == record_id:
                return r
        raise ScreeningError(f"unknown record {record_id!r}")

    def study(self, study_id) -> StudyRecord:
        for s in self.studies:
            if s.study_id == study_id:
                return s
        raise LedgerError(f"unknown study {study_id!r}")

    def to_dict(self):
        return {"schema_version": self.schema_version, "title": self.title,
                "version": self.version, "history": self.history, "search": self.search,
                "prisma": self.prisma.to_dict(),
                "records": [r.to_dict() for r in self.records],
                "studies": [s.to_dict() for s in self.studies],
                "exclusions": self.exclusions}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != LEDGER_SCHEMA_VERSION:
            raise LedgerError(f"unsupported ledger schema version {d.get('schema_version')!r}")
        return cls(title=d.get("title", ""), version=d.get("version", {}),
                   history=d.get("history", []), search=d.get("search", {}),
                   prisma=PrismaFlow.from_dict(d.get("prisma", {})),
                   records=[SearchRecord.from_dict(r) for r in d.get("records", [])],
                   studies=[StudyRecord.from_dict(s) for s in d.get("studies", [])],
                   exclusions=d.get("exclusions", []))

    @classmethod
    def from_json(cls, text: str):
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def save(self, path):
        Path(path).write_text(self.to_json(), encoding="utf-8")


def load_v1_fixture() -> Ledger:
    """The shipped first-version ledger (15 studies, 27 coded effects)."""
    from importlib import resources
    return Ledger.from_json(resources.files("livingmeta").joinpath("data/v1_ledger.json")
                            .read_text(encoding="utf-8"))


# -- import -----------------------------------------------------------------------

def dedup_key(title: str, year) -> tuple:
    """Case-folded, punctuation-free, whitespace-collapsed title plus year."""
    t = "".join(ch for ch in unicodedata.normalize("NFKC", title or "").casefold()
                if not unicodedata.category(ch).startswith("P"))
    return (" ".join(t.split()), year)


_YEAR = re.compile(r"(1[89]\d\d|20\d\d)")
_CSV_ALIASES = {"title": ("title", "document title", "article title"),
                "authors": ("authors", "author", "author(s)"),
                "year": ("year", "publication year", "py", "date"),
                "abstract": ("abstract", "ab"),
                "doi": ("doi",)}
_RIS_TAGS = {"TI": "title", "T1": "title", "AU": "authors", "A1": "authors", "PY": "year",
             "Y1": "year", "DA": "year", "AB": "abstract", "N2": "abstract", "DO": "doi"}
_RIS_LINE = re.compile(r"^([A-Z][A-Z0-9])  -( (.*))?$")


def _year(value):
    m = _YEAR.search(str(value or ""))
    return int(m.group(1)) if m else None


def parse_csv_export(text: str):
    """Rows of an exported CSV as (line_number, fields) pairs."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        return []
    except csv.Error as exc:
        raise ImportFormatError(1, str(exc)) from None
    cols = {}
    lower = [h.strip().lower() for h in header]
    for key, names in _CSV_ALIASES.items():
        for i, h in enumerate(lower):
            if h in names:
                cols[key] = i
                break
    if "title" not in cols:
        raise ImportFormatError(1, "no title column in header")
    out = []
    try:
        for row in reader:
            line = reader.line_num
            if not any(c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ImportFormatError(line, f"expected {len(header)} fields, found {len(row)}")
            rec = {k: row[i].strip() for k, i in cols.items()}
            out.append((line, rec))
    except csv.Error as exc:
        raise ImportFormatError(reader.line_num, str(exc)) from None
    return out


def parse_ris_export(text: str):
    out, cur, start = [], None, None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.rstrip()
        if not line.strip():
            continue
        m = _RIS_LINE.match(line)
        if not m:
            raise ImportFormatError(lineno, f"not a tagged line: {line[:40]!r}")
        tag, value = m.group(1), (m.group(3) or "").strip()
        if tag == "TY":
            if cur is not None:
                raise ImportFormatError(lineno, "TY before ER of the previous record")
            cur, start = {}, lineno
            continue
        if cur is None:
            raise ImportFormatError(lineno, f"tag {tag} outside a record")
        if tag == "ER":
            out.append((start, cur))
            cur = None
            continue
        key = _RIS_TAGS.get(tag)
        if key == "authors":
            cur["authors"] = "; ".join(filter(None, [cur.get("authors", ""), value]))
        elif key and key not in cur:
            cur[key] = value
    if cur is not None:
        raise ImportFormatError(start, "record not terminated by ER")
    return out


@dataclass
class ImportReport:
    queued: list = field(default_factory=list)
    duplicates: list = field(default_factory=list)       # (record_id, duplicate_of)
    quarantined: list = field(default_factory=list)
    reinclusion_candidates: list = field(default_factory=list)

    def to_dict(self):
        return {"queued": self.queued, "duplicates": [list(d) for d in self.duplicates],
                "quarantined": self.quarantined,
                "reinclusion_candidates": self.reinclusion_candidates}


def import_search_results(export_text: str, ledger: Ledger, fmt: str | None = None) -> ImportReport:
    """Add exported search records to ``ledger`` as a title/abstract queue.

    Duplicates (by :func:`dedup_key`) of earlier records, in this export or
    any previous version, are flagged rather than queued. Prior records that
    could not be retrieved are listed as re-inclusion candidates but stay
    where they are until reopened with :func:`reopen_record`.
    """
    if fmt is None:
        fmt = "ris" if re.match(r"\s*TY  -", export_text) else "csv"
    rows = parse_ris_export(export_text) if fmt == "ris" else parse_csv_export(export_text)
    version = ledger.version_number
    seen = {r.dedup_key: r for r in ledger.records if r.status not in ("duplicate", "quarantined")}
    existing = sum(1 for r in ledger.records if r.screen_version == version)
    report = ImportReport()
    for k, (line, rec) in enumerate(rows):
        rid = f"v{version}-{existing + k + 1:05d}"
        r = SearchRecord(record_id=rid, title=rec.get("title", ""), year=_year(rec.get("year")),
                         authors=rec.get("authors", ""), abstract=rec.get("abstract", ""),
                         doi=rec.get("doi", ""), screen_version=version)
        if not r.title:
            raise ImportFormatError(line, "record without a title")
        if r.year is None:
            r.status = "quarantined"
            report.quarantined.append(rid)
        elif r.dedup_key in seen:
            prior = seen[r.dedup_key]
            r.status, r.duplicate_of = "duplicate", prior.record_id
            report.duplicates.append((rid, prior.record_id))
            if prior.status == "not_retrieved" and prior.screen_version < version:
                report.reinclusion_candidates.append(prior.record_id)
        else:
            seen[r.dedup_key] = r
            report.queued.append(rid)
        ledger.records.append(r)
    _refresh_prisma(ledger, ledger.prisma.stage)
    return report


def _refresh_prisma(ledger, stage):
    if ledger.records:
        ledger.prisma = prisma_from_records(ledger.records, ledger.version_number, stage)
    else:
        ledger.prisma.stage = stage


def record_screening_decision(ledger: Ledger, record_id, stage, decision, reason=None,
                              study_id=None) -> PrismaFlow:
    """Apply one screening decision; returns the updated PRISMA counts.

    Decisions are final within a version: a record leaves a stage once it
    has been decided there.
    """
    if stage not in STAGES:
        raise ScreeningError(f"unknown stage {stage!r}")
    if decision not in DECISIONS[stage]:
        raise ScreeningError(f"decision {decision!r} not valid at stage {stage}")
    r = ledger.record(record_id)
    if r.screen_version != ledger.version_number:
        raise ScreeningError(f"record {record_id} belongs to version {r.screen_version}")
    if r.stage != stage:
        raise ScreeningError(f"record {record_id} is not at stage {stage} (status {r.status})")
    if stage == "title_abstract":
        r.status = "sought" if decision == "include" else "excluded_title_abstract"
        r.reason = reason if decision == "exclude" else None
    elif decision == "include":
        r.status, r.study_id = "included", study_id or r.study_id
    elif decision == "not_retrieved":
        r.status = "not_retrieved"
    else:
        reason = reason or "unspecified"
        if reason not in EXCLUSION_REASONS:
            raise ScreeningError(f"unknown exclusion reason {reason!r}")
        r.status, r.reason = "excluded_fulltext", reason
        if study_id:
            r.study_id = study_id
        ledger.exclusions.append({"record_id": r.record_id, "study_id": r.study_id,
                                  "reason": reason, "version": ledger.version_number})
    _refresh_prisma(ledger, stage)
    return ledger.prisma


def apply_decision_batch(ledger: Ledger, stage, decisions) -> PrismaFlow:
    """Apply a batch at one stage; an empty batch only moves the stage marker."""
    if stage not in STAGES:
        raise ScreeningError(f"unknown stage {stage!r}")
    for d in decisions:
        record_screening_decision(ledger, d["record_id"], stage, d["decision"],
                                  d.get("reason"), d.get("study_id"))
    _refresh_prisma(ledger, stage)
    return ledger.prisma


def reopen_record(ledger: Ledger, record_id, rule) -> SearchRecord:
    """Bring a record excluded in an earlier version back to full-text assessment.

    ``now_retrieved``: the report could not be retrieved before and now can.
    ``author_data``: authors supplied the statistics that were missing.
    """
    if rule not in REINCLUSION_RULES:
        raise ScreeningError(f"unknown re-inclusion rule {rule!r}")
    r = ledger.record(record_id)
    if r.screen_version >= ledger.version_number:
        raise ScreeningError("only records from earlier versions can be reopened")
    if r.status != REINCLUSION_RULES[rule]:
        raise ScreeningError(f"rule {rule} does not apply to a record with status {r.status}")
    if rule == "author_data" and r.reason != "insufficient_statistics":
        raise ScreeningError("author_data re-inclusion requires exclusion for insufficient statistics")
    r.status, r.screen_version, r.reinclusion, r.reason = "sought", ledger.version_number, rule, None
    _refresh_prisma(ledger, "fulltext")
    return r


class DecisionLog:
    """Append-only JSON-lines log of screening decisions."""

    def __init__(self, path):
        self.path = Path(path)

    def append(self, record_id, stage, decision, reason=None, study_id=None):
        entry = _drop_none({"record_id": record_id, "stage": stage, "decision": decision,
                            "reason": reason, "study_id": study_id})
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")

    def entries(self):
        if not self.path.exists():
            return []
        out = []
        for lineno, line in enumerate(self.path.read_text(encoding="utf-8").splitlines(), 1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ImportFormatError(lineno, f"bad decision log entry: {exc.msg}") from None
        return out

    def replay(self, ledger: Ledger) -> Ledger:
        for d in self.entries():
            record_screening_decision(ledger, d["record_id"], d["stage"], d["decision"],
                                      d.get("reason"), d.get("study_id"))
        return ledger


# -- validation and totals ------------------------------------------------------------

def study_problems(s: StudyRecord, search_date=None):
    p = []
    tag = f"study {s.study_id}"
    if s.n_participants < 1:
        p.append(f"{tag}: n_participants < 1")
    if not s.effects:
        p.append(f"{tag}: no effects")
    if s.publication_format not in PUBLICATION_FORMATS:
        p.append(f"{tag}: publication format {s.publication_format!r}")
    if search_date and s.publication_date > search_date:
        p.append(f"{tag}: published after the search date")
    conds = [a.condition for a in s.arms]
    for a in s.arms:
        if a.condition not in CONDITIONS:
            p.append(f"{tag}: arm {a.arm_id} condition {a.condition!r}")
        if a.n < 2:
            p.append(f"{tag}: arm {a.arm_id} has n < 2")
        for o in a.outcomes:
            if o.sd is not None and o.sd <= 0 or o.pre_sd is not None and o.pre_sd <= 0:
                p.append(f"{tag}: arm {a.arm_id} non-positive sd")
    if "treatment" not in conds or not any(c.startswith("control") for c in conds):
        p.append(f"{tag}: needs a treatment and a control arm")
    arm_ids = {a.arm_id for a in s.arms}
    for e in s.effects:
        if e.derivation not in DERIVATIONS:
            p.append(f"{tag}: effect {e.effect_id} derivation {e.derivation!r}")
        if {e.first_arm, e.second_arm} - arm_ids:
            p.append(f"{tag}: effect {e.effect_id} references unknown arms")
    if s.open_conflicts:
        p.append(f"{tag}: unresolved coding conflicts {s.open_conflicts}")
    try:
        ModeratorCodes(dict(s.codes.values), s.codes.schema_version)
    except CodingError as exc:
        p.append(f"{tag}: {exc}")
    return p


def validate_ledger(ledger: Ledger) -> Ledger:
    problems = []
    ids = [s.study_id for s in ledger.studies]
    problems += [f"duplicate study id {i}" for i, c in Counter(ids).items() if c > 1]
    eff = [e.effect_id for s in ledger.studies for e in s.effects]
    problems += [f"duplicate effect id {i}" for i, c in Counter(eff).items() if c > 1]
    for s in ledger.studies:
        problems += study_problems(s, ledger.search_date)
    problems += [f"prisma: {m}" for m in ledger.prisma.problems()]
    label = ledger.version.get("version_label")
    if label is not None and not re.fullmatch(r"Version [1-9]\d*, (0[1-9]|1[0-2])/\d\d", label):
        problems.append(f"malformed version label {label!r}")
    if problems:
        raise ValidationError(problems)
    return ledger


def ledger_totals(ledger: Ledger) -> dict:
    return {"n_studies": len(ledger.studies),
            "n_effects_coded": sum(len(s.effects) for s in ledger.studies),
            "n_participants": sum(s.n_participants for s in ledger.studies)}


def moderator_values(ledger: Ledger, moderator_id) -> dict:
    """study_id -> code (``missing`` when not coded)."""
    return {s.study_id: s.codes.values.get(moderator_id, MISSING) for s in ledger.studies}
