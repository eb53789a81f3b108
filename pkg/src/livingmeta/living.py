"""Living-review lifecycle: versions, moderator gating, cumulative refits, diffs."""

from __future__ import annotations

import copy
import csv
import datetime as dt
import hashlib
import io
import json
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .coding import MISSING, SCHEMA
from .covariance import CovarianceSpec, build_vcov, effective_precision
from .effects import compute_effects
from .inference import fit, summarize
from .ledger import Ledger, LedgerError
from .model import MetaData, ModelSpec
from .sampler import McmcConfig

FIRST_VERSION_NOTE = "This is the first version."
NO_CHANGES = "No changes to the previous version."
MIN_STUDIES_PER_LEVEL = 10
MIN_STUDIES_CONTINUOUS = 20

_LABEL = re.compile(r"Version ([1-9]\d*), (0[1-9]|1[0-2])/(\d\d)")


class VersionError(ValueError):
    pass


class IntegrityError(RuntimeError):
    pass


class GateError(ValueError):
    pass


# -- versions -------------------------------------------------------------------

def format_label(number: int, date: dt.date) -> str:
    return f"Version {number}, {date.month:02d}/{date.year % 100:02d}"


def parse_label(label: str):
    """-> (version number, month, two-digit year)."""
    m = _LABEL.fullmatch(label)
    if not m:
        raise VersionError(f"malformed version label {label!r}")
    return int(m.group(1)), int(m.group(2)), int(m.group(3))


@dataclass
class VersionRecord:
    version_number: int
    version_label: str
    version_date: dt.date
    search_date: dt.date | None = None
    next_search_date: dt.date | None = None
    next_version_date: dt.date | None = None
    status: str = "ongoing"
    changelog: list = field(default_factory=list)
    ledger_snapshot_ref: str | None = None
    results_snapshot_ref: str | None = None

    def __post_init__(self):
        n, _, _ = parse_label(self.version_label)
        if n != self.version_number:
            raise VersionError("label and version number disagree")
        if self.status not in ("ongoing", "retired"):
            raise VersionError(f"unknown status {self.status!r}")

    @classmethod
    def first(cls, version_date, search_date, next_search_date=None, next_version_date=None):
        return cls(1, format_label(1, version_date), version_date, search_date, next_search_date,
                   next_version_date, changelog=[FIRST_VERSION_NOTE])

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.isoformat() if isinstance(v, dt.date) else v
        return out

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("version_date", "search_date", "next_search_date", "next_version_date"):
            if d.get(k):
                d[k] = dt.date.fromisoformat(d[k])
        missing = {"version_number", "version_label", "version_date"} - d.keys()
        if missing:
            raise VersionError(f"version record lacks {', '.join(sorted(missing))}")
        return cls(**d)


def bump_version(prev: VersionRecord, changes, search_date=None, next_search_date=None,
                 next_version_date=None, version_date=None) -> VersionRecord:
    """Successor of ``prev``, dated at ``prev.next_version_date`` unless given.

    ``changes`` must be non-empty; pass ``[NO_CHANGES]`` to declare none.
    """
    if prev.status == "retired":
        raise VersionError("a retired version cannot be bumped")
    changes = list(changes)
    if not changes:
        raise VersionError(f"a version must declare its changes (or {NO_CHANGES!r})")
    version_date = version_date or prev.next_version_date
    if version_date is None:
        raise VersionError("no date for the new version")
    if version_date < prev.version_date:
        raise VersionError("version dates must not go backwards")
    n = prev.version_number + 1
    return VersionRecord(n, format_label(n, version_date), version_date, search_date,
                         next_search_date, next_version_date, "ongoing", changes)


def retire(prev: VersionRecord) -> VersionRecord:
    if prev.status == "retired":
        raise VersionError("version is already retired")
    out = copy.deepcopy(prev)
    out.status = "retired"
    out.next_search_date = out.next_version_date = None
    return out


class SnapshotStore:
    """Content-addressed, write-once snapshot files named by their SHA-256."""

    def __init__(self, root):
        self.root = Path(root)

    def put(self, data: bytes) -> str:
        ref = hashlib.sha256(data).hexdigest()
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / f"{ref}.json"
        if not path.exists():
            path.write_bytes(data)
        return ref

    def get(self, ref: str) -> bytes:
        path = self.root / f"{ref}.json"
        if not path.exists():
            raise IntegrityError(f"snapshot {ref} not found")
        data = path.read_bytes()
        if hashlib.sha256(data).hexdigest() != ref:
            raise IntegrityError(f"snapshot {ref} does not match its hash")
        return data


def canonical_json(obj) -> bytes:
    return (json.dumps(obj, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def snapshot_ledger(ledger: Ledger, store: SnapshotStore, results: dict | None = None) -> VersionRecord:
    """Freeze the current version's ledger (and results) into ``store``.

    The snapshot is taken with the version's own refs blanked, then the refs
    are written back into ``ledger.version``.
    """
    v = VersionRecord.from_dict(ledger.version)
    doc = ledger.to_dict()
    doc["version"] = {**doc["version"], "ledger_snapshot_ref": None, "results_snapshot_ref": None}
    v.ledger_snapshot_ref = store.put(canonical_json(doc))
    if results is not None:
        v.results_snapshot_ref = store.put(canonical_json(results))
    ledger.version = v.to_dict()
    return v


def advance_ledger(ledger: Ledger, store: SnapshotStore, changes, results=None, **dates) -> VersionRecord:
    """Snapshot the current version, archive it in the history and start the next one."""
    bump_version(VersionRecord.from_dict(ledger.version), changes, **dates)  # refuse before writing
    current = snapshot_ledger(ledger, store, results)
    new = bump_version(current, changes, **dates)
    ledger.history.append(current.to_dict())
    ledger.version = new.to_dict()
    if new.search_date:
        ledger.search = {**ledger.search, "date": new.search_date.isoformat()}
    return new


def retire_ledger(ledger: Ledger) -> VersionRecord:
    v = retire(VersionRecord.from_dict(ledger.version))
    ledger.version = v.to_dict()
    return v


# -- moderator gate ------------------------------------------------------------------

@dataclass
class GateResult:
    moderator_id: str
    kind: str
    level_counts: dict = field(default_factory=dict)
    study_count: int = 0
    eligible: bool = False
    deficit: str = ""

    def counts_text(self):
        if self.kind == "continuous":
            return f"{self.study_count} studies"
        return ", ".join(f"{k}={v}" for k, v in self.level_counts.items())

    def to_dict(self):
        return {"moderator_id": self.moderator_id, "kind": self.kind,
                "level_counts": {str(k): v for k, v in self.level_counts.items()},
                "study_count": self.study_count, "eligible": self.eligible, "deficit": self.deficit}


def gate_from_counts(moderator_id, kind, counts) -> GateResult:
    """Apply the gating rule to per-level counts (categorical) or a study count."""
    if kind == "continuous":
        n = int(counts)
        ok = n >= MIN_STUDIES_CONTINUOUS
        deficit = "" if ok else f"{n} coded studies, {MIN_STUDIES_CONTINUOUS} required"
        return GateResult(moderator_id, kind, study_count=n, eligible=ok, deficit=deficit)
    if kind != "categorical":
        raise GateError(f"unknown moderator kind {kind!r}")
    if not isinstance(counts, dict):
        counts = {f"level_{i + 1}": c for i, c in enumerate(counts)}
    counts = dict(counts)
    total = sum(counts.values())
    if len(counts) < 2:
        return GateResult(moderator_id, kind, counts, total, False, "fewer than two levels")
    low = min(counts, key=lambda k: counts[k])
    ok = counts[low] >= MIN_STUDIES_PER_LEVEL
    deficit = "" if ok else f"level {low!r} has {counts[low]} studies, {MIN_STUDIES_PER_LEVEL} required"
    return GateResult(moderator_id, kind, counts, total, ok, deficit)


def gate_moderator(ledger: Ledger, moderator_id: str, levels=None) -> GateResult:
    """Count codable studies per level of a moderator and apply the gate.

    Levels are the schema's (optionally a chosen subset); studies coded with
    several levels count toward each. ``missing`` codes are not counted.
    """
    try:
        spec = SCHEMA[moderator_id]
    except KeyError:
        raise GateError(f"unknown moderator {moderator_id!r}") from None
    values = [s.codes[moderator_id] for s in ledger.studies]
    coded = [v for v in values if v != MISSING]
    if spec.kind == "continuous":
        return gate_from_counts(moderator_id, "continuous", len(coded))
    levels = list(levels) if levels is not None else list(spec.levels)
    unknown = [lev for lev in levels if lev not in spec.levels]
    if unknown:
        raise GateError(f"{moderator_id}: unknown levels {unknown}")
    counts = {}
    for lev in levels:
        counts[lev] = sum(1 for v in coded
                          if (lev in v if isinstance(v, list) else v == lev))
    return gate_from_counts(moderator_id, "categorical", counts)


def gate_all(ledger: Ledger) -> list:
    return [gate_moderator(ledger, m) for m in SCHEMA]


# -- cumulative evidence -------------------------------------------------------------

@dataclass
class AccrualPoint:
    cutoff: dt.date
    n_studies: int
    n_effects: int
    mean: float
    median: float
    lo95: float
    hi95: float
    precision: float
    converged: bool


@dataclass
class StudyPoint:
    study_id: str
    date: dt.date
    g: float
    precision: float


@dataclass
class CumulativeTrajectory:
    points: list
    studies: list

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["date", "n_studies", "median", "lo95", "hi95", "precision"])
        for p in self.points:
            w.writerow([p.cutoff.isoformat(), p.n_studies, repr(p.median), repr(p.lo95),
                        repr(p.hi95), repr(p.precision)])
        return buf.getvalue()

    def studies_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["date", "study_id", "g", "precision"])
        for s in self.studies:
            w.writerow([s.date.isoformat(), s.study_id, repr(s.g), repr(s.precision)])
        return buf.getvalue()


def study_points(effects, cov) -> list:
    """Per-study GLS pooled effect and its precision 1' V_k^-1 1."""
    out = {}
    for sid, idx in cov.blocks.items():
        Vk = cov.V[np.ix_(idx, idx)]
        y = np.array([effects[i].g for i in idx])
        w = np.linalg.solve(Vk, np.ones(idx.size))
        out[sid] = (float(w @ y / w.sum()), effective_precision(Vk))
    return out


def cumulative_fit(ledger: Ledger, spec: ModelSpec | None = None, cfg: McmcConfig | None = None,
                   cov_spec: CovarianceSpec | None = None, workers: int = 1) -> CumulativeTrajectory:
    """Refit once per distinct publication date on all studies published by then.

    Every refit uses ``cfg.master_seed`` unchanged, so the final point is the
    full-data fit exactly.
    """
    if not ledger.studies:
        raise LedgerError("cumulative fit needs at least one study")
    undated = [s.study_id for s in ledger.studies if s.publication_date is None]
    if undated:
        raise LedgerError(f"studies without publication date: {undated}")
    cfg = cfg or McmcConfig()
    cov_spec = cov_spec or CovarianceSpec()
    effects = compute_effects(ledger.studies)
    cov = build_vcov(effects, cov_spec)
    per_study = study_points(effects, cov)
    dates = {s.study_id: s.publication_date for s in ledger.studies}
    studies = sorted((StudyPoint(sid, dates[sid], *per_study[sid]) for sid in per_study),
                     key=lambda p: (p.date, p.study_id))
    points = []
    for cutoff in sorted({p.date for p in studies}):
        keep = {p.study_id for p in studies if p.date <= cutoff}
        sub = [e for e in effects if e.study_id in keep]
        data = MetaData.from_effects(sub, cov_spec)
        s = summarize(fit(data, spec, cfg, workers))
        mu = s["mu"]
        points.append(AccrualPoint(cutoff, len(keep), len(sub), mu.mean, mu.median, mu.lo95, mu.hi95,
                                   sum(p.precision for p in studies if p.date == cutoff),
                                   s.converged))
    return CumulativeTrajectory(points, studies)


# -- diffs -------------------------------------------------------------------------------

@dataclass
class ChangeReport:
    studies_added: list = field(default_factory=list)
    studies_removed: list = field(default_factory=list)
    reincluded: list = field(default_factory=list)
    effect_count_changes: dict = field(default_factory=dict)   # study -> (a, b)
    effects_delta: int = 0
    pooled_mu_delta: float | None = None
    gate_changes: dict = field(default_factory=dict)           # moderator -> (a, b)

    @property
    def empty(self) -> bool:
        return not (self.studies_added or self.studies_removed or self.reincluded
                    or self.effect_count_changes or self.effects_delta or self.gate_changes
                    or self.pooled_mu_delta)

    def lines(self):
        out = []
        if self.studies_added:
            out.append("Studies added: " + ", ".join(self.studies_added))
        if self.studies_removed:
            out.append("Studies removed: " + ", ".join(self.studies_removed))
        if self.reincluded:
            out.append("Re-included after earlier exclusion: " + ", ".join(self.reincluded))
        for sid, (a, b) in self.effect_count_changes.items():
            out.append(f"Effects of {sid}: {a} -> {b}")
        if self.effects_delta:
            out.append(f"Net change in coded effects: {self.effects_delta:+d}")
        if self.pooled_mu_delta is not None:
            out.append(f"Change in pooled effect (posterior mean): {self.pooled_mu_delta:+.3f}")
        for m, (a, b) in self.gate_changes.items():
            out.append(f"Moderator gate {m}: {'eligible' if a else 'ineligible'} -> "
                       f"{'eligible' if b else 'ineligible'}")
        return out

    def to_dict(self):
        return {"studies_added": self.studies_added, "studies_removed": self.studies_removed,
                "reincluded": self.reincluded,
                "effect_count_changes": {k: list(v) for k, v in self.effect_count_changes.items()},
                "effects_delta": self.effects_delta, "pooled_mu_delta": self.pooled_mu_delta,
                "gate_changes": {k: list(v) for k, v in self.gate_changes.items()}}


def _pooled_mean(results):
    """Pooled mean from a summary dict, bare or nested under ``summary``."""
    try:
        results = results.get("summary", results)
        return float(results["parameters"]["mu"]["mean"])
    except (AttributeError, KeyError, TypeError):
        return None


def diff_ledgers(a: Ledger, b: Ledger, results_a=None, results_b=None) -> ChangeReport:
    ids_a = {s.study_id: len(s.effects) for s in a.studies}
    ids_b = {s.study_id: len(s.effects) for s in b.studies}
    excluded_a = {x.get("study_id") or x.get("record_id") for x in a.exclusions}
    excluded_a |= {r.study_id or r.record_id for r in a.records
                   if r.status in ("not_retrieved", "excluded_fulltext")}
    rep = ChangeReport()
    added = [s for s in ids_b if s not in ids_a]
    rep.reincluded = [s for s in added if s in excluded_a]
    rep.studies_added = [s for s in added if s not in excluded_a]
    rep.studies_removed = [s for s in ids_a if s not in ids_b]
    rep.effect_count_changes = {s: (ids_a[s], ids_b[s]) for s in ids_a
                                if s in ids_b and ids_a[s] != ids_b[s]}
    rep.effects_delta = sum(ids_b.values()) - sum(ids_a.values())
    ma, mb = _pooled_mean(results_a), _pooled_mean(results_b)
    if ma is not None and mb is not None and ma != mb:
        rep.pooled_mu_delta = mb - ma
    for ga, gb in zip(gate_all(a), gate_all(b)):
        if ga.eligible != gb.eligible:
            rep.gate_changes[ga.moderator_id] = (ga.eligible, gb.eligible)
    return rep


def diff_versions(v_a: VersionRecord, v_b: VersionRecord, store: SnapshotStore) -> ChangeReport:
    """Diff two finalized versions; every snapshot is hash-verified first."""
    if not v_a.version_number < v_b.version_number:
        raise VersionError("diff needs an earlier and a later version")
    docs = []
    for v in (v_a, v_b):
        if not v.ledger_snapshot_ref:
            raise IntegrityError(f"{v.version_label} has no ledger snapshot")
        led = Ledger.from_json(store.get(v.ledger_snapshot_ref).decode("utf-8"))
        res = json.loads(store.get(v.results_snapshot_ref)) if v.results_snapshot_ref else None
        docs.append((led, res))
    (la, ra), (lb, rb) = docs
    return diff_ledgers(la, lb, ra, rb)
