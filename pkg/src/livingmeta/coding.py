"""Moderator coding schema, validation and two-rater reconciliation."""

from __future__ import annotations

from dataclasses import dataclass, field

SCHEMA_VERSION = 1
MISSING = "missing"

ISCED_LEVELS = ("0", "1", "2", "3", "4", "5", "6", "7", "8", "adults")
CONTENT_AREAS = ("C", "Q", "S", "U")
AI_PURPOSES = ("expert", "assessment_feedback", "instructor", "dialogic_partner",
               "collab_facilitator", "teacher_support")
AI_ROLES = ("supplement", "replacement")
PUBLICATION_FORMATS = ("journal", "proceedings", "preprint")
CONDITIONS = ("treatment", "control_active", "control_passive", "control_placebo")


class CodingError(ValueError):
    pass


@dataclass(frozen=True)
class FieldSpec:
    name: str
    group: str
    kind: str            # "set", "enum" or "continuous"
    levels: tuple = ()


def _f(group, name, kind, levels=()):
    return FieldSpec(name, group, kind, tuple(levels))


SCHEMA = {f.name: f for f in [
    _f("participant", "isced_level", "set", ISCED_LEVELS),
    _f("participant", "age_mean", "continuous"),
    _f("participant", "school_type", "enum", ("general", "vocational", "university", "other")),
    _f("participant", "location", "enum", ("africa", "asia", "europe", "north_america",
                                          "oceania", "south_america", "multiple")),
    _f("participant", "prior_knowledge", "enum", ("low", "mixed", "high")),
    _f("participant", "ses", "enum", ("low", "mixed", "high")),
    _f("context", "content_area", "set", CONTENT_AREAS),
    _f("context", "learning_arrangement", "enum", ("individual", "collaborative", "teacher_guided")),
    _f("context", "instructional_context", "enum", ("classroom", "online", "laboratory", "home")),
    _f("context", "assessment_stakes", "enum", ("low", "high")),
    _f("intervention", "ai_purpose", "set", AI_PURPOSES),
    _f("intervention", "ai_role", "set", AI_ROLES),
    _f("intervention", "teacher_autonomy", "enum", ("none", "partial", "full")),
    _f("intervention", "ai_familiarity", "enum", ("none", "some", "high")),
    _f("intervention", "familiarization", "enum", ("none", "brief", "extended")),
    _f("intervention", "duration_weeks", "continuous"),
    _f("intervention", "intensity_minutes", "continuous"),
    _f("intervention", "tool_type", "enum", ("general_chatbot", "custom_chatbot", "tutoring_system", "other")),
    _f("intervention", "ai_system_modification", "set", (1, 2, 3)),
    _f("outcome", "knowledge_type", "enum", ("procedural", "conceptual", "mixed")),
    _f("outcome", "task_format", "enum", ("closed", "open", "mixed")),
    _f("outcome", "alignment", "enum", ("proximal", "distal")),
]}


def validate_value(name, value):
    """Raise CodingError unless ``value`` is a legal code for field ``name``."""
    try:
        spec = SCHEMA[name]
    except KeyError:
        raise CodingError(f"unknown moderator field {name!r}") from None
    if value == MISSING:
        return
    if spec.kind == "continuous":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise CodingError(f"{name}: expected a number or {MISSING!r}, got {value!r}")
    elif spec.kind == "enum":
        if value not in spec.levels:
            raise CodingError(f"{name}: {value!r} not in {spec.levels}")
    else:
        if not isinstance(value, (list, tuple)) or not value:
            raise CodingError(f"{name}: expected a non-empty list of codes")
        bad = [v for v in value if v not in spec.levels]
        if bad:
            raise CodingError(f"{name}: codes {bad} not in {spec.levels}")


def _normalize(name, value):
    if SCHEMA[name].kind == "set" and value != MISSING:
        order = SCHEMA[name].levels
        return sorted(set(value), key=order.index)
    return value


@dataclass
class ModeratorCodes:
    """Complete coding of one study; every schema field is a code or ``missing``."""

    values: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        vals = {}
        for name in SCHEMA:
            v = self.values.get(name, MISSING)
            validate_value(name, v)
            vals[name] = _normalize(name, v)
        extra = set(self.values) - set(SCHEMA)
        if extra:
            raise CodingError(f"unknown moderator fields {sorted(extra)}")
        self.values = vals

    def __getitem__(self, name):
        return self.values[name]

    def coded(self, name) -> bool:
        return self.values[name] != MISSING

    def to_dict(self):
        return {"schema_version": self.schema_version, "values": dict(self.values)}

    @classmethod
    def from_dict(cls, d):
        return cls(values=dict(d.get("values", {})), schema_version=d.get("schema_version", SCHEMA_VERSION))


@dataclass
class Reconciliation:
    """Outcome of comparing two independent codings of one study."""

    study_id: str
    agreed: dict
    conflicts: dict          # field -> (rater_a, rater_b)
    resolved: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    @property
    def open_conflicts(self):
        return sorted(set(self.conflicts) - set(self.resolved))

    @property
    def analyzable(self) -> bool:
        return not self.open_conflicts

    def resolve(self, resolutions: dict) -> "Reconciliation":
        """Record consensus values; only listed conflicts may be resolved."""
        for name, value in resolutions.items():
            if name not in self.conflicts:
                raise CodingError(f"{name!r} is not an open conflict")
            validate_value(name, value)
            self.resolved[name] = _normalize(name, value)
        return self

    def consensus(self) -> ModeratorCodes:
        if not self.analyzable:
            raise CodingError(f"study {self.study_id!r} has unresolved conflicts: {self.open_conflicts}")
        return ModeratorCodes({**self.agreed, **self.resolved}, self.schema_version)

    def conflict_list(self):
        return [{"field": k, "rater_a": a, "rater_b": b} for k, (a, b) in sorted(self.conflicts.items())]


def reconcile_codes(codes_a: ModeratorCodes, codes_b: ModeratorCodes, study_id: str = "") -> Reconciliation:
    if codes_a.schema_version != codes_b.schema_version:
        raise CodingError(f"schema versions differ: {codes_a.schema_version} vs {codes_b.schema_version}")
    agreed, conflicts = {}, {}
    for name in SCHEMA:
        a, b = codes_a[name], codes_b[name]
        if a == b:
            agreed[name] = a
        else:
            conflicts[name] = (a, b)
    return Reconciliation(study_id, agreed, conflicts, schema_version=codes_a.schema_version)
