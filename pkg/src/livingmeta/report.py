"""Markdown report for one version of the living review.

:func:`assemble_bundle` gathers stored artifacts; :func:`render_report` only
formats them, so re-rendering identical bundles gives identical bytes.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path

from .coding import MISSING
from .ledger import Ledger
from .living import gate_all

CONVERGENCE_WARNING = "**Convergence warning.**"


class RenderError(ValueError):
    def __init__(self, gaps):
        super().__init__("report bundle incomplete: " + ", ".join(gaps))
        self.gaps = list(gaps)


@dataclass
class ReportBundle:
    title: str = ""
    version: dict = field(default_factory=dict)
    prisma: dict | None = None
    studies: list | None = None
    methods: dict | None = None
    pooled: dict | None = None
    diagnostics: dict | None = None
    sensitivity: dict | None = None
    gates: list | None = None
    trajectory_file: str | None = None

    @property
    def version_label(self):
        return self.version.get("version_label")

    @property
    def changelog(self):
        return self.version.get("changelog")


MANDATORY = {
    "version_label": lambda b: b.version_label,
    "living_status": lambda b: b.version.get("status"),
    "changelog": lambda b: b.changelog,
    "methods": lambda b: b.methods,
    "prisma": lambda b: b.prisma,
    "study_table": lambda b: b.studies,
    "pooled_results": lambda b: b.pooled and "mu" in b.pooled,
    "heterogeneity": lambda b: b.pooled and "tau" in b.pooled and "omega" in b.pooled,
    "diagnostics": lambda b: b.diagnostics is not None,
    "sensitivity": lambda b: b.sensitivity,
    "gates": lambda b: b.gates is not None,
}


def _month(iso):
    if not iso:
        return "not scheduled"
    return dt.date.fromisoformat(iso).strftime("%B %Y")


def _day(iso):
    d = dt.date.fromisoformat(iso)
    return f"{d.strftime('%B')} {d.day}, {d.year}"


def _codes(v):
    if v in (None, MISSING):
        return "–"
    if isinstance(v, list):
        return "; ".join(str(x) for x in v)
    return str(v)


def _ci(p):
    return f"{p['mean']:.2f} (median {p['median']:.2f}), 95% CrI [{p['lo95']:.2f}, {p['hi95']:.2f}]"


def render_report(bundle: ReportBundle) -> str:
    gaps = [name for name, check in MANDATORY.items() if not check(bundle)]
    if gaps:
        raise RenderError(gaps)
    v, label = bundle.version, bundle.version_label
    out = [f"# {bundle.title} ({label})", ""]

    out += ["## Living status", ""]
    if v["status"] == "retired":
        out.append("Retired. This is the permanent version; no further updates are planned.")
    else:
        out.append(f"Ongoing. Literature search for this version: {_day(v['search_date'])}. "
                   f"Next literature search: {_month(v.get('next_search_date'))}. "
                   f"Next version: {_month(v.get('next_version_date'))}.")
    out += ["", "## Citation guidance", "",
            f"Cite this document with its version label ({label}) placed directly after the title. "
            "Every version shares one DOI; when citing the review in general, the label may be dropped.",
            "", "## Changes to the previous version", ""]
    out += list(bundle.changelog) + [""]

    if not bundle.diagnostics.get("passed", False):
        out += [f"> {CONVERGENCE_WARNING} The sampler did not meet the convergence thresholds "
                "(R-hat ≤ 1.01, bulk ESS ≥ 400). Interpret the estimates below with caution.", ">"]
        out += [f"> - {r}" for r in bundle.diagnostics.get("reasons", [])] + [""]

    m = bundle.methods
    mc = m["mcmc"]
    out += ["## Methods", "",
            f"- Sampling-error correlation within groups: rho = {m['rho']:g}",
            f"- Autocorrelation across timepoints: phi = {m['phi']:g}",
            f"- Prior on the pooled effect: {m['priors']['mu']}",
            f"- Prior on the between-study SD (tau): {m['priors']['tau']}",
            f"- Prior on the within-study SD (omega): {m['priors']['omega']}",
            "- Residual scale fixed at 1 (known sampling covariance)",
            f"- MCMC: {mc['n_chains']} chains, {mc['warmup_iterations']} warm-up and "
            f"{mc['sampling_iterations']} sampling iterations, seed {mc['master_seed']}", ""]

    p = bundle.prisma
    out += ["## Study selection", "", "| Stage | Count |", "|---|---|",
            f"| Records identified | {p['identified']} |",
            f"| Duplicates removed | {p['duplicates_removed']} |",
            f"| Records screened | {p['screened']} |",
            f"| Reports sought for retrieval | {p['sought_fulltext']} |",
            f"| Reports not retrieved | {p['not_retrieved']} |",
            f"| Reports assessed for eligibility | {p['assessed']} |"]
    for reason, n in p["excluded_with_reasons"].items():
        out.append(f"| Reports excluded ({reason}) | {n} |")
    out += [f"| Studies included | {p['included_studies']} |",
            f"| Reports of included studies | {p['included_reports']} |", ""]

    out += ["## Included studies", "",
            "| Study | Publication date | Format | Participants | ISCED | Content area | AI purpose "
            "| AI role | AI system modification | Effects | Study g |",
            "|---|---|---|---|---|---|---|---|---|---|---|"]
    for s in bundle.studies:
        g = "–" if s.get("g") is None else f"{s['g']:.2f}"
        out.append(f"| {s['citation']} | {s['publication_date']} | {s['publication_format']} "
                   f"| {s['n_participants']} | {_codes(s['isced_level'])} | {_codes(s['content_area'])} "
                   f"| {_codes(s['ai_purpose'])} | {_codes(s['ai_role'])} "
                   f"| {_codes(s['ai_system_modification'])} | {s['n_effects']} | {g} |")
    out.append("")

    pooled = bundle.pooled
    out += ["## Pooled effect", "",
            f"Pooled effect (Hedges' g): {_ci(pooled['mu'])}.", ""]
    if bundle.methods.get("n_effects") is not None:
        out += [f"Analysed: {bundle.methods['n_effects']} effects nested in "
                f"{bundle.methods['n_studies']} studies.", ""]
    out += ["## Heterogeneity", "",
            f"- Between-study SD (tau): {_ci(pooled['tau'])}",
            f"- Within-study SD (omega): {_ci(pooled['omega'])}", ""]
    moderators = [k for k in pooled if k not in ("mu", "tau", "omega")]
    for k in moderators:
        out.append(f"- {k}: {_ci(pooled[k])}")
    if moderators:
        out.append("")

    sens = bundle.sensitivity
    out += ["## Sensitivity analyses", ""]
    if sens.get("prior"):
        out += ["| Prior specification | Pooled mean | 95% CrI |", "|---|---|---|"]
        for r in sens["prior"]:
            if r.get("error"):
                out.append(f"| {r['label']} | failed | {r['error']} |")
            else:
                out.append(f"| {r['label']} | {r['mean']:.3f} | [{r['lo95']:.2f}, {r['hi95']:.2f}] |")
        out += ["", f"Spread of pooled means across priors: {sens['prior_spread']:.3f}", ""]
    if sens.get("rhophi"):
        cells = [c for c in sens["rhophi"] if not c.get("error")]
        failed = len(sens["rhophi"]) - len(cells)
        out += [f"Sampling-correlation grid ({len(sens['rhophi'])} cells of rho x phi): pooled means "
                f"from {sens['rhophi_min']:.3f} to {sens['rhophi_max']:.3f} "
                f"(spread {sens['rhophi_spread']:.3f})" + (f"; {failed} cells failed" if failed else "") + ".",
                ""]

    out += ["## Moderator analyses", "",
            "| Moderator | Kind | Codable studies | Eligible | Deficit |", "|---|---|---|---|---|"]
    for g in bundle.gates:
        counts = (str(g["study_count"]) if g["kind"] == "continuous"
                  else ", ".join(f"{k}: {n}" for k, n in g["level_counts"].items()))
        out.append(f"| {g['moderator_id']} | {g['kind']} | {counts} | "
                   f"{'yes' if g['eligible'] else 'no'} | {g['deficit'] or '–'} |")
    out.append("")
    if bundle.trajectory_file:
        out += ["## Cumulative evidence", "",
                f"Accrual trajectory (posterior median and 95% CrI per publication date): "
                f"`{bundle.trajectory_file}`", ""]
    return "\n".join(out)


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def assemble_bundle(ledger: Ledger, out_dir) -> ReportBundle:
    """Collect the stored artifacts in ``out_dir`` into a bundle.

    Missing artifacts leave their section empty; rendering then refuses.
    """
    out_dir = Path(out_dir)
    b = ReportBundle(title=ledger.title, version=dict(ledger.version), prisma=ledger.prisma.to_dict())
    b.version.setdefault("search_date", ledger.search.get("date"))
    study_g = {}
    if (out_dir / "study_effects.csv").exists():
        study_g = {r["study_id"]: float(r["g"]) for r in _read_csv(out_dir / "study_effects.csv")}
    b.studies = [{"citation": s.citation, "publication_date": s.publication_date.strftime("%d.%m.%Y"),
                  "publication_format": s.publication_format, "n_participants": s.n_participants,
                  "n_effects": len(s.effects), "g": study_g.get(s.study_id),
                  **{k: s.codes[k] for k in ("isced_level", "content_area", "ai_purpose", "ai_role",
                                             "ai_system_modification")}}
                 for s in ledger.studies]
    if (out_dir / "summary.json").exists():
        summ = json.loads((out_dir / "summary.json").read_text(encoding="utf-8"))
        b.pooled = summ["summary"]["parameters"]
        b.diagnostics = summ["summary"]["diagnostics"]
        b.methods = {"rho": summ["covariance"]["rho"], "phi": summ["covariance"]["phi"],
                     "priors": summ["priors_text"], "mcmc": summ["mcmc"],
                     "n_effects": summ.get("n_effects"), "n_studies": summ.get("n_studies")}
    if (out_dir / "sensitivity.json").exists():
        b.sensitivity = json.loads((out_dir / "sensitivity.json").read_text(encoding="utf-8"))
    b.gates = [g.to_dict() for g in gate_all(ledger)]
    if (out_dir / "trajectory.csv").exists():
        b.trajectory_file = "trajectory.csv"
    return b
