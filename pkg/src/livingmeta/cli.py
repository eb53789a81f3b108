"""Command-line entry point.

Exit codes: 0 success, 1 other error, 2 usage, 3 validation failure,
4 convergence failure, 5 integrity failure.
"""

from __future__ import annotations

import argparse
import configparser
import datetime as dt
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import coding
from .covariance import CovarianceError, CovarianceSpec, build_vcov, rho_phi_grid
from .effects import EffectSizeError, compute_effects, effects_to_csv
from .inference import (FitError, GateRefused, default_prior_grid, fit, gated_meta_regression,
                        prior_sensitivity, summarize, with_seed)
from .ledger import (DecisionLog, Ledger, LedgerError, ValidationError, import_search_results,
                     ledger_totals, load_v1_fixture, moderator_values, record_screening_decision,
                     validate_ledger)
from .living import (IntegrityError, SnapshotStore, VersionError, VersionRecord, advance_ledger,
                     cumulative_fit, diff_ledgers, diff_versions, gate_all, gate_moderator, retire_ledger,
                     study_points)
from .model import MetaData, ModelSpec, PRIOR_TYPES, describe_prior
from .report import RenderError, assemble_bundle, render_report
from .sampler import McmcConfig

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_VALIDATION, EXIT_CONVERGENCE, EXIT_INTEGRITY = 0, 1, 2, 3, 4, 5

log = logging.getLogger("livingmeta")

BUILTIN_V1 = "v1"


# -- configuration ----------------------------------------------------------------

def read_config(path) -> dict:
    """``key = value`` lines; ``#`` comments."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.read_string("[config]\n" + Path(path).read_text(encoding="utf-8"))
    return dict(cp["config"])


_PRIOR = re.compile(r"\s*([a-z_]+)\s*\(([^)]*)\)\s*")


def parse_prior(text):
    m = _PRIOR.fullmatch(text)
    if not m or m.group(1) not in PRIOR_TYPES:
        raise ValueError(f"cannot parse prior {text!r}")
    args = [float(a) for a in m.group(2).split(",") if a.strip()]
    return PRIOR_TYPES[m.group(1)](*args)


def _floats(text):
    return [float(x) for x in str(text).split(",") if x.strip()]


class Settings:
    def __init__(self, args):
        cfg = read_config(args.config) if args.config else {}
        pick = lambda name, default: (getattr(args, name) if getattr(args, name) is not None
                                      else cfg.get(name, default))
        self.seed = int(pick("seed", 0))
        self.rho = float(pick("rho", 0.7))
        self.phi = float(pick("phi", 0.8))
        self.cov = CovarianceSpec(self.rho, self.phi)
        self.mcmc = McmcConfig(n_chains=int(pick("chains", 4)), warmup_iterations=int(pick("warmup", 1000)),
                               sampling_iterations=int(pick("iterations", 3000)), master_seed=self.seed)
        self.workers = int(pick("workers", 1))
        het = parse_prior(cfg.get("prior_heterogeneity", "exponential(1)"))
        self.spec = ModelSpec(prior_mu=parse_prior(cfg.get("prior_mu", "normal(0,1)")),
                              prior_tau=parse_prior(cfg.get("prior_tau", "")) if cfg.get("prior_tau") else het,
                              prior_omega=parse_prior(cfg.get("prior_omega", "")) if cfg.get("prior_omega") else het)
        self.empirical = parse_prior(cfg["empirical_prior_mu"]) if cfg.get("empirical_prior_mu") else None
        self.rho_grid = _floats(cfg.get("rho_grid", "0,0.3,0.5,0.7,0.9"))
        self.phi_grid = _floats(cfg.get("phi_grid", "0,0.3,0.5,0.8,0.9"))
        self.out = Path(args.out or cfg.get("out", "."))


def _load_ledger(args) -> Ledger:
    if args.ledger in (None, BUILTIN_V1):
        return load_v1_fixture()
    return Ledger.load(args.ledger)


def _writable_ledger(args) -> Path:
    if args.ledger in (None, BUILTIN_V1):
        raise LedgerError("this command modifies the ledger; pass --ledger <path>")
    return Path(args.ledger)


def _write(settings, name, text):
    settings.out.mkdir(parents=True, exist_ok=True)
    path = settings.out / name
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)
    return path


def _json(obj):
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


def _effects(ledger):
    return compute_effects(ledger.studies)


# -- commands -----------------------------------------------------------------------

def cmd_ingest(args, s):
    path = _writable_ledger(args)
    ledger = Ledger.load(path)
    report = import_search_results(Path(args.input).read_text(encoding="utf-8"), ledger, args.format)
    ledger.save(path)
    _write(s, "import_report.json", _json(report.to_dict()))
    _write(s, "prisma.json", _json(ledger.prisma.to_dict()))
    print(f"queued {len(report.queued)}, duplicates {len(report.duplicates)}, "
          f"quarantined {len(report.quarantined)}")
    return EXIT_OK


def cmd_screen(args, s):
    path = _writable_ledger(args)
    ledger = Ledger.load(path)
    if args.replay:
        DecisionLog(args.replay).replay(ledger)
    else:
        if not (args.record and args.stage and args.decision):
            raise LedgerError("screen needs --record, --stage and --decision (or --replay)")
        record_screening_decision(ledger, args.record, args.stage, args.decision, args.reason, args.study_id)
        DecisionLog(args.log or path.with_suffix(".decisions.jsonl")).append(
            args.record, args.stage, args.decision, args.reason, args.study_id)
    ledger.save(path)
    _write(s, "prisma.json", _json(ledger.prisma.to_dict()))
    return EXIT_OK


def cmd_validate(args, s):
    ledger = validate_ledger(_load_ledger(args))
    _write(s, "prisma.json", _json(ledger.prisma.to_dict()))
    print(_json({"valid": True, **ledger_totals(ledger)}), end="")
    return EXIT_OK


def cmd_effects(args, s):
    ledger = _load_ledger(args)
    effects = _effects(ledger)
    _write(s, "effects.csv", effects_to_csv(effects))
    cov = build_vcov(effects, s.cov)
    pts = study_points(effects, cov)
    lines = ["study_id,g,precision"] + [f"{sid},{g!r},{p!r}" for sid, (g, p) in pts.items()]
    _write(s, "study_effects.csv", "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_vcov(args, s):
    cov = build_vcov(_effects(_load_ledger(args)), s.cov)
    _write(s, "vcov.csv", cov.to_csv())
    return EXIT_OK


def _summary_doc(ledger, s, data, summary):
    return {"version_label": ledger.version.get("version_label"),
            "n_studies": data.n_studies, "n_effects": data.n_effects,
            "covariance": {"rho": s.rho, "phi": s.phi},
            "model": s.spec.to_dict(),
            "priors_text": {"mu": describe_prior(s.spec.prior_mu), "tau": describe_prior(s.spec.prior_tau),
                            "omega": describe_prior(s.spec.prior_omega)},
            "mcmc": {"n_chains": s.mcmc.n_chains, "warmup_iterations": s.mcmc.warmup_iterations,
                     "sampling_iterations": s.mcmc.sampling_iterations, "master_seed": s.mcmc.master_seed},
            "summary": summary.to_dict()}


def cmd_fit(args, s):
    ledger = _load_ledger(args)
    data = MetaData.from_effects(_effects(ledger), s.cov)
    draws = fit(data, s.spec, s.mcmc, s.workers)
    summary = summarize(draws)
    _write(s, "draws.csv", draws.to_csv())
    _write(s, "summary.json", _json(_summary_doc(ledger, s, data, summary)))
    mu = summary["mu"]
    print(f"mu = {mu.mean:.3f} [{mu.lo95:.3f}, {mu.hi95:.3f}]")
    if not summary.converged:
        print("convergence check failed: " + "; ".join(summary.diagnostics.reasons), file=sys.stderr)
        return EXIT_CONVERGENCE
    return EXIT_OK


def _row(kind, label, summary=None, error=None, rho="", phi=""):
    if summary is None:
        return dict(kind=kind, label=label, rho=rho, phi=phi, error=error)
    mu = summary["mu"]
    return dict(kind=kind, label=label, rho=rho, phi=phi, mean=mu.mean, median=mu.median,
                lo95=mu.lo95, hi95=mu.hi95, converged=summary.converged)


def cmd_sensitivity(args, s):
    ledger = _load_ledger(args)
    effects = _effects(ledger)
    doc, rows = {}, []
    if args.kind in ("prior", "both"):
        data = MetaData.from_effects(effects, s.cov)
        table = prior_sensitivity(data, s.mcmc, default_prior_grid(s.empirical), s.workers)
        doc["prior"] = [_row("prior", r.label, r.summary, r.error) for r in table.rows]
        doc["prior_spread"] = table.spread
        rows += doc["prior"]
    if args.kind in ("rhophi", "both"):
        cells = {}

        def fit_fn(effs, cov_spec, seed):
            summ = summarize(fit(MetaData.from_effects(effs, cov_spec), s.spec, with_seed(s.mcmc, seed), s.workers))
            cells[(cov_spec.rho, cov_spec.phi)] = summ
            return summ["mu"].mean

        grid = rho_phi_grid(effects, s.rho_grid, s.phi_grid, fit_fn, s.seed)
        doc["rhophi"] = [_row("rhophi", f"rho={c.rho:g}, phi={c.phi:g}", cells.get((c.rho, c.phi)),
                              c.failed, c.rho, c.phi) for c in grid.cells]
        doc.update(rhophi_spread=grid.spread, rhophi_min=grid.minimum, rhophi_max=grid.maximum)
        rows += doc["rhophi"]
    cols = ["kind", "label", "rho", "phi", "mean", "median", "lo95", "hi95", "converged", "error"]
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join(_csv_cell(r.get(c, "")) for c in cols))
    _write(s, "sensitivity.csv", "\n".join(lines) + "\n")
    _write(s, "sensitivity.json", _json(doc))
    return EXIT_OK


def _csv_cell(v):
    if isinstance(v, float):
        return repr(v)
    v = "" if v is None else str(v)
    return f'"{v}"' if ("," in v or ";" in v) else v


def cmd_cumulative(args, s):
    traj = cumulative_fit(_load_ledger(args), s.spec, s.mcmc, s.cov, s.workers)
    _write(s, "trajectory.csv", traj.to_csv())
    _write(s, "study_points.csv", traj.studies_csv())
    return EXIT_OK


def cmd_gate(args, s):
    ledger = _load_ledger(args)
    if args.moderator:
        result = gate_moderator(ledger, args.moderator)
        _write(s, "gate.json", _json(result.to_dict()))
        print(f"{result.moderator_id}: {'eligible' if result.eligible else 'ineligible'}"
              + (f" ({result.deficit})" if result.deficit else ""))
        if args.regress:
            summary = gated_meta_regression(_effects(ledger), moderator_values(ledger, args.moderator),
                                            result, s.spec, s.mcmc, s.cov, s.workers)
            _write(s, "moderator_summary.json", _json(summary.to_dict()))
    else:
        results = gate_all(ledger)
        _write(s, "gate.json", _json([g.to_dict() for g in results]))
        for g in results:
            print(f"{g.moderator_id}: {'eligible' if g.eligible else 'ineligible'}")
    return EXIT_OK


def cmd_report(args, s):
    ledger = _load_ledger(args)
    _write(s, "prisma.json", _json(ledger.prisma.to_dict()))
    text = render_report(assemble_bundle(ledger, s.out))
    _write(s, "report.md", text)
    return EXIT_OK


def _date_arg(text):
    return dt.date.fromisoformat(text) if text else None


def cmd_version(args, s):
    path = _writable_ledger(args)
    ledger = Ledger.load(path)
    store = SnapshotStore(path.parent / "snapshots")
    if args.action == "bump":
        summary = s.out / "summary.json"
        results = json.loads(summary.read_text(encoding="utf-8")) if summary.exists() else None
        new = advance_ledger(ledger, store, args.change or [], results,
                             search_date=_date_arg(args.search_date),
                             next_search_date=_date_arg(args.next_search_date),
                             next_version_date=_date_arg(args.next_version_date),
                             version_date=_date_arg(args.version_date))
        ledger.save(path)
        print(new.version_label)
    elif args.action == "retire":
        v = retire_ledger(ledger)
        ledger.save(path)
        print(f"{v.version_label}: retired")
    else:
        versions = {v["version_number"]: v for v in ledger.history}
        try:
            va = VersionRecord.from_dict(versions[args.from_version])
        except KeyError:
            raise VersionError(f"version {args.from_version} is not a finalized version") from None
        if args.to_version == ledger.version_number:
            # the current version is not snapshotted yet: diff against the live ledger
            summary = s.out / "summary.json"
            res_b = json.loads(summary.read_text(encoding="utf-8")) if summary.exists() else None
            la = Ledger.from_json(store.get(va.ledger_snapshot_ref).decode("utf-8"))
            res_a = json.loads(store.get(va.results_snapshot_ref)) if va.results_snapshot_ref else None
            report = diff_ledgers(la, ledger, res_a, res_b)
        elif args.to_version in versions:
            report = diff_versions(va, VersionRecord.from_dict(versions[args.to_version]), store)
        else:
            raise VersionError(f"unknown version {args.to_version}")
        _write(s, "diff.json", _json(report.to_dict()))
        print("\n".join(report.lines()) or "no changes")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--ledger", help=f"ledger JSON path ('{BUILTIN_V1}' = shipped first-version fixture)")
    common.add_argument("--seed", type=int)
    common.add_argument("--rho", type=float)
    common.add_argument("--phi", type=float)
    common.add_argument("--out", help="output directory")
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--chains", type=int)
    common.add_argument("--warmup", type=int)
    common.add_argument("--iterations", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="livingmeta", description="Living Bayesian meta-analysis toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("ingest", parents=[common], help="import an exported search result file")
    sp.add_argument("--input", required=True)
    sp.add_argument("--format", choices=["csv", "ris"])
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("screen", parents=[common], help="record a screening decision or replay a log")
    sp.add_argument("--record")
    sp.add_argument("--stage", choices=["title_abstract", "fulltext"])
    sp.add_argument("--decision", choices=["include", "exclude", "not_retrieved"])
    sp.add_argument("--reason")
    sp.add_argument("--study-id")
    sp.add_argument("--log", help="decision log to append to")
    sp.add_argument("--replay", help="apply every decision in this JSON-lines log")
    sp.set_defaults(func=cmd_screen)

    for name, func, text in [("validate", cmd_validate, "validate the ledger"),
                             ("effects", cmd_effects, "compute Hedges' g per coded effect"),
                             ("vcov", cmd_vcov, "build the sampling covariance matrix"),
                             ("fit", cmd_fit, "fit the three-level model"),
                             ("cumulative", cmd_cumulative, "cumulative refits by publication date"),
                             ("report", cmd_report, "render the versioned report")]:
        sub.add_parser(name, parents=[common], help=text).set_defaults(func=func)

    sp = sub.add_parser("sensitivity", parents=[common], help="prior and rho/phi sensitivity")
    sp.add_argument("--kind", choices=["prior", "rhophi", "both"], default="both")
    sp.set_defaults(func=cmd_sensitivity)

    sp = sub.add_parser("gate", parents=[common], help="moderator gating")
    sp.add_argument("--moderator", choices=sorted(coding.SCHEMA))
    sp.add_argument("--regress", action="store_true", help="fit the meta-regression if eligible")
    sp.set_defaults(func=cmd_gate)

    sp = sub.add_parser("version", help="version bump, retire or diff")
    vsub = sp.add_subparsers(dest="action", required=True)
    b = vsub.add_parser("bump", parents=[common])
    b.add_argument("--change", action="append", help="changelog entry (repeatable)")
    b.add_argument("--version-date")
    b.add_argument("--search-date")
    b.add_argument("--next-search-date")
    b.add_argument("--next-version-date")
    vsub.add_parser("retire", parents=[common])
    d = vsub.add_parser("diff", parents=[common])
    d.add_argument("--from", dest="from_version", type=int, required=True)
    d.add_argument("--to", dest="to_version", type=int, required=True)
    sp.set_defaults(func=cmd_version)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, Settings(args))
    except ValidationError as exc:
        for problem in exc.problems:
            print(f"invalid: {problem}", file=sys.stderr)
        return EXIT_VALIDATION
    except (EffectSizeError, CovarianceError, RenderError, GateRefused) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FitError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (LedgerError, VersionError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
