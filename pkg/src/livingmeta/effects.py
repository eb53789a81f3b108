"""Standardized mean differences (Hedges' g) and their sampling variances.

All estimators return an unoriented :class:`EffectEstimate`; :func:`orient`
fixes the sign so that positive values favour the AI condition before the
effect enters any analysis.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

DERIVATIONS = ("posttest", "gain_pretest_sd", "from_t", "from_F")

# Default pre/post correlation for gain-score variances (reuses the within-group rho).
DEFAULT_R_PREPOST = 0.7


class EffectSizeError(ValueError):
    """Raised for statistics that cannot yield a valid standardized effect."""


@dataclass(frozen=True)
class CorrectionFactor:
    df: int
    J: float


@dataclass(frozen=True)
class EffectEstimate:
    effect_id: str
    study_id: str
    g: float
    var_g: float
    group_label: str = ""
    outcome_label: str = ""
    timepoint_index: int = 0
    derivation: str = "posttest"
    oriented: bool = False
    analyzable: bool = True

    def __post_init__(self):
        if not (self.var_g > 0 and math.isfinite(self.var_g)):
            raise EffectSizeError(f"{self.effect_id}: var_g must be positive, got {self.var_g}")
        if self.derivation not in DERIVATIONS:
            raise EffectSizeError(f"unknown derivation {self.derivation!r}")
        if self.timepoint_index < 0:
            raise EffectSizeError("timepoint_index must be non-negative")

    @property
    def se_g(self) -> float:
        return math.sqrt(self.var_g)


def hedges_correction(df: int) -> CorrectionFactor:
    """Small-sample correction J = 1 - 3 / (4 df - 1)."""
    if df < 2:
        raise EffectSizeError(f"df must be >= 2, got {df}")
    return CorrectionFactor(df=int(df), J=1.0 - 3.0 / (4.0 * df - 1.0))


def _check_ns(n_t, n_c):
    if n_t < 2 or n_c < 2:
        raise EffectSizeError(f"each arm needs n >= 2 (got {n_t}, {n_c})")


def pooled_sd(sd_t: float, sd_c: float, n_t: int, n_c: int) -> float:
    """df-weighted pooled standard deviation of two arms."""
    if sd_t <= 0 or sd_c <= 0:
        raise EffectSizeError("standard deviations must be positive")
    return math.sqrt(((n_t - 1) * sd_t**2 + (n_c - 1) * sd_c**2) / (n_t + n_c - 2))


def _finish(d, var_d, n_t, n_c, derivation, **labels) -> EffectEstimate:
    J = hedges_correction(n_t + n_c - 2).J
    return EffectEstimate(g=J * d, var_g=J**2 * var_d, derivation=derivation, **labels)


def _labels(effect_id, study_id, group_label, outcome_label, timepoint_index):
    return dict(effect_id=effect_id, study_id=study_id, group_label=group_label,
                outcome_label=outcome_label, timepoint_index=timepoint_index)


def g_from_posttest(mean_t, mean_c, sd_t, sd_c, n_t, n_c, *, effect_id="", study_id="",
                    group_label="", outcome_label="", timepoint_index=0) -> EffectEstimate:
    """Hedges' g from post-test means standardized by the pooled post-test SD.

    The caller is responsible for asserting baseline equivalence of the arms.
    """
    _check_ns(n_t, n_c)
    d = (mean_t - mean_c) / pooled_sd(sd_t, sd_c, n_t, n_c)
    n = n_t + n_c
    var_d = n / (n_t * n_c) + d**2 / (2 * n)
    return _finish(d, var_d, n_t, n_c, "posttest",
                   **_labels(effect_id, study_id, group_label, outcome_label, timepoint_index))


def g_from_gains(pre_t, post_t, pre_c, post_c, sd_pre_t, sd_pre_c, n_t, n_c,
                 r_prepost=DEFAULT_R_PREPOST, *, same_scale=True, effect_id="", study_id="",
                 group_label="", outcome_label="", timepoint_index=0) -> EffectEstimate:
    """Hedges' g from the difference in gains, standardized by the pooled pre-test SD.

    Parameters
    ----------
    pre_t, post_t, pre_c, post_c : float
        Pre- and post-test means of the treatment and control arm.
    sd_pre_t, sd_pre_c : float
        Pre-test standard deviations.
    n_t, n_c : int
        Arm sizes.
    r_prepost : float
        Assumed pre/post correlation, used only in the variance.
    same_scale : bool
        Must be True; pre and post tests on different scales cannot be
        differenced.
    """
    if not same_scale:
        raise EffectSizeError("pre- and post-test are not on the same scale")
    if not 0.0 <= r_prepost <= 1.0:
        raise EffectSizeError(f"r_prepost must lie in [0, 1], got {r_prepost}")
    _check_ns(n_t, n_c)
    sd = pooled_sd(sd_pre_t, sd_pre_c, n_t, n_c)
    d = ((post_t - pre_t) - (post_c - pre_c)) / sd
    n = n_t + n_c
    var_d = 2 * (1 - r_prepost) * n / (n_t * n_c) + d**2 / (2 * n)
    return _finish(d, var_d, n_t, n_c, "gain_pretest_sd",
                   **_labels(effect_id, study_id, group_label, outcome_label, timepoint_index))


def g_from_statistic(stat, n_t, n_c, *, kind="t", df_num=1, sign=1, effect_id="", study_id="",
                     group_label="", outcome_label="", timepoint_index=0) -> EffectEstimate:
    """Hedges' g from an independent-samples t or a one-numerator-df F statistic.

    For ``kind="F"`` the direction is not recoverable from the statistic and
    must be supplied through ``sign`` (+1 or -1).
    """
    _check_ns(n_t, n_c)
    if kind == "t":
        t = float(stat)
        derivation = "from_t"
    elif kind == "F":
        if df_num != 1:
            raise EffectSizeError(f"F with {df_num} numerator df has no two-group d conversion")
        if stat < 0:
            raise EffectSizeError("F must be non-negative")
        if sign not in (1, -1):
            raise EffectSizeError("sign must be +1 or -1")
        t = sign * math.sqrt(stat)
        derivation = "from_F"
    else:
        raise EffectSizeError(f"unknown statistic kind {kind!r}")
    d = t * math.sqrt(1 / n_t + 1 / n_c)
    n = n_t + n_c
    var_d = n / (n_t * n_c) + d**2 / (2 * n)
    return _finish(d, var_d, n_t, n_c, derivation,
                   **_labels(effect_id, study_id, group_label, outcome_label, timepoint_index))


def orient(effect: EffectEstimate, ai_arm_is_first: bool) -> EffectEstimate:
    """Mark an effect as oriented, flipping the sign iff the AI arm was subtracted."""
    if effect.oriented:
        raise EffectSizeError(f"effect {effect.effect_id!r} is already oriented")
    g = effect.g if ai_arm_is_first else -effect.g
    return replace(effect, g=g + 0.0, oriented=True)


# -- ledger plumbing ---------------------------------------------------------

def _arm_outcome(arm, outcome, timepoint):
    for row in arm.outcomes:
        if row.outcome == outcome and row.timepoint == timepoint:
            return row
    raise EffectSizeError(
        f"arm {arm.arm_id!r} has no statistics for outcome {outcome!r} at timepoint {timepoint}")


def compute_effect(study, spec) -> EffectEstimate:
    """Compute and orient one coded effect of a study.

    ``spec`` is a :class:`livingmeta.ledger.EffectSpec`; the first-named arm
    of the comparison is always the minuend.
    """
    arms = {a.arm_id: a for a in study.arms}
    try:
        first, second = arms[spec.first_arm], arms[spec.second_arm]
    except KeyError as exc:
        raise EffectSizeError(f"{spec.effect_id}: unknown arm {exc.args[0]!r}") from None
    labels = dict(effect_id=spec.effect_id, study_id=study.study_id,
                  group_label=f"{spec.first_arm}-vs-{spec.second_arm}",
                  outcome_label=spec.outcome, timepoint_index=spec.timepoint)
    if spec.derivation == "posttest":
        a = _arm_outcome(first, spec.outcome, spec.timepoint)
        b = _arm_outcome(second, spec.outcome, spec.timepoint)
        est = g_from_posttest(a.mean, b.mean, a.sd, b.sd, first.n, second.n, **labels)
    elif spec.derivation == "gain_pretest_sd":
        a = _arm_outcome(first, spec.outcome, spec.timepoint)
        b = _arm_outcome(second, spec.outcome, spec.timepoint)
        if None in (a.pre_mean, a.pre_sd, b.pre_mean, b.pre_sd):
            raise EffectSizeError(f"{spec.effect_id}: gain design needs pre-test mean and sd")
        r = DEFAULT_R_PREPOST if spec.r_prepost is None else spec.r_prepost
        est = g_from_gains(a.pre_mean, a.mean, b.pre_mean, b.mean, a.pre_sd, b.pre_sd,
                           first.n, second.n, r, same_scale=spec.same_scale, **labels)
    else:
        st = spec.statistic or {}
        if "value" not in st:
            raise EffectSizeError(f"{spec.effect_id}: derivation {spec.derivation} needs a statistic")
        kind = "t" if spec.derivation == "from_t" else "F"
        est = g_from_statistic(st["value"], first.n, second.n, kind=kind,
                               df_num=st.get("df_num", 1), sign=st.get("sign", 1), **labels)
    est = replace(est, analyzable=spec.analyzable)
    return orient(est, spec.ai_arm_is_first)


def check_timepoints(effects) -> None:
    """Timepoint indices must be 0-based and contiguous per (study, outcome)."""
    seen: dict[tuple, set] = {}
    for e in effects:
        seen.setdefault((e.study_id, e.outcome_label), set()).add(e.timepoint_index)
    for key, tps in seen.items():
        if sorted(tps) != list(range(len(tps))):
            raise EffectSizeError(f"timepoints for {key} are not contiguous from 0: {sorted(tps)}")


def compute_effects(studies, analyzable_only=True) -> list[EffectEstimate]:
    """Compute the oriented effects of every study, in ledger order."""
    out = []
    for study in studies:
        for spec in study.effects:
            est = compute_effect(study, spec)
            if est.analyzable or not analyzable_only:
                out.append(est)
    check_timepoints(out)
    return out


EFFECTS_COLUMNS = ("effect_id", "study_id", "g", "var_g", "se_g", "group_label",
                   "outcome_label", "timepoint_index", "derivation")


def effects_to_csv(effects) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EFFECTS_COLUMNS)
    for e in effects:
        w.writerow([e.effect_id, e.study_id, repr(e.g), repr(e.var_g), repr(e.se_g), e.group_label,
                    e.outcome_label, e.timepoint_index, e.derivation])
    return buf.getvalue()


def effects_from_csv(text: str) -> list[EffectEstimate]:
    rows = csv.DictReader(io.StringIO(text))
    return [EffectEstimate(effect_id=r["effect_id"], study_id=r["study_id"], g=float(r["g"]),
                           var_g=float(r["var_g"]), group_label=r["group_label"],
                           outcome_label=r["outcome_label"],
                           timepoint_index=int(r["timepoint_index"]),
                           derivation=r["derivation"], oriented=True)
            for r in rows]
