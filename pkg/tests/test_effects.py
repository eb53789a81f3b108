"""Hedges' g estimators against exact-arithmetic reference values.

Reference numbers come from tools/effect_oracles.py (fractions + mpmath).
"""

import math

import pytest
from hypothesis import given, strategies as st

from livingmeta.effects import (EffectEstimate, EffectSizeError, check_timepoints, effects_from_csv,
                                effects_to_csv, g_from_gains, g_from_posttest, g_from_statistic,
                                hedges_correction, orient, pooled_sd)
from livingmeta.ledger import load_v1_fixture
from livingmeta.effects import compute_effects


@pytest.mark.parametrize("df, J", [(10, 0.9230769230769231), (98, 0.9923273657289002),
                                   (18, 0.9577464788732394), (58, 0.987012987012987)])
def test_correction_factor_values(df, J):
    assert hedges_correction(df).J == pytest.approx(J, rel=1e-12)


def test_correction_factor_limit():
    assert abs(hedges_correction(10**6).J - 1) < 1e-5


def test_correction_factor_rejects_tiny_df():
    with pytest.raises(EffectSizeError):
        hedges_correction(1)


@given(st.integers(2, 10**6))
def test_correction_factor_increasing_and_below_one(df):
    a, b = hedges_correction(df).J, hedges_correction(df + 1).J
    assert 0 < a < b < 1


def test_posttest_half_sd_difference():
    e = g_from_posttest(0.5, 0.0, 1.0, 1.0, 50, 50)
    assert e.g == pytest.approx(0.4961636828644501, rel=1e-12)
    assert e.var_g == pytest.approx(0.04061943603194641, rel=1e-12)
    assert e.derivation == "posttest" and not e.oriented


def test_posttest_unit_difference_small_arms():
    # J(18) * 1; the frozen value is the exact-arithmetic result.
    assert g_from_posttest(1.0, 0.0, 1.0, 1.0, 10, 10).g == pytest.approx(0.9577464788732394, rel=1e-12)


def test_posttest_equal_means():
    e = g_from_posttest(3.0, 3.0, 2.0, 1.5, 12, 20)
    J = hedges_correction(30).J
    assert e.g == 0.0
    assert e.var_g == pytest.approx(J**2 * 32 / (12 * 20))


def test_pooled_sd_weights_by_df():
    assert pooled_sd(1.0, 3.0, 2, 4) == pytest.approx(math.sqrt((1 + 27) / 4))
    with pytest.raises(EffectSizeError):
        pooled_sd(0.0, 1.0, 5, 5)


def test_gain_scores():
    e = g_from_gains(10, 14, 10, 12, 4, 4, 30, 30, r_prepost=0.7)
    assert e.g == pytest.approx(0.4935064935064935, rel=1e-12)
    J = hedges_correction(58).J
    assert e.var_g / J**2 == pytest.approx(0.042083333333333334, rel=1e-12)


def test_gain_scores_equal_gains():
    assert g_from_gains(5, 9, 7, 11, 2, 3, 20, 25).g == 0.0


def test_gain_scores_perfect_correlation_leaves_only_d_term():
    e = g_from_gains(0, 3, 0, 1, 2, 2, 40, 40, r_prepost=1.0)
    J = hedges_correction(78).J
    d = e.g / J
    assert e.var_g / J**2 == pytest.approx(d**2 / (2 * 80))


def test_gain_scores_refuse_different_scales():
    with pytest.raises(EffectSizeError):
        g_from_gains(0, 1, 0, 1, 1, 1, 10, 10, same_scale=False)
    with pytest.raises(EffectSizeError):
        g_from_gains(0, 1, 0, 1, 1, 1, 10, 10, r_prepost=1.5)


def test_from_t():
    assert g_from_statistic(0.0, 20, 20).g == 0.0
    e = g_from_statistic(2.0, 50, 50)
    assert e.g / hedges_correction(98).J == pytest.approx(0.4, rel=1e-12)
    assert e.g == pytest.approx(0.39693094629156, rel=1e-12)


def test_from_F_matches_t():
    t = g_from_statistic(2.0, 50, 50)
    f = g_from_statistic(4.0, 50, 50, kind="F", sign=1)
    assert (f.g, f.var_g) == pytest.approx((t.g, t.var_g), rel=1e-14)
    assert f.derivation == "from_F"
    assert g_from_statistic(4.0, 50, 50, kind="F", sign=-1).g == pytest.approx(-t.g)


@pytest.mark.parametrize("kw", [dict(kind="F", df_num=2), dict(kind="F", sign=0), dict(kind="chi2")])
def test_statistic_errors(kw):
    with pytest.raises(EffectSizeError):
        g_from_statistic(4.0, 30, 30, **kw)


def test_arm_too_small():
    with pytest.raises(EffectSizeError):
        g_from_posttest(1, 0, 1, 1, 1, 10)


def test_orient():
    e = EffectEstimate("e", "s", -0.3, 0.05)
    flipped = orient(e, ai_arm_is_first=False)
    assert flipped.g == pytest.approx(0.3) and flipped.oriented
    assert orient(EffectEstimate("z", "s", 0.0, 0.05), False).g == 0.0
    assert math.copysign(1, orient(EffectEstimate("z", "s", 0.0, 0.05), False).g) == 1
    with pytest.raises(EffectSizeError):
        orient(flipped, True)


@given(st.floats(-3, 3), st.floats(0.01, 1), st.booleans())
def test_orient_is_sign_only(g, v, first):
    e = orient(EffectEstimate("e", "s", g, v), first)
    assert abs(e.g) == abs(g) and e.var_g == v


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 5), st.floats(0.1, 5),
       st.integers(2, 500), st.integers(2, 500))
def test_swapping_arms_flips_sign(mt, mc, st_, sc, nt, nc):
    a = g_from_posttest(mt, mc, st_, sc, nt, nc)
    b = g_from_posttest(mc, mt, sc, st_, nc, nt)
    assert a.g == pytest.approx(-b.g, abs=1e-12)
    assert a.var_g == pytest.approx(b.var_g, rel=1e-12)
    assert a.var_g > 0


def test_effect_requires_positive_variance():
    with pytest.raises(EffectSizeError):
        EffectEstimate("e", "s", 0.1, 0.0)


def test_timepoints_must_be_contiguous():
    es = [EffectEstimate("a", "s", 0, 1, "g", "o", 0), EffectEstimate("b", "s", 0, 1, "g", "o", 2)]
    with pytest.raises(EffectSizeError):
        check_timepoints(es)


def test_fixture_effects_round_trip_through_csv():
    effects = compute_effects(load_v1_fixture().studies)
    assert len(effects) == 27 and all(e.oriented for e in effects)
    back = effects_from_csv(effects_to_csv(effects))
    assert [(e.effect_id, e.g, e.var_g) for e in back] == [(e.effect_id, e.g, e.var_g) for e in effects]


TABLE_G = {"bastani2025": 0.00, "beslic2024": -0.40, "canonigo2024": 1.62, "cheng2024": -0.34,
           "elshara2025": 0.59, "fardian2025": 0.34, "henkel2024": 0.34, "kretzschmar2024": 0.09,
           "lademann2025": 0.00, "liu2025": 1.04, "pardos2024": 0.30, "serrano2025": 0.26,
           "steinbach2025": 0.34, "wahba2024": 1.38, "xing2025": 0.46}


def test_fixture_effects_reproduce_reported_study_g():
    for e in compute_effects(load_v1_fixture().studies):
        assert e.g == pytest.approx(TABLE_G[e.study_id], abs=1e-12)
