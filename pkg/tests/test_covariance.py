import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from livingmeta.covariance import (CovarianceError, CovarianceSpec, NotPositiveDefiniteError,
                                   build_vcov, cell_seed, cholesky, effective_precision,
                                   pair_correlation, rho_phi_grid)
from livingmeta.effects import EffectEstimate


def eff(eid, study, se, group="ai-vs-ctl", outcome="o", t=0, oriented=True):
    return EffectEstimate(eid, study, 0.1, se**2, group, outcome, t, oriented=oriented)


def test_shared_group_correlation():
    V = build_vcov([eff("a", "s", 0.2, outcome="o1"), eff("b", "s", 0.3, outcome="o2")],
                   CovarianceSpec(rho=0.7, phi=0.8)).V
    assert V[0, 1] == pytest.approx(0.042, rel=1e-12)
    assert V[0, 0] == pytest.approx(0.04) and V[1, 1] == pytest.approx(0.09)


def test_lag_one_autocorrelation():
    V = build_vcov([eff("a", "s", 0.2, t=0), eff("b", "s", 0.2, t=1)], CovarianceSpec(0.7, 0.8)).V
    assert V[0, 1] == pytest.approx(0.032, rel=1e-12)


def test_different_outcome_and_lag_multiply():
    a, b = eff("a", "s", 1, outcome="x", t=0), eff("b", "s", 1, outcome="y", t=2)
    assert pair_correlation(a, b, CovarianceSpec(0.5, 0.6)) == pytest.approx(0.5 * 0.36)


def test_cross_study_zero():
    V = build_vcov([eff("a", "s1", 0.2), eff("b", "s2", 0.3)]).V
    assert V[0, 1] == 0 and V[1, 0] == 0


def test_identical_measure_rejected():
    with pytest.raises(CovarianceError):
        build_vcov([eff("a", "s", 0.2), eff("b", "s", 0.3)])


def test_unoriented_rejected():
    with pytest.raises(CovarianceError):
        build_vcov([eff("a", "s", 0.2, oriented=False)])


def test_multi_effect_block_needs_labels():
    with pytest.raises(CovarianceError):
        build_vcov([eff("a", "s", 0.2, outcome=""), eff("b", "s", 0.3, outcome="p")])


def test_hand_cholesky():
    L = cholesky(np.array([[0.04, 0.042], [0.042, 0.09]]))
    assert L[0, 0] == pytest.approx(0.2, rel=1e-12)
    assert L[1, 0] == pytest.approx(0.21, rel=1e-12)
    assert L[1, 1] == pytest.approx(0.214242852856285, rel=1e-12)
    assert L[0, 1] == 0


def test_identity_cholesky():
    assert np.array_equal(cholesky(np.eye(4)), np.eye(4))


def test_zero_variance_not_pd():
    with pytest.raises(NotPositiveDefiniteError):
        cholesky(np.diag([1.0, 0.0, 2.0]))


def test_asymmetric_rejected():
    with pytest.raises(CovarianceError):
        cholesky(np.array([[1.0, 0.5], [0.2, 1.0]]))


def test_effective_precision_of_independent_block():
    assert effective_precision(np.diag([0.25, 0.5])) == pytest.approx(6.0)


def _block(draw_labels):
    out = []
    for k, (outcome, t, se) in enumerate(draw_labels):
        out.append(eff(f"e{k}", "s", se, outcome=f"o{outcome}", t=t))
    return out


labels = st.lists(st.tuples(st.integers(0, 3), st.integers(0, 4), st.floats(0.05, 1.0)),
                  min_size=1, max_size=12, unique_by=lambda x: (x[0], x[1]))
grid_value = st.floats(0, 0.95)


@settings(max_examples=200)
@given(labels, grid_value, grid_value)
def test_blocks_positive_definite(lbls, rho, phi):
    cov = build_vcov(_block(lbls), CovarianceSpec(rho, phi))
    assert np.all(np.linalg.eigvalsh(cov.V) > 0)


@settings(max_examples=100)
@given(labels, st.randoms(use_true_random=False))
def test_permutation_invariant(lbls, rnd):
    effects = _block(lbls)
    perm = list(range(len(effects)))
    rnd.shuffle(perm)
    V = build_vcov(effects).V
    Vp = build_vcov([effects[i] for i in perm]).V
    assert np.allclose(Vp, V[np.ix_(perm, perm)], rtol=1e-14, atol=0)


def test_zero_rho_phi_diagonal():
    V = build_vcov(_block([(0, 0, 0.2), (1, 0, 0.3), (0, 1, 0.4)]), CovarianceSpec(0, 0)).V
    assert np.array_equal(V, np.diag(np.diag(V)))


def test_spec_bounds():
    with pytest.raises(ValueError):
        CovarianceSpec(rho=1.0)


def test_single_effect_studies_grid_identical():
    effects = [eff(f"e{k}", f"s{k}", 0.1 + 0.05 * k) for k in range(5)]

    def weighted_mean(es, spec, seed):
        V = build_vcov(es, spec).V
        w = np.linalg.solve(V, np.ones(len(es)))
        return float(w @ [e.g for e in es] / w.sum())

    grid = rho_phi_grid(effects, [0, 0.5, 0.9], [0, 0.5, 0.9], weighted_mean)
    assert len(grid.cells) == 9 and grid.spread == 0


def test_grid_records_failed_cells_and_rejects_out_of_range():
    def boom(es, spec, seed):
        if spec.rho > 0.5:
            raise RuntimeError("no")
        return 1.0

    grid = rho_phi_grid([eff("a", "s", 0.1)], [0, 0.9], [0], boom)
    assert [c.failed is None for c in grid.cells] == [True, False]
    with pytest.raises(CovarianceError):
        rho_phi_grid([eff("a", "s", 0.1)], [0.95], [0], boom)


def test_cell_seeds_are_distinct_and_stable():
    a = cell_seed(3, 0.7, 0.8).generate_state(2)
    assert np.array_equal(a, cell_seed(3, 0.7, 0.8).generate_state(2))
    assert not np.array_equal(a, cell_seed(3, 0.8, 0.7).generate_state(2))


def test_csv_has_effect_id_header():
    cov = build_vcov([eff("a", "s", 0.2, outcome="o1"), eff("b", "s", 0.3, outcome="o2")])
    lines = cov.to_csv().splitlines()
    assert lines[0] == "effect_id,a,b" and lines[1].startswith("a,")
