import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from clips import estimators as est
from clips.linalg import NotPositiveDefinite
from clips.model import GaussianClassModel, LabeledSet, SetSample, oracle_coefficients
from conftest import random_pd


def labeled(rows, label):
    return LabeledSet(SetSample(np.asarray(rows, dtype=float)), label)


def gaussian_sets(rng, mean, cov, count, m, label):
    chol = np.linalg.cholesky(cov)
    return [
        labeled(mean + rng.standard_normal((m, len(mean))) @ chol.T, label) for _ in range(count)
    ]


def two_class_data(rng, p=4, count=6, m=5, shift=1.0):
    cov2 = random_pd(rng, p) / p
    ones = gaussian_sets(rng, np.full(p, shift), np.eye(p), count, m, 1)
    twos = gaussian_sets(rng, np.zeros(p), cov2, count, m, 2)
    return ones + twos


def moments_from(s1, mu1, s2, mu2):
    def cm(s, mu):
        return est.ClassMoments(1, 1, 0.5, np.asarray(mu, float), np.asarray(s, float))

    return est.PooledMoments(cm(s1, mu1), cm(s2, mu2))


# pooled moments


def test_pooled_moments_two_singletons():
    training = [labeled([[0, 0]], 1), labeled([[2, 2]], 1), labeled([[5, 5]], 2)]
    mom = est.pooled_moments(training)
    assert np.allclose(mom.class1.mean, [1, 1])
    assert np.allclose(mom.class1.covariance, [[1, 1], [1, 1]])
    assert mom.class1.set_count == 2 and mom.class1.observation_count == 2
    assert mom[1] is mom.class1 and mom.class1.prior == pytest.approx(2 / 3)


def test_pooled_moments_ignores_set_membership(rng):
    x = rng.standard_normal((12, 3))
    y = rng.standard_normal((4, 3))
    split = [labeled(x[:5], 1), labeled(x[5:], 1), labeled(y, 2)]
    whole = [labeled(x, 1), labeled(y, 2)]
    a, b = est.pooled_moments(split), est.pooled_moments(whole)
    assert np.allclose(a.class1.covariance, b.class1.covariance)
    assert np.allclose(a.class1.covariance, np.cov(x.T, bias=True))


def test_pooled_moments_missing_class():
    with pytest.raises(est.MissingClass):
        est.pooled_moments([labeled([[0.0]], 1)])


def test_pooled_moments_rate(rng):
    mu, cov = np.array([1.0, -1.0]), np.array([[2.0, 0.5], [0.5, 1.0]])
    errs = []
    for n_sets in (10, 160):
        trial = []
        for _ in range(30):
            data = gaussian_sets(rng, mu, cov, n_sets, 10, 1) + gaussian_sets(rng, mu, cov, 2, 10, 2)
            mom = est.pooled_moments(data).class1
            trial.append(max(np.abs(mom.mean - mu).max(), np.abs(mom.covariance - cov).max()))
        errs.append(np.mean(trial))
    # sixteen times the data should cut the error about fourfold
    assert 2.5 < errs[0] / errs[1] < 6


# plug-in rules


def test_plugin_full_matches_oracle_on_estimated_moments(rng):
    training = two_class_data(rng, p=3, count=10)
    mom = est.pooled_moments(training)
    clf = est.plugin_classifier(mom, "plugin-full")
    expected = oracle_coefficients(
        GaussianClassModel(mom.class1.prior, mom.class1.mean, mom.class1.covariance),
        GaussianClassModel(mom.class2.prior, mom.class2.mean, mom.class2.covariance),
    )
    c = clf.coefficients
    assert c.constant == pytest.approx(expected.constant, abs=1e-10)
    assert np.allclose(c.linear, expected.linear, atol=1e-10)
    assert np.allclose(c.quadratic, expected.quadratic, atol=1e-10)
    assert c.prior_log_ratio == pytest.approx(expected.prior_log_ratio)


def test_plugin_identical_classes_zero():
    mom = moments_from(np.eye(3), [1, 2, 3], np.eye(3), [1, 2, 3])
    c = est.plugin_classifier(mom, "plugin-full").coefficients
    assert c.constant == 0 and not c.linear.any() and not c.quadratic.any()


def test_plugin_diag_equals_full_on_stripped(rng):
    s1, s2 = random_pd(rng, 4), random_pd(rng, 4)
    mu1, mu2 = rng.standard_normal(4), rng.standard_normal(4)
    diag = est.plugin_classifier(moments_from(s1, mu1, s2, mu2), "plugin-diag").coefficients
    full = est.plugin_classifier(
        moments_from(np.diag(np.diag(s1)), mu1, np.diag(np.diag(s2)), mu2), "plugin-full"
    ).coefficients
    assert diag.constant == full.constant
    assert np.array_equal(diag.linear, full.linear)
    assert np.array_equal(diag.quadratic, full.quadratic)


def test_plugin_enriched_on_degenerate_singletons():
    training = [labeled([[1.0, 0.0]], 1), labeled([[0.0, 0.0]], 2)]
    clf = est.plugin_classifier(est.pooled_moments(training), "plugin-enriched", delta=1.0)
    c = clf.coefficients
    # both covariances become I: beta = mu1 - mu2, constant = -|mu1|^2/2
    assert np.allclose(c.linear, [1.0, 0.0])
    assert c.constant == pytest.approx(-0.5)
    assert not c.quadratic.any()
    assert clf.enrich_delta == 1.0


def test_plugin_full_rank_deficient(rng):
    training = two_class_data(rng, p=8, count=1, m=3)
    with pytest.raises(NotPositiveDefinite):
        est.plugin_classifier(est.pooled_moments(training), "plugin-full")
    est.plugin_classifier(est.pooled_moments(training), "plugin-diag")


def test_plugin_rejects_bad_variant():
    mom = moments_from(np.eye(2), [0, 0], np.eye(2), [0, 0])
    with pytest.raises(ValueError):
        est.plugin_classifier(mom, "clips")
    with pytest.raises(ValueError):
        est.plugin_classifier(mom, "plugin-enriched", delta=0.0)


# CLIME


def test_clime_identity_shrinks():
    omega = est.clime(np.eye(20), 0.1)
    assert np.max(np.abs(omega - 0.9 * np.eye(20))) <= 1e-6


@pytest.mark.parametrize("lam", [1.0, 1.5, 3.0])
def test_clime_large_lambda_zero(lam):
    assert not np.any(est.clime(np.eye(5), lam))


def test_clime_diagonal_closed_form():
    omega = est.clime(np.diag([2.0, 4.0]), 0.1)
    assert np.allclose(omega, np.diag([0.45, 0.225]), atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(
    d=st.lists(st.floats(0.2, 5.0), min_size=1, max_size=6),
    lam=st.floats(0.01, 1.5),
)
def test_clime_separable_property(d, lam):
    omega = est.clime(np.diag(d), lam)
    assert np.allclose(omega, np.diag(max(1 - lam, 0) / np.array(d)), atol=1e-8)


def clime_column_oracle(s, j, lam):
    p = s.shape[0]
    e = np.eye(p)[j]
    a = np.block([[s, -s], [-s, s]])
    b = np.concatenate([lam + e, lam - e])
    res = linprog(np.ones(2 * p), A_ub=a, b_ub=b, bounds=(0, None), method="highs")
    return res.fun


def test_clime_feasible_and_l1_minimal(rng):
    for trial in range(5):
        p = 6
        x = rng.standard_normal((15, p))
        s = np.cov(x.T, bias=True)
        lam = 0.3
        omega = est.clime(s, lam)
        assert np.max(np.abs(s @ omega - np.eye(p))) <= lam + 1e-8
        for j in range(p):
            assert np.abs(omega[:, j]).sum() == pytest.approx(clime_column_oracle(s, j, lam), abs=1e-7)


def test_clime_infeasible_column():
    # a singular estimate cannot reach e_1 within a tiny tolerance
    s = np.array([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(est.InfeasibleColumn) as info:
        est.clime(s, 0.01)
    assert info.value.column == 0
    assert info.value.lambda1 == 0.01


# thresholding


def test_threshold_equal_inputs():
    w = np.arange(9.0).reshape(3, 3)
    assert not est.threshold_difference(w, w, 0.1).any()


def test_threshold_smaller_magnitude():
    o1 = np.zeros((2, 2))
    o2 = np.array([[0.0, 0.3], [0.5, 0.0]])
    out = est.threshold_difference(o1, o2, 0.1)
    assert np.array_equal(out, [[0.0, 0.3], [0.3, 0.0]])


def test_threshold_kills_partner():
    o2 = np.array([[0.0, 0.05], [0.5, 0.0]])
    out = est.threshold_difference(np.zeros((2, 2)), o2, 0.1)
    assert not out.any()


def test_threshold_negative_entries():
    o2 = np.array([[0.0, -0.3], [-0.5, 0.0]])
    out = est.threshold_difference(np.zeros((2, 2)), o2, 0.1)
    assert np.array_equal(out, [[0.0, -0.3], [-0.3, 0.0]])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), lam=st.floats(0.01, 2.0), bigger=st.floats(1.0, 5.0))
def test_threshold_properties(seed, lam, bigger):
    rng = np.random.default_rng(seed)
    o1, o2 = rng.standard_normal((5, 5)), rng.standard_normal((5, 5))
    out = est.threshold_difference(o1, o2, lam)
    assert np.array_equal(out, out.T)
    nz = out[out != 0]
    assert np.all(np.abs(nz) > lam)
    wider = est.threshold_difference(o1, o2, lam * bigger)
    assert not np.any((wider != 0) & (out == 0))


# direct beta


def test_direct_beta_separable_example():
    mom = moments_from(np.eye(5), [1, 0, 0, 0, 0], np.eye(5), np.zeros(5))
    beta = est.direct_beta(mom, 0.2)
    assert np.allclose(beta, [0.6, 0, 0, 0, 0], atol=1e-6)


def test_direct_beta_overlap_zero():
    mom = moments_from(np.eye(2), [0.3, 0.0], np.eye(2), [0.0, 0.0])
    assert np.allclose(est.direct_beta(mom, 0.2), 0.0, atol=1e-12)


def test_direct_beta_equal_means(rng):
    s = random_pd(rng, 4)
    mu = rng.standard_normal(4)
    assert np.allclose(est.direct_beta(moments_from(s, mu, s, mu), 0.1), 0.0, atol=1e-10)


def direct_beta_oracle(s1, s2, mu1, mu2, lam):
    p = len(mu1)
    z = np.zeros((p, p))
    eye = np.eye(p)
    # variables t1, t2 free and slack t >= |t1 - t2|
    a = np.vstack(
        [
            np.hstack([s1, z, z]),
            np.hstack([-s1, z, z]),
            np.hstack([z, s2, z]),
            np.hstack([z, -s2, z]),
            np.hstack([eye, -eye, -eye]),
            np.hstack([-eye, eye, -eye]),
        ]
    )
    b = np.concatenate([lam + mu1, lam - mu1, lam + mu2, lam - mu2, np.zeros(2 * p)])
    bounds = [(None, None)] * (2 * p) + [(0, None)] * p
    res = linprog(np.r_[np.zeros(2 * p), np.ones(p)], A_ub=a, b_ub=b, bounds=bounds, method="highs")
    return res.fun


def test_direct_beta_feasible_and_optimal(rng):
    for _ in range(5):
        p = 5
        s1, s2 = np.cov(rng.standard_normal((12, p)).T), random_pd(rng, p) / p
        mu1, mu2 = rng.standard_normal(p), rng.standard_normal(p)
        lam = 0.2
        beta = est.direct_beta(moments_from(s1, mu1, s2, mu2), lam)
        assert np.abs(beta).sum() == pytest.approx(direct_beta_oracle(s1, s2, mu1, mu2, lam), abs=1e-7)
        capped = est.direct_beta(moments_from(s1, mu1, s2, mu2), lam, l1_cap=1e6)
        assert np.abs(capped).sum() == pytest.approx(np.abs(beta).sum(), abs=1e-7)


def test_direct_beta_infeasible():
    s = np.array([[1.0, 1.0], [1.0, 1.0]])
    mom = moments_from(s, [1.0, -1.0], s, [0.0, 0.0])
    with pytest.raises(est.Infeasible):
        est.direct_beta(mom, 0.1)


# constant fit


def test_fit_beta0_balanced_null(rng):
    batch = [labeled(rng.standard_normal((1, 3)), k) for k in (1, 2) for _ in range(8)]
    beta0 = est.fit_beta0(batch, np.zeros(3), np.zeros((3, 3)), (0.5, 0.5))
    assert abs(beta0) <= 1e-8


def test_fit_beta0_symmetric_offsets():
    # beta = 1 gives class-1 offsets -c and class-2 offsets +c
    batch = [labeled([[-2.0]], 1), labeled([[-1.0]], 1), labeled([[2.0]], 2), labeled([[1.0]], 2)]
    beta0 = est.fit_beta0(batch, np.ones(1), np.zeros((1, 1)), (0.5, 0.5))
    assert abs(beta0) <= 1e-8


def test_fit_beta0_stationary(rng):
    training = two_class_data(rng, p=3, count=10)
    beta, nabla = rng.standard_normal(3) * 0.3, np.diag(rng.standard_normal(3)) * 0.2
    beta0 = est.fit_beta0(training, beta, nabla, (0.5, 0.5))
    summ = est.SetSummaries.of(training)
    offsets = np.log(1.0) + summ.sizes * summ.partial_scores(beta, nabla)
    labels = (summ.labels == 1).astype(float)
    _, grad, _ = est.beta0_objective(beta0, summ.sizes, offsets, labels)
    h = 1e-5
    fd = (
        est.beta0_objective(beta0 + h, summ.sizes, offsets, labels)[0]
        - est.beta0_objective(beta0 - h, summ.sizes, offsets, labels)[0]
    ) / (2 * h)
    assert abs(grad) <= 1e-10
    assert abs(fd - grad) <= 1e-6
    for t in rng.uniform(-5, 5, 100):
        assert est.beta0_objective(t, summ.sizes, offsets, labels)[2] >= 0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), theta=st.floats(-3, 3))
def test_beta0_objective_derivatives(seed, theta):
    rng = np.random.default_rng(seed)
    sizes = rng.integers(1, 6, 10).astype(float)
    offsets = rng.normal(size=10) * 3
    labels = (rng.random(10) < 0.5).astype(float)
    v, g, hess = est.beta0_objective(theta, sizes, offsets, labels)
    h = 1e-5
    vp, gp, _ = est.beta0_objective(theta + h, sizes, offsets, labels)
    vm, gm_, _ = est.beta0_objective(theta - h, sizes, offsets, labels)
    assert (vp - vm) / (2 * h) == pytest.approx(g, abs=1e-6)
    assert (gp - gm_) / (2 * h) == pytest.approx(hess, abs=1e-6)
    assert hess >= 0


def test_fit_beta0_far_minimizer_raises():
    # offsets -200 and -300 put the minimizer near theta0 = 250, where the
    # likelihood is numerically flat from the start
    batch = [labeled([[-200.0]], 1), labeled([[-300.0]], 2)]
    with pytest.raises(est.NoConvergence):
        est.fit_beta0(batch, np.ones(1), np.zeros((1, 1)), (0.5, 0.5))


def test_bisection_bracket_limit():
    def never_turns(t):
        return -t, -1.0, 0.0

    with pytest.raises(est.NoConvergence):
        est._bisect_beta0(never_turns, 1e-10)


def test_fit_beta0_missing_class():
    with pytest.raises(est.MissingClass):
        est.fit_beta0([labeled([[1.0]], 1)], np.zeros(1), np.zeros((1, 1)), (0.5, 0.5))


# full pipeline


def test_split_batches_halves(rng):
    training = two_class_data(rng, count=7)
    first, second = est.split_batches(training, 3)
    assert sum(s.label == 1 for s in first) == 3 and sum(s.label == 2 for s in first) == 3
    assert len(second) == 8
    ids = {id(s) for s in first} | {id(s) for s in second}
    assert len(ids) == len(training)
    again, _ = est.split_batches(training, 3)
    assert [id(s) for s in again] == [id(s) for s in first]


def test_fit_clips_identical_classes_large_lambdas(rng):
    cov = np.eye(3)
    training = gaussian_sets(rng, np.zeros(3), cov, 6, 5, 1) + gaussian_sets(
        rng, np.zeros(3), cov, 6, 5, 2
    )
    hyper = est.ClipsHyperparameters(clime_lambda=0.5, threshold_lambda=10.0, beta_lambda=10.0)
    clf = est.fit_clips(training, hyper)
    assert not clf.coefficients.linear.any()
    assert not clf.coefficients.quadratic.any()
    assert clf.method is est.Method.CLIPS


def test_fit_clips_deterministic(rng):
    training = two_class_data(rng, count=8)
    hyper = est.ClipsHyperparameters(0.3, 0.1, 0.1, split_seed=11)
    a = est.fit_clips(training, hyper).coefficients
    b = est.fit_clips(training, hyper).coefficients
    assert a.constant == b.constant
    assert np.array_equal(a.linear, b.linear) and np.array_equal(a.quadratic, b.quadratic)


def test_fit_clips_singleton_sets(rng):
    training = two_class_data(rng, p=3, count=20, m=1, shift=2.0)
    clf = est.fit_clips(training, est.ClipsHyperparameters(0.3, 0.1, 0.1))
    accuracy = np.mean([clf.predict(s.sample) == s.label for s in training])
    assert accuracy > 0.7


def test_fit_clips_without_splitting_uses_all_sets(rng):
    training = two_class_data(rng, count=6)
    hyper = est.ClipsHyperparameters(0.3, 0.1, 0.1, sample_splitting=False)
    clf = est.fit_clips(training, hyper)
    mom = est.pooled_moments(training)
    assert np.array_equal(clf.coefficients.linear, est.direct_beta(mom, 0.1))


def test_fit_clips_needs_two_sets_per_class(rng):
    training = two_class_data(rng, count=1)
    with pytest.raises(est.MissingClass):
        est.fit_clips(training, est.ClipsHyperparameters(0.3, 0.1, 0.1))


def test_hyperparameters_validation():
    with pytest.raises(ValueError):
        est.ClipsHyperparameters(0.0, 0.1, 0.1)
    with pytest.raises(ValueError):
        est.ClipsHyperparameters(0.1, 0.1, 0.1, l1_cap=-1.0)


# tuning


def test_tune_single_point_grid(rng):
    training, validation = two_class_data(rng, count=6), two_class_data(rng, count=6)
    grid = est.LambdaGrid((0.3,), (0.1,), (0.2,))
    res = est.tune(training, validation, grid, split_seed=4)
    h = res.hyperparameters
    assert (h.clime_lambda, h.threshold_lambda, h.beta_lambda) == (0.3, 0.1, 0.2)
    direct = est.fit_clips(training, h)
    assert res.classifier.coefficients.constant == direct.coefficients.constant
    assert res.validation_error == est.validation_error(direct.coefficients, validation)


def test_tune_identical_classes_prefers_largest(rng):
    cov = np.eye(2)
    make = lambda: gaussian_sets(rng, np.zeros(2), cov, 5, 4, 1) + gaussian_sets(
        rng, np.zeros(2), cov, 5, 4, 2
    )
    grid = est.LambdaGrid((0.5, 2.0), (1.0, 50.0), (1.0, 50.0))
    res = est.tune(make(), make(), grid)
    h = res.hyperparameters
    # with everything zeroed the rule predicts class 2 for every set
    assert res.validation_error == pytest.approx(0.5)
    assert (h.clime_lambda, h.threshold_lambda, h.beta_lambda) == (2.0, 50.0, 50.0)


def test_tune_infeasible_cells_score_one():
    training = [
        labeled([[1.0, 1.0]], 1),
        labeled([[1.0, 1.0]], 1),
        labeled([[0.0, 0.0]], 2),
        labeled([[2.0, 2.0]], 2),
    ]
    grid = est.LambdaGrid((0.01, 5.0), (1.0,), (5.0,))
    res = est.tune(training, training, grid, sample_splitting=False)
    assert res.errors[(0.01, 1.0, 5.0)] == 1.0
    assert res.hyperparameters.clime_lambda == 5.0


def test_tune_missing_class(rng):
    training = two_class_data(rng)
    with pytest.raises(est.MissingClass):
        est.tune(training, [s for s in training if s.label == 1])


def test_default_grid_shape(rng):
    training = two_class_data(rng, p=5, count=7, m=10)
    grid = est.default_grid(training)
    rate = est.theory_rate(5, 14, 10.0)
    assert len(grid.clime) == 7 and len(grid) == 343
    assert grid.clime[0] == pytest.approx(rate / 10) and grid.clime[-1] == pytest.approx(rate * 10)
    assert grid.beta == grid.clime
    assert grid.threshold[3] >= rate


def test_lambda_grid_validation():
    with pytest.raises(ValueError):
        est.LambdaGrid((), (0.1,), (0.1,))
    with pytest.raises(ValueError):
        est.LambdaGrid((0.1,), (-1.0,), (0.1,))
