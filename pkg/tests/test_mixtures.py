import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skewlab import (
    ClassicalParams,
    FitConfig,
    MixtureModel,
    SdbParams,
    e_step,
    fit,
    logpdf,
    map_labels,
    mixture_loglik,
    sample,
)
from skewlab.bench import ari
from skewlab.exceptions import SkewlabError
from skewlab.mixtures import initial_responsibilities
from skewlab.moments import classical_moments

from _numerics import two_cluster_data


def _normal(mu, var=1.0):
    return ClassicalParams([mu], [[var]], [0.0])


# --- model and likelihood ----------------------------------------------------------

def test_mixture_model_validation():
    with pytest.raises(SkewlabError):
        MixtureModel("csn", [0.5, 0.6], [_normal(0), _normal(1)])
    with pytest.raises(SkewlabError):
        MixtureModel("csn", [1.0], [])
    with pytest.raises(SkewlabError):
        MixtureModel("ssn", [1.0], [_normal(0)])
    with pytest.raises(SkewlabError):
        MixtureModel("csn", [0.5, 0.5], [_normal(0), ClassicalParams([0, 0], np.eye(2), [0, 0])])


def test_loglik_single_component():
    p = ClassicalParams([0.0, 1.0], [[1.0, 0.3], [0.3, 2.0]], [2.0, -1.0])
    x = sample(p, 50, seed=1)
    m = MixtureModel("classical-SN", [1.0], [p])
    assert mixture_loglik(x, m) == pytest.approx(float(np.sum(logpdf(x, p))), rel=1e-14)


def test_loglik_duplicate_component_identity():
    a = SdbParams([0.0, 0.0], np.eye(2), [1.0, -1.0])
    b = SdbParams([3.0, 0.0], np.eye(2), [0.5, 0.5])
    x = sample(a, 40, seed=2)
    m1 = MixtureModel("SDB-SN", [0.3, 0.7], [a, b])
    m2 = MixtureModel("SDB-SN", [0.15, 0.15, 0.7], [a, a, b])
    assert mixture_loglik(x, m1) == pytest.approx(mixture_loglik(x, m2), abs=1e-12)


def test_loglik_hand_example():
    # 0.4 SN(0, 1, 2) + 0.6 SN(1, 2^2, -1) at (-1, 0.5, 2), via scipy.stats.skewnorm
    m = MixtureModel("classical-SN", [0.4, 0.6], [
        ClassicalParams([0.0], [[1.0]], [2.0]),
        ClassicalParams([1.0], [[4.0]], [-1.0]),
    ])
    assert mixture_loglik([[-1.0], [0.5], [2.0]], m) == pytest.approx(-5.267853979138341, rel=1e-13)


def test_e_step_examples():
    x = np.array([[0.0], [1.0], [-2.0]])
    assert np.array_equal(e_step(x, MixtureModel("csn", [1.0], [_normal(0)])), np.ones((3, 1)))
    same = MixtureModel("csn", [1 / 3] * 3, [_normal(0.5)] * 3)
    assert np.allclose(e_step(x, same), 1 / 3, atol=1e-15)
    m = MixtureModel("csn", [0.3, 0.7], [_normal(0.0), _normal(2.0)])
    r = e_step([[0.0], [1.0]], m)
    assert r[0] == pytest.approx([0.7600041276283266, 0.2399958723716734], abs=1e-14)
    assert r[1] == pytest.approx([0.3, 0.7], abs=1e-14)


def test_e_step_far_point_never_nan():
    m = MixtureModel("csn", [0.5, 0.5], [_normal(0.0), _normal(1.0)])
    r = e_step([[1e4], [-1e4]], m)
    assert np.all(np.isfinite(r)) and np.allclose(r.sum(axis=1), 1.0)
    assert r[0, 1] == 1.0 and r[1, 0] == 1.0


def test_map_labels():
    one_hot = np.eye(3)[[2, 0, 1, 1]]
    assert map_labels(one_hot).tolist() == [2, 0, 1, 1]
    assert map_labels([[0.5, 0.5]]).tolist() == [0]
    r = np.random.default_rng(0).dirichlet(np.ones(4), size=100)
    brute = [max(range(4), key=lambda k: (row[k], -k)) for row in r]
    assert map_labels(r).tolist() == brute


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 2), min_size=5, max_size=30))
def test_map_labels_ties_go_to_lowest_index(rows):
    r = np.zeros((len(rows), 3))
    for i, k in enumerate(rows):
        r[i, k:] = 1.0 / (3 - k)
    assert map_labels(r).tolist() == rows


# --- configuration ----------------------------------------------------------------

def test_fit_config_validation():
    with pytest.raises(SkewlabError):
        FitConfig(g=0)
    with pytest.raises(SkewlabError):
        FitConfig(rel_tol=0.0)
    with pytest.raises(SkewlabError):
        FitConfig(init="nearest")
    with pytest.raises(SkewlabError):
        FitConfig(init="given-labels")


def test_initial_responsibilities_reproduce_fit_start():
    x, _ = two_cluster_data("classical-SN", 60, seed=1)
    cfg = FitConfig(seed=4, max_iter=1)
    z0 = initial_responsibilities(x, cfg)
    assert np.allclose(z0.sum(axis=1), 1.0)
    assert np.array_equal(z0, initial_responsibilities(x, cfg))


# --- fitting ----------------------------------------------------------------------

def test_single_component_recovers_moments():
    truth = ClassicalParams([0.5, -1.0], [[1.5, 0.5], [0.5, 1.0]], [2.0, -1.0])
    n = 3000
    x = sample(truth, n, seed=11)
    res = fit(x, "classical-SN", FitConfig(g=1, seed=1))
    assert res.converged
    mean, cov = classical_moments(res.model.components[0])
    true_mean, true_cov = classical_moments(truth)
    se_mean = np.sqrt(np.diag(true_cov) / n)
    assert np.all(np.abs(mean - true_mean) < 3 * se_mean)
    z = x - x.mean(axis=0)
    se_cov = np.array([[np.std(z[:, i] * z[:, j]) for j in range(2)] for i in range(2)]) / math.sqrt(n)
    assert np.all(np.abs(cov - true_cov) < 3 * se_cov)


def test_gaussian_blobs_are_separated():
    rng = np.random.default_rng(5)
    x = np.vstack([rng.normal(0, 1, size=(100, 2)), rng.normal(6, 1, size=(100, 2))])
    truth = np.repeat([0, 1], 100)
    res = fit(x, "classical-SN", FitConfig(seed=1))
    assert ari(res.labels, truth) >= 0.99
    warm = fit(x, "classical-SN", FitConfig(seed=1, init="given-labels", labels=tuple(truth)))
    assert ari(warm.labels, truth) >= 0.99
    assert warm.loglik >= warm.loglik_trace[0] - 1e-8
    print(f"given-labels loglik {warm.loglik:.6f}, kmeans loglik {res.loglik:.6f}")


@pytest.mark.parametrize("family", ["classical-SN", "SDB-SN", "classical-ST", "SDB-ST"])
def test_fit_result_invariants(family):
    x, truth = two_cluster_data(family, 50, seed=3)
    res = fit(x, family, FitConfig(seed=2, max_iter=40))
    assert np.all(np.diff(res.loglik_trace) >= -1e-8)
    assert np.allclose(res.responsibilities.sum(axis=1), 1.0, atol=1e-10)
    assert np.array_equal(res.labels, map_labels(res.responsibilities))
    assert res.model.family == family and res.model.g == 2
    assert res.wall_time > 0 and res.iterations >= 1
    assert mixture_loglik(x, res.model) == pytest.approx(res.loglik, rel=1e-9)
    out = res.to_dict()
    assert set(out) >= {"family", "g", "weights", "components", "loglik", "iterations",
                        "wall_time", "converged", "labels"}


def test_fit_is_deterministic():
    x, _ = two_cluster_data("SDB-SN", 60, seed=4)
    for init in ("kmeans", "random-posterior"):
        cfg = FitConfig(seed=9, init=init, max_iter=30)
        a, b = fit(x, "SDB-SN", cfg), fit(x, "SDB-SN", cfg)
        assert a.loglik_trace == b.loglik_trace
        assert np.array_equal(a.responsibilities, b.responsibilities)
        assert a.model.to_dict() == b.model.to_dict()


def test_permutation_equivariance():
    x, truth = two_cluster_data("classical-SN", 60, seed=5)
    perm = np.random.default_rng(0).permutation(x.shape[0])
    cfg = FitConfig(seed=1, init="given-labels", labels=tuple(truth))
    cfg_p = FitConfig(seed=1, init="given-labels", labels=tuple(truth[perm]))
    a, b = fit(x, "classical-SN", cfg), fit(x[perm], "classical-SN", cfg_p)
    assert np.array_equal(a.labels[perm], b.labels)
    assert np.allclose(a.responsibilities[perm], b.responsibilities, atol=1e-5)
    assert a.loglik == pytest.approx(b.loglik, rel=1e-8)
    assert np.allclose(a.model.weights, b.model.weights, atol=1e-6)


def test_small_sample_is_flagged_not_rejected():
    x, _ = two_cluster_data("classical-SN", 6, seed=6)
    res = fit(x, "classical-SN", FitConfig(seed=1, max_iter=5))
    assert any("small sample" in note for note in res.notes)


def test_fit_rejects_bad_data():
    with pytest.raises(SkewlabError):
        fit(np.array([[0.0, np.nan], [1.0, 2.0]]), "csn")
    with pytest.raises(SkewlabError):
        fit(np.zeros((5, 2)), "csn", FitConfig(init="given-labels", labels=(0, 1)))


@pytest.mark.parametrize("family", ["classical-SN", "SDB-SN"])
def test_family_sanity_across_seeds(family):
    scores = []
    for seed in range(1, 11):
        x, truth = two_cluster_data(family, 80, seed=seed)
        res = fit(x, family, FitConfig(seed=seed))
        scores.append(ari(res.labels, truth))
    assert min(scores) >= 0.9, scores
