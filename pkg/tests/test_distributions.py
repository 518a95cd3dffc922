import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from skewlab import (
    FAMILIES,
    ClassicalParams,
    DeltaVector,
    SdbParams,
    affine_classical,
    alpha_to_delta,
    classical_sn_pdf,
    classical_st_pdf,
    classical_to_sdb_1d,
    delta_to_alpha,
    logpdf,
    param_count,
    pdf,
    sample,
    sdb_sn_pdf,
    sdb_st_pdf,
    sdb_to_classical_1d,
)
from skewlab.distributions import params_from_dict, params_to_dict, sample_classical
from skewlab.exceptions import (
    DimensionError,
    InfeasibleParameterError,
    SkewlabError,
    UnsupportedDimensionError,
)
from skewlab.special import mvn_pdf, mvt_pdf

from _numerics import (
    importance_integral,
    integrate_density,
    location_scale,
    projection_ks_pvalues,
    random_correlation,
    random_directions,
    random_params,
    random_spd,
)


# --- parameter sets -------------------------------------------------------------

def test_classical_derived_quantities():
    p = ClassicalParams([0.0, 1.0], [[4.0, 1.0], [1.0, 9.0]], [1.0, -1.0])
    assert np.allclose(p.omega, [2.0, 3.0])
    assert np.allclose(np.diag(p.omega_bar), 1.0, atol=1e-12)
    assert p.family == "classical-SN"
    assert ClassicalParams([0.0], [[1.0]], [0.0], 4.0).family == "classical-ST"


def test_sdb_derived_quantities():
    p = SdbParams([0.0, 0.0], np.eye(2), [1.0, 2.0])
    assert np.allclose(p.sigma_mat.entries, np.diag([2.0, 5.0]))
    assert np.allclose(p.skew_mat.entries, np.diag([0.5, 0.2]))


@pytest.mark.parametrize("args", [
    ([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]], [0.0, 0.0]),
    ([0.0, 0.0], np.eye(2), [0.0, np.inf]),
    ([0.0], [[1.0]], [1.0], -2.0),
])
def test_invalid_parameters_rejected(args):
    with pytest.raises(SkewlabError):
        ClassicalParams(*args)
    with pytest.raises(SkewlabError):
        SdbParams(*args)


def test_dimension_mismatch_rejected():
    with pytest.raises(DimensionError):
        ClassicalParams([0.0, 0.0], np.eye(2), [1.0])
    with pytest.raises(DimensionError):
        SdbParams([0.0, 0.0], np.eye(3), [1.0, 1.0])
    p = ClassicalParams([0.0, 0.0], np.eye(2), [1.0, 1.0])
    with pytest.raises(DimensionError):
        classical_sn_pdf([0.0, 0.0, 0.0], p)


def test_delta_vector_bounds():
    with pytest.raises(InfeasibleParameterError):
        DeltaVector([0.5, 1.0])
    # each entry is in range but the pair is infeasible for this correlation
    with pytest.raises(InfeasibleParameterError):
        DeltaVector([0.9, -0.9]).check_with([[1.0, 0.9], [0.9, 1.0]])
    DeltaVector([0.5, 0.5]).check_with(np.eye(2))


def test_json_round_trip():
    rng = np.random.default_rng(1)
    for family in FAMILIES:
        p = random_params(family, 3, rng)
        q = params_from_dict(json.loads(json.dumps(params_to_dict(p))))
        assert type(q) is type(p) and q.family == p.family
        x = rng.normal(size=(5, 3))
        assert np.array_equal(logpdf(x, p), logpdf(x, q))


def test_param_count():
    assert param_count("classical-SN", 1) == 3
    assert param_count("classical-ST", 1) == 4
    assert param_count("csn", 2) == 7
    assert param_count("sst", 2) == 8
    for d in range(1, 7):
        assert param_count("classical-SN", d) == param_count("SDB-SN", d)
        assert param_count("classical-ST", d) == param_count("SDB-ST", d)


# --- slant coordinates -------------------------------------------------------------

def test_alpha_delta_examples():
    assert np.allclose(alpha_to_delta([0.0, 0.0], np.eye(2)), 0.0)
    assert np.allclose(delta_to_alpha([0.0, 0.0], np.eye(2)), 0.0)
    assert alpha_to_delta([1.0], [[1.0]])[0] == pytest.approx(0.7071067812, abs=1e-10)


def test_alpha_delta_round_trip():
    rng = np.random.default_rng(2)
    for _ in range(50):
        d = int(rng.integers(1, 6))
        ob = random_correlation(rng, d)
        alpha = rng.normal(0.0, 3.0, size=d)
        back = delta_to_alpha(alpha_to_delta(alpha, ob), ob)
        assert np.max(np.abs(back - alpha)) < 1e-12 * max(1.0, np.max(np.abs(alpha)))


def test_delta_to_alpha_infeasible():
    with pytest.raises(InfeasibleParameterError):
        delta_to_alpha([0.8, 0.8], np.eye(2))


# --- densities: worked values ---------------------------------------------------------

def test_classical_sn_examples():
    rng = np.random.default_rng(3)
    p0 = ClassicalParams([0.2, -0.1], [[1.5, 0.3], [0.3, 0.8]], [0.0, 0.0])
    x = rng.normal(size=(20, 2))
    assert np.allclose(classical_sn_pdf(x, p0), mvn_pdf(x - p0.xi, p0.omega_mat), rtol=1e-14)
    assert classical_sn_pdf([0.0], ClassicalParams([0.0], [[1.0]], [1.0])) == pytest.approx(
        0.3989422804, abs=1e-10)
    # 2 phi_2(x) Phi(2 * 0.5 - 0.5) evaluated in mpmath
    p = ClassicalParams([0.0, 0.0], np.eye(2), [2.0, -1.0])
    assert classical_sn_pdf([0.5, 0.5], p) == pytest.approx(0.171413536280505117, rel=1e-13)


def test_classical_sn_matches_scipy_univariate():
    x = np.linspace(-4, 6, 101)
    p = ClassicalParams([0.7], [[2.25]], [-3.0])
    want = stats.skewnorm.pdf(x, -3.0, loc=0.7, scale=1.5)
    assert np.allclose(classical_sn_pdf(x[:, None], p), want, rtol=1e-12, atol=1e-300)


def test_sdb_sn_examples():
    rng = np.random.default_rng(4)
    delta = [[1.0, 0.4], [0.4, 2.0]]
    p0 = SdbParams([0.0, 1.0], delta, [0.0, 0.0])
    x = rng.normal(size=(20, 2))
    assert np.allclose(sdb_sn_pdf(x, p0), mvn_pdf(x - p0.xi, delta), rtol=1e-12)
    # 4 phi_2(x; 2I) Phi(0.5 / sqrt(0.5)) Phi(0) evaluated in mpmath
    p = SdbParams([0.0, 0.0], np.eye(2), [1.0, 1.0])
    assert sdb_sn_pdf([1.0, 0.0], p) == pytest.approx(0.0942329756013775744, rel=1e-12)


def test_classical_st_examples():
    rng = np.random.default_rng(5)
    omega = [[1.0, -0.3], [-0.3, 2.0]]
    p0 = ClassicalParams([0.0, 0.0], omega, [0.0, 0.0], 5.0)
    x = rng.normal(size=(20, 2))
    assert np.allclose(classical_st_pdf(x, p0), mvt_pdf(x, omega, 5.0), rtol=1e-13)
    # normal limit
    psn = ClassicalParams([0.0, 0.0], omega, [1.5, -0.5])
    pst = ClassicalParams([0.0, 0.0], omega, [1.5, -0.5], 1e6)
    assert np.max(np.abs(classical_st_pdf(x, pst) - classical_sn_pdf(x, psn))) < 1e-4
    # 2 t(1; 4) T(3; 5) evaluated in mpmath
    p = ClassicalParams([0.0], [[1.0]], [3.0], 4.0)
    assert classical_st_pdf([1.0], p) == pytest.approx(0.422863871100406604, rel=1e-12)


def _box_probability(p, lo, hi, n, seed):
    y = sample(p, n, seed=seed)
    inside = np.all((y >= lo) & (y <= hi), axis=1)
    share = inside.mean()
    return share, math.sqrt(share * (1 - share) / n)


def test_classical_st_example_against_sampler():
    p = ClassicalParams([0.0], [[1.0]], [3.0], 4.0)
    lo, hi = 0.9, 1.1
    mass = integrate.quad(lambda t: classical_st_pdf([t], p), lo, hi)[0]
    share, se = _box_probability(p, [lo], [hi], 10**6, 7)
    assert abs(share - mass) < 4 * se
    assert mass / (hi - lo) == pytest.approx(0.4228638711, rel=2e-3)


def test_sdb_st_examples():
    rng = np.random.default_rng(6)
    delta = [[1.0, 0.4], [0.4, 2.0]]
    p0 = SdbParams([0.0, 0.0], delta, [0.0, 0.0], 5.0)
    x = rng.normal(size=(20, 2))
    assert np.allclose(sdb_st_pdf(x, p0), mvt_pdf(x, delta, 5.0), rtol=1e-12)
    p = SdbParams([0.0, 0.0], np.eye(2), [2.0, 2.0], 5.0)
    # two-dimensional mpmath quadrature of the bivariate t skewing factor
    assert sdb_st_pdf([1.0, 1.0], p) == pytest.approx(0.0672091236030927009, rel=1e-9)


def test_sdb_st_example_against_sampler():
    p = SdbParams([0.0, 0.0], np.eye(2), [2.0, 2.0], 5.0)
    lo, hi = np.array([0.8, 0.8]), np.array([1.2, 1.2])
    mass = integrate.dblquad(lambda b, a: sdb_st_pdf([a, b], p), lo[0], hi[0], lo[1], hi[1],
                             epsabs=1e-10)[0]
    share, se = _box_probability(p, lo, hi, 10**6, 8)
    assert abs(share - mass) < 4 * se


def test_sdb_dimension_cap():
    p = SdbParams(np.zeros(7), np.eye(7), np.ones(7))
    with pytest.raises(UnsupportedDimensionError):
        sdb_sn_pdf(np.zeros(7), p)


def test_family_guards():
    with pytest.raises(SkewlabError):
        classical_st_pdf([0.0], ClassicalParams([0.0], [[1.0]], [1.0]))
    with pytest.raises(SkewlabError):
        sdb_sn_pdf([0.0], SdbParams([0.0], [[1.0]], [1.0], 3.0))


def test_single_point_and_batch_agree():
    rng = np.random.default_rng(9)
    for family in FAMILIES:
        p = random_params(family, 3, rng)
        x = rng.normal(size=(4, 3))
        batch = pdf(x, p)
        assert all(pdf(row, p) == pytest.approx(v, rel=1e-13) for row, v in zip(x, batch))


# --- d = 1 coincidence and factorisation ------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(0.1, 5), st.floats(-6, 6),
       st.one_of(st.none(), st.floats(1.5, 50)))
def test_one_dimensional_coincidence(xi, dl, lam, nu):
    sdb = SdbParams([xi], [[dl]], [lam], nu)
    cls = sdb_to_classical_1d(sdb)
    back = classical_to_sdb_1d(cls)
    x = np.linspace(xi - 10, xi + 10, 201)[:, None]
    assert np.max(np.abs(pdf(x, sdb) - pdf(x, cls))) < 1e-10
    assert np.max(np.abs(pdf(x, back) - pdf(x, cls))) < 1e-10


def test_diagonal_delta_factorises():
    rng = np.random.default_rng(10)
    for _ in range(10):
        d = int(rng.integers(2, 5))
        xi = rng.normal(size=d)
        dl = rng.uniform(0.3, 3.0, size=d)
        lam = rng.normal(0.0, 2.0, size=d)
        p = SdbParams(xi, np.diag(dl), lam)
        x = xi + rng.normal(0.0, 2.0, size=(50, d))
        prod = np.ones(50)
        for j in range(d):
            pj = sdb_to_classical_1d(SdbParams([xi[j]], [[dl[j]]], [lam[j]]))
            prod *= classical_sn_pdf(x[:, j:j + 1], pj)
        assert np.max(np.abs(sdb_sn_pdf(x, p) - prod) / prod) < 1e-10


# --- normalisation ------------------------------------------------------------------

@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("d", [1, 2])
def test_normalisation_tensor_quadrature(family, d):
    rng = np.random.default_rng(100 + 10 * d + FAMILIES.index(family))
    for _ in range(3):
        p = random_params(family, d, rng)
        assert integrate_density(p, m=200) == pytest.approx(1.0, abs=1e-4)


@pytest.mark.parametrize("family", FAMILIES)
def test_normalisation_importance_sampling_d3(family):
    rng = np.random.default_rng(200 + FAMILIES.index(family))
    p = random_params(family, 3, rng)
    est, se = importance_integral(p, n=10000)
    assert abs(est - 1.0) < 3 * se


# --- samplers -----------------------------------------------------------------------

def test_classical_sampler_examples():
    n = 200_000
    y = sample(ClassicalParams([0.0, 0.0], np.eye(2), [0.0, 0.0]), n, seed=1)
    assert np.all(np.abs(y.mean(axis=0)) < 4 / math.sqrt(n))
    y = sample(ClassicalParams([1.0], [[1.0]], [50.0]), n, seed=2)
    assert np.mean(y > 1.0) >= 0.99
    p = ClassicalParams([0.5, -1.0], [[2.0, 0.6], [0.6, 1.0]], [3.0, -1.0])
    y = sample(p, n, seed=3)
    mean = p.xi + p.omega * p.delta * math.sqrt(2 / math.pi)
    se = y.std(axis=0) / math.sqrt(n)
    assert np.all(np.abs(y.mean(axis=0) - mean) < 5 * se)


def test_classical_samplers_agree():
    # the rejection construction and the convolution construction
    p = ClassicalParams([0.0, 0.0], [[1.0, 0.5], [0.5, 2.0]], [2.0, -3.0])
    a = sample_classical(p, 50_000, seed=1, method="convolution")
    b = sample_classical(p, 50_000, seed=2, method="conditioning")
    for u in random_directions(5, np.random.default_rng(0)):
        assert stats.ks_2samp(a @ u, b @ u).pvalue > 1e-3


def test_sdb_sampler_examples():
    n = 200_000
    delta = np.array([[1.0, 0.3], [0.3, 0.5]])
    y = sample(SdbParams([1.0, -1.0], delta, [0.0, 0.0]), n, seed=4)
    for j in range(2):
        assert stats.kstest(y[:, j], stats.norm(loc=[1.0, -1.0][j], scale=math.sqrt(delta[j, j])).cdf).pvalue > 1e-3
    lam = np.array([1.5, -2.0])
    y = sample(SdbParams([1.0, -1.0], delta, lam), n, seed=5)
    se = y.std(axis=0) / math.sqrt(n)
    assert np.all(np.abs(y.mean(axis=0) - ([1.0, -1.0] + math.sqrt(2 / math.pi) * lam)) < 5 * se)
    cov = delta + (1 - 2 / math.pi) * np.diag(lam ** 2)
    assert np.allclose(np.cov(y.T), cov, atol=0.03)


def test_sampler_seed_determinism():
    p = SdbParams([0.0, 0.0], np.eye(2), [1.0, 1.0], 4.0)
    assert np.array_equal(sample(p, 100, seed=3), sample(p, 100, seed=3))
    with pytest.raises(SkewlabError):
        sample(p, 0, seed=3)


@pytest.mark.parametrize("family", FAMILIES)
def test_sampler_matches_density_on_projections(family):
    rng = np.random.default_rng(300 + FAMILIES.index(family))
    p = random_params(family, 2, rng, nu_range=(2.5, 10.0))
    draws = sample(p, 100_000, seed=31)
    centre, spread = location_scale(p)
    pvals = projection_ks_pvalues(draws, lambda x: pdf(x, p), centre, spread,
                                  random_directions(5, rng))
    assert min(pvals) > 1e-3, pvals


@pytest.mark.parametrize("nu", [None, 6.0])
def test_affine_closure_classical(nu):
    rng = np.random.default_rng(400 if nu is None else 401)
    p = ClassicalParams([0.3, -0.2], [[1.0, 0.4], [0.4, 1.5]], [2.5, -1.0], nu)
    a = rng.normal(size=(2, 2)) + np.eye(2)
    b = rng.normal(size=2)
    q = affine_classical(p, a, b)
    draws = sample(p, 100_000, seed=41) @ a.T + b
    centre, spread = location_scale(q)
    pvals = projection_ks_pvalues(draws, lambda x: pdf(x, q), centre, spread,
                                  random_directions(5, rng))
    assert min(pvals) > 1e-3, pvals


def test_affine_map_dimension_check():
    p = ClassicalParams([0.0, 0.0], np.eye(2), [1.0, 1.0])
    with pytest.raises(DimensionError):
        affine_classical(p, np.eye(3), np.zeros(3))


def test_random_spd_helper_is_valid():
    rng = np.random.default_rng(0)
    assert np.all(np.linalg.eigvalsh(random_spd(rng, 4)) > 0)
