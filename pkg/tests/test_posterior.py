"""Posterior diagnostics: surrogate path against the dense reference.

A surrogate that exhausts the numerical rank must reproduce the dense
matrices to solver precision; a truncated one must agree at the level of
its own truncation error.  The risk identity is checked both
algebraically and by Monte Carlo.
"""

import warnings

import numpy as np
import pytest

from aoed.posterior import DenseOracle, PosteriorModel, export_variance_csv
from aoed.surrogate import build_surrogate


@pytest.fixture(scope="module")
def oracle(small_problem):
    return DenseOracle(small_problem.fmap)


@pytest.fixture(scope="module")
def full_surrogate(small_problem):
    p = small_problem
    rank = min(p.fmap.n_obs, p.n) - 10
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return build_surrogate(p.fmap, p.whitening, rank=rank, oversampling=10)


@pytest.fixture(scope="module")
def truncated_surrogate(small_problem):
    p = small_problem
    return build_surrogate(p.fmap, p.whitening, rank=40, oversampling=10)


@pytest.fixture(scope="module")
def weights(full_surrogate):
    rng = np.random.default_rng(0)
    return rng.uniform(size=full_surrogate.n_sensors)


def test_full_rank_model_matches_dense(small_problem, oracle, full_surrogate,
                                       weights):
    p = small_problem
    model = PosteriorModel(p.fmap, p.whitening, weights, surro=full_surrogate)
    assert model.mode == "surrogate"

    tr_d = oracle.trace(weights)
    assert abs(model.exact_trace() - tr_d) < 1e-8 * tr_d

    var_d = oracle.pointwise_variance(weights)
    assert np.max(np.abs(model.pointwise_variance() - var_d) / var_d) < 1e-7

    rng = np.random.default_rng(1)
    z = rng.standard_normal(p.n)
    q_d = oracle.apply_inverse_hessian(weights, z)
    q_s = model.apply_inverse_hessian(z)
    assert np.linalg.norm(q_s - q_d) < 1e-7 * np.linalg.norm(q_d)

    d = rng.standard_normal(p.fmap.n_obs)
    m_d = oracle.mean(weights, d)
    m_s = model.mean(d)
    assert np.linalg.norm(m_s - m_d) < 1e-7 * np.linalg.norm(m_d)


def test_truncated_model_agrees_at_truncation_level(small_problem, oracle,
                                                    truncated_surrogate,
                                                    weights):
    # rank 40 carries a relative tail of order 1e-3 on this problem; the
    # diagnostics must agree at that level, not drift beyond it
    p = small_problem
    model = PosteriorModel(
        p.fmap, p.whitening, weights, surro=truncated_surrogate
    )
    tr_d = oracle.trace(weights)
    assert abs(model.exact_trace() - tr_d) < 1e-2 * tr_d
    var_d = oracle.pointwise_variance(weights)
    assert np.max(np.abs(model.pointwise_variance() - var_d) / var_d) < 1e-2


def test_posterior_never_exceeds_prior(small_problem, full_surrogate, weights):
    p = small_problem
    model = PosteriorModel(p.fmap, p.whitening, weights, surro=full_surrogate)
    prior_trace = p.prior.covariance_trace(2000)
    prior_var = p.prior.pointwise_variance(2000)
    assert model.exact_trace() <= prior_trace * (1 + 1e-12)
    assert np.all(model.pointwise_variance() <= prior_var * (1 + 1e-9))
    # zero weights recover the prior exactly
    null = PosteriorModel(
        p.fmap, p.whitening, np.zeros_like(weights), surro=full_surrogate
    )
    assert null.exact_trace() == pytest.approx(prior_trace, rel=1e-12)


def test_trace_decreases_with_more_sensing(small_problem, full_surrogate):
    p = small_problem
    ns = full_surrogate.n_sensors

    def trace_at(level):
        model = PosteriorModel(
            p.fmap, p.whitening, np.full(ns, level), surro=full_surrogate
        )
        return model.exact_trace()

    t0, t_half, t1 = trace_at(0.0), trace_at(0.5), trace_at(1.0)
    assert t1 < t_half < t0


def test_sample_covariance_matches_variance(small_problem, full_surrogate,
                                            weights):
    p = small_problem
    model = PosteriorModel(p.fmap, p.whitening, weights, surro=full_surrogate)
    s = model.sample(4000, seed=5)
    assert s.shape == (p.n, 4000)
    sample_var = (s * s).mean(axis=1)
    rel = np.abs(sample_var - model.pointwise_variance())
    rel = rel / model.pointwise_variance()
    assert rel.max() < 0.15
    assert rel.mean() < 0.05
    # reproducible draws
    again = model.sample(4000, seed=5)
    assert np.array_equal(s, again)


def test_bayes_risk_identity(small_problem, weights):
    p = small_problem
    model = PosteriorModel(p.fmap, p.whitening, weights, mode="dense")
    result = model.bayes_risk_check(n_outer=800, seed=3)
    assert result.algebraic_residual < 1e-10
    assert abs(result.z_score) < 4.0
    assert result.stderr > 0
    assert result.mc_estimate == pytest.approx(
        result.trace_value, abs=5 * result.stderr
    )


def test_mode_validation(small_problem, full_surrogate, weights):
    p = small_problem
    with pytest.raises(ValueError):
        PosteriorModel(p.fmap, p.whitening, weights, mode="surrogate")
    auto = PosteriorModel(p.fmap, p.whitening, weights)
    assert auto.mode == "dense"
    with pytest.raises(ValueError):
        auto.sample(10, seed=0)
    surro_model = PosteriorModel(
        p.fmap, p.whitening, weights, surro=full_surrogate
    )
    with pytest.raises(ValueError):
        surro_model.bayes_risk_check(n_outer=10)
    with pytest.raises(ValueError):
        PosteriorModel(p.fmap, p.whitening, weights * 3.0, surro=full_surrogate)


def test_dense_oracle_cap(small_problem):
    with pytest.raises(ValueError, match="capped"):
        DenseOracle(small_problem.fmap, cap=10)


def test_export_variance_csv_roundtrip(tmp_path, small_problem):
    p = small_problem
    values = np.linspace(0.5, 2.5, p.n) * np.pi
    path = tmp_path / "variance.csv"
    export_variance_csv(path, p.mesh, values)
    rows = np.loadtxt(path, delimiter=",", skiprows=1)
    assert rows.shape == (p.n, 4)
    assert np.array_equal(rows[:, 0], np.arange(p.n))
    assert np.array_equal(rows[:, 1:3], p.mesh.nodes)  # 17-digit exactness
    assert np.array_equal(rows[:, 3], values)
    with pytest.raises(ValueError):
        export_variance_csv(tmp_path / "bad.csv", p.mesh, values[:-1])
