import numpy as np
import pytest

from emachine.baselines import (
    MleConfig,
    PleConfig,
    hopfield_fit,
    hopfield_solution,
    log_likelihood,
    mle_fit,
    ple_fit,
    pseudo_loglik,
    symmetrize,
)
from emachine.core import (
    IntractableEnumeration,
    ObservationEnsemble,
    ParameterVector,
    all_spins,
    n_params,
    observed_moments,
    operators,
)
from emachine.machine import EmConfig, fit
from emachine.sampler import GroundTruthSpec, SamplerConfig, draw_true_parameters, sample_exact


def random_ensemble(M, N, seed):
    rng = np.random.default_rng(seed)
    return ObservationEnsemble.from_samples(rng.choice([-1, 1], size=(N, M)))


def exact_data(M, g, N, seed):
    truth = draw_true_parameters(GroundTruthSpec(M, g=g, seed=seed))
    return truth, sample_exact(truth, SamplerConfig(N, method="exact", seed=seed + 1000))


def mse(a, b):
    return float(np.mean((a - b) ** 2))


# ---------------------------------------------------------------- hopfield

def test_hopfield_single_configuration():
    row = np.array([1, -1, -1, 1])
    w = hopfield_solution(ObservationEnsemble.from_samples(np.tile(row, (7, 1))))
    np.testing.assert_array_equal(w.w, operators(row)[0])
    assert set(np.abs(w.w)) == {1.0}


def test_hopfield_uniform_is_zero():
    w = hopfield_solution(ObservationEnsemble.from_samples(all_spins(5)))
    np.testing.assert_allclose(w.w, 0.0, atol=1e-15)


def test_hopfield_equals_em_at_eps_one():
    ens = random_ensemble(6, 500, 1)
    r = fit(ens, EmConfig(eps=1.0, alpha=0.5, tol=1e-12))
    np.testing.assert_allclose(r.w.w, hopfield_solution(ens).w, atol=1e-8)
    assert hopfield_fit(ens).method == "hopfield"


def test_hopfield_entries_bounded():
    for seed in range(10):
        w = hopfield_solution(random_ensemble(7, 30, seed))
        assert np.all(np.abs(w.w) <= 1)


# ---------------------------------------------------------------- likelihood gradients

def _fd(fun, x, step=1e-5):
    out = np.empty_like(x)
    for I in range(x.size):
        e = np.zeros_like(x)
        e[I] = step
        out[I] = (fun(x + e) - fun(x - e)) / (2 * step)
    return out


def test_log_likelihood_gradient_matches_fd():
    M = 6
    ens = random_ensemble(M, 200, 3)
    rng = np.random.default_rng(4)
    for _ in range(5):
        x = rng.uniform(-0.5, 0.5, n_params(M))
        _, g = log_likelihood(ParameterVector(x, M), ens)
        fd = _fd(lambda v: log_likelihood(ParameterVector(v, M), ens)[0], x)
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9)


def test_pseudo_loglik_gradient_matches_fd():
    M = 5
    ens = random_ensemble(M, 150, 5)
    rng = np.random.default_rng(6)
    B = rng.uniform(-0.5, 0.5, (M, M))
    _, G = pseudo_loglik(B, ens)
    flat = B.ravel()
    for i in range(M):
        fd = _fd(lambda v: pseudo_loglik(v.reshape(M, M), ens)[0][i], flat).reshape(M, M)
        # spin i's objective depends on row i only
        np.testing.assert_allclose(G[i], fd[i], rtol=1e-6, atol=1e-9)
        mask = np.ones(M, bool)
        mask[i] = False
        np.testing.assert_allclose(fd[mask], 0.0, atol=1e-9)


def test_pseudo_loglik_matches_direct_sum():
    M = 4
    ens = random_ensemble(M, 60, 7)
    B = np.random.default_rng(8).normal(size=(M, M))
    ll, _ = pseudo_loglik(B, ens)
    for i in range(M):
        total = 0.0
        for s, c in ens:
            theta = B[i, i] + sum(B[i, k] * s[k] for k in range(M) if k != i)
            total += c / ens.N * (s[i] * theta - np.log(2 * np.cosh(theta)))
        assert ll[i] == pytest.approx(total, abs=1e-12)


def test_symmetrize_average():
    B = np.array([[0.1, 0.4, 0.0], [0.2, -0.3, 1.0], [0.6, 0.0, 0.5]])
    w = symmetrize(B)
    np.testing.assert_allclose(w.h, [0.1, -0.3, 0.5])
    np.testing.assert_allclose(w.J[0, 1], 0.3)
    np.testing.assert_allclose(w.J[0, 2], 0.3)
    np.testing.assert_allclose(w.J[1, 2], 0.5)


# ---------------------------------------------------------------- MLE

@pytest.mark.parametrize("kw", [{"alpha": 0}, {"tol": -1}, {"max_iters": -1}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        MleConfig(**kw)
    with pytest.raises(ValueError):
        PleConfig(**kw)
    with pytest.raises(ValueError):
        PleConfig(symmetrization="max")


def test_mle_recovers_truth_large_n():
    truth, ens = exact_data(5, 0.5, 1_000_000, 11)
    r = mle_fit(ens)
    assert r.converged
    assert mse(r.w.w, truth.w) < 1e-3


def test_mle_stationary_and_monotone():
    _, ens = exact_data(8, 1.0, 3000, 12)
    cfg = MleConfig(tol=1e-7)
    r = mle_fit(ens, cfg)
    assert r.converged
    _, g = log_likelihood(r.w, ens)
    assert np.max(np.abs(g)) < cfg.tol
    trace = np.array(r.extras["loglik_trace"])
    assert np.all(np.diff(trace) >= -1e-12 * np.abs(trace[1:]))


def test_mle_cap():
    ens = random_ensemble(12, 20, 13)
    with pytest.raises(IntractableEnumeration):
        mle_fit(ens, MleConfig(cap=10))


# ---------------------------------------------------------------- PLE

def test_ple_symmetric_pair():
    ens = ObservationEnsemble.from_samples(np.array([[1, 1], [-1, -1]] * 5))
    r = ple_fit(ens, PleConfig(max_iters=200))
    # the optimum is at infinite coupling; a bounded run still shows the signs
    assert r.w.J[0, 1] > 1.0
    np.testing.assert_allclose(r.w.h, 0.0, atol=1e-12)


def test_ple_concave_unique_optimum():
    _, ens = exact_data(6, 0.5, 2000, 14)
    cfg = PleConfig(tol=1e-10)
    a = ple_fit(ens, cfg)
    b = ple_fit(ens, cfg, B0=np.random.default_rng(15).normal(scale=2.0, size=(6, 6)))
    assert a.converged and b.converged
    np.testing.assert_allclose(a.w.w, b.w.w, atol=1e-6)


def test_ple_within_2x_of_mle_weak_coupling():
    truth, ens = exact_data(10, 0.5, 100_000, 16)
    ple = ple_fit(ens)
    mle = mle_fit(ens)
    assert ple.converged and mle.converged
    assert mse(ple.w.w, truth.w) < 2 * mse(mle.w.w, truth.w)


def test_ple_bad_init_shape():
    with pytest.raises(ValueError):
        ple_fit(random_ensemble(3, 10, 0), B0=np.zeros((2, 2)))


def test_hopfield_worse_than_mle_and_ple():
    truth, ens = exact_data(10, 0.5, 100_000, 17)
    hf = mse(hopfield_solution(ens).w, truth.w)
    assert mse(mle_fit(ens).w.w, truth.w) < hf
    assert mse(ple_fit(ens).w.w, truth.w) < hf


def test_mle_observed_moments_match_model_at_optimum():
    _, ens = exact_data(6, 0.5, 5000, 18)
    r = mle_fit(ens, MleConfig(tol=1e-9))
    from emachine.core import exact_moments

    np.testing.assert_allclose(exact_moments(r.w), observed_moments(ens), atol=1e-9)
