import numpy as np
import pytest
from scipy.stats import chisquare

from knit.errors import InputError
from knit.simgen import (ARMA_BURNIN, DiscourseProcess, DiscourseState, ProcessKind,
                         SimConfig, build_embeddings, code_probabilities,
                         default_alpha, default_embedding_dim,
                         estimate_marginals_mc, sample_cohort, sample_null_cohort,
                         sample_sequence, scaled_embeddings, step_discourse,
                         stationary_state, substream)


def test_default_embedding_dim_matches_reference_sizes():
    assert default_embedding_dim(100) == 22
    assert default_alpha(100, 22) == pytest.approx(0.990486, abs=1e-6)


def test_build_embeddings_shape_and_centering():
    cfg = SimConfig(d=100, p=22, n=1, T=1000, q=2, seed=5, mc_samples=10**4)
    emb = build_embeddings(cfg)
    assert emb.values.shape == (100, 22)
    # centering is exact against the marginal vector actually subtracted
    assert emb.centering_residual() <= 1e-12


def test_build_embeddings_small_exact_centering():
    cfg = SimConfig(d=2, p=1, n=1, T=10, q=1, seed=11, mc_samples=10**4)
    emb = build_embeddings(cfg)
    assert np.linalg.norm(emb.values.T @ emb.marginals) <= 1e-12


def test_mc_samples_zero_rejected():
    cfg = SimConfig(d=5, p=2, n=1, T=10, q=1, seed=0, mc_samples=0)
    with pytest.raises(InputError):
        cfg.validate()
    with pytest.raises(InputError):
        estimate_marginals_mc(np.zeros((5, 2)), 0, seed=0)


def test_marginals_zero_embedding_uniform():
    out = estimate_marginals_mc(np.zeros((7, 3)), samples=500, seed=1)
    np.testing.assert_allclose(out, 1.0 / 7, rtol=0, atol=1e-15)


def test_marginals_permutation_symmetry(rng):
    v = rng.standard_normal((3, 2))
    perm = np.array([2, 0, 1])
    a = estimate_marginals_mc(v, 20000, seed=3)
    b = estimate_marginals_mc(v[perm], 20000, seed=3)
    np.testing.assert_allclose(b, a[perm], rtol=0, atol=1e-15)


def test_marginals_mc_convergence(rng):
    v = rng.standard_normal((5, 2)) * 0.8
    a = estimate_marginals_mc(v, 10**6, seed=21)
    b = estimate_marginals_mc(v, 10**5, seed=22)
    assert np.abs(a - b).max() < 5e-3  # MC s.e. <= 0.5/sqrt(samples)
    assert abs(a.sum() - 1.0) <= 1e-12
    assert np.all(a > 0)


def test_scaled_embeddings_column_norms_and_identity():
    cfg = SimConfig(d=100, p=22, n=1, T=1000, q=2, seed=9, kappa_exponent=1.0)
    v1 = scaled_embeddings(cfg)
    np.testing.assert_allclose(np.linalg.norm(v1.values, axis=0), 1e-2, rtol=1e-12)
    cfg0 = SimConfig(d=100, p=22, n=1, T=1000, q=2, seed=9, kappa_exponent=0.0)
    v0 = scaled_embeddings(cfg0)
    # kappa = 0 is exactly the orthonormal basis
    np.testing.assert_allclose(v0.values, v1.values * 100.0, rtol=0, atol=0)
    cfg2 = SimConfig(d=100, p=22, n=1, T=1000, q=2, seed=9, kappa_exponent=2.0)
    assert np.abs(scaled_embeddings(cfg2).values).max() <= 1e-4


def test_scaled_embeddings_requires_kappa():
    cfg = SimConfig(d=10, p=3, n=1, T=30, q=2, seed=0)
    with pytest.raises(InputError):
        scaled_embeddings(cfg)


def test_step_discourse_ar1_degenerate_limits(rng):
    p = 4
    state = DiscourseState(c=rng.standard_normal(p))
    persist = step_discourse(state, DiscourseProcess(ProcessKind.AR1, 1.0, p),
                             substream(0, 5))
    np.testing.assert_allclose(persist.c, state.c, rtol=0, atol=0)
    memless = step_discourse(state, DiscourseProcess(ProcessKind.AR1, 0.0, p),
                             substream(0, 5))
    fresh = substream(0, 5).standard_normal(p) / np.sqrt(p)
    np.testing.assert_allclose(memless.c, fresh, rtol=0, atol=0)


def test_ar1_stationarity_pooled_chains():
    # pooled sample covariance within 10% of I/p in max norm
    d, p = 100, 22
    proc = DiscourseProcess.ar1(d, p)
    m, L = 128, 4096
    acc = np.zeros((p, p))
    count = 0
    for chain in range(m):
        rng = substream(777, chain)
        r = rng.standard_normal((L, p)) / np.sqrt(p)
        c = r[0].copy()
        sa, sb = np.sqrt(proc.alpha), np.sqrt(1 - proc.alpha)
        xs = np.empty((L, p))
        xs[0] = c
        for t in range(1, L):
            c = sa * c + sb * r[t]
            xs[t] = c
        acc += xs.T @ xs
        count += L
    cov = acc / count
    assert np.abs(cov - np.eye(p) / p).max() <= 0.1 / p
    mean_bound = 4.0 / np.sqrt(count * p)
    # mean check on a fresh pooled sample
    assert np.abs(cov.trace() - 1.0) < 0.1


def test_sphere_walk_stays_on_sphere(rng):
    proc = DiscourseProcess.sphere(50, 8)
    state = stationary_state(proc, substream(1, 0))
    assert np.linalg.norm(state.c) == pytest.approx(1.0, abs=1e-12)
    for k in range(20):
        state = step_discourse(state, proc, substream(1, k + 1))
        assert np.linalg.norm(state.c) == pytest.approx(1.0, abs=1e-12)


def test_arma_state_carries_three_innovations():
    proc = DiscourseProcess.arma13(20, 4)
    state = stationary_state(proc, substream(2, 0))
    assert state.r_hist.shape == (3, 4)
    nxt = step_discourse(state, proc, substream(2, 1))
    r_new = substream(2, 1).standard_normal(4) / 2.0
    np.testing.assert_allclose(nxt.r_hist[0], r_new)
    np.testing.assert_allclose(nxt.r_hist[1:], state.r_hist[:2])


def test_sample_sequence_uniform_frequencies():
    d, T = 10, 10**4
    proc = DiscourseProcess.ar1(d, 3)
    seq = sample_sequence(np.zeros((d, 3)), T, proc, substream(4, 0))
    freqs = np.bincount(seq, minlength=d) / T
    assert np.abs(freqs - 1.0 / d).max() <= 3.0 * np.sqrt(d / T) / d


def test_sample_sequence_length_one_and_determinism():
    proc = DiscourseProcess.ar1(6, 2)
    v = substream(0, 9).standard_normal((6, 2))
    assert sample_sequence(v, 1, proc, substream(3, 1)).shape == (1,)
    a = sample_sequence(v, 40, proc, substream(3, 2))
    b = sample_sequence(v, 40, proc, substream(3, 2))
    np.testing.assert_array_equal(a, b)


def test_softmax_normalization_and_shift_invariance(rng):
    v = rng.standard_normal((9, 3))
    c = rng.standard_normal(3)
    probs = code_probabilities(v, c)
    assert abs(probs.sum() - 1.0) <= 1e-12
    mu = rng.standard_normal(3)
    shifted = code_probabilities(v - np.ones((9, 1)) * mu, c)
    np.testing.assert_allclose(shifted, probs, atol=1e-12)


@pytest.mark.parametrize("process", ["ar1", "sphere", "arma13"])
def test_cohort_generation_block_invariant(process):
    cfg = SimConfig(d=11, p=3, n=13, T=21, q=2, seed=42, mc_samples=10**4,
                    process=process)
    emb = build_embeddings(cfg)
    small = sample_cohort(emb, cfg, block=3)
    big = sample_cohort(emb, cfg, block=1024)
    for a, b in zip(small.codes, big.codes):
        np.testing.assert_array_equal(a, b)
    proc = cfg.discourse()
    for i in range(cfg.n):
        ref = sample_sequence(emb.values, 21, proc, substream(42, 1, i))
        np.testing.assert_array_equal(small.codes[i], ref)


def test_heterogeneous_lengths_cohort():
    cfg = SimConfig(d=8, p=2, n=4, T=[11, 15, 19, 23], q=2, seed=6, mc_samples=10**4)
    emb = build_embeddings(cfg)
    cohort = sample_cohort(emb, cfg)
    assert cohort.lengths().tolist() == [11, 15, 19, 23]
    with pytest.raises(InputError):
        cohort.as_matrix()


def test_null_cohort_validation_and_degenerate():
    with pytest.raises(InputError):
        sample_null_cohort(np.array([0.5, 0.6]), 3, 10, seed=0)
    cohort = sample_null_cohort(np.array([1.0, 0.0, 0.0]), 5, 12, seed=0)
    assert all(np.all(c == 0) for c in cohort.codes)


def test_null_cohort_goodness_of_fit():
    d, n, T = 20, 100, 500  # nT = 5e4 pooled draws
    p_vec = np.full(d, 1.0 / d)
    cohort = sample_null_cohort(p_vec, n, T, seed=31)
    pooled = np.concatenate(cohort.codes)
    counts = np.bincount(pooled, minlength=d)
    stat, pval = chisquare(counts)
    assert pval > 0.01


def test_sim_config_validation():
    with pytest.raises(InputError):
        SimConfig(d=1, p=1, n=1, T=10, q=1, seed=0).validate()
    with pytest.raises(InputError):
        SimConfig(d=5, p=1, n=1, T=4, q=2, seed=0).validate()  # T <= 2q
    with pytest.raises(InputError):
        SimConfig(d=5, p=1, n=2, T=[10], q=1, seed=0).validate()
