import numpy as np
import pytest
from _util import central_difference, explicit_kron_cov, gaussian_logpdf, random_dataset, random_params

from mtgp.kernels import Dataset, KernelParams, NoiseParams, TaskCov, kernel_matrix
from mtgp.likelihood import (
    MtgpParams,
    complete_data_log_likelihood,
    full_covariance,
    log_marginal_likelihood,
    masked_covariance,
    mll_dense,
    mll_grad,
    mll_kron_fast,
    mll_masked,
)
from mtgp.linalg import vec_t


def scalar_params(noise=1.0):
    return MtgpParams(KernelParams([0.0], 0.0), TaskCov.identity(1), NoiseParams([np.log(noise)]))


class TestWorkedExamples:
    def test_single_scalar_observation(self):
        # y = 0, k = 1, sigma^2 = 1: N(0 | 0, 2)
        ds = Dataset([[0.0]], [[0.0]])
        expected = -0.5 * np.log(4 * np.pi)
        assert mll_dense(scalar_params(), ds, jitter=0.0) == pytest.approx(expected, rel=1e-14)
        assert mll_kron_fast(scalar_params(), ds, jitter=0.0) == pytest.approx(expected, rel=1e-14)

    def test_single_scalar_nonzero(self):
        ds = Dataset([[0.0]], [[2.0]])
        expected = -0.5 * np.log(4 * np.pi) - 1.0
        assert mll_dense(scalar_params(), ds, jitter=0.0) == pytest.approx(expected, rel=1e-14)
        assert mll_kron_fast(scalar_params(), ds, jitter=0.0) == pytest.approx(expected, rel=1e-14)

    def test_independent_tasks_sum(self):
        # K_f = I and Sigma = I: the likelihood splits into per-task GPs
        rng = np.random.default_rng(0)
        ds = random_dataset(rng, 6, 1, 3)
        p = MtgpParams(KernelParams([0.2], 0.1), TaskCov.identity(3), NoiseParams(np.zeros(3)))
        kx = kernel_matrix(p.kernel, ds.inputs) + np.eye(6)
        expected = sum(gaussian_logpdf(ds.outputs[:, m], kx) for m in range(3))
        assert mll_kron_fast(p, ds) == pytest.approx(expected, rel=1e-12)
        assert mll_dense(p, ds) == pytest.approx(expected, rel=1e-12)

    def test_covariance_matches_loops(self):
        rng = np.random.default_rng(1)
        p = random_params(rng, 2, 3)
        x = rng.normal(size=(4, 2))
        np.testing.assert_allclose(full_covariance(p, x, 1e-6), explicit_kron_cov(p, x, 1e-6),
                                   rtol=1e-13, atol=1e-15)

    def test_scaling_identity(self):
        # scaling every covariance by c shifts the log-density by -(NM/2) log c at y = 0
        rng = np.random.default_rng(2)
        p = random_params(rng, 1, 2)
        ds = Dataset(rng.normal(size=(5, 1)), np.zeros((5, 2)))
        c = 3.7
        scaled = MtgpParams(
            KernelParams(p.kernel.log_lengthscales, p.kernel.log_signal_variance + np.log(c)),
            p.task,
            NoiseParams(p.noise.log_noise_variances + np.log(c)),
        )
        diff = mll_kron_fast(scaled, ds, jitter=0.0) - mll_kron_fast(p, ds, jitter=0.0)
        assert diff == pytest.approx(-5 * np.log(c), rel=1e-10)


class TestFastPath:
    @pytest.mark.parametrize("seed", range(15))
    def test_matches_dense_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n, d, m = rng.integers(1, 15), rng.integers(1, 3), rng.integers(1, 4)
        p = random_params(rng, d, m)
        ds = random_dataset(rng, n, d, m)
        oracle = gaussian_logpdf(vec_t(ds.outputs), explicit_kron_cov(p, ds.inputs, 1e-8))
        assert mll_dense(p, ds) == pytest.approx(oracle, rel=1e-9)
        assert mll_kron_fast(p, ds) == pytest.approx(oracle, rel=1e-9)

    def test_low_rank_task_cov(self):
        # rank-deficient K_f still works because Sigma is positive
        rng = np.random.default_rng(3)
        ds = random_dataset(rng, 8, 1, 3)
        raw = np.zeros((3, 3))
        raw[np.diag_indices(3)] = [0.0, -15.0, -15.0]
        raw[1, 0] = raw[2, 0] = 1.0
        p = MtgpParams(KernelParams([0.0], 0.0), TaskCov(raw), NoiseParams(np.log([0.1] * 3)))
        assert mll_kron_fast(p, ds) == pytest.approx(mll_dense(p, ds), rel=1e-9)

    def test_rejects_missing(self):
        ds = random_dataset(np.random.default_rng(4), 5, 1, 2, missing=0.3)
        with pytest.raises(ValueError):
            mll_kron_fast(random_params(np.random.default_rng(4), 1, 2), ds)


class TestMasked:
    def test_full_mask_matches_dense(self):
        rng = np.random.default_rng(5)
        p, ds = random_params(rng, 2, 3), random_dataset(rng, 7, 2, 3)
        assert mll_masked(p, ds) == pytest.approx(mll_dense(p, ds), rel=1e-12)

    def test_single_observation(self):
        ds = Dataset([[0.0], [1.0]], [[np.nan, 1.5], [0.3, np.nan]])
        rng = np.random.default_rng(6)
        p = random_params(rng, 1, 2)
        kf = p.task.factor @ p.task.factor.T
        k0 = p.kernel.signal_variance + 1e-8
        var_a = k0 * kf[0, 0] + p.noise.variances[0]
        var_b = k0 * kf[1, 1] + p.noise.variances[1]
        cross = p.kernel.signal_variance * np.exp(-0.5 / p.kernel.lengthscales[0] ** 2) * kf[0, 1]
        cov = np.array([[var_a, cross], [cross, var_b]])
        expected = gaussian_logpdf(np.array([0.3, 1.5]), cov)
        assert mll_masked(p, ds) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_submatrix_oracle(self, seed):
        rng = np.random.default_rng(seed + 100)
        n, m = rng.integers(2, 10), rng.integers(1, 4)
        p, ds = random_params(rng, 1, m), random_dataset(rng, n, 1, m, missing=0.4)
        keep = ~np.isnan(ds.outputs.flatten())
        full = explicit_kron_cov(p, ds.inputs, 1e-8)[np.ix_(keep, keep)]
        oracle = gaussian_logpdf(ds.outputs.flatten()[keep], full)
        assert mll_masked(p, ds) == pytest.approx(oracle, rel=1e-10)
        assert mll_masked(p, ds, mode="iterative") == pytest.approx(oracle, rel=1e-8)

    def test_khatri_rao_blocks(self):
        rng = np.random.default_rng(7)
        p, ds = random_params(rng, 1, 2), random_dataset(rng, 5, 1, 2, missing=0.4)
        cov = masked_covariance(p, ds)
        kx = kernel_matrix(p.kernel, ds.inputs)
        kf = p.task.factor @ p.task.factor.T
        off = ds.task_offsets
        idx = [np.flatnonzero(ds.mask[:, m]) for m in range(2)]
        for i in range(2):
            for j in range(2):
                block = cov[off[i] : off[i] + len(idx[i]), off[j] : off[j] + len(idx[j])]
                expected = kx[np.ix_(idx[i], idx[j])] * kf[i, j]
                if i == j:
                    expected = expected + p.noise.variances[i] * np.eye(len(idx[i]))
                np.testing.assert_allclose(block, expected, rtol=1e-14)

    def test_lanczos_logdet_close(self):
        rng = np.random.default_rng(8)
        p, ds = random_params(rng, 1, 3), random_dataset(rng, 20, 1, 3, missing=0.3)
        exact = mll_masked(p, ds)
        approx = mll_masked(p, ds, mode="iterative", logdet="lanczos", probes=30, steps=30)
        assert approx == pytest.approx(exact, rel=0.05)

    def test_dispatch(self):
        rng = np.random.default_rng(9)
        p = random_params(rng, 1, 2)
        full = random_dataset(rng, 6, 1, 2)
        part = random_dataset(rng, 6, 1, 2, missing=0.3)
        assert log_marginal_likelihood(p, full) == mll_kron_fast(p, full)
        assert log_marginal_likelihood(p, part) == mll_masked(p, part)
        assert log_marginal_likelihood(p, part, "iterative") == pytest.approx(
            mll_masked(p, part), rel=1e-8
        )

    def test_unknown_modes(self):
        rng = np.random.default_rng(10)
        p, ds = random_params(rng, 1, 2), random_dataset(rng, 4, 1, 2, missing=0.3)
        with pytest.raises(ValueError):
            mll_masked(p, ds, mode="bogus")
        with pytest.raises(ValueError):
            mll_masked(p, ds, mode="iterative", logdet="bogus")


class TestGradient:
    @pytest.mark.parametrize("missing", [0.0, 0.35])
    @pytest.mark.parametrize("seed", range(6))
    def test_finite_differences(self, seed, missing):
        rng = np.random.default_rng(seed + 200)
        d, m = rng.integers(1, 3), rng.integers(1, 4)
        p, ds = random_params(rng, d, m), random_dataset(rng, 8, d, m, missing=missing)
        v = p.to_vector()
        rep = mll_grad(p, ds)
        numeric = central_difference(
            lambda w: log_marginal_likelihood(MtgpParams.from_vector(w, d, m), ds, "dense"), v
        )
        np.testing.assert_allclose(rep.gradient, numeric, rtol=1e-5, atol=1e-7)
        assert rep.value == pytest.approx(log_marginal_likelihood(p, ds, "dense"), rel=1e-11)

    def test_noise_stationary_when_residual_matches_variance(self):
        # N = M = 1: dL/dlog(sigma^2) vanishes when y^2 equals k + sigma^2
        p = scalar_params(noise=0.5)
        rep = mll_grad(p, Dataset([[0.0]], [[np.sqrt(1.5)]]), jitter=0.0)
        assert rep.gradient[-1] == pytest.approx(0.0, abs=1e-15)
        assert rep.gradient[1] == pytest.approx(0.0, abs=1e-15)

    def test_vector_roundtrip_and_names(self):
        p = random_params(np.random.default_rng(11), 2, 3)
        v = p.to_vector()
        assert v.size == p.num_params == 2 + 1 + 6 + 3
        np.testing.assert_array_equal(MtgpParams.from_vector(v, 2, 3).to_vector(), v)
        names = p.param_names()
        assert len(names) == v.size
        assert names[:4] == ["log_lengthscale[0]", "log_lengthscale[1]", "log_signal_variance",
                             "log_L[0,0]"]
        assert names[4] == "L[1,0]" and names[-1] == "log_noise[2]"
        with pytest.raises(ValueError):
            MtgpParams.from_vector(v[:-1], 2, 3)


class TestCompleteData:
    def oracle(self, p, ds, f):
        """Two dense Gaussians: y | f and f."""
        n = ds.num_points
        noise = np.diag(np.tile(p.noise.variances, n))
        kxf = explicit_kron_cov(p, ds.inputs, 1e-2) - noise
        resid = vec_t(ds.outputs - f)
        return gaussian_logpdf(resid, noise) + gaussian_logpdf(vec_t(f), kxf)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_two_gaussian_oracle(self, seed):
        rng = np.random.default_rng(seed + 300)
        m = rng.integers(1, 4)
        p, ds = random_params(rng, 1, m), random_dataset(rng, 6, 1, m)
        f = rng.normal(size=(6, m))
        # a generous jitter keeps the prior well conditioned for a random f
        assert complete_data_log_likelihood(p, ds, f, jitter=1e-2) == pytest.approx(
            self.oracle(p, ds, f), rel=1e-9
        )

    def test_shape_check(self):
        rng = np.random.default_rng(12)
        p, ds = random_params(rng, 1, 2), random_dataset(rng, 4, 1, 2)
        with pytest.raises(ValueError):
            complete_data_log_likelihood(p, ds, np.zeros((4, 3)))
