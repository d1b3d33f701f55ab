import numpy as np
import pytest

from ddest.channel import PathSet, SamplingGrid, Snapshot, add_noise, sigma_for_snr, \
    substream, synthesize_channel
from ddest.errors import DegenerateBasisError, NumericalError, ValidationError
from ddest.refine import (GnConfig, blue_gains, estimate_noise_sigma, fisher_information,
                          gauss_newton_refine, model_jacobian, neg_log_likelihood,
                          nll_gradient, pack_params, refine_path_estimates, unpack_params,
                          _model_vec)

FD_STEP = 1e-6


def random_paths(rng, n, delay_hi=0.025, doppler=0.05):
    gains = 10 ** rng.uniform(-1, 0, n) * np.exp(1j * rng.uniform(0, 2 * np.pi, n))
    return PathSet(gains, rng.uniform(0, delay_hi, n), rng.uniform(-doppler, doppler, n))


def make_snapshot(paths, grid, snr_db=None, rng=None):
    clean = synthesize_channel(paths, grid)
    if snr_db is None:
        return Snapshot(clean, grid, 0.0, paths)
    sigma = sigma_for_snr(clean, snr_db)
    return Snapshot(add_noise(clean, sigma, rng), grid, sigma, paths)


class TestPacking:
    def test_round_trip(self, rng):
        p = random_paths(rng, 3)
        gains, delays, dopplers = unpack_params(pack_params(p))
        np.testing.assert_array_equal(gains, p.gains)
        np.testing.assert_array_equal(delays, p.delays)
        np.testing.assert_array_equal(dopplers, p.dopplers)

    def test_bad_length(self):
        with pytest.raises(ValidationError):
            unpack_params(np.zeros(6))


class TestNegLogLikelihood:
    def test_exact_fit_is_zero(self, small_grid, rng):
        p = random_paths(rng, 2)
        snap = make_snapshot(p, small_grid)
        assert neg_log_likelihood(pack_params(p), snap, sigma=1.0) == pytest.approx(0.0, abs=1e-18)

    def test_empty_model(self, small_grid, rng):
        y = rng.standard_normal((16, 8)) + 1j * rng.standard_normal((16, 8))
        snap = Snapshot(y, small_grid, 1.0)
        expected = np.sum(np.abs(y) ** 2)
        assert neg_log_likelihood(np.zeros(0), snap) == pytest.approx(expected)

    def test_sigma_scaling(self, small_grid, rng):
        p = random_paths(rng, 1)
        snap = make_snapshot(p, small_grid, snr_db=10.0, rng=rng)
        theta = pack_params(p) * 1.01
        assert neg_log_likelihood(theta, snap, sigma=2.0) == pytest.approx(
            neg_log_likelihood(theta, snap, sigma=1.0) / 4.0)

    def test_zero_sigma_rejected(self, small_grid, rng):
        p = random_paths(rng, 1)
        snap = make_snapshot(p, small_grid)
        with pytest.raises(ValidationError):
            neg_log_likelihood(pack_params(p), snap)


class TestModelJacobian:
    def test_matches_finite_differences(self, desk_grid):
        rng = substream(31)
        for _ in range(3):
            theta = pack_params(random_paths(rng, 3))
            jac = model_jacobian(theta, desk_grid)
            for i in range(theta.size):
                tp, tm = theta.copy(), theta.copy()
                tp[i] += FD_STEP
                tm[i] -= FD_STEP
                col_fd = (_model_vec(tp, desk_grid) - _model_vec(tm, desk_grid)) / (2 * FD_STEP)
                rel = np.linalg.norm(jac[:, i] - col_fd) / np.linalg.norm(col_fd)
                assert rel <= 1e-6

    def test_re_gain_column_is_atom(self, small_grid):
        p = PathSet.single(0.7 + 0.3j, 0.2, 0.1)
        jac = model_jacobian(pack_params(p), small_grid)
        atom = synthesize_channel(PathSet.single(1.0, 0.2, 0.1), small_grid).ravel()
        np.testing.assert_allclose(jac[:, 0], atom, atol=1e-14)
        np.testing.assert_allclose(jac[:, 1], 1j * atom, atol=1e-14)

    def test_zero_gain_kills_nonlinear_columns(self, small_grid):
        theta = np.array([0.0, 0.0, 0.2, 0.1])
        jac = model_jacobian(theta, small_grid)
        assert np.all(jac[:, 2] == 0) and np.all(jac[:, 3] == 0)


class TestNllGradient:
    def test_zero_at_exact_fit(self, small_grid, rng):
        p = random_paths(rng, 2)
        snap = make_snapshot(p, small_grid)
        grad = nll_gradient(pack_params(p), snap, sigma=1.0)
        assert np.abs(grad).max() < 1e-9

    def test_matches_finite_differences(self, desk_grid):
        rng = substream(32)
        p = random_paths(rng, 2)
        snap = make_snapshot(p, desk_grid, snr_db=20.0, rng=rng)
        theta = pack_params(p) + rng.uniform(-1, 1, 8) * 1e-3
        grad = nll_gradient(theta, snap, sigma=snap.noise_sigma)
        for i in range(theta.size):
            tp, tm = theta.copy(), theta.copy()
            tp[i] += FD_STEP
            tm[i] -= FD_STEP
            fd = (neg_log_likelihood(tp, snap) - neg_log_likelihood(tm, snap)) / (2 * FD_STEP)
            assert abs(grad[i] - fd) <= 1e-6 * max(abs(fd), 1.0)

    def test_sigma_scaling(self, small_grid, rng):
        p = random_paths(rng, 1)
        snap = make_snapshot(p, small_grid, snr_db=10.0, rng=rng)
        theta = pack_params(p) * 0.99
        np.testing.assert_allclose(nll_gradient(theta, snap, sigma=2.0),
                                   nll_gradient(theta, snap, sigma=1.0) / 4.0)


class TestFisherInformation:
    def test_exactly_symmetric(self, desk_grid, rng):
        theta = pack_params(random_paths(rng, 3))
        f = fisher_information(theta, desk_grid, 0.5)
        assert np.abs(f - f.T).max() == 0.0

    def test_single_path_gain_entry(self, small_grid):
        theta = pack_params(PathSet.single(1.0, 0.3, 0.1))
        f = fisher_information(theta, small_grid, 0.5)
        assert f[0, 0] == pytest.approx(2 * 16 * 8 / 0.25, rel=1e-12)

    def test_sigma_scaling(self, small_grid, rng):
        theta = pack_params(random_paths(rng, 2))
        np.testing.assert_allclose(fisher_information(theta, small_grid, 1.0),
                                   4.0 * fisher_information(theta, small_grid, 2.0))

    def test_positive_semidefinite(self, desk_grid):
        rng = substream(33)
        for _ in range(5):
            theta = pack_params(random_paths(rng, 3))
            eig = np.linalg.eigvalsh(fisher_information(theta, desk_grid, 1.0))
            assert eig.min() >= -1e-8 * eig.max()


class TestGaussNewton:
    def test_converges_from_fraction_of_a_bin(self, desk_grid):
        truth = PathSet.single(0.8 * np.exp(0.7j), 0.0123, 0.021)
        snap = make_snapshot(truth, desk_grid)
        d0 = truth.delays[0] + 0.3 * desk_grid.delay_bin
        a0 = truth.dopplers[0] + 0.3 * desk_grid.doppler_bin
        paths, result = refine_path_estimates(snap, [d0], [a0], steps=10)
        assert len(result.trace) <= 10
        assert abs(paths.delays[0] - truth.delays[0]) < 1e-9
        assert abs(paths.dopplers[0] - truth.dopplers[0]) < 1e-9
        assert abs(paths.gains[0] - truth.gains[0]) < 1e-9

    def test_fixed_point_at_truth(self, desk_grid):
        truth = PathSet.single(1.0, 0.01, -0.02)
        snap = make_snapshot(truth, desk_grid)
        result = gauss_newton_refine(pack_params(truth), snap, GnConfig(), sigma=1.0)
        assert result.converged
        assert result.trace == []
        np.testing.assert_array_equal(result.theta, pack_params(truth))

    def test_objective_never_increases(self, desk_grid):
        rng = substream(34)
        truth = random_paths(rng, 2)
        snap = make_snapshot(truth, desk_grid, snr_db=10.0, rng=rng)
        theta0 = pack_params(truth)
        theta0[2::4] += 0.2 * desk_grid.delay_bin
        theta0[3::4] -= 0.2 * desk_grid.doppler_bin
        result = gauss_newton_refine(theta0, snap, GnConfig(max_iters=15))
        lambdas = [row[1] for row in result.trace]
        assert all(b <= a + 1e-12 for a, b in zip(lambdas, lambdas[1:]))

    def test_empty_theta_rejected(self, small_grid, rng):
        snap = make_snapshot(random_paths(rng, 1), small_grid)
        with pytest.raises(ValidationError):
            gauss_newton_refine(np.zeros(0), snap)

    def test_trace_csv_export(self, desk_grid):
        truth = PathSet.single(1.0, 0.01, 0.0)
        snap = make_snapshot(truth, desk_grid)
        theta0 = pack_params(truth)
        theta0[2] += 0.5 * desk_grid.delay_bin
        result = gauss_newton_refine(theta0, snap, GnConfig())
        text = result.trace_csv()
        assert text.splitlines()[0] == "iter,lambda,step_size,grad_norm"
        assert len(text.splitlines()) == len(result.trace) + 1


class TestBlueGains:
    def test_exact_recovery_noiseless(self, small_grid, rng):
        p = random_paths(rng, 3, delay_hi=0.9, doppler=0.45)
        snap = make_snapshot(p, small_grid)
        gains, resid = blue_gains(p.delays, p.dopplers, snap)
        np.testing.assert_allclose(gains, p.gains, atol=1e-10)
        assert resid < 1e-18 * np.sum(np.abs(snap.data) ** 2) + 1e-20

    def test_zero_data_zero_gains(self, small_grid):
        snap = Snapshot(np.zeros((16, 8), complex), small_grid)
        gains, resid = blue_gains([0.1], [0.0], snap)
        np.testing.assert_allclose(gains, 0.0, atol=1e-15)
        assert resid == pytest.approx(0.0, abs=1e-20)

    def test_residual_orthogonal_to_basis(self, desk_grid):
        rng = substream(35)
        p = random_paths(rng, 3)
        snap = make_snapshot(p, desk_grid, snr_db=5.0, rng=rng)
        from ddest.refine import path_atoms

        gains, _ = blue_gains(p.delays, p.dopplers, snap)
        basis = path_atoms(p.delays, p.dopplers, desk_grid)
        r = snap.data.ravel() - basis @ gains
        y_norm = np.linalg.norm(snap.data)
        assert np.linalg.norm(basis.conj().T @ r) <= 1e-8 * y_norm

    def test_two_separated_paths_high_snr(self, desk_grid):
        # >= 2 resolution bins apart at 40 dB: gain error within 1%
        rng = substream(36)
        errs = []
        for _ in range(10):
            delays = np.array([0.005, 0.005 + 3 * desk_grid.delay_bin])
            dopplers = np.array([0.0, 2 * desk_grid.doppler_bin])
            gains = np.exp(1j * rng.uniform(0, 2 * np.pi, 2))
            p = PathSet(gains, delays, dopplers)
            snap = make_snapshot(p, desk_grid, snr_db=40.0, rng=rng)
            est, _ = blue_gains(delays, dopplers, snap)
            errs.append(np.abs(est - gains) / np.abs(gains))
        assert np.median(errs) <= 0.01

    def test_duplicate_paths_raise_named_pair(self, small_grid, rng):
        p = random_paths(rng, 1)
        snap = make_snapshot(p, small_grid)
        delays = np.array([0.2, 0.2, 0.5])
        dopplers = np.array([0.1, 0.1, -0.2])
        with pytest.raises(DegenerateBasisError) as err:
            blue_gains(delays, dopplers, snap)
        assert set(err.value.pair) == {0, 1}


class TestFullChainSinglePath:
    def test_peak_init_refine_blue_recovers_everything(self, desk_grid):
        from ddest.baselines import full_range_region, residual_peak

        truth = PathSet.single(0.5 * np.exp(-1.1j), 0.0171, -0.034)
        snap = make_snapshot(truth, desk_grid)
        tau, alpha = residual_peak(snap.data, snap, full_range_region(desk_grid, 4))
        paths, _ = refine_path_estimates(snap, [tau], [alpha], steps=10)
        assert abs(paths.delays[0] - truth.delays[0]) < 1e-9
        assert abs(paths.dopplers[0] - truth.dopplers[0]) < 1e-9
        assert abs(paths.gains[0] - truth.gains[0]) < 1e-9

    def test_sigma_estimate_from_residual(self, desk_grid):
        rng = substream(37)
        truth = PathSet.single(1.0, 0.01, 0.02)
        snap = make_snapshot(truth, desk_grid, snr_db=20.0, rng=rng)
        est = estimate_noise_sigma(snap, truth.delays, truth.dopplers)
        assert est == pytest.approx(snap.noise_sigma, rel=0.05)
