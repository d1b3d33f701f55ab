import itertools

import numpy as np
import pytest

from ddest.channel import PathSet, Snapshot, substream, synthesize_channel
from ddest.errors import NumericalError, ValidationError
from ddest.metrics import (CrbReport, crb, default_gates, match_estimates, mse_sweep,
                           order_error_stats, order_stats_csv)
from ddest.refine import pack_params, _model_vec


def fd_fisher(paths, grid, sigma, h=1e-6):
    """Finite-difference Fisher oracle built only from the forward model."""
    theta = pack_params(paths)
    n = grid.n_freq * grid.n_time
    cols = np.zeros((n, theta.size), complex)
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        cols[:, i] = (_model_vec(tp, grid) - _model_vec(tm, grid)) / (2 * h)
    return (2.0 / sigma ** 2) * np.real(cols.conj().T @ cols)


class TestCrb:
    def test_sigma_scaling(self, desk_grid):
        p = PathSet.single(1.0, 0.01, 0.02)
        lo = crb(p, desk_grid, 0.5)
        hi = crb(p, desk_grid, 1.0)
        np.testing.assert_allclose(hi.bounds, 4.0 * lo.bounds, rtol=1e-10)

    def test_phase_invariant_delay_bound(self, desk_grid):
        a = crb(PathSet.single(1.0, 0.01, 0.02), desk_grid, 0.3)
        b = crb(PathSet.single(np.exp(1.3j), 0.01, 0.02), desk_grid, 0.3)
        assert abs(a.delay[0] - b.delay[0]) <= 1e-10 * a.delay[0]

    def test_matches_fd_fisher_oracle(self, small_grid):
        rng = substream(51)
        p = PathSet(np.exp(1j * rng.uniform(0, 2 * np.pi, 2)),
                    np.array([0.1, 0.4]), np.array([-0.2, 0.3]))
        report = crb(p, small_grid, 0.7)
        oracle = np.diag(np.linalg.inv(fd_fisher(p, small_grid, 0.7))).reshape(-1, 4)
        np.testing.assert_allclose(report.bounds, oracle, rtol=1e-5)

    def test_doubling_snapshots_tightens_doppler(self):
        from ddest.channel import SamplingGrid

        p = PathSet.single(1.0, 0.01, 0.02)
        short = crb(p, SamplingGrid.centered(64, 32, 1e6, 1e-3), 1.0)
        long = crb(p, SamplingGrid.centered(64, 64, 1e6, 1e-3), 1.0)
        assert long.doppler[0] < short.doppler[0]

    def test_bounds_positive_and_named(self, desk_grid):
        report = crb(PathSet.single(1.0, 0.01, 0.0), desk_grid, 1.0)
        assert np.all(report.bounds > 0)
        named = report.named(0)
        assert set(named) == {"re_gain", "im_gain", "delay", "doppler"}

    def test_degenerate_scene_raises(self, desk_grid):
        p = PathSet(np.array([1.0, 1.0]), np.array([0.01, 0.01]), np.array([0.0, 0.0]))
        with pytest.raises(NumericalError):
            crb(p, desk_grid, 1.0)


class TestMatchEstimates:
    def test_identity_match(self, desk_grid, rng):
        p = PathSet(np.ones(3), np.array([0.001, 0.01, 0.02]), np.array([-0.02, 0.0, 0.03]))
        m = match_estimates(p, p, default_gates(desk_grid))
        assert len(m.pairs) == 3 and m.n_miss == 0 and m.n_false == 0
        assert m.rmse_delay == 0.0

    def test_spurious_estimate_is_false_alarm(self, desk_grid):
        truth = PathSet.single(1.0, 0.01, 0.0)
        est = PathSet(np.ones(2), np.array([0.01, 0.5]), np.array([0.0, 0.3]))
        m = match_estimates(est, truth, default_gates(desk_grid))
        assert len(m.pairs) == 1 and m.n_false == 1 and m.n_miss == 0
        assert m.rmse_delay == pytest.approx(0.0, abs=1e-15)

    def test_never_pairs_across_gate(self, desk_grid):
        truth = PathSet.single(1.0, 0.01, 0.0)
        est = PathSet.single(1.0, 0.01 + 2.5 * desk_grid.delay_bin, 0.0)
        m = match_estimates(est, truth, default_gates(desk_grid))
        assert m.pairs == [] and m.n_miss == 1 and m.n_false == 1

    def test_order_invariant_and_optimal_on_small_sets(self, desk_grid):
        rng = substream(52)
        gates = default_gates(desk_grid, bins=2.0)
        for _ in range(30):
            n = int(rng.integers(1, 6))
            truth = PathSet(np.ones(n), rng.uniform(0, 0.025, n), rng.uniform(-0.05, 0.05, n))
            est_d = truth.delays + rng.normal(0, 0.2 * desk_grid.delay_bin, n)
            est_a = truth.dopplers + rng.normal(0, 0.2 * desk_grid.doppler_bin, n)
            est = PathSet(np.ones(n), np.clip(est_d, 0, 0.999), np.clip(est_a, -0.499, 0.499))
            base = match_estimates(est, truth, gates)
            perm = rng.permutation(n)
            shuffled = PathSet(np.ones(n), est.delays[perm], est.dopplers[perm])
            again = match_estimates(shuffled, truth, gates)
            remapped = sorted((t, int(perm[e])) for t, e in again.pairs)
            assert sorted(base.pairs) == remapped
            # exhaustive optimal assignment must agree on these separated scenes
            if len(base.pairs) == n:
                def cost(assign):
                    return sum(np.hypot((est.delays[e] - truth.delays[t]) / gates[0],
                                        (est.dopplers[e] - truth.dopplers[t]) / gates[1])
                               for t, e in enumerate(assign))
                best = min(itertools.permutations(range(n)), key=cost)
                assert sorted(base.pairs) == sorted((t, e) for t, e in enumerate(best))

    def test_empty_sets(self, desk_grid):
        gates = default_gates(desk_grid)
        truth = PathSet.single(1.0, 0.01, 0.0)
        m = match_estimates(PathSet.empty(), truth, gates)
        assert m.n_miss == 1 and m.n_false == 0
        m = match_estimates(truth, PathSet.empty(), gates)
        assert m.n_miss == 0 and m.n_false == 1

    def test_bad_gates(self, desk_grid):
        p = PathSet.single(1.0, 0.01, 0.0)
        with pytest.raises(ValidationError):
            match_estimates(p, p, (0.0, 1.0))


class TestMseSweep:
    def test_oracle_estimator_has_zero_mse(self, small_grid):
        truth = PathSet.single(1.0, 0.3, 0.1)
        scene = Snapshot(synthesize_channel(truth, small_grid), small_grid, 0.0, truth)
        sweep = mse_sweep({"oracle": lambda snap: snap.truth}, scene,
                          snr_list=[10.0], n_trials=5, seed=9)
        row = sweep.row(10.0, "oracle")
        assert row.mse_tau == 0.0 and row.mse_alpha == 0.0
        assert row.misses == 0 and row.false_alarms == 0
        assert row.crb_tau > 0

    def test_estimators_see_identical_noise(self, small_grid):
        truth = PathSet.single(1.0, 0.3, 0.1)
        scene = Snapshot(synthesize_channel(truth, small_grid), small_grid, 0.0, truth)
        seen = {"a": [], "b": []}

        def make(name):
            def est(snap):
                seen[name].append(snap.data.copy())
                return snap.truth
            return est

        mse_sweep({"a": make("a"), "b": make("b")}, scene, [0.0], 3, seed=5)
        for x, y in zip(seen["a"], seen["b"]):
            np.testing.assert_array_equal(x, y)

    def test_csv_and_json_exports(self, small_grid):
        truth = PathSet.single(1.0, 0.3, 0.1)
        scene = Snapshot(synthesize_channel(truth, small_grid), small_grid, 0.0, truth)
        sweep = mse_sweep({"oracle": lambda s: s.truth}, scene, [0.0, 10.0], 2, seed=1)
        csv = sweep.to_csv({"seed": 1})
        assert csv.startswith("# schema_version=1 seed=1\n")
        assert len(csv.strip().splitlines()) == 2 + 2  # meta + header + rows
        js = sweep.to_json({"seed": 1})
        assert '"schema_version": 1' in js


class TestOrderErrorStats:
    def test_all_exact(self):
        stats = order_error_stats([(3, 3), (1, 1), (2, 2)])
        assert stats.histogram == {0: 3}
        assert stats.exact_rate == 1.0 and stats.mean_error == 0.0

    def test_underestimation(self):
        stats = order_error_stats([(2, 3), (0, 1)])
        assert stats.histogram == {-1: 2}
        assert stats.mean_error == -1.0 and stats.exact_rate == 0.0

    def test_mixed(self):
        stats = order_error_stats([(3, 3), (4, 3)] * 5)
        assert stats.mean_error == pytest.approx(0.5)
        assert stats.histogram == {0: 5, 1: 5}

    def test_histogram_mass_equals_trials(self):
        runs = [(int(i % 4), 2) for i in range(17)]
        stats = order_error_stats(runs)
        assert sum(stats.histogram.values()) == stats.n_runs == 17

    def test_csv_export(self):
        stats = {("edc", "", 10.0): order_error_stats([(1, 1), (2, 1)])}
        text = order_stats_csv(stats, ("estimator", "delta", "snr_db"), meta={"seed": 0})
        lines = text.strip().splitlines()
        assert lines[1] == "estimator,delta,snr_db,order_error,count,mean_error,exact_rate,n_runs"
        assert lines[2].startswith("edc,,10.0,0,1,")

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            order_error_stats([])
