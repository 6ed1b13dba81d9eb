import numpy as np
import pytest

from otfs_aircomp.channel import FRACTIONAL, INTEGER, PathSet, round_trip_paths, sample_paths
from otfs_aircomp.estimation import (
    DEFAULT_CANDIDATES,
    EstimatedCsi,
    GuardViolationError,
    PilotConfig,
    beta,
    estimate_fractional,
    estimate_integer,
    gain_residual,
    inject_tap_offsets,
    scale_outdated,
    simulate_echo_pilot_fractional,
    simulate_echo_pilot_integer,
)


def beta_sum(a, kappa, N):
    """Direct geometric sum, the definition of the leakage kernel."""
    n = np.arange(N)
    return np.sum(np.exp(2j * np.pi * (a + kappa) * n / N)) / N


def frac_paths(delays, total_dopplers, gains):
    """One-way fractional paths whose round trip has the given total Dopplers / 2."""
    total = np.asarray(total_dopplers, dtype=float)
    k = np.floor(total + 0.5).astype(int)
    return PathSet(delays, k, total - k, gains, FRACTIONAL)


class TestBeta:
    @pytest.mark.parametrize("N", [1, 4, 16, 64])
    def test_unit_at_origin(self, N):
        assert beta(0, 0.0, N) == 1

    @pytest.mark.parametrize("a", [1, 2, 5, 15, -3])
    def test_roots_of_unity_vanish(self, a):
        assert abs(beta(a, 0.0, 16)) < 1e-14

    def test_singularity_limit_at_multiples_of_N(self):
        assert beta(16, 0.0, 16) == 1
        assert abs(beta(8, 8.0, 16) - 1) < 1e-15

    @pytest.mark.parametrize("a,kappa", [(0, 0.3), (3, -0.27), (7, 0.5), (12, -0.5), (2, 1e-9)])
    def test_matches_geometric_sum(self, a, kappa):
        assert abs(beta(a, kappa, 16) - beta_sum(a, kappa, 16)) < 1e-12

    def test_energy_conservation_on_fine_grid(self):
        kappas = np.round(np.arange(-0.5, 0.5 + 1e-9, 0.01), 10)
        a = np.arange(16)
        energy = np.sum(np.abs(beta(a[None, :], kappas[:, None], 16)) ** 2, axis=1)
        np.testing.assert_allclose(energy, 1.0, atol=1e-10)

    def test_periodic_in_a(self):
        a = np.arange(-20, 20)
        np.testing.assert_allclose(beta(a, 0.31, 16), beta(a + 16, 0.31, 16), atol=1e-13)

    def test_rejects_bad_N(self):
        with pytest.raises(ValueError):
            beta(0, 0.0, 0)


class TestPilotConfig:
    def test_defaults(self):
        cfg = PilotConfig(16, 16)
        assert cfg.k_c == 8
        assert cfg.candidates == DEFAULT_CANDIDATES
        assert len(cfg.candidates) == 11

    def test_for_channel_spans(self):
        cfg = PilotConfig.for_channel(16, 16, 2, 1)
        assert cfg.delay_span == 4 and cfg.doppler_span == 5 and cfg.rows == 5

    def test_phase_is_unit_modulus(self, rng):
        cfg = PilotConfig(16, 16, l_c=7)
        assert np.allclose(np.abs(cfg.phase(rng.uniform(-8, 8, 50))), 1.0)

    @pytest.mark.parametrize("kw", [dict(x_o=0.0), dict(sigma_w_sq=-1.0), dict(k_c=16), dict(candidates=(0.7,))])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            PilotConfig(16, 16, **kw)


class TestIntegerEstimation:
    def test_zero_noise_is_identity_at_origin(self):
        paths = PathSet.integer([0, 2], [1, -1], [0.3 - 0.2j, -0.7j])
        cfg = PilotConfig.for_channel(16, 16, 2, 1, sigma_w_sq=0.0)
        obs = simulate_echo_pilot_integer(paths, cfg, np.random.default_rng(0))
        np.testing.assert_array_equal(obs.values, paths.gains)

    @pytest.mark.parametrize("l_c", [0, 5, 10])
    def test_zero_noise_exact_recovery(self, l_c, rng):
        cfg = PilotConfig.for_channel(16, 16, 2, 1, sigma_w_sq=0.0, x_o=1.7, l_c=l_c)
        for _ in range(50):
            paths = sample_paths(2, 2, 1, INTEGER, rng)
            rt = round_trip_paths(paths, 16)
            csi = estimate_integer(simulate_echo_pilot_integer(paths, cfg, rng), rt, cfg)
            np.testing.assert_allclose(csi.gains, paths.gains, rtol=0, atol=1e-12)
            np.testing.assert_array_equal(csi.paths.delays, paths.delays)
            np.testing.assert_array_equal(csi.paths.dopplers, paths.dopplers)
            assert np.all(csi.paths.fractions == 0)

    def test_halving(self, rng):
        cfg = PilotConfig(16, 16, sigma_w_sq=0.0)
        obs = simulate_echo_pilot_integer(PathSet.integer([2], [1], [1.0]), cfg, rng)
        csi = estimate_integer(obs, PathSet.integer([4], [2], [1.0]), cfg)
        assert (csi.paths.delays[0], csi.paths.dopplers[0]) == (2, 1)

    def test_odd_round_trip_rejected(self):
        from otfs_aircomp.estimation import PilotObservation

        with pytest.raises(ValueError):
            estimate_integer(PilotObservation(INTEGER, values=np.ones(1)), PathSet.integer([3], [0], [1.0]), PilotConfig(16, 16))

    def test_guard_violation(self):
        cfg = PilotConfig(16, 16, delay_span=2, doppler_span=3)
        with pytest.raises(GuardViolationError):
            simulate_echo_pilot_integer(PathSet.integer([2], [0], [1.0]), cfg, np.random.default_rng(0))
        with pytest.raises(GuardViolationError):
            simulate_echo_pilot_integer(PathSet.integer([0], [1], [1.0]), cfg, np.random.default_rng(0))

    def test_observation_noise_variance(self, rng):
        cfg = PilotConfig.for_channel(16, 16, 2, 1, sigma_w_sq=0.04, x_o=2.0, l_c=5)
        paths = PathSet.integer([0, 1], [1, -1], [0.5 + 0.5j, -0.3j])
        rt = round_trip_paths(paths, 16)
        clean = paths.gains * cfg.phase(rt.dopplers) * cfg.x_o
        resid = np.array([simulate_echo_pilot_integer(paths, cfg, rng).values - clean for _ in range(50_000)])
        assert abs(np.mean(np.abs(resid) ** 2) - 0.04) < 0.02 * 0.04

    def test_gain_estimate_variance(self):
        # h ~ CN(0, 1/P) plus pilot noise w / (x_o theta): variance 1/P + sigma_w^2 / x_o^2
        rng = np.random.default_rng(5)
        P, sigma_w_sq, x_o = 2, 0.1, 1.5
        cfg = PilotConfig.for_channel(16, 16, 2, 1, sigma_w_sq=sigma_w_sq, x_o=x_o, l_c=5)
        est = np.empty((50_000, P), dtype=complex)
        for t in range(est.shape[0]):
            paths = sample_paths(P, 2, 1, INTEGER, rng)
            est[t] = estimate_integer(simulate_echo_pilot_integer(paths, cfg, rng), round_trip_paths(paths, 16), cfg).gains
        theory = 1 / P + sigma_w_sq / x_o**2
        assert abs(np.mean(np.abs(est) ** 2) - theory) < 0.02 * theory


class TestFractionalObservation:
    def test_on_grid_single_cell(self):
        cfg = PilotConfig.for_channel(16, 16, 2, 1, sigma_w_sq=0.0)
        paths = PathSet.integer([1], [1], [0.5 - 0.5j])
        obs = simulate_echo_pilot_fractional(paths, cfg, np.random.default_rng(0))
        nz = np.argwhere(np.abs(obs.block) > 1e-14)
        assert nz.tolist() == [[2, (cfg.k_c + 2) % 16]]

    @pytest.mark.parametrize("total", [0.37, -0.81, 1.25])
    def test_row_energy(self, total):
        cfg = PilotConfig.for_channel(16, 16, 2, 1, sigma_w_sq=0.0, x_o=1.3, l_c=5)
        h = 0.6 - 0.2j
        obs = simulate_echo_pilot_fractional(frac_paths([2], [total], [h]), cfg, np.random.default_rng(0))
        assert obs.block.shape == (5, 16)
        assert abs(np.sum(np.abs(obs.block[4]) ** 2) - abs(1.3 * h) ** 2) < 1e-12

    def test_noise_only_rows(self, rng):
        cfg = PilotConfig.for_channel(16, 16, 2, 1, sigma_w_sq=0.2)
        paths = PathSet.integer([0], [0], [1.0])
        cells = np.concatenate([simulate_echo_pilot_fractional(paths, cfg, rng).block[1:].ravel() for _ in range(500)])
        assert abs(np.mean(np.abs(cells) ** 2) - 0.2) < 0.05 * 0.2

    def test_row_collision(self):
        # round-trip delays 2*1 and 2*1 coincide only if one-way delays coincide
        cfg = PilotConfig.for_channel(16, 16, 2, 1)
        with pytest.raises(ValueError):
            simulate_echo_pilot_fractional(PathSet.integer([1, 1], [0, 1], [1.0, 1.0]), cfg, np.random.default_rng(0))

    def test_rows_exceeded(self):
        cfg = PilotConfig(16, 16, rows=3)
        with pytest.raises(GuardViolationError):
            simulate_echo_pilot_fractional(PathSet.integer([2], [0], [1.0]), cfg, np.random.default_rng(0))


class TestFractionalEstimation:
    @pytest.mark.parametrize("l_c", [0, 5])
    def test_on_grid_exact(self, l_c, rng):
        cfg = PilotConfig.for_channel(16, 16, 2, 1, sigma_w_sq=0.0, x_o=1.2, l_c=l_c)
        for _ in range(40):
            cands = rng.choice(DEFAULT_CANDIDATES, 2)
            ks = rng.integers(-2, 3, 2)
            paths = sample_paths(2, 2, 1, INTEGER, rng)
            rt_total = ks + cands
            true = frac_paths(paths.delays, rt_total / 2, paths.gains)
            rt = round_trip_paths(true, 16)
            csi = estimate_fractional(simulate_echo_pilot_fractional(true, cfg, rng), cfg, 2)
            order = np.argsort(csi.round_trip.delays)
            ref = np.argsort(rt.delays)
            np.testing.assert_array_equal(csi.round_trip.delays[order], rt.delays[ref])
            np.testing.assert_allclose(
                csi.round_trip.total_dopplers[order], rt.total_dopplers[ref], atol=1e-12
            )
            np.testing.assert_allclose(csi.gains[order], true.gains[ref], atol=1e-10)
            assert csi.weak_rows == 0 and csi.odd_delays == 0

    def test_off_grid_quantization_bound(self):
        cfg = PilotConfig.for_channel(16, 16, 2, 1, sigma_w_sq=0.0, l_c=5)
        worst = 0.0
        for kappa in np.arange(-0.5, 0.5 + 1e-9, 0.01):
            for k in (-2, 0, 1):
                true = frac_paths([1], [(k + kappa) / 2], [0.8 + 0.1j])
                csi = estimate_fractional(simulate_echo_pilot_fractional(true, cfg, np.random.default_rng(0)), cfg, 1)
                assert csi.round_trip.delays[0] == 2
                worst = max(worst, abs(csi.round_trip.total_dopplers[0] - (k + kappa)))
        assert worst <= 0.05 + 1e-9

    def test_halving(self):
        cfg = PilotConfig.for_channel(16, 16, 2, 1, sigma_w_sq=0.0)
        true = frac_paths([2], [0.65], [1.0])  # round trip 1.3 -> k=1, kappa=0.3
        csi = estimate_fractional(simulate_echo_pilot_fractional(true, cfg, np.random.default_rng(0)), cfg, 1)
        assert csi.round_trip.dopplers[0] == 1 and abs(csi.round_trip.fractions[0] - 0.3) < 1e-12
        assert csi.paths.delays[0] == 2
        assert abs(csi.paths.total_dopplers[0] - 0.65) < 1e-12
        assert csi.paths.mode == FRACTIONAL

    @staticmethod
    def _success_rate(snr_db, unit_gain, trials=1000, seed=11):
        rng = np.random.default_rng(seed)
        cfg = PilotConfig(16, 16, rows=5, sigma_w_sq=10 ** (-snr_db / 10))
        rows = taps = 0
        for _ in range(trials):
            true = sample_paths(1, 2, 1, FRACTIONAL, rng)
            if unit_gain:
                true = true.with_gains(true.gains / np.abs(true.gains))
            rt = round_trip_paths(true, 16)
            csi = estimate_fractional(simulate_echo_pilot_fractional(true, cfg, rng), cfg, 1)
            same_row = csi.round_trip.delays[0] == rt.delays[0]
            # compare total Doppler: near kappa = +-0.5 either neighbouring split is the same shift
            close = abs(csi.round_trip.total_dopplers[0] - rt.total_dopplers[0]) <= 0.1 + 1e-9
            rows += bool(same_row)
            taps += bool(same_row and close)
        return rows / trials, taps / trials

    @pytest.mark.parametrize("snr_db,required", [(30.0, 0.99), (40.0, 0.999)])
    def test_success_rate_at_received_snr(self, snr_db, required):
        # unit-magnitude gain: the pilot SNR is the SNR of the received echo
        rows, taps = self._success_rate(snr_db, unit_gain=True)
        assert rows >= required and taps >= required

    def test_rayleigh_success_is_fade_limited(self):
        # With h ~ CN(0, 1) about 1% of draws fade below the row noise floor at 30 dB.
        rows, taps = self._success_rate(30.0, unit_gain=False)
        assert rows >= 0.98 and taps >= 0.95

    def test_weak_rows_flagged(self):
        cfg = PilotConfig(16, 16, rows=5, sigma_w_sq=1.0)
        true = PathSet.integer([0], [0], [1e-3])
        csi = estimate_fractional(simulate_echo_pilot_fractional(true, cfg, np.random.default_rng(0)), cfg, 2)
        assert csi.weak_rows >= 1

    def test_wrong_observation_kind(self):
        from otfs_aircomp.estimation import PilotObservation

        with pytest.raises(ValueError):
            estimate_fractional(PilotObservation(INTEGER, values=np.ones(1)), PilotConfig(16, 16), 1)


def _csi(delays, dopplers, gains):
    p = PathSet.integer(delays, dopplers, gains)
    return EstimatedCsi(p, p)


class TestScaleOutdated:
    @pytest.mark.parametrize("rho", [1.0, 0.0, 0.99])
    def test_scaling(self, rho):
        out = scale_outdated(_csi([0], [0], [1.0 + 0j]), rho)
        assert out.gains[0] == rho * (1.0 + 0j)
        assert out.scaled

    def test_double_scaling_rejected(self):
        with pytest.raises(ValueError):
            scale_outdated(scale_outdated(_csi([0], [0], [1.0]), 0.9), 0.9)


class TestTapOffsets:
    def test_zero_probability_is_identity(self, rng):
        csi = _csi([1, 3], [0, -1], [1.0, 2.0])
        out = inject_tap_offsets(csi, 0.0, "both", rng)
        np.testing.assert_array_equal(out.paths.delays, csi.paths.delays)
        np.testing.assert_array_equal(out.paths.dopplers, csi.paths.dopplers)

    def test_forced_delay_corruption(self, rng):
        csi = _csi([2, 5, 7], [0, 1, -1], [1.0, 1.0, 1.0])
        for _ in range(20):
            out = inject_tap_offsets(csi, 1.0, "delay", rng)
            np.testing.assert_array_equal(np.abs(out.paths.delays - csi.paths.delays), 1)
            np.testing.assert_array_equal(out.paths.dopplers, csi.paths.dopplers)

    def test_clamped(self, rng):
        csi = _csi([0], [0], [1.0])
        for _ in range(50):
            out = inject_tap_offsets(csi, 1.0, "delay", rng, delay_range=(0, 15))
            assert out.paths.delays[0] in (0, 1)

    def test_rate_and_sign_balance(self):
        rng = np.random.default_rng(3)
        P = 1000
        csi = _csi(np.arange(P) + 10, np.zeros(P, int), np.ones(P))
        steps = np.concatenate([inject_tap_offsets(csi, 0.1, "doppler", rng).paths.dopplers for _ in range(100)])
        assert abs(np.mean(steps != 0) - 0.10) < 0.01
        assert abs(np.mean(steps[steps != 0] > 0) - 0.5) < 0.03

    def test_both_taps_independent(self, rng):
        P = 20_000
        csi = _csi(np.full(P, 10), np.zeros(P, int), np.ones(P))
        out = inject_tap_offsets(csi, 0.5, "both", rng)
        hit_l = out.paths.delays != 10
        hit_k = out.paths.dopplers != 0
        assert abs(np.mean(hit_l & hit_k) - 0.25) < 0.02

    @pytest.mark.parametrize("kw", [dict(p_offset=1.5, which="delay"), dict(p_offset=0.1, which="gain")])
    def test_invalid(self, kw, rng):
        with pytest.raises(ValueError):
            inject_tap_offsets(_csi([0], [0], [1.0]), rng=rng, **kw)


class TestGainResidual:
    def test_on_grid_is_unity(self):
        cfg = PilotConfig.for_channel(16, 16, 2, 1, sigma_w_sq=0.0, l_c=5)
        true = frac_paths([0, 2], [0.15, -0.6], [0.4 + 0.3j, -0.8j])
        csi = estimate_fractional(simulate_echo_pilot_fractional(true, cfg, np.random.default_rng(0)), cfg, 2)
        np.testing.assert_allclose(gain_residual(csi, true), 1.0, atol=1e-10)

    @pytest.mark.parametrize("rt_total", [0.13, 1.27, -0.44, 2.05])
    def test_off_grid_magnitude_is_leakage_ratio(self, rt_total):
        # zero noise: |h_hat / h| = |beta(0, kappa)| / |beta(0, kappa_hat)| for the round-trip fractions
        N = 16
        cfg = PilotConfig.for_channel(N, N, 2, 1, sigma_w_sq=0.0, l_c=5)
        true = frac_paths([1], [rt_total / 2], [0.6 - 0.2j])
        csi = estimate_fractional(simulate_echo_pilot_fractional(true, cfg, np.random.default_rng(0)), cfg, 1)
        kappa = rt_total - np.floor(rt_total + 0.5)
        kappa_hat = csi.round_trip.fractions[0]
        expected = abs(beta_sum(0, kappa, N)) / abs(beta_sum(0, kappa_hat, N))
        assert abs(abs(gain_residual(csi, true)[0]) - expected) < 1e-10

    def test_missed_delay_is_nan(self):
        csi = _csi([1], [0], [1.0])
        assert np.isnan(gain_residual(csi, PathSet.integer([2], [0], [1.0]))[0])

