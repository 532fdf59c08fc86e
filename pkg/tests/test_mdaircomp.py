import numpy as np
import pytest
from numpy.testing import assert_allclose

from uflsim.channel import (
    CommCodebook,
    Geometry,
    SubroundTransmission,
    build_geometry,
    calibrate_noise,
    gen_codebook,
    lsfc_profile,
)
from uflsim.decoder import PriorConfig
from uflsim.mdaircomp import (
    DeepFadeSkip,
    PreEqConfig,
    ScalarCountDenoiser,
    mdaircomp_decode,
    preequalize,
    received_amplitude,
    reference_antennas,
    synthesize_reference_signals,
)
from uflsim.rng import complex_normal

SINGLE_ZONE = Geometry(grid_squares=1)


class TestPreequalize:
    def test_unit_channel_passes_scaled_symbol(self):
        assert preequalize(0.5 + 0.5j, 1.0 + 0j, 2.0) == 1.0 + 1.0j

    def test_reference_antenna_sees_exact_symbol(self, rng):
        h = complex_normal(rng, (), 1.0)
        symbol = complex_normal(rng, (), 1.0)
        tx_sample = preequalize(symbol, h, 3.0)
        assert h * tx_sample == pytest.approx(3.0 * symbol, rel=1e-12)

    def test_deep_fade_raises(self):
        with pytest.raises(DeepFadeSkip):
            preequalize(1.0, 1e-9 + 0j, 1.0)


class TestReferenceAntennas:
    def test_one_per_zone_and_aligned_to_ap(self):
        g = build_geometry()
        refs = reference_antennas(g)
        assert refs.shape == (9,)
        assert np.all(refs % g.antennas_per_ap == 0)
        # the chosen AP is 50 m from the centroid (edge midpoints)
        for u, ref in enumerate(refs):
            ap = g.ap_positions[ref // g.antennas_per_ap]
            dist = np.linalg.norm(ap - g.zone_centroids[u])
            assert dist == pytest.approx(50.0)


class TestSynthesis:
    def test_noiseless_model_equality(self):
        """y_u = p_norm * C_u k_u exactly when no fade skips and no noise."""
        g = build_geometry()
        rng = np.random.default_rng(0)
        cb = gen_codebook(12, 9, 4, rng)
        pos = rng.uniform(0, 300, (7, 2))
        zones = np.array([g.zone_of(p) for p in pos])
        words = rng.integers(0, 4, 7)
        tx = SubroundTransmission(zones, words, 9, 4)
        cfg = PreEqConfig(deep_fade_threshold=1e-12)
        p_norm = 0.37
        signals, skipped = synthesize_reference_signals(
            tx, pos, g, cb, cfg, p_norm, 0.0, np.random.default_rng(5)
        )
        assert skipped == 0
        k = tx.multiplicities()
        for u in range(9):
            expected = p_norm * cb.zone_block(u) @ k[u]
            assert_allclose(signals[u], expected, atol=1e-10)

    def test_same_zone_same_word_adds_coherently(self):
        g = SINGLE_ZONE
        rng = np.random.default_rng(1)
        cb = gen_codebook(8, 1, 4, rng)
        pos = np.array([[40.0, 40.0], [60.0, 60.0]])
        tx = SubroundTransmission(np.array([0, 0]), np.array([2, 2]), 1, 4)
        signals, skipped = synthesize_reference_signals(
            tx, pos, g, cb, PreEqConfig(), 1.0, 0.0, np.random.default_rng(2)
        )
        assert skipped == 0
        assert_allclose(signals[0], 2.0 * cb.zone_block(0)[:, 2], atol=1e-10)

    def test_deep_fade_rate_positive(self):
        """With an elevated threshold the skip fraction matches the
        Rayleigh tail; the default threshold's analytic rate is > 0."""
        g = SINGLE_ZONE
        rng = np.random.default_rng(3)
        cb = gen_codebook(8, 1, 2, rng)
        pos = np.tile(g.zone_centroids[0], (400, 1))
        gamma_ref = lsfc_profile(pos[:1], g)[0][
            reference_antennas(g)[0] // g.antennas_per_ap
        ]
        threshold = 0.5 * np.sqrt(gamma_ref)
        cfg = PreEqConfig(deep_fade_threshold=float(threshold))
        tx = SubroundTransmission(np.zeros(400, dtype=int),
                                  np.zeros(400, dtype=int), 1, 2)
        skipped = 0
        for seed in range(20):
            _, s = synthesize_reference_signals(tx, pos, g, cb, cfg, 1.0, 0.0,
                                                np.random.default_rng(seed))
            skipped += s
        rate = skipped / (400 * 20)
        expected = 1 - np.exp(-threshold ** 2 / gamma_ref)  # Rayleigh CDF
        assert rate > 0
        assert rate == pytest.approx(expected, rel=0.1)
        # default threshold: vanishing but strictly positive analytic rate
        assert 1 - np.exp(-(1e-6) ** 2 / gamma_ref) > 0


class TestScalarDenoiser:
    def test_posterior_matches_direct_bayes(self, rng):
        prior = PriorConfig(0.5, 6)
        den = ScalarCountDenoiser(0.8, prior)
        tau2 = 0.09
        rows = complex_normal(rng, (5, 1), 1.0)
        post = den.posteriors(rows, tau2)
        for i, r in enumerate(rows[:, 0]):
            weights = prior.pmf * np.exp(
                -np.abs(r - 0.8 * np.arange(7)) ** 2 / tau2
            )
            assert_allclose(post[i], weights / weights.sum(), atol=1e-12)

    def test_estimate_is_posterior_mean_with_variance_divergence(self, rng):
        prior = PriorConfig(1.0, 4)
        den = ScalarCountDenoiser(1.0, prior)
        rows = complex_normal(rng, (3, 1), 1.0)
        tau2 = 0.2
        x_hat, div = den.estimate(rows, tau2)
        post = den.posteriors(rows, tau2)
        levels = np.arange(5.0)
        mean = post @ levels
        var = post @ levels ** 2 - mean ** 2
        assert_allclose(x_hat[:, 0], mean, atol=1e-12)
        assert div == pytest.approx(float(var.mean() / tau2), rel=1e-12)


class TestDecode:
    def test_noiseless_orthogonal_exact(self):
        m = 16
        rng = np.random.default_rng(4)
        q, _ = np.linalg.qr(complex_normal(rng, (m, m), 1.0))
        cb = CommCodebook(q, 1, m)
        k_true = np.zeros(m, dtype=int)
        k_true[5] = 1
        k_true[11] = 2
        p_norm = 0.9
        signals = (p_norm * cb.zone_block(0) @ k_true)[None, :]
        prior = PriorConfig.for_target(3, 1, m, 4)
        est = mdaircomp_decode(signals, cb, prior, p_norm)
        assert np.array_equal(est.per_zone[0], k_true)

    def test_recovers_counts_at_moderate_noise(self):
        m = 8
        n = 32
        rng = np.random.default_rng(6)
        cb = gen_codebook(n, 1, m, rng)
        k_true = np.array([0, 2, 0, 1, 0, 0, 1, 0])
        p_norm = 1.0
        noise_var = 1e-3
        signals = (p_norm * cb.zone_block(0) @ k_true)[None, :]
        signals = signals + complex_normal(np.random.default_rng(9),
                                           signals.shape, noise_var)
        est = mdaircomp_decode(signals, cb, PriorConfig.for_target(4, 1, m, 4),
                               p_norm)
        assert np.array_equal(est.per_zone[0], k_true)

    def test_shape_mismatch_rejected(self):
        rng = np.random.default_rng(0)
        cb = gen_codebook(8, 2, 4, rng)
        from uflsim.errors import ConfigError

        with pytest.raises(ConfigError):
            mdaircomp_decode(np.zeros((1, 8), dtype=complex), cb,
                             PriorConfig(0.1, 2), 1.0)


class TestReceivedAmplitude:
    def test_aggregate_snr_calibration(self):
        """Per-zone aggregate received power / noise equals the target SNR
        when participation matches the sizing assumption."""
        g = build_geometry()
        noise_var = calibrate_noise(10.0, 1e-3, g)
        n, u, k_tar = 50, 9, 100
        p = received_amplitude(PreEqConfig(), noise_var, n, u, k_tar)
        per_zone_clients = k_tar / u
        # each client contributes p^2 * E|c[n]|^2 = p^2 / N per symbol
        aggregate = per_zone_clients * p ** 2 / n
        assert aggregate / noise_var == pytest.approx(10.0)
