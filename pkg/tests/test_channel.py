import numpy as np
import pytest
from numpy.testing import assert_allclose

from uflsim.channel import (
    CommCodebook,
    Geometry,
    PATHLOSS_D0,
    PATHLOSS_EXPONENT,
    ReceivedSignal,
    SubroundTransmission,
    build_geometry,
    calibrate_noise,
    draw_channels,
    gen_codebook,
    geometry_to_csv,
    lsfc,
    lsfc_profile,
    synthesize_received,
)
from uflsim.errors import InputError


class TestGeometry:
    def test_counts_match_deployment(self):
        g = build_geometry()
        assert g.num_aps == 40
        assert g.num_antennas == 160
        assert g.num_zones == 9

    def test_every_position_maps_to_one_zone(self, rng):
        g = build_geometry()
        for pos in rng.uniform(0, 300, (200, 2)):
            u = g.zone_of(pos)
            assert 0 <= u < 9
            cx, cy = g.zone_centroids[u]
            assert abs(pos[0] - cx) <= 50 + 1e-9
            assert abs(pos[1] - cy) <= 50 + 1e-9

    def test_zone_grid_layout(self):
        g = build_geometry()
        assert g.zone_of((10, 10)) == 0
        assert g.zone_of((250, 10)) == 2
        assert g.zone_of((10, 250)) == 6
        assert g.zone_of((150, 150)) == 4
        assert g.zone_of((300, 300)) == 8  # boundary clips inward

    def test_outside_area_rejected(self):
        with pytest.raises(InputError):
            build_geometry().zone_of((301, 0))

    def test_centroid_to_nearest_ap_is_50m(self):
        assert build_geometry().centroid_nearest_ap_distance() == pytest.approx(50.0)

    def test_aps_lie_on_gridlines(self):
        g = build_geometry()
        on_line = (g.ap_positions % 100 == 0)
        assert np.all(on_line.any(axis=1))

    def test_csv_dump_parses(self):
        g = build_geometry()
        lines = geometry_to_csv(g).strip().splitlines()
        assert lines[0] == "kind,index,x,y"
        assert len(lines) == 1 + 40 + 9


class TestLsfc:
    def test_zero_distance_is_one(self):
        assert lsfc((5.0, 5.0), (5.0, 5.0)) == 1.0

    def test_half_at_reference_distance(self):
        assert lsfc((0.0, 0.0), (PATHLOSS_D0, 0.0)) == pytest.approx(0.5)

    def test_value_at_50m(self):
        expected = 1.0 / (1.0 + (50.0 / 13.57) ** 3.67)
        got = lsfc((0.0, 0.0), (50.0, 0.0))
        assert got == pytest.approx(expected, rel=1e-12)
        assert got == pytest.approx(8.27e-3, rel=1e-2)

    def test_profile_matches_scalar(self, rng):
        g = build_geometry()
        pos = rng.uniform(0, 300, 2)
        profile = lsfc_profile(pos, g)[0]
        for b in range(g.num_aps):
            assert profile[b] == pytest.approx(lsfc(pos, g.ap_positions[b]))


class TestCalibrateNoise:
    def test_paper_operating_point(self):
        g = build_geometry()
        got = calibrate_noise(10.0, 1e-3, g)
        expected = 1e-3 / (10.0 * (1.0 + (50.0 / 13.57) ** 3.67))
        assert got == pytest.approx(expected, rel=1e-12)
        assert got == pytest.approx(8.27e-7, rel=1e-2)

    def test_infinite_snr_kills_noise(self):
        g = build_geometry()
        assert calibrate_noise(300.0, 1e-3, g) < 1e-33

    def test_noise_proportional_to_power(self):
        g = build_geometry()
        assert calibrate_noise(10.0, 2e-3, g) == pytest.approx(
            2 * calibrate_noise(10.0, 1e-3, g)
        )


class TestCodebook:
    def test_columns_unit_norm(self, rng):
        cb = gen_codebook(50, 9, 128, rng)
        assert cb.matrix.shape == (50, 1152)
        assert_allclose(np.linalg.norm(cb.matrix, axis=0), 1.0, atol=1e-12)

    def test_cross_coherence_scales_with_blocklength(self, rng):
        n = 64
        cb = gen_codebook(n, 1, 256, rng)
        gram = np.abs(cb.matrix.conj().T @ cb.matrix)
        off = gram[~np.eye(256, dtype=bool)]
        # mean |inner product| of unit complex Gaussians ~ sqrt(pi)/2 / sqrt(N)
        assert abs(off.mean() - np.sqrt(np.pi) / 2 / np.sqrt(n)) < 0.2 / np.sqrt(n)

    def test_zone_blocks_partition_columns(self, rng):
        cb = gen_codebook(10, 3, 4, rng)
        stacked = np.hstack([cb.zone_block(u) for u in range(3)])
        assert np.array_equal(stacked, cb.matrix)


class TestDrawChannels:
    def test_per_ap_variance_tracks_lsfc(self):
        g = build_geometry()
        pos = np.array([[150.0, 150.0]])
        rng = np.random.default_rng(0)
        draws = np.stack([draw_channels(pos, g, rng)[0] for _ in range(10_000)])
        var = (np.abs(draws) ** 2).mean(axis=0).reshape(g.num_aps, g.antennas_per_ap)
        expected = lsfc_profile(pos, g)[0]
        ratio = var.mean(axis=1) / expected
        assert np.all(np.abs(ratio - 1) < 0.05)

    def test_client_at_ap_sees_unit_variance(self):
        g = build_geometry()
        pos = g.ap_positions[3][None, :]
        rng = np.random.default_rng(1)
        draws = np.stack([draw_channels(pos, g, rng)[0] for _ in range(20_000)])
        block = (np.abs(draws[:, 3 * 4:(3 + 1) * 4]) ** 2).mean()
        assert block == pytest.approx(1.0, rel=0.05)

    def test_cross_client_uncorrelated(self):
        g = build_geometry()
        pos = np.array([[100.0, 100.0], [200.0, 200.0]])
        rng = np.random.default_rng(2)
        a, b = [], []
        for _ in range(4000):
            h = draw_channels(pos, g, rng)
            a.append(h[0, 0])
            b.append(h[1, 0])
        a, b = np.array(a), np.array(b)
        corr = np.abs(np.mean(a * b.conj())) / np.sqrt(
            np.mean(np.abs(a) ** 2) * np.mean(np.abs(b) ** 2)
        )
        assert corr < 0.05


class TestSynthesizeReceived:
    def test_silent_noiseless_channel_is_zero(self, rng):
        g = build_geometry()
        cb = gen_codebook(16, 9, 4, rng)
        tx = SubroundTransmission(np.array([], dtype=int), np.array([], dtype=int), 9, 4)
        out = synthesize_received(tx, np.empty((0, 2)), g, cb, 1e-3, 0.0, rng)
        assert_allclose(out.samples, 0.0, atol=0)

    def test_single_client_rank_one(self, rng):
        g = build_geometry()
        cb = gen_codebook(16, 9, 4, rng)
        pos = np.array([[150.0, 150.0]])
        tx = SubroundTransmission(np.array([4]), np.array([2]), 9, 4)
        out = synthesize_received(tx, pos, g, cb, 1e-3, 0.0, np.random.default_rng(3))
        h = draw_channels(pos, g, np.random.default_rng(3))[0]
        expected = np.sqrt(16 * 1e-3) * np.outer(cb.zone_block(4)[:, 2], h)
        assert_allclose(out.samples, expected, atol=1e-15)

    def test_same_codeword_channels_add(self, rng):
        g = build_geometry()
        cb = gen_codebook(8, 9, 2, rng)
        pos = np.array([[60.0, 60.0], [80.0, 40.0]])
        tx = SubroundTransmission(np.array([0, 0]), np.array([1, 1]), 9, 2)
        seed = 11
        out = synthesize_received(tx, pos, g, cb, 1e-3, 0.0, np.random.default_rng(seed))
        h = draw_channels(pos, g, np.random.default_rng(seed))
        expected = np.sqrt(8 * 1e-3) * np.outer(cb.zone_block(0)[:, 1], h[0] + h[1])
        assert_allclose(out.samples, expected, atol=1e-15)

    def test_multiplicity_bookkeeping(self):
        tx = SubroundTransmission(np.array([0, 0, 1]), np.array([1, 1, 0]), 2, 3)
        k = tx.multiplicities()
        assert k.shape == (2, 3)
        assert k[0, 1] == 2 and k[1, 0] == 1
        assert k.sum() == tx.num_participants

    def test_energy_accounting(self):
        """Monte-Carlo received energy against the closed-form expectation."""
        g = build_geometry()
        rng = np.random.default_rng(5)
        cb = gen_codebook(12, 9, 4, rng)
        pos = rng.uniform(0, 300, (6, 2))
        zones = np.array([g.zone_of(p) for p in pos])
        idx = rng.integers(0, 4, 6)
        tx = SubroundTransmission(zones, idx, 9, 4)
        power, noise_var = 1e-3, 5e-6

        expected_signal = 12 * power * sum(
            4 * lsfc_profile(p, g)[0].sum() for p in pos
        )
        expected = expected_signal + 12 * 160 * noise_var

        energies = []
        for seed in range(400):
            out = synthesize_received(tx, pos, g, cb, power, noise_var,
                                      np.random.default_rng(seed))
            energies.append((np.abs(out.samples) ** 2).sum())
        assert abs(np.mean(energies) - expected) / expected < 0.05

    def test_codebook_column_norms_survive_csv_roundtrip(self, rng, tmp_path):
        cb = gen_codebook(10, 2, 4, rng)
        path = tmp_path / "cb.npz"
        np.savez(path, matrix=cb.matrix)
        loaded = CommCodebook(np.load(path)["matrix"], 2, 4)
        assert_allclose(np.linalg.norm(loaded.matrix, axis=0), 1.0, atol=1e-12)
