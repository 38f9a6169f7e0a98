import math

import numpy as np
import pytest

from jcaslab import system_model as sm
from jcaslab.errors import DegenerateIlluminationError, DomainError


class TestSteering:
    def test_broadside_is_all_ones(self):
        np.testing.assert_allclose(sm.steering(8, 0.0), np.ones(8))

    def test_phase_progression(self):
        a = sm.steering(4, 30.0)
        np.testing.assert_allclose(a, np.exp(1j * np.pi * 0.5 * np.arange(4)), atol=1e-15)

    def test_unit_modulus(self):
        a = sm.steering(16, np.linspace(-80, 80, 33))
        np.testing.assert_allclose(np.abs(a), 1.0)


class TestConstellation:
    @pytest.mark.parametrize("kind", ["qam16", "qam64", "psk4", "psk8"])
    def test_normalized(self, kind):
        c = sm.make_constellation(kind)
        pts = np.asarray(c.points)
        assert len(pts) == 2 ** c.bits_per_symbol
        assert abs(pts.mean()) < 1e-12
        assert np.mean(np.abs(pts) ** 2) == pytest.approx(1.0, abs=1e-12)
        assert c.kurtosis == pytest.approx(np.mean(np.abs(pts) ** 4), abs=1e-12)

    def test_qam16_gray_labels(self):
        c = sm.make_constellation("qam16")
        pts = np.asarray(c.points)
        labels = np.asarray(c.labels)
        assert sorted(labels) == list(range(16))
        d = np.abs(pts[:, None] - pts[None, :])
        dmin = d[d > 0].min()
        for i, j in zip(*np.nonzero(np.isclose(d, dmin))):
            assert bin(labels[i] ^ labels[j]).count("1") == 1

    def test_continuous_cm_draws(self):
        c = sm.make_constellation("cm")
        x = c.draw(np.random.default_rng(0), 10000)
        np.testing.assert_allclose(np.abs(x), 1.0)
        assert abs(x.mean()) < 0.03

    @pytest.mark.parametrize("kind", ["qam8", "psk3", "foo"])
    def test_unknown(self, kind):
        with pytest.raises(DomainError):
            sm.make_constellation(kind)


class TestScenario:
    def test_defaults(self):
        sc = sm.Scenario()
        assert (sc.K, sc.N_block, sc.ue_angles, sc.P_f) == (16, 15, (50.0, 70.0), 0.01)
        assert sc.sigma_s2 / sc.sigma_ns2 == pytest.approx(10 ** -0.5)

    @pytest.mark.parametrize("kw", [
        {"sigma_ns2": -1.0}, {"P_f": 0.0}, {"K": 0}, {"mode": "OFDM"},
        {"sensing_sector": (20, -20)}, {"power_split": (1, 1)}, {"theta_agg": "median"},
        {"ue_angles": (95.0, 10.0)}, {"illumination": "other"},
    ])
    def test_validation(self, kw):
        with pytest.raises(DomainError):
            sm.Scenario(**kw)

    def test_mode_aliases(self):
        assert sm.Scenario(mode="qam+cm").mode == "QAMCM"

    def test_theta_grid(self):
        g = sm.Scenario().theta_grid()
        assert g[0] == -20 and g[-1] == 20 and g.size == 41


class TestPrecoder:
    @pytest.mark.parametrize("mode", sm.MODES)
    def test_unit_power_and_shape(self, mode):
        p = sm.synthesize_precoder(sm.Scenario(mode=mode))
        assert p.matrix.shape == (16, 3)
        assert np.sum(np.abs(p.matrix) ** 2) == pytest.approx(1.0, abs=1e-9)
        assert p.stream_roles == ("ue1", "ue2", "sensing")

    def test_sector_flatness(self):
        p = sm.synthesize_precoder(sm.Scenario())
        assert p.metadata["ripple_db"] <= 3.0
        assert not p.metadata["warnings"]

    def test_single_ue_without_sensing_is_matched_beam(self):
        sc = sm.Scenario(ue_angles=(0.0,), constellations=("qam16", "cm"), power_split=(1.0, 0.0))
        p = sm.synthesize_precoder(sc)
        col = p.matrix[:, 0]
        ref = sm.steering(16, 0.0).conj() / 4
        np.testing.assert_allclose(col, ref, atol=1e-12)
        assert sm.beamforming_gain(p, 0.0)[0] == pytest.approx(16.0)

    def test_ue_beams_avoid_sector_and_other_ue(self):
        sc = sm.Scenario()
        p = sm.synthesize_precoder(sc)
        g = sm.beamforming_gain(p, sc.theta_grid())
        assert g[:, :2].max() < 1e-4 * g[:, 2].min()
        assert sm.beamforming_gain(p, 70.0)[0] < 1e-6
        assert sm.beamforming_gain(p, 50.0)[0] > 2.0

    def test_qam_mode_moves_sector_to_ue1(self):
        sc = sm.Scenario(mode="QAM")
        g = sm.beamforming_gain(sm.synthesize_precoder(sc), sc.theta_grid())
        assert np.all(g[:, 2] == 0)
        assert g[:, 0].min() > 0.2

    def test_qamcm_splits_sector(self):
        sc = sm.Scenario(mode="QAMCM")
        p = sm.synthesize_precoder(sc)
        inner = sm.beamforming_gain(p, np.arange(18.0, 21.0))
        outer = sm.beamforming_gain(p, np.arange(-20.0, -1.0))
        assert np.all(inner[:, 0] > 5 * inner[:, 2])
        assert np.all(outer[:, 2] > 5 * outer[:, 0])

    def test_normalized_gain_sums_to_one(self):
        p = sm.synthesize_precoder(sm.Scenario(mode="MIX"))
        _, b = sm.beamforming_gain(p, np.linspace(-20, 20, 9), normalized=True)
        np.testing.assert_allclose(b.sum(axis=1), 1.0, atol=1e-12)

    def test_degenerate_illumination(self):
        p = sm.Precoder(np.zeros((4, 2), complex), ("ue1", "sensing"))
        with pytest.raises(DegenerateIlluminationError):
            sm.beamforming_gain(p, 0.0, normalized=True)


class TestSampling:
    def test_snapshot_shapes_and_noise_level(self):
        sc = sm.Scenario()
        p = sm.synthesize_precoder(sc)
        snap = sm.sample_sensing_snapshot(sc, p, 5.0, 0, np.random.default_rng(1))
        assert snap.samples.shape == (16, 15) and not snap.target_present
        z, _ = sm.simulate_blocks(sc, p, np.zeros(4000), 0, np.random.default_rng(2))
        assert np.mean(np.abs(z) ** 2) == pytest.approx(sc.sigma_ns2, rel=0.01)

    def test_target_energy(self):
        sc = sm.Scenario()
        p = sm.synthesize_precoder(sc)
        z, c = sm.simulate_blocks(sc, p, np.full(4000, -7.0), 1, np.random.default_rng(3))
        # normalized illumination: E|c|^2 = 1
        assert np.mean(np.abs(c) ** 2) == pytest.approx(1.0, rel=1e-5)
        expected = sc.sigma_ns2 + sc.sigma_s2
        assert np.mean(np.abs(z) ** 2) == pytest.approx(expected, rel=0.02)

    def test_rejects_endfire(self):
        sc = sm.Scenario()
        with pytest.raises(DomainError):
            sm.sample_sensing_snapshot(sc, sm.synthesize_precoder(sc), 90.0, 1,
                                       np.random.default_rng(0))

    def test_draw_symbols_shape(self):
        consts = sm.Scenario().constellation_objs()
        x = sm.draw_symbols(consts, 15, np.random.default_rng(0), batch=7)
        assert x.shape == (7, 3, 15)

    def test_comm_channel_target_only_on_ue1(self):
        sc = sm.Scenario(sigma_c_target=0.3)
        p = sm.synthesize_precoder(sc)
        ch2 = sm.sample_comm_channel(sc, p, np.random.default_rng(4), ue=1)
        assert ch2.target_coeff == 0
        taps, coeff, th = sm.draw_comm_taps(sc, p, np.random.default_rng(5), 20000)
        assert np.mean(np.abs(coeff) ** 2) == pytest.approx(0.09, rel=0.05)
        assert np.all((th >= 10) & (th <= 20))
        ch = sm.sample_comm_channel(sc, p, np.random.default_rng(6), theta=15.0)
        assert ch.h.shape == (3,) and ch.noise_var == sc.sigma_nc2
        assert math.isfinite(abs(ch.h_target))
