import numpy as np
import pytest

from avse.filterbank import (
    EPS_POWER,
    FeatureKind,
    FeatureSequence,
    MelFilterbank,
    apply_logfb,
    build_filterbank,
    hz_to_mel,
    lift,
    mel_to_hz,
)


@pytest.fixture(scope="module")
def fb():
    return build_filterbank(23, 2048, 50000)


class TestMelScale:
    def test_zero_maps_to_zero(self):
        assert hz_to_mel(0.0) == 0.0
        assert mel_to_hz(0.0) == 0.0

    def test_hz_to_mel_1000(self):
        # 2595 * log10(1 + 1000/700), evaluated independently
        assert hz_to_mel(1000.0) == pytest.approx(999.9855371396244, abs=1e-9)

    def test_mel_to_hz_1000(self):
        # 700 * (10**(1000/2595) - 1), evaluated independently
        assert mel_to_hz(1000.0) == pytest.approx(1000.0218164572870, abs=1e-9)

    def test_monotone(self):
        rng = np.random.default_rng(0)
        freqs = np.sort(rng.uniform(0.0, 25000.0, 50))
        mels = [hz_to_mel(f) for f in freqs]
        assert np.all(np.diff(mels) > 0)

    def test_round_trip_at_4000(self):
        assert mel_to_hz(hz_to_mel(4000.0)) == pytest.approx(4000.0, rel=1e-9)

    def test_negative_inputs_rejected(self):
        with pytest.raises(ValueError):
            hz_to_mel(-1.0)
        with pytest.raises(ValueError):
            mel_to_hz(-1.0)


class TestBuildFilterbank:
    def test_boundary_bins_follow_rounding_rule(self, fb):
        # recompute centres and bins independently of the implementation
        edges = np.linspace(0.0, 2595.0 * np.log10(1.0 + 25000.0 / 700.0), 25)
        centres = 700.0 * (10.0 ** (edges / 2595.0) - 1.0)
        expected = np.floor((2048.0 / 50000.0) * centres + 0.5).astype(int)
        assert fb.boundaries.tolist() == expected.tolist()
        # spot value: a 1000 Hz centre would land on bin round(2048/50000*1000) = 41
        assert int(np.floor(2048.0 / 50000.0 * 1000.0 + 0.5)) == 41

    def test_columns_peak_at_one_on_centre_bin(self, fb):
        for m in range(fb.n_channels):
            col = fb.phi[:, m]
            centre = fb.boundaries[m + 1]
            assert col[centre] == 1.0
            assert col.max() == 1.0

    def test_columns_nonnegative_unimodal_supported(self, fb):
        for m in range(fb.n_channels):
            col = fb.phi[:, m]
            left, centre, right = fb.boundaries[m], fb.boundaries[m + 1], fb.boundaries[m + 2]
            assert np.all(col >= 0.0)
            assert np.all(col[:left] == 0.0)
            assert np.all(col[right + 1 :] == 0.0)
            assert np.all(np.diff(col[left : centre + 1]) >= 0.0)
            assert np.all(np.diff(col[centre : right + 1]) <= 0.0)

    def test_alpha_is_left_inverse(self, fb):
        resid = fb.alpha @ fb.phi - np.eye(fb.n_channels)
        assert np.max(np.abs(resid)) < 1e-10

    def test_alpha_matches_normal_equations_oracle(self, fb):
        oracle = np.linalg.solve(fb.phi.T @ fb.phi, fb.phi.T)
        assert np.max(np.abs(fb.alpha - oracle)) < 1e-9

    def test_partition_positive_between_first_and_last_centre(self, fb):
        lo, hi = fb.boundaries[1], fb.boundaries[-2]
        sums = fb.phi[lo : hi + 1].sum(axis=1)
        assert np.all(sums > 0.0)

    def test_degenerate_boundaries_report_channel(self):
        with pytest.raises(ValueError, match="channel"):
            build_filterbank(23, 64, 50000)

    def test_band_edge_validation(self):
        with pytest.raises(ValueError):
            build_filterbank(23, 2048, 50000, f_low=4000.0, f_high=1000.0)
        with pytest.raises(ValueError):
            build_filterbank(1, 2048, 50000)


class TestApplyLogfb:
    def test_zero_power_floors_to_log_eps(self, fb):
        feats = apply_logfb(np.zeros((2, fb.n_bins)), fb)
        assert np.allclose(feats.vectors, np.log(EPS_POWER))
        assert feats.kind is FeatureKind.LOG_FB_AUDIO

    def test_column_power_gives_squared_norm(self, fb):
        m = 7
        frame = fb.phi[:, m].copy()
        feats = apply_logfb(frame[None, :], fb)
        # independent inner-product evaluation
        expected = np.log(float(np.dot(fb.phi[:, m], fb.phi[:, m])))
        assert feats.vectors[0, m] == pytest.approx(expected, abs=1e-12)

    def test_power_scaling_adds_log_c(self, fb):
        rng = np.random.default_rng(5)
        power = rng.uniform(0.5, 2.0, (3, fb.n_bins))
        c = 7.5
        base = apply_logfb(power, fb).vectors
        scaled = apply_logfb(c * power, fb).vectors
        assert np.allclose(scaled - base, np.log(c), atol=1e-10)

    def test_dimension_mismatch(self, fb):
        with pytest.raises(ValueError):
            apply_logfb(np.zeros((2, 10)), fb)


class TestLift:
    def test_round_trip_identity_before_flooring(self, fb):
        rng = np.random.default_rng(6)
        f = rng.uniform(0.0, 1.0, (100, 23))
        seq = FeatureSequence(f, FeatureKind.LINEAR_FB_AUDIO)
        lifted = lift(seq, fb, floor=False)
        assert np.max(np.abs(lifted @ fb.phi - f)) < 1e-8

    def test_all_zero_features_floor_to_eps(self, fb):
        seq = FeatureSequence(np.zeros((2, 23)), FeatureKind.LINEAR_FB_AUDIO)
        assert np.all(lift(seq, fb) == EPS_POWER)

    def test_basis_feature_lifts_to_alpha_row(self, fb):
        m = 4
        f = np.zeros((1, 23))
        f[0, m] = 1.0
        seq = FeatureSequence(f, FeatureKind.LINEAR_FB_AUDIO)
        expected = np.maximum(fb.alpha[m], EPS_POWER)
        assert np.allclose(lift(seq, fb)[0], expected)

    def test_log_kind_exponentiates_first(self, fb):
        rng = np.random.default_rng(9)
        f = rng.uniform(0.1, 2.0, (5, 23))
        linear = FeatureSequence(f, FeatureKind.LINEAR_FB_AUDIO)
        logged = FeatureSequence(np.log(f), FeatureKind.LOG_FB_AUDIO)
        assert np.allclose(lift(linear, fb), lift(logged, fb), atol=1e-12)

    def test_lift_extract_lift_idempotent(self, fb):
        rng = np.random.default_rng(10)
        f = rng.uniform(0.0, 1.0, (20, 23))
        seq = FeatureSequence(f, FeatureKind.LINEAR_FB_AUDIO)
        lifted = lift(seq, fb, floor=False)
        extracted = FeatureSequence(np.maximum(lifted @ fb.phi, 0.0),
                                    FeatureKind.LINEAR_FB_AUDIO)
        again = lift(extracted, fb, floor=False)
        assert np.max(np.abs(again - lifted)) < 1e-8

    def test_visual_kind_rejected(self, fb):
        seq = FeatureSequence(np.zeros((1, 23)), FeatureKind.VISUAL)
        with pytest.raises(ValueError):
            lift(seq, fb)

    def test_dimension_mismatch(self, fb):
        seq = FeatureSequence(np.zeros((1, 10)), FeatureKind.LINEAR_FB_AUDIO)
        with pytest.raises(ValueError):
            lift(seq, fb)


class TestFeatureSequence:
    def test_linear_kind_rejects_negative(self):
        with pytest.raises(ValueError):
            FeatureSequence(np.array([[-0.1, 0.2]]), FeatureKind.LINEAR_FB_AUDIO)

    def test_log_kind_permits_negative(self):
        seq = FeatureSequence(np.array([[-23.0, 1.0]]), FeatureKind.LOG_FB_AUDIO)
        assert seq.dim == 2

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            FeatureSequence(np.array([[np.nan]]), FeatureKind.VISUAL)
