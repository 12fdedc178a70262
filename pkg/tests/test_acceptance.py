"""Acceptance suite: one test per release criterion, each printing a
PASS line (run with `pytest -s tests/test_acceptance.py` to see them).

Where a criterion records a measured regression baseline, the measured value
from the tuning run is pinned as a floor with headroom for cross-platform
floating-point wiggle.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

import avse.regressor as reg
from avse.cli import main
from avse.corpus import (
    MixSpec,
    SplitSpec,
    SynthCorpusConfig,
    mix_at_snr,
    read_avf,
    synth_av_corpus,
)
from avse.enhancers import (
    EvwfConfig,
    LmmseConfig,
    SsConfig,
    apply_spectral_gains,
    evwf_enhance,
    evwf_gain,
    evwf_spectral_gains,
    expint_e1,
    logmmse,
    noise_estimate_initial,
    spectral_subtract,
)
from avse.filterbank import (
    FeatureKind,
    FeatureSequence,
    apply_logfb,
    build_filterbank,
    lift,
)
from avse.metrics import segsnr
from avse.signal_io import (
    AudioSignal,
    StftConfig,
    hamming_window,
    istft,
    make_stft_config,
    power_spectrum,
    stft,
    write_wav,
)

from conftest import _speech_like, _white_noise


def _report(name):
    print(f"\nACCEPTANCE {name}: PASS")


# ---------------------------------------------------------------------------
# signal / filterbank / Wiener criteria


def test_stft_round_trip_100_signals():
    start = time.monotonic()
    cfg = StftConfig(256, 160, 512, hamming_window(256))
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(3 * 256, 6000))
        sig = AudioSignal(rng.normal(0.0, 0.5, n), 16000)
        rec = istft(stft(sig, cfg))
        lo, hi = 256, min(len(rec), n - 256)
        err = np.max(np.abs(rec.samples[lo:hi] - sig.samples[lo:hi]))
        assert err < 1e-6, f"seed {seed}: interior error {err}"
    elapsed = time.monotonic() - start
    assert elapsed < 5.0, f"round-trip suite took {elapsed:.2f}s"
    _report("stft-round-trip")


def test_filterbank_lift_identity():
    fb = build_filterbank(23, 2048, 50000)
    assert fb.n_bins == 1025
    resid = fb.alpha @ fb.phi - np.eye(23)
    assert np.max(np.abs(resid)) < 1e-10
    rng = np.random.default_rng(1)
    feats = FeatureSequence(rng.uniform(0.0, 1.0, (1000, 23)), FeatureKind.LINEAR_FB_AUDIO)
    # the documented identity holds on the pre-floor lift
    lifted = lift(feats, fb, floor=False)
    err = np.max(np.abs(lifted @ fb.phi - feats.vectors))
    assert err < 1e-8, f"round-trip error {err}"
    _report("filterbank-lift-identity")


def test_wiener_gain_contracts():
    fb = build_filterbank(23, 2048, 16000)
    stft_cfg = make_stft_config(16000)
    rng = np.random.default_rng(2)

    # all gains in [floor, 1]
    for floor in (0.0, 0.1):
        cfg = EvwfConfig(gain_floor=floor)
        fb_gains = evwf_gain(rng.uniform(1e-10, 10.0, (40, 23)),
                             rng.uniform(1e-10, 10.0, (40, 23)), cfg)
        assert np.all((fb_gains >= floor) & (fb_gains <= 1.0))
        spec_gains = evwf_spectral_gains(
            FeatureSequence(rng.normal(0.0, 2.0, (20, 23)), FeatureKind.LOG_FB_AUDIO),
            rng.uniform(0.0, 5.0, (20, fb.n_bins)), fb, cfg)
        assert np.all((spec_gains >= floor) & (spec_gains <= 1.0))

    # estimated == noisy features -> identity enhancement
    noisy, _ = mix_at_snr(MixSpec(_speech_like(seed=11), _white_noise(25000, seed=12), 0.0))
    self_feats = apply_logfb(power_spectrum(stft(noisy, stft_cfg)), fb)
    out = evwf_enhance(noisy, self_feats, fb, stft_cfg)
    ident = istft(stft(noisy, stft_cfg))
    lo, hi = stft_cfg.frame_len, len(ident) - stft_cfg.frame_len
    err = np.max(np.abs(out.samples[lo:hi] - ident.samples[lo:hi]))
    assert err < 1e-6, f"identity enhancement error {err}"

    # estimated == noise energy -> filterbank gain exactly 0.5
    x = rng.uniform(0.1, 5.0, (30, 23))
    assert np.all(evwf_gain(x, 2.0 * x) == 0.5)
    _report("wiener-gain-contracts")


# ---------------------------------------------------------------------------
# gradient and optimizer criteria


def _fd_scalar(fn, x, step=1e-5):
    """Central finite differences of scalar fn over every entry of x."""
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = fn()
        flat[i] = orig - step
        down = fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return grad


def _max_rel(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
    return float(np.max(np.abs(a - b) / denom))


def test_gradient_checks():
    from avse.regressor import (
        _conv2d,
        _conv2d_back,
        _dense,
        _dense_back,
        _dropout,
        _dropout_back,
        _lstm_step,
        _lstm_step_back,
        _maxpool,
        _maxpool_back,
    )

    start = time.monotonic()
    rng = np.random.default_rng(3)
    worst = 0.0

    # dense layer (every activation)
    for act in ("linear", "tanh", "relu"):
        x = rng.normal(size=(3, 4))
        w = rng.normal(size=(4, 5))
        b = rng.normal(size=5)
        probe = rng.normal(size=(3, 5))

        def loss():
            out, _ = _dense(x, w, b, act)
            return float(np.sum(out * probe))

        out, cache = _dense(x, w, b, act)
        dx, dw, db = _dense_back(probe, cache)
        for analytic, tensor in ((dx, x), (dw, w), (db, b)):
            worst = max(worst, _max_rel(analytic, _fd_scalar(loss, tensor)))

    # lstm step
    params = {"wx": rng.normal(size=(3, 8)), "wh": rng.normal(size=(2, 8)),
              "b": rng.normal(size=8)}
    x = rng.normal(size=(4, 3))
    h_prev = rng.normal(size=(4, 2))
    c_prev = rng.normal(size=(4, 2))
    probe_h = rng.normal(size=(4, 2))
    probe_c = rng.normal(size=(4, 2))

    def lstm_loss():
        h, c, _ = _lstm_step(x, h_prev, c_prev, params)
        return float(np.sum(h * probe_h) + np.sum(c * probe_c))

    h, c, cache = _lstm_step(x, h_prev, c_prev, params)
    dx, dh_prev, dc_prev, dwx, dwh, db = _lstm_step_back(probe_h, probe_c, cache, params)
    for analytic, tensor in ((dx, x), (dh_prev, h_prev), (dc_prev, c_prev),
                             (dwx, params["wx"]), (dwh, params["wh"]), (db, params["b"])):
        worst = max(worst, _max_rel(analytic, _fd_scalar(lstm_loss, tensor)))

    # conv layer
    xc = rng.normal(size=(2, 6, 7, 2))
    k = rng.normal(size=(3, 5, 2, 3))
    bc = rng.normal(size=3)
    probe_c2 = rng.normal(size=(2, 6, 7, 3))

    def conv_loss():
        out, _ = _conv2d(xc, k, bc)
        return float(np.sum(out * probe_c2))

    out, cache = _conv2d(xc, k, bc)
    dxc, dk, dbc = _conv2d_back(probe_c2, cache)
    for analytic, tensor in ((dxc, xc), (dk, k), (dbc, bc)):
        worst = max(worst, _max_rel(analytic, _fd_scalar(conv_loss, tensor)))

    # maxpool (input gradient; odd edge exercises the padding path)
    xp = rng.normal(size=(2, 5, 6, 2))
    probe_p = rng.normal(size=(2, 3, 3, 2))

    def pool_loss():
        out, _ = _maxpool(xp)
        return float(np.sum(out * probe_p))

    out, cache = _maxpool(xp)
    dxp = _maxpool_back(probe_p, cache)
    worst = max(worst, _max_rel(dxp, _fd_scalar(pool_loss, xp)))

    # dropout with a fixed mask
    xd = rng.normal(size=(4, 6))
    probe_d = rng.normal(size=(4, 6))

    def drop_loss():
        out, _ = _dropout(xd, 0.3, True, np.random.default_rng(99))
        return float(np.sum(out * probe_d))

    _, mask = _dropout(xd, 0.3, True, np.random.default_rng(99))
    dxd = _dropout_back(probe_d, mask, 0.3)
    worst = max(worst, _max_rel(dxd, _fd_scalar(drop_loss, xd)))

    # full model modes at toy size
    def model_fd(model, targets, audio=None, visual=None):
        _, grads = reg.backward(model, targets, audio=audio, visual=visual)
        peak = 0.0
        for name, arr in model.params.items():
            def loss():
                return reg.mse_loss(reg.forward(model, audio=audio, visual=visual), targets)
            peak = max(peak, _max_rel(grads[name], _fd_scalar(loss, arr)))
        return peak

    cfg_a = reg.ModelConfig(mode="a_only", context_window=3, audio_dim=4,
                            audio_lstm_cells=(5, 6), output_dim=4,
                            dropout_rate=0.0, seed=30)
    worst = max(worst, model_fd(reg.build_model(cfg_a),
                                rng.normal(size=(3, 4)), audio=rng.normal(size=(3, 3, 4))))

    cfg_v = reg.ModelConfig(mode="v_only", context_window=2,
                            visual_input=reg.VisualImage(8, 8), conv_filters=(2, 3, 2, 2),
                            visual_lstm_cells=4, output_dim=3, dropout_rate=0.0, seed=31)
    worst = max(worst, model_fd(reg.build_model(cfg_v),
                                rng.normal(size=(2, 3)), visual=rng.normal(size=(2, 2, 8, 8))))

    cfg_av = reg.ModelConfig(mode="av", context_window=3, audio_dim=4,
                             visual_input=reg.VisualVector(5), visual_embed_dim=4,
                             audio_lstm_cells=(4, 5), visual_lstm_cells=4,
                             fusion_dense=(6, 5), output_dim=4, dropout_rate=0.0, seed=32)
    worst = max(worst, model_fd(reg.build_model(cfg_av), rng.normal(size=(3, 4)),
                                audio=rng.normal(size=(3, 3, 4)),
                                visual=rng.normal(size=(3, 3, 5))))

    elapsed = time.monotonic() - start
    assert worst < 1e-4, f"max relative gradient error {worst}"
    assert elapsed < 60.0, f"gradient checks took {elapsed:.1f}s"
    _report(f"gradient-check (max rel err {worst:.2e}, {elapsed:.1f}s)")


def test_mse_cost_hand_values():
    assert reg.mse_loss(np.array([[1.0, 2.0]]), np.array([[0.0, 0.0]])) == pytest.approx(
        2.5, abs=1e-12
    )
    x = np.random.default_rng(4).normal(size=(7, 23))
    assert reg.mse_loss(x, x) == 0.0
    _report("mse-cost")


def test_rmsprop_hand_value():
    cfg = reg.ModelConfig(mode="a_only", context_window=1, audio_dim=1,
                          audio_lstm_cells=(1, 1), output_dim=1, seed=33)
    model = reg.build_model(cfg)
    before = model.params["head.b"].copy()
    grads = {k: np.ones_like(v) for k, v in model.params.items()}
    reg.rmsprop_step(model, grads, reg.TrainConfig(learning_rate=1e-3))
    expected = 1e-3 / (math.sqrt(0.1) + 1e-8)  # 3.162e-3
    delta = float(before[0] - model.params["head.b"][0])
    assert delta == pytest.approx(expected, abs=1e-9)
    _report("rmsprop-step")


# ---------------------------------------------------------------------------
# mixing / enhancement criteria


def test_mixing_snr_exact():
    clean = _speech_like(seed=40)
    noise = _white_noise(len(clean) + 8000, seed=41)
    for target in np.arange(-12.0, 12.1, 3.0):
        _, scaled = mix_at_snr(MixSpec(clean, noise, float(target), seed=5))
        achieved = 10.0 * np.log10(
            np.mean(clean.samples**2) / np.mean(scaled.samples**2)
        )
        assert abs(achieved - target) < 1e-9, f"target {target}: achieved {achieved}"
    _report("mixing-snr")


def _zero_db_fixtures(count=20):
    cfg = make_stft_config(16000)
    fb = build_filterbank(23, 2048, 16000)
    fixtures = []
    for i in range(count):
        clean = _speech_like(seed=100 + i)
        noise = _white_noise(len(clean) + 5000, seed=200 + i)
        noisy, _ = mix_at_snr(MixSpec(clean, noise, 0.0, seed=i))
        fixtures.append((clean, noisy))
    return cfg, fb, fixtures


@pytest.fixture(scope="module")
def stationary_mixtures():
    return _zero_db_fixtures()


def test_oracle_evwf_improvement(stationary_mixtures):
    cfg, fb, fixtures = stationary_mixtures
    improvements = []
    for clean, noisy in fixtures:
        before = segsnr(clean, noisy, cfg.frame_len, cfg.hop)
        oracle = apply_logfb(power_spectrum(stft(clean, cfg)), fb)
        enhanced = evwf_enhance(noisy, oracle, fb, cfg)
        improvements.append(segsnr(clean, enhanced, cfg.frame_len, cfg.hop) - before)
    mean_gain = float(np.mean(improvements))
    assert mean_gain >= 3.0, f"mean oracle gain {mean_gain:.2f} dB"
    # regression baseline: 8.18 dB measured on these fixtures at tuning time
    assert mean_gain >= 7.5, f"regression: oracle gain fell to {mean_gain:.2f} dB"
    _report(f"oracle-evwf (+{mean_gain:.2f} dB)")


def test_baselines_improvement(stationary_mixtures):
    cfg, _, fixtures = stationary_mixtures
    gains_ss, gains_lm = [], []
    for clean, noisy in fixtures:
        before = segsnr(clean, noisy, cfg.frame_len, cfg.hop)
        out_ss = spectral_subtract(noisy, SsConfig(), cfg)
        gains_ss.append(segsnr(clean, out_ss, cfg.frame_len, cfg.hop) - before)
        out_lm = logmmse(noisy, LmmseConfig(), cfg)
        gains_lm.append(segsnr(clean, out_lm, cfg.frame_len, cfg.hop) - before)
    mean_ss, mean_lm = float(np.mean(gains_ss)), float(np.mean(gains_lm))
    assert mean_ss >= 1.0, f"spectral subtraction gained {mean_ss:.2f} dB"
    assert mean_lm >= 1.0, f"log-MMSE gained {mean_lm:.2f} dB"

    # log-MMSE equals a literal per-bin reimplementation on a 5-frame toy
    rng = np.random.default_rng(6)
    toy_cfg = StftConfig(16, 8, 16, hamming_window(16))
    lm_cfg = LmmseConfig(init_frames=2)
    sig = AudioSignal(rng.normal(0.0, 0.3, 16 + 8 * 4), 8000)
    fast = logmmse(sig, lm_cfg, toy_cfg)
    slow = _logmmse_per_bin(sig, lm_cfg, toy_cfg)
    assert np.max(np.abs(fast.samples - slow.samples)) < 1e-9
    _report(f"baselines (ss +{mean_ss:.2f} dB, logmmse +{mean_lm:.2f} dB)")


def _logmmse_per_bin(noisy, cfg, stft_cfg):
    """Unoptimized scalar-loop oracle for the log-MMSE recursion."""
    spectra = stft(noisy, stft_cfg)
    power = power_spectrum(spectra)
    noise = np.maximum(noise_estimate_initial(power, cfg.init_frames), 1e-12)
    n_frames, n_bins = power.shape
    gains = np.zeros((n_frames, n_bins))
    prev = np.zeros(n_bins)
    for t in range(n_frames):
        for k in range(n_bins):
            gamma = power[t, k] / noise[k]
            instant = max(gamma - 1.0, 0.0)
            if t == 0:
                xi = cfg.dd_alpha + (1.0 - cfg.dd_alpha) * instant
            else:
                xi = cfg.dd_alpha * prev[k] / noise[k] + (1.0 - cfg.dd_alpha) * instant
            xi = max(xi, cfg.xi_min)
            v = max(xi * gamma / (1.0 + xi), 1e-50)
            g = xi / (1.0 + xi) * np.exp(0.5 * expint_e1(v))
            gains[t, k] = g
            prev[k] = g * g * power[t, k]
    return istft(apply_spectral_gains(spectra, gains))


# ---------------------------------------------------------------------------
# synthetic-corpus trend criteria


TREND_CORPUS = SynthCorpusConfig(
    utterances=80, frames_per_utterance=50, audio_dim=16, visual_dim=6,
    snr_levels=(-9.0, 9.0), coupling_seed=7, noise_seed=11,
)
TREND_SPLIT = SplitSpec((0.6, 0.2, 0.2), seed=11)


@pytest.fixture(scope="module")
def trend_corpus(tmp_path_factory):
    outdir = tmp_path_factory.mktemp("trend_corpus")
    entries = synth_av_corpus(TREND_CORPUS, outdir, TREND_SPLIT)
    return outdir, entries


def _windows_for(outdir, entries, window, mode, snr):
    audio_blocks, visual_blocks, target_blocks, labels = [], [], [], []
    for e in sorted(entries, key=lambda e: (e.utterance_id, e.snr_db)):
        if abs(e.snr_db - snr) > 1e-9:
            continue
        clean = read_avf(outdir / e.clean_path)
        if mode in ("a_only", "av"):
            noisy = read_avf(outdir / e.noisy_path)
            audio_blocks.append(reg.make_context_windows(noisy, window))
        if mode in ("v_only", "av"):
            visual = read_avf(outdir / e.visual_path)
            visual_blocks.append(reg.make_context_windows(visual, window))
        target_blocks.append(clean.vectors)
        labels.extend([e.split] * clean.n_frames)
    labels = np.asarray(labels)
    data = reg.WindowDataset(
        targets=np.concatenate(target_blocks),
        audio=np.concatenate(audio_blocks) if audio_blocks else None,
        visual=np.concatenate(visual_blocks) if visual_blocks else None,
    )
    return data, (np.nonzero(labels == "train")[0], np.nonzero(labels == "val")[0])


def _train_trend_model(outdir, entries, mode, window, snr, epochs):
    data, split = _windows_for(outdir, entries, window, mode, snr)
    cfg = reg.ModelConfig(
        mode=mode, context_window=window, audio_dim=TREND_CORPUS.audio_dim,
        visual_input=reg.VisualVector(TREND_CORPUS.visual_dim), visual_embed_dim=24,
        audio_lstm_cells=(24, 24), visual_lstm_cells=32, fusion_dense=(32, 24),
        output_dim=TREND_CORPUS.audio_dim, dropout_rate=0.1, seed=0,
    )
    model = reg.build_model(cfg)
    history = reg.train(model, data, split,
                        reg.TrainConfig(learning_rate=5e-3, epochs=epochs,
                                        batch_size=32, seed=0))
    return min(h[2] for h in history)


def test_context_window_trend(trend_corpus):
    outdir, entries = trend_corpus
    start = time.monotonic()
    values = {}
    for window in (1, 2, 4, 8, 14):
        values[window] = _train_trend_model(outdir, entries, "v_only", window,
                                            TREND_CORPUS.snr_levels[0], epochs=120)
    elapsed = time.monotonic() - start
    seq = [values[w] for w in (1, 2, 4, 8, 14)]
    for prev, cur in zip(seq, seq[1:]):
        assert cur <= prev * 1.05, f"trend violated: {seq}"
    assert seq[-1] < seq[0], f"no net improvement: {seq}"
    assert elapsed < 600.0, f"sweep took {elapsed:.0f}s"
    pretty = ", ".join(f"W={w}: {values[w]:.3f}" for w in (1, 2, 4, 8, 14))
    _report(f"context-window-trend ({pretty}, {elapsed:.0f}s)")


def test_fusion_trend(trend_corpus):
    outdir, entries = trend_corpus
    low, high = TREND_CORPUS.snr_levels[0], TREND_CORPUS.snr_levels[-1]
    low_vals = {mode: _train_trend_model(outdir, entries, mode, 6, low, epochs=60)
                for mode in ("a_only", "v_only", "av")}
    assert low_vals["av"] <= min(low_vals["a_only"], low_vals["v_only"]), (
        f"at {low} dB: {low_vals}"
    )
    high_a = _train_trend_model(outdir, entries, "a_only", 6, high, epochs=60)
    high_v = _train_trend_model(outdir, entries, "v_only", 6, high, epochs=60)
    assert high_a <= high_v, f"at {high} dB: a_only {high_a} vs v_only {high_v}"
    _report(
        f"fusion-trend (at {low} dB av {low_vals['av']:.3f} <= "
        f"min(a {low_vals['a_only']:.3f}, v {low_vals['v_only']:.3f}); "
        f"at {high} dB a {high_a:.3f} <= v {high_v:.3f})"
    )


# ---------------------------------------------------------------------------
# end-to-end determinism


def _run_pipeline(base: Path) -> Path:
    base.mkdir()
    corpus_dir = base / "corpus"
    assert main(["synth-corpus", str(corpus_dir), "--utterances", "6", "--frames", "40",
                 "--audio-dim", "23", "--visual-dim", "4", "--snrs", "0",
                 "--split", "0.5,0.25,0.25"]) == 0

    ckpt = base / "model.evwm"
    assert main(["train", "--manifest", str(corpus_dir / "manifest.csv"),
                 "--mode", "a_only", "--window", "3", "--epochs", "2",
                 "--audio-cells", "6,6", "--seed", "3", "--out", str(ckpt)]) == 0

    clean_wav = base / "clean.wav"
    noise_wav = base / "noise.wav"
    write_wav(_speech_like(seed=77), clean_wav)
    write_wav(_white_noise(25000, seed=78), noise_wav)
    mix_wav = base / "mix.wav"
    assert main(["mix", str(clean_wav), str(noise_wav), str(mix_wav),
                 "--snr", "0", "--seed", "4"]) == 0

    enhanced = base / "enhanced.wav"
    assert main(["enhance", str(mix_wav), str(enhanced), "--method", "evwf",
                 "--model", str(ckpt)]) == 0

    metrics_csv = base / "metrics.csv"
    assert main(["eval", "--ref", str(clean_wav), "--deg", str(enhanced),
                 "--out", str(metrics_csv), "--utt", "pipeline", "--method", "evwf",
                 "--snr", "0"]) == 0
    return base


def test_full_pipeline_determinism(tmp_path):
    d1 = _run_pipeline(tmp_path / "run1")
    d2 = _run_pipeline(tmp_path / "run2")
    files1 = sorted(p.relative_to(d1) for p in d1.rglob("*") if p.is_file())
    files2 = sorted(p.relative_to(d2) for p in d2.rglob("*") if p.is_file())
    assert files1 == files2 and len(files1) >= 10
    for rel in files1:
        assert (d1 / rel).read_bytes() == (d2 / rel).read_bytes(), f"{rel} differs"
    _report(f"pipeline-determinism ({len(files1)} files byte-identical)")
