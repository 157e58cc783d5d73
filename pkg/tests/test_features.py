import numpy as np
import pytest

from mfcontrast.features import (AugmentSampler, AugmentSpec, DegenerateInputError,
                                 LengthError, Waveform, add_noise, add_reverb,
                                 augment, extract_fbank, load_wav,
                                 mel_band_centers, random_crop, save_wav,
                                 synthetic_impulse_response)

from oracles import dft_mel_energies, direct_convolution


def sine(freq, duration=1.0, sr=16000, amp=0.3):
    t = np.arange(int(duration * sr)) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq * t), sr, "spk", "utt")


class TestExtractFbank:
    def test_three_second_shape(self):
        w = sine(440.0, duration=3.0)
        fb = extract_fbank(w, n_mels=80)
        assert fb.values.shape == (298, 80)

    def test_frame_count_formula(self):
        w = sine(200.0, duration=0.5)
        fb = extract_fbank(w, n_mels=40)
        expected_t = (8000 - 400) // 160 + 1
        assert fb.values.shape == (expected_t, 40)

    def test_all_zero_waveform_hits_log_floor(self):
        w = Waveform(np.zeros(16000), 16000)
        fb = extract_fbank(w, n_mels=80, log_floor=1e-10)
        assert np.all(fb.values == np.log(1e-10))

    def test_sine_at_band_center_peaks_in_that_band(self):
        centers = mel_band_centers(40, 16000)
        for band in (8, 15, 24):
            fb = extract_fbank(sine(centers[band], duration=0.2), n_mels=40)
            assert np.all(np.argmax(fb.values, axis=1) == band)

    def test_matches_direct_dft_mel_oracle(self):
        # one frame, checked against an explicit DFT + triangle weighting
        rng = np.random.default_rng(0)
        sr = 16000
        samples = 0.2 * rng.standard_normal(400)
        w = Waveform(samples, sr)
        fb = extract_fbank(w, n_mels=12)
        frame = samples * np.hamming(400)
        oracle = dft_mel_energies(frame, 512, sr, 12)
        expected = np.log(np.maximum(oracle, 1e-10))
        np.testing.assert_allclose(fb.values[0], expected, rtol=1e-8)

    def test_finite_everywhere(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            w = Waveform(rng.standard_normal(4000) * 10 ** rng.uniform(-8, 2), 16000)
            fb = extract_fbank(w, n_mels=30)
            assert np.all(np.isfinite(fb.values))

    def test_too_short_raises(self):
        with pytest.raises(LengthError):
            extract_fbank(Waveform(np.ones(100), 16000))


class TestRandomCrop:
    def test_ten_second_input_gives_requested_length(self):
        w = sine(100.0, duration=10.0)
        out = random_crop(w, 3.0, rng_seed=5)
        assert out.samples.size == 48000
        assert out.speaker_id == w.speaker_id

    def test_exact_length_identity(self):
        w = sine(100.0, duration=3.0)
        out = random_crop(w, 3.0, rng_seed=9)
        np.testing.assert_array_equal(out.samples, w.samples)

    def test_short_input_is_tiled(self):
        w = sine(100.0, duration=1.0)
        out = random_crop(w, 3.0, rng_seed=11)
        np.testing.assert_array_equal(out.samples, np.tile(w.samples, 3))

    def test_seed_determinism(self):
        w = sine(100.0, duration=10.0)
        a = random_crop(w, 2.0, rng_seed=123)
        b = random_crop(w, 2.0, rng_seed=123)
        np.testing.assert_array_equal(a.samples, b.samples)


class TestAddNoise:
    def test_zero_db_equalizes_powers(self):
        rng = np.random.default_rng(2)
        w = Waveform(rng.standard_normal(8000), 16000)
        noise = Waveform(rng.standard_normal(8000), 16000)
        out = add_noise(w, noise, snr_db=0.0)
        mixed_noise = out.samples - w.samples
        p_sig = np.mean(w.samples ** 2)
        p_noise = np.mean(mixed_noise ** 2)
        assert abs(p_noise - p_sig) / p_sig < 1e-6

    def test_high_snr_barely_changes_signal(self):
        rng = np.random.default_rng(3)
        w = Waveform(rng.standard_normal(8000), 16000)
        noise = Waveform(rng.standard_normal(8000), 16000)
        out = add_noise(w, noise, snr_db=100.0)
        rel = np.sqrt(np.mean((out.samples - w.samples) ** 2)
                      / np.mean(w.samples ** 2))
        assert rel < 1e-4

    def test_twenty_db_gain_is_tenth(self):
        # unit-power signal and noise: 20 = -20*log10(g) so g = 0.1
        n = 10000
        w = Waveform(np.full(n, 1.0), 16000)
        noise = Waveform(np.full(n, -1.0), 16000)
        out = add_noise(w, noise, snr_db=20.0)
        gain = (w.samples - out.samples)[0]
        assert abs(gain - 0.1) < 1e-12

    def test_requested_snr_achieved(self):
        rng = np.random.default_rng(4)
        for snr in (-5.0, 0.0, 7.5, 15.0):
            w = Waveform(rng.standard_normal(4000) * 0.3, 16000)
            noise = Waveform(rng.standard_normal(4000), 16000)
            out = add_noise(w, noise, snr)
            scaled = out.samples - w.samples
            measured = 10 * np.log10(np.mean(w.samples ** 2) / np.mean(scaled ** 2))
            assert abs(measured - snr) < 1e-3

    def test_noise_tiled_to_signal_length(self):
        w = sine(100.0, duration=1.0)
        noise = Waveform(np.ones(100), 16000)
        out = add_noise(w, noise, 10.0)
        assert out.samples.size == w.samples.size

    def test_silent_signal_rejected(self):
        with pytest.raises(DegenerateInputError):
            add_noise(Waveform(np.zeros(100), 16000), sine(100.0), 10.0)


class TestAddReverb:
    def test_unit_impulse_is_identity(self):
        rng = np.random.default_rng(5)
        w = Waveform(rng.standard_normal(2000), 16000)
        out = add_reverb(w, np.array([1.0]))
        np.testing.assert_array_equal(out.samples, w.samples)

    def test_delay_impulse_shifts(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal(2000)
        x[1000] = 5.0  # interior peak survives truncation
        w = Waveform(x, 16000)
        out = add_reverb(w, np.array([0.0, 1.0]))
        assert out.samples[0] == 0.0
        np.testing.assert_allclose(out.samples[1:], w.samples[:-1], rtol=1e-12)

    def test_matches_direct_convolution_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal(500)
        ir = rng.standard_normal(64)
        out = add_reverb(Waveform(x, 16000), ir)
        full = direct_convolution(x, ir)[:500]
        expected = full * (np.max(np.abs(x)) / np.max(np.abs(full)))
        np.testing.assert_allclose(out.samples, expected, atol=1e-6 * np.max(np.abs(expected)))

    def test_peak_renormalized(self):
        rng = np.random.default_rng(8)
        w = Waveform(rng.standard_normal(3000), 16000)
        ir = synthetic_impulse_response(rng, 16000)
        out = add_reverb(w, ir)
        assert abs(np.max(np.abs(out.samples)) - np.max(np.abs(w.samples))) < 1e-12

    def test_zero_ir_rejected(self):
        with pytest.raises(DegenerateInputError):
            add_reverb(sine(100.0), np.zeros(16))


class TestAugment:
    def test_reverb_identity_spec(self):
        w = sine(250.0)
        out = augment(w, AugmentSpec("reverb", impulse_response=np.array([1.0])))
        np.testing.assert_array_equal(out.samples, w.samples)

    def test_noise_at_zero_db_doubles_power(self):
        rng = np.random.default_rng(9)
        w = Waveform(rng.standard_normal(20000), 16000)
        out = augment(w, AugmentSpec("noise", snr_db=0.0, rng_seed=42))
        ratio = np.mean(out.samples ** 2) / np.mean(w.samples ** 2)
        # independent synthetic noise: powers add, cross term ~ 1/sqrt(N)
        assert abs(ratio - 2.0) < 0.05

    def test_same_seed_bit_identical(self):
        w = sine(250.0)
        spec = AugmentSpec("noise", snr_db=5.0, rng_seed=77)
        a = augment(w, spec)
        b = augment(w, spec)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            AugmentSpec("noise")
        with pytest.raises(ValueError):
            AugmentSpec("reverb", snr_db=3.0, impulse_response=np.array([1.0]))
        with pytest.raises(ValueError):
            AugmentSpec("chorus", snr_db=1.0)

    def test_sampler_deterministic_under_seed(self):
        w = sine(150.0)
        sampler = AugmentSampler()
        a = sampler.apply(w, np.random.default_rng(31))
        b = sampler.apply(w, np.random.default_rng(31))
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_sampler_produces_both_kinds(self):
        w = sine(150.0)
        sampler = AugmentSampler(snr_range=(5.0, 10.0))
        rng = np.random.default_rng(1)
        outs = [sampler.apply(w, rng) for _ in range(12)]
        lengths_match = all(o.samples.size == w.samples.size for o in outs)
        assert lengths_match
        assert len({round(float(np.sum(o.samples ** 2)), 6) for o in outs}) > 1


class TestWavIO:
    def test_round_trip(self, tmp_path):
        w = sine(330.0, duration=0.25)
        path = tmp_path / "a.wav"
        save_wav(w, path)
        back = load_wav(path)
        assert back.sample_rate == 16000
        np.testing.assert_allclose(back.samples, w.samples, atol=1.0 / 32768)

    def test_multichannel_rejected(self, tmp_path):
        import wave
        path = tmp_path / "stereo.wav"
        with wave.open(str(path), "wb") as f:
            f.setnchannels(2)
            f.setsampwidth(2)
            f.setframerate(8000)
            f.writeframes(np.zeros(400, dtype="<i2").tobytes())
        with pytest.raises(ValueError, match="mono"):
            load_wav(path)


class TestWaveformValidation:
    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            Waveform(np.array([]), 16000)

    def test_bad_rate_rejected(self):
        with pytest.raises(ValueError):
            Waveform(np.ones(10), 0)
