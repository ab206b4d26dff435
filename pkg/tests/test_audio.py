"""Waveform container, WAV round-trips, STFT geometry, and the syllable
synthesizer's spectral guarantees."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nasalgan import audio
from nasalgan.audio import (AudioClip, AudioError, PhoneSpan, SyllableSpec,
                            load_wav, save_wav, stft, synth_syllable)


def test_clip_basic_properties():
    clip = AudioClip(np.zeros(8000), 8000)
    assert len(clip) == 8000
    assert clip.duration == 1.0
    assert clip.samples.dtype == np.float64


def test_clip_rejects_bad_shapes():
    with pytest.raises(ValueError):
        AudioClip(np.zeros((2, 4)), 8000)
    with pytest.raises(ValueError):
        AudioClip(np.array([]), 8000)
    with pytest.raises(ValueError):
        AudioClip(np.zeros(4), 0)


def test_normalized_scales_peak():
    clip = AudioClip(np.array([0.1, -0.5, 0.25]), 8000)
    normed = clip.normalized(0.9)
    assert np.isclose(np.max(np.abs(normed.samples)), 0.9)
    # all-zero input stays zero instead of dividing by zero
    silent = AudioClip(np.zeros(4), 8000).normalized()
    assert np.all(silent.samples == 0)


def test_wav_roundtrip_within_quantization(tmp_path):
    rng = np.random.default_rng(0)
    clip = AudioClip(rng.uniform(-0.99, 0.99, size=2048), 8000)
    path = tmp_path / "x.wav"
    save_wav(clip, path)
    back = load_wav(path)
    assert back.sample_rate == 8000
    assert len(back) == 2048
    assert np.max(np.abs(back.samples - clip.samples)) <= 1.0 / audio.PCM_SCALE


def test_wav_roundtrip_is_idempotent(tmp_path):
    """Once quantized, a second round-trip is bit-exact."""
    rng = np.random.default_rng(1)
    clip = AudioClip(rng.uniform(-1, 1, size=512), 8000)
    p1, p2 = tmp_path / "a.wav", tmp_path / "b.wav"
    save_wav(clip, p1)
    save_wav(load_wav(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_save_wav_clamps_out_of_range(tmp_path):
    clip = AudioClip(np.array([2.0, -3.0, 0.0]), 8000)
    path = tmp_path / "c.wav"
    save_wav(clip, path)
    back = load_wav(path)
    assert np.max(back.samples) <= 1.0 and np.min(back.samples) >= -1.0


def test_load_wav_missing_file():
    with pytest.raises(AudioError):
        load_wav("/nonexistent/file.wav")


def test_load_wav_rejects_garbage(tmp_path):
    path = tmp_path / "junk.wav"
    path.write_bytes(b"RIFFgarbage")
    with pytest.raises(AudioError):
        load_wav(path)


def test_stft_frame_count_and_bins():
    clip = AudioClip(np.random.default_rng(0).normal(size=4096), 8000)
    spec = stft(clip, window=256, hop=128)
    assert spec.n_frames == (4096 - 256) // 128 + 1
    assert spec.frames.shape[1] == 256 // 2 + 1
    assert spec.freqs[0] == 0.0
    assert np.isclose(spec.freqs[-1], 4000.0)


def test_stft_pure_tone_peak_bin():
    sr, n = 8000, 4096
    t = np.arange(n) / sr
    clip = AudioClip(np.sin(2 * np.pi * 1000.0 * t), sr)
    spec = stft(clip, window=512, hop=256)
    peak_freq = spec.freqs[np.argmax(spec.frames[spec.n_frames // 2])]
    assert abs(peak_freq - 1000.0) < sr / 512 + 1e-9


def test_stft_window_longer_than_clip():
    with pytest.raises(ValueError):
        stft(AudioClip(np.zeros(100), 8000), window=256, hop=64)


def test_stft_csv_header(tmp_path):
    spec = stft(AudioClip(np.zeros(512), 8000), window=256, hop=128)
    path = tmp_path / "spec.csv"
    spec.to_csv(path)
    assert path.read_text().splitlines()[0] == "frame,bin,magnitude"


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------

def test_spec_validation():
    good = SyllableSpec((650, 1100, 2500), False, "stop")
    good.validate(8000)
    with pytest.raises(ValueError):
        SyllableSpec((1100, 650, 2500), False, "stop").validate(8000)
    with pytest.raises(ValueError):
        SyllableSpec((650, 1100, 5000), False, "stop").validate(8000)
    with pytest.raises(ValueError):
        SyllableSpec((650, 1100, 2500), False, "fricative").validate(8000)


@pytest.mark.parametrize("nasal_v,coda,expect", [
    (False, "stop", "VT"), (False, "nasal", "VN"),
    (True, "stop", "V~T"), (True, "nasal", "V~N"),
])
def test_syllable_class_naming(nasal_v, coda, expect):
    assert SyllableSpec((650, 1100, 2500), nasal_v, coda).syllable_class == expect


def test_synth_output_contract():
    spec = SyllableSpec((650, 1100, 2500), False, "stop")
    clip, spans = synth_syllable(spec, with_spans=True, seed=4)
    assert len(clip) == 4096
    assert np.isclose(np.max(np.abs(clip.samples)), 0.9)
    labels = [s.label for s in spans]
    assert labels == ["V", "T", "sil"]
    assert spans[0].start == 0
    for a, b in zip(spans, spans[1:]):
        assert a.end == b.start
    assert spans[-1].end == 4096


def test_synth_deterministic():
    spec = SyllableSpec((650, 1100, 2500), True, "nasal")
    a = synth_syllable(spec, seed=3)
    b = synth_syllable(spec, seed=3)
    assert np.array_equal(a.samples, b.samples)


def test_synth_rejects_overlong_syllable():
    spec = SyllableSpec((650, 1100, 2500), False, "stop",
                        vowel_duration=0.4, coda_duration=0.2)
    with pytest.raises(ValueError):
        synth_syllable(spec, total_len=4096)


def _band_energy(x, sr, lo, hi):
    mag = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    freqs = np.fft.rfftfreq(len(x), 1.0 / sr)
    return np.sum(mag[(freqs >= lo) & (freqs <= hi)] ** 2)


def test_nasal_vowel_shifts_energy_low():
    """Nasalization moves vowel energy from the F1 band down to ~250 Hz."""
    base = dict(vowel_formants=(650, 1100, 2500), coda="stop", f0=130.0)
    oral = synth_syllable(SyllableSpec(vowel_nasal=False, **base), seed=0)
    nasal = synth_syllable(SyllableSpec(vowel_nasal=True, **base), seed=0)
    n = int(0.22 * 8000)
    ratio_oral = (_band_energy(oral.samples[:n], 8000, 150, 350)
                  / _band_energy(oral.samples[:n], 8000, 450, 900))
    ratio_nasal = (_band_energy(nasal.samples[:n], 8000, 150, 350)
                   / _band_energy(nasal.samples[:n], 8000, 450, 900))
    assert ratio_nasal > 1.0 > ratio_oral


def test_nasal_coda_peak_is_low_stop_burst_is_high():
    base = dict(vowel_formants=(650, 1100, 2500), vowel_nasal=False, f0=130.0)
    for coda, low in (("nasal", True), ("stop", False)):
        clip, spans = synth_syllable(SyllableSpec(coda=coda, **base),
                                     with_spans=True, seed=9)
        c = next(s for s in spans if s.label in ("N", "T"))
        seg = clip.samples[c.start:c.end]
        mag = np.abs(np.fft.rfft(seg * np.hanning(len(seg))))
        peak = np.fft.rfftfreq(len(seg), 1 / 8000)[np.argmax(mag)]
        assert (peak < 400.0) == low


@pytest.mark.parametrize("cls", audio.CLASS_NAMES)
def test_heuristic_recovers_all_classes(cls):
    """The band-energy oracle agrees with the requested class for 30 jittered
    draws of every class."""
    hits = 0
    for seed in range(30):
        clip, spans = audio.make_synthetic_token(cls, seed=seed)
        hits += audio.spectral_class_heuristic(clip, spans) == cls
    assert hits == 30


def test_random_spec_jitter_ranges():
    rng = np.random.default_rng(0)
    for _ in range(200):
        spec = audio.random_spec("VT", rng)
        for f, base in zip(spec.vowel_formants, audio.BASE_FORMANTS):
            assert abs(f / base - 1.0) <= 0.08 + 1e-12
        assert abs(spec.f0 / 120.0 - 1.0) <= 0.15 + 1e-12
        assert abs(spec.vowel_duration / 0.22 - 1.0) <= 0.2 + 1e-12
        assert abs(spec.coda_duration / 0.12 - 1.0) <= 0.2 + 1e-12


def test_random_spec_unknown_class():
    with pytest.raises(ValueError):
        audio.random_spec("XX", np.random.default_rng(0))


def test_heuristic_requires_boundaries():
    clip = AudioClip(np.ones(1024), 8000)
    with pytest.raises(ValueError):
        audio.spectral_class_heuristic(clip)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_make_synthetic_token_deterministic(seed):
    a, sa = audio.make_synthetic_token("V~N", seed)
    b, sb = audio.make_synthetic_token("V~N", seed)
    assert np.array_equal(a.samples, b.samples)
    assert [(s.label, s.start, s.end) for s in sa] == \
        [(s.label, s.start, s.end) for s in sb]
