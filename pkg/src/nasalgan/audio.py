"""Waveform container, WAV persistence, STFT, and a parametric syllable synthesizer.

Everything downstream (corpus slicing, GAN training, the nasal detector,
latent probing) moves audio around as :class:`AudioClip`.  The synthesizer
produces the four syllable classes used throughout -- oral/nasal vowel
followed by a stop or nasal coda -- with enough spectral contrast that a
simple band-energy heuristic can recover the class from the signal alone.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, field

import numpy as np
import scipy.signal

PCM_SCALE = 32768
DEFAULT_SAMPLE_RATE = 8000
DEFAULT_TOKEN_LEN = 4096

CLASS_NAMES = ("VT", "VN", "V~T", "V~N")


class AudioError(Exception):
    """Raised for unreadable or unsupported audio files."""


@dataclass
class AudioClip:
    """Mono waveform with a fixed sample rate.

    Samples are dimensionless amplitudes, nominally in [-1, 1].
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("AudioClip requires a non-empty 1-D sample array")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate

    def normalized(self, peak=1.0):
        """Return a copy scaled so max |sample| equals ``peak``."""
        top = np.max(np.abs(self.samples))
        if top == 0:
            return AudioClip(self.samples.copy(), self.sample_rate)
        return AudioClip(self.samples * (peak / top), self.sample_rate)


@dataclass
class Spectrogram:
    """Magnitude STFT frames; ``frames[t]`` holds ``window // 2 + 1`` bins."""

    frames: np.ndarray
    hop: int
    window: int
    sample_rate: int

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def freqs(self):
        return np.fft.rfftfreq(self.window, d=1.0 / self.sample_rate)

    def to_csv(self, path):
        """Write frames as CSV with header ``frame,bin,magnitude``."""
        with open(path, "w") as fh:
            fh.write("frame,bin,magnitude\n")
            for t in range(self.frames.shape[0]):
                for b in range(self.frames.shape[1]):
                    fh.write(f"{t},{b},{self.frames[t, b]:.8g}\n")


def load_wav(path) -> AudioClip:
    """Read a PCM-16 mono WAV file, scaling samples to [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            rate = wf.getframerate()
            n = wf.getnframes()
            payload = wf.readframes(n)
    except FileNotFoundError:
        raise AudioError(f"no such file: {path}")
    except (wave.Error, EOFError) as exc:
        raise AudioError(f"unreadable WAV file {path}: {exc}")
    if n_channels != 1:
        raise AudioError(f"{path}: expected mono audio, got {n_channels} channels")
    if sampwidth != 2:
        raise AudioError(f"{path}: expected PCM-16, got sample width {sampwidth}")
    data = np.frombuffer(payload, dtype="<i2").astype(np.float64) / PCM_SCALE
    return AudioClip(data, rate)


def save_wav(clip: AudioClip, path):
    """Write ``clip`` as PCM-16 mono WAV, clamping samples to [-1, 1]."""
    clipped = np.clip(clip.samples, -1.0, 1.0)
    quantized = np.clip(np.round(clipped * PCM_SCALE), -PCM_SCALE, PCM_SCALE - 1)
    try:
        with wave.open(str(path), "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(2)
            wf.setframerate(clip.sample_rate)
            wf.writeframes(quantized.astype("<i2").tobytes())
    except OSError as exc:
        raise AudioError(f"cannot write {path}: {exc}")


def stft(clip: AudioClip, window, hop) -> Spectrogram:
    """Hann-windowed magnitude STFT.

    Frame count is ``floor((len - window) / hop) + 1``; bins per frame
    ``window // 2 + 1``.
    """
    n = len(clip.samples)
    if window > n:
        raise ValueError(f"window {window} exceeds clip length {n}")
    if hop < 1:
        raise ValueError("hop must be >= 1")
    n_frames = (n - window) // hop + 1
    win = np.hanning(window)
    idx = np.arange(window)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = np.abs(np.fft.rfft(clip.samples[idx] * win, axis=1))
    return Spectrogram(frames, hop=hop, window=window, sample_rate=clip.sample_rate)


# ---------------------------------------------------------------------------
# Formant synthesis
# ---------------------------------------------------------------------------

@dataclass
class SyllableSpec:
    """Parameters for one synthetic (C)V(C) token: vowel + coda."""

    vowel_formants: tuple  # (F1, F2, F3) in Hz
    vowel_nasal: bool
    coda: str  # "stop" or "nasal"
    f0: float = 120.0
    vowel_duration: float = 0.22
    coda_duration: float = 0.12

    def validate(self, sample_rate):
        f1, f2, f3 = self.vowel_formants
        if not (0 < f1 < f2 < f3 < sample_rate / 2):
            raise ValueError(f"formants must satisfy 0 < F1 < F2 < F3 < Nyquist, got {self.vowel_formants}")
        if self.vowel_duration <= 0 or self.coda_duration <= 0:
            raise ValueError("durations must be positive")
        if self.coda not in ("stop", "nasal"):
            raise ValueError(f"coda must be 'stop' or 'nasal', got {self.coda!r}")

    @property
    def syllable_class(self):
        v = "V~" if self.vowel_nasal else "V"
        c = "N" if self.coda == "nasal" else "T"
        return v + c


@dataclass
class PhoneSpan:
    """Ground-truth segment of a synthesized token, in sample offsets."""

    label: str  # "V", "V~", "N", "T", "sil"
    start: int
    end: int


NASAL_POLE_HZ = 250.0  # murmur / nasalization resonance target


def _resonator(source, freq, bandwidth, sample_rate):
    """Two-pole resonator with unity gain at its center frequency."""
    r = np.exp(-np.pi * bandwidth / sample_rate)
    theta = 2 * np.pi * freq / sample_rate
    a = [1.0, -2 * r * np.cos(theta), r * r]
    # normalize |H| at the pole frequency
    w = np.exp(1j * theta)
    gain = np.abs(1.0 / (a[0] + a[1] / w + a[2] / w ** 2))
    return scipy.signal.lfilter([1.0 / gain], a, source)


def _impulse_train(f0, n, sample_rate):
    period = sample_rate / f0
    out = np.zeros(n)
    t = 0.0
    while t < n:
        out[int(t)] = 1.0
        t += period
    return out


def synth_syllable(spec: SyllableSpec, sample_rate=DEFAULT_SAMPLE_RATE,
                   total_len=DEFAULT_TOKEN_LEN, seed=0, with_spans=False):
    """Render one syllable token, right-padded with zeros to ``total_len``.

    The vowel is a parallel-formant filter over an impulse-train source.  A
    nasal vowel gains a strong resonance near 250 Hz and loses most of its F1
    amplitude; a nasal coda is a low murmur, a stop coda is closure silence
    followed by a seeded broadband burst.  Output is peak-normalized to 0.9.
    Deterministic given (spec, seed).

    With ``with_spans=True`` also returns the ground-truth
    :class:`PhoneSpan` list used as the labeling oracle for detector training.
    """
    spec.validate(sample_rate)
    n_vowel = int(round(spec.vowel_duration * sample_rate))
    n_coda = int(round(spec.coda_duration * sample_rate))
    if n_vowel + n_coda > total_len:
        raise ValueError(
            f"vowel+coda spans {n_vowel + n_coda} samples, exceeding total_len {total_len}")

    rng = np.random.default_rng(seed)
    f1, f2, f3 = spec.vowel_formants

    source = _impulse_train(spec.f0, n_vowel, sample_rate)
    gains = [1.0, 0.35, 0.15]
    if spec.vowel_nasal:
        gains[0] = 0.18  # nasalization attenuates F1
    vowel = sum(g * _resonator(source, f, bw, sample_rate)
                for g, f, bw in zip(gains, (f1, f2, f3), (80.0, 110.0, 150.0)))
    if spec.vowel_nasal:
        vowel = vowel + 1.3 * _resonator(source, NASAL_POLE_HZ, 60.0, sample_rate)
    # fade edges to avoid clicks
    ramp = min(64, n_vowel // 4)
    env = np.ones(n_vowel)
    env[:ramp] = np.linspace(0, 1, ramp)
    env[-ramp:] = np.linspace(1, 0.8, ramp)
    vowel *= env

    spans = [PhoneSpan("V~" if spec.vowel_nasal else "V", 0, n_vowel)]
    if spec.coda == "nasal":
        murmur_src = _impulse_train(spec.f0 * 0.95, n_coda, sample_rate)
        coda = 0.9 * _resonator(murmur_src, NASAL_POLE_HZ, 70.0, sample_rate)
        coda += 0.05 * _resonator(murmur_src, 2500.0, 300.0, sample_rate)
        coda *= np.linspace(1.0, 0.5, n_coda)
        scale = np.max(np.abs(vowel)) / max(np.max(np.abs(coda)), 1e-12)
        coda *= 0.6 * scale
        spans.append(PhoneSpan("N", n_vowel, n_vowel + n_coda))
    else:
        n_closure = int(n_coda * 0.6)
        n_burst = n_coda - n_closure
        noise = rng.standard_normal(n_burst)
        sos = scipy.signal.butter(2, [900, 3400], btype="band", fs=sample_rate, output="sos")
        burst = scipy.signal.sosfilt(sos, noise) * np.exp(-np.arange(n_burst) / (0.012 * sample_rate))
        scale = np.max(np.abs(vowel)) / max(np.max(np.abs(burst)), 1e-12)
        coda = np.concatenate([np.zeros(n_closure), 0.7 * scale * burst])
        spans.append(PhoneSpan("T", n_vowel, n_vowel + n_coda))

    samples = np.zeros(total_len)
    samples[:n_vowel] = vowel
    samples[n_vowel:n_vowel + n_coda] = coda
    if n_vowel + n_coda < total_len:
        spans.append(PhoneSpan("sil", n_vowel + n_coda, total_len))
    clip = AudioClip(samples, sample_rate).normalized(0.9)
    if with_spans:
        return clip, spans
    return clip


# ---------------------------------------------------------------------------
# Synthetic corpus generation
# ---------------------------------------------------------------------------

BASE_FORMANTS = (650.0, 1100.0, 2500.0)


def random_spec(syllable_class, rng) -> SyllableSpec:
    """Draw a jittered :class:`SyllableSpec` for one of the four classes.

    Formants jitter by +/-8%, f0 by +/-15%, durations by +/-20%; amounts keep
    the classes separable by the spectral heuristic.
    """
    if syllable_class not in CLASS_NAMES:
        raise ValueError(f"unknown syllable class {syllable_class!r}")
    jf = lambda x, p: x * (1.0 + rng.uniform(-p, p))
    formants = tuple(jf(f, 0.08) for f in BASE_FORMANTS)
    return SyllableSpec(
        vowel_formants=formants,
        vowel_nasal=syllable_class.startswith("V~"),
        coda="nasal" if syllable_class.endswith("N") else "stop",
        f0=jf(120.0, 0.15),
        vowel_duration=jf(0.22, 0.2),
        coda_duration=jf(0.12, 0.2),
    )


def make_synthetic_token(syllable_class, seed, sample_rate=DEFAULT_SAMPLE_RATE,
                         total_len=DEFAULT_TOKEN_LEN):
    """Synthesize one jittered token; returns (clip, spans)."""
    rng = np.random.default_rng(seed)
    spec = random_spec(syllable_class, rng)
    burst_seed = int(rng.integers(0, 2 ** 31))
    return synth_syllable(spec, sample_rate, total_len, seed=burst_seed, with_spans=True)


def spectral_class_heuristic(clip: AudioClip, spans=None,
                             vowel_end=None, coda_end=None):
    """Recover the syllable class from band energies alone.

    Independent of the detector: nasal coda iff the coda portion's spectral
    peak sits below 400 Hz; nasal vowel iff the vowel portion carries more
    energy near 250 Hz than in the F1 band.
    """
    if spans is not None:
        vowel_end = next(s.end for s in spans if s.label in ("V", "V~"))
        coda_end = next(s.end for s in spans if s.label in ("N", "T"))
    if vowel_end is None or coda_end is None:
        raise ValueError("need spans or explicit vowel_end/coda_end")
    sr = clip.sample_rate
    vowel = clip.samples[:vowel_end]
    coda = clip.samples[vowel_end:coda_end]

    vspec = np.abs(np.fft.rfft(vowel * np.hanning(len(vowel))))
    vfreq = np.fft.rfftfreq(len(vowel), 1.0 / sr)
    e_low = np.sum(vspec[(vfreq >= 150) & (vfreq <= 350)] ** 2)
    e_f1 = np.sum(vspec[(vfreq >= 450) & (vfreq <= 900)] ** 2)
    vowel_nasal = e_low > e_f1

    cspec = np.abs(np.fft.rfft(coda * np.hanning(len(coda))))
    cfreq = np.fft.rfftfreq(len(coda), 1.0 / sr)
    peak = cfreq[int(np.argmax(cspec))]
    coda_nasal = peak < 400.0

    return ("V~" if vowel_nasal else "V") + ("N" if coda_nasal else "T")
