"""Render one syllable token of each class and look at it three ways:
waveform statistics, a coarse spectrogram, and the band-energy heuristic
that recovers the class from the signal alone."""

import numpy as np

from nasalgan import audio

for cls in audio.CLASS_NAMES:
    clip, spans = audio.make_synthetic_token(cls, seed=42)
    spec = audio.stft(clip, window=256, hop=128)

    # spectral peak of the coda portion -- low (~250 Hz) for nasal codas,
    # high (noise burst) for stops
    coda = next(s for s in spans if s.label in ("N", "T"))
    coda_frames = spec.frames[coda.start // 128:coda.end // 128]
    peak_bin = int(np.argmax(coda_frames.mean(axis=0)))
    guess = audio.spectral_class_heuristic(clip, spans)

    print(f"{cls:4s}  peak|x| {np.max(np.abs(clip.samples)):.2f}  "
          f"spans {[s.label for s in spans]}  "
          f"coda peak {spec.freqs[peak_bin]:5.0f} Hz  heuristic says {guess}")

print("\nwriting the nasal-vowel token to /tmp/demo_token.wav")
clip, _ = audio.make_synthetic_token("V~N", seed=42)
audio.save_wav(clip, "/tmp/demo_token.wav")
