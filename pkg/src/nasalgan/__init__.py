"""nasalgan: probe how a categorical waveform GAN encodes vowel and consonant nasality."""

__version__ = "0.1.0"
