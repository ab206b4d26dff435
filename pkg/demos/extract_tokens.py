"""Walk the two bundled miniature corpora and pull out every word-final
vowel+coda token, the same slicing that feeds GAN training on real speech.

The English corpus is TIMIT-style (.phn/.wrd sample offsets, no nasal-vowel
phonemes); the French one is a flattened forced-alignment CSV and includes
phonemic nasal vowels.  Utterances named sa* are calibration sentences and
are skipped."""

from pathlib import Path

from nasalgan import corpus

data = Path(corpus.__file__).parent / "data"

for name, preset in (("mini_en", "english"), ("mini_fr", "french")):
    classes = corpus.load_preset(preset)
    skips = []
    tokens = corpus.extract_corpus_dir(data / name, classes, skip_report=skips)
    print(f"\n{name} ({preset} phone classes): {len(tokens)} tokens, "
          f"{len(skips)} skipped as too long")
    for t in tokens:
        start, end = t.span
        print(f"  {t.syllable_class:4s} from {t.source_utterance}"
              f" [{t.word_position}] vowel /{t.vowel}/ "
              f"samples {start}..{end}")
