"""Regenerate the bundled miniature corpora under src/nasalgan/data/.

The annotations are written by hand to mirror the lexical fixtures the
extraction rules are tested against ("ban", "bad", "began"; "pote", "mon
ami", "ponte", "bon"); the audio is synthesized to match the annotated
spans.  Run from the repo root:  python3 tools/make_fixtures.py
"""

from pathlib import Path

import numpy as np

from nasalgan.audio import AudioClip, SyllableSpec, save_wav, synth_syllable

RATE = 8000


def make_wav(path, length, vc_span, nasal_vowel, coda, seed):
    """Quiet noise bed with a synthesized vowel+coda over vc_span."""
    rng = np.random.default_rng(seed)
    samples = 0.02 * rng.standard_normal(length)
    start, mid, end = vc_span  # vowel start, coda start, coda end
    spec = SyllableSpec(
        vowel_formants=(650.0, 1100.0, 2500.0),
        vowel_nasal=nasal_vowel,
        coda=coda,
        f0=120.0,
        vowel_duration=(mid - start) / RATE,
        coda_duration=(end - mid) / RATE,
    )
    syl = synth_syllable(spec, RATE, end - start, seed=seed)
    samples[start:end] = syl.samples
    save_wav(AudioClip(samples, RATE), path)


def main():
    root = Path(__file__).resolve().parents[1] / "src" / "nasalgan" / "data"

    en = root / "mini_en"
    en.mkdir(parents=True, exist_ok=True)
    # si1: "ban" /b ae n/
    (en / "si1.phn").write_text("0 800 b\n800 2600 ae\n2600 3600 n\n")
    (en / "si1.wrd").write_text("0 3600 ban\n")
    make_wav(en / "si1.wav", 4000, (800, 2600, 3600), False, "nasal", seed=11)
    # si2: "bad" /b ae d/
    (en / "si2.phn").write_text("0 800 b\n800 2600 ae\n2600 3200 d\n")
    (en / "si2.wrd").write_text("0 3200 bad\n")
    make_wav(en / "si2.wav", 4000, (800, 2600, 3200), False, "stop", seed=12)
    # si3: "began" /b ih g ae n/ then "sofa" /s ow f ax/ (no final coda)
    (en / "si3.phn").write_text(
        "0 400 b\n400 1200 ih\n1200 1600 g\n1600 3200 ae\n3200 4000 n\n"
        "4400 5200 s\n5200 6400 ow\n6400 7000 f\n7000 7800 ax\n")
    (en / "si3.wrd").write_text("0 4000 began\n4400 7800 sofa\n")
    make_wav(en / "si3.wav", 8000, (1600, 3200, 4000), False, "nasal", seed=13)
    # sa1: SA-flagged, must never contribute tokens
    (en / "sa1.phn").write_text("0 800 b\n800 2600 ae\n2600 3600 n\n")
    (en / "sa1.wrd").write_text("0 3600 ban\n")
    make_wav(en / "sa1.wav", 4000, (800, 2600, 3600), False, "nasal", seed=14)

    fr = root / "mini_fr"
    fr.mkdir(parents=True, exist_ok=True)
    rows = ["utterance,word_index,phone,start_sec,end_sec"]
    # fr1: "pote" /p O t/
    rows += ["fr1,0,p,0.00,0.08", "fr1,0,O,0.08,0.30", "fr1,0,t,0.30,0.38"]
    make_wav(fr / "fr1.wav", 4000, (640, 2400, 3040), False, "stop", seed=21)
    # fr2: "mon ami" /m o~ n  a m i/ with the liaison /n/ aligned to "mon"
    rows += ["fr2,0,m,0.00,0.08", "fr2,0,o~,0.08,0.32", "fr2,0,n,0.32,0.42",
             "fr2,1,a,0.45,0.60", "fr2,1,m,0.60,0.68", "fr2,1,i,0.68,0.80"]
    make_wav(fr / "fr2.wav", 8000, (640, 2560, 3360), True, "nasal", seed=22)
    # fr3: "ponte" /p o~ t/ then "bon" /b O n/
    rows += ["fr3,0,p,0.00,0.08", "fr3,0,o~,0.08,0.30", "fr3,0,t,0.30,0.40",
             "fr3,1,b,0.45,0.52", "fr3,1,O,0.52,0.72", "fr3,1,n,0.72,0.82"]
    make_wav(fr / "fr3.wav", 8000, (640, 2400, 3200), True, "stop", seed=23)
    # sa_fr1: SA-flagged
    rows += ["sa_fr1,0,p,0.00,0.08", "sa_fr1,0,O,0.08,0.30", "sa_fr1,0,t,0.30,0.38"]
    make_wav(fr / "sa_fr1.wav", 4000, (640, 2400, 3040), False, "stop", seed=24)
    (fr / "alignment.csv").write_text("\n".join(rows) + "\n")

    print("fixtures written under", root)


if __name__ == "__main__":
    main()
