"""Phone-alignment parsing, syllable-token extraction, and dataset balancing.

Tokens are the final vowel+coda phone pair of a word: an oral or nasal vowel
followed by a stop or nasal consonant.  Words are taken either from
TIMIT-style ``.phn``/``.wrd`` files (sample offsets) or from a flattened
forced-alignment CSV (seconds).  Utterances whose id starts with ``sa`` are
never used as token sources.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioClip, DEFAULT_TOKEN_LEN, load_wav, save_wav

log = logging.getLogger(__name__)

CLASS_NAMES = ("VT", "VN", "V~T", "V~N")

MANIFEST_HEADER = ["file", "class", "source", "word_position", "vowel"]


class CorpusError(Exception):
    """Raised for malformed annotation files or unsatisfiable requests."""


@dataclass
class PhoneSegment:
    label: str
    start: int  # sample index
    end: int

    def __post_init__(self):
        if self.start >= self.end:
            raise CorpusError(f"segment {self.label!r}: start {self.start} >= end {self.end}")


@dataclass
class Word:
    """One word: its phone segments in order, plus provenance."""

    phones: list
    utterance: str = ""
    index: int = 0


@dataclass
class PhoneClassMap:
    """The four phone sets driving extraction; pairwise disjoint."""

    T: frozenset
    N: frozenset
    V_oral: frozenset
    V_nasal: frozenset

    def __post_init__(self):
        sets = [frozenset(s) for s in (self.T, self.N, self.V_oral, self.V_nasal)]
        self.T, self.N, self.V_oral, self.V_nasal = sets
        all_phones = [p for s in sets for p in s]
        if len(all_phones) != len(set(all_phones)):
            raise CorpusError("phone class sets must be pairwise disjoint")

    @property
    def vowels(self):
        return self.V_oral | self.V_nasal

    @property
    def codas(self):
        return self.T | self.N

    def pair_class(self, vowel, coda):
        """Syllable class of a (vowel, coda) phone pair, or None."""
        if vowel in self.V_oral:
            v = "V"
        elif vowel in self.V_nasal:
            v = "V~"
        else:
            return None
        if coda in self.T:
            return v + "T"
        if coda in self.N:
            return v + "N"
        return None


def load_class_map(path) -> PhoneClassMap:
    """Read a phone-class preset: lines ``T:``, ``N:``, ``V_oral:``, ``V_nasal:``
    each followed by space-separated phone symbols; ``#`` comments."""
    sets = {"T": set(), "N": set(), "V_oral": set(), "V_nasal": set()}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise CorpusError(f"{path}:{lineno}: expected 'SET: phones...'")
        name, rest = line.split(":", 1)
        name = name.strip()
        if name not in sets:
            raise CorpusError(f"{path}:{lineno}: unknown set {name!r}")
        sets[name].update(rest.split())
    return PhoneClassMap(**sets)


def preset_path(name):
    p = Path(__file__).parent / "data" / "presets" / f"{name}.classes"
    if not p.exists():
        raise CorpusError(f"unknown phone-class preset {name!r}")
    return p


def load_preset(name) -> PhoneClassMap:
    """Bundled presets: ``english`` (no nasal vowels) and ``french``."""
    return load_class_map(preset_path(name))


@dataclass
class SyllableToken:
    syllable_class: str
    audio: AudioClip
    source_utterance: str
    word_position: str  # "monosyllabic" or "final_syllable"
    vowel: str
    span: tuple  # (start, end) sample span in the source utterance


# ---------------------------------------------------------------------------
# annotation parsing
# ---------------------------------------------------------------------------

def parse_phn(text):
    """Parse TIMIT-style ``<start> <end> <label>`` lines (sample offsets)."""
    segments = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise CorpusError(f"line {lineno}: expected '<start> <end> <label>', got {line!r}")
        try:
            start, end = int(parts[0]), int(parts[1])
        except ValueError:
            raise CorpusError(f"line {lineno}: non-integer offsets in {line!r}")
        try:
            seg = PhoneSegment(parts[2], start, end)
        except CorpusError as exc:
            raise CorpusError(f"line {lineno}: {exc}")
        if segments and seg.start < segments[-1].end:
            raise CorpusError(
                f"line {lineno}: segment {seg.label!r} overlaps previous ({seg.start} < {segments[-1].end})")
        segments.append(seg)
    return segments


def group_words(phones, word_segments, utterance=""):
    """Assign phone segments to word spans by containment."""
    words = []
    for i, w in enumerate(word_segments):
        inside = [p for p in phones if p.start >= w.start and p.end <= w.end]
        if inside:
            words.append(Word(inside, utterance=utterance, index=i))
    return words


def parse_alignment_csv(text, sample_rate):
    """Parse rows ``utterance,word_index,phone,start_sec,end_sec``.

    Times are converted to sample offsets at ``sample_rate``.  Returns a dict
    utterance -> list of :class:`Word`.  Rejects non-monotone times within an
    utterance.
    """
    utterances = {}
    reader = csv.reader(io.StringIO(text))
    for lineno, row in enumerate(reader, 1):
        if not row or row[0].strip().startswith("#"):
            continue
        if lineno == 1 and row[0].strip() == "utterance":
            continue  # header
        if len(row) != 5:
            raise CorpusError(f"row {lineno}: expected 5 fields, got {len(row)}")
        utt, widx, phone, start_s, end_s = [f.strip() for f in row]
        try:
            widx = int(widx)
            start = int(round(float(start_s) * sample_rate))
            end = int(round(float(end_s) * sample_rate))
        except ValueError:
            raise CorpusError(f"row {lineno}: malformed numeric field")
        if end <= start:
            raise CorpusError(f"row {lineno}: end {end_s} <= start {start_s}")
        words = utterances.setdefault(utt, {})
        segs = words.setdefault(widx, [])
        if segs and start < segs[-1].end:
            raise CorpusError(f"row {lineno}: non-monotone times in utterance {utt!r}")
        segs.append(PhoneSegment(phone, start, end))
    out = {}
    for utt, words in utterances.items():
        out[utt] = [Word(words[i], utterance=utt, index=i) for i in sorted(words)]
    return out


# ---------------------------------------------------------------------------
# token extraction
# ---------------------------------------------------------------------------

def word_position(word: Word, classes: PhoneClassMap):
    """Approximate syllable count by nucleus phones: one nucleus means
    monosyllabic, more means we treat the match as the final syllable."""
    nuclei = sum(1 for p in word.phones if p.label in classes.vowels)
    return "monosyllabic" if nuclei <= 1 else "final_syllable"


def extract_tokens(words, classes: PhoneClassMap, audio: AudioClip,
                   fixed_len=DEFAULT_TOKEN_LEN, skip_report=None):
    """Emit one token per word whose final two phones are [vowel][stop|nasal].

    Token audio is the exact sample span of the matched pair, right-padded
    with zeros to ``fixed_len``.  Longer spans are skipped and counted in
    ``skip_report`` (a list, if given).
    """
    tokens = []
    for word in words:
        if len(word.phones) < 2:
            continue
        vowel, coda = word.phones[-2], word.phones[-1]
        cls = classes.pair_class(vowel.label, coda.label)
        if cls is None:
            continue
        start, end = vowel.start, coda.end
        if end > len(audio.samples):
            raise CorpusError(
                f"{word.utterance}: segment span {start}:{end} outside audio of {len(audio.samples)}")
        if end - start > fixed_len:
            if skip_report is not None:
                skip_report.append((word.utterance, word.index, cls, end - start))
            continue
        samples = np.zeros(fixed_len)
        samples[:end - start] = audio.samples[start:end]
        tokens.append(SyllableToken(
            syllable_class=cls,
            audio=AudioClip(samples, audio.sample_rate),
            source_utterance=word.utterance,
            word_position=word_position(word, classes),
            vowel=vowel.label,
            span=(start, end),
        ))
    return tokens


def is_sa_utterance(utterance_id):
    return utterance_id.lower().startswith("sa")


def extract_corpus_dir(corpus_dir, classes: PhoneClassMap, fixed_len=DEFAULT_TOKEN_LEN,
                       skip_report=None):
    """Extract tokens from a corpus directory.

    Supports two layouts: per-utterance ``<id>.wav`` + ``<id>.phn`` +
    ``<id>.wrd`` (TIMIT-style, sample offsets), or ``alignment.csv`` plus
    ``<utterance>.wav`` files.  SA-flagged utterances are excluded.
    """
    corpus_dir = Path(corpus_dir)
    tokens = []
    align = corpus_dir / "alignment.csv"
    if align.exists():
        # sample rate taken from the first wav
        wavs = {p.stem: p for p in sorted(corpus_dir.glob("*.wav"))}
        if not wavs:
            raise CorpusError(f"{corpus_dir}: no wav files")
        rate = load_wav(next(iter(wavs.values()))).sample_rate
        utterances = parse_alignment_csv(align.read_text(), rate)
        for utt in sorted(utterances):
            if is_sa_utterance(utt):
                continue
            if utt not in wavs:
                raise CorpusError(f"{corpus_dir}: no wav for utterance {utt!r}")
            audio = load_wav(wavs[utt])
            tokens.extend(extract_tokens(utterances[utt], classes, audio,
                                         fixed_len, skip_report))
    else:
        phns = sorted(corpus_dir.glob("*.phn"))
        if not phns:
            raise CorpusError(f"{corpus_dir}: no alignment.csv and no .phn files")
        for phn in phns:
            utt = phn.stem
            if is_sa_utterance(utt):
                continue
            audio = load_wav(phn.with_suffix(".wav"))
            phones = parse_phn(phn.read_text())
            wrd = phn.with_suffix(".wrd")
            if not wrd.exists():
                raise CorpusError(f"{wrd}: missing word annotations")
            word_segs = parse_phn(wrd.read_text())
            words = group_words(phones, word_segs, utterance=utt)
            tokens.extend(extract_tokens(words, classes, audio, fixed_len, skip_report))
    return tokens


# ---------------------------------------------------------------------------
# dataset manifests
# ---------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    file: str
    syllable_class: str
    source: str
    word_position: str = ""
    vowel: str = ""


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)

    @property
    def counts(self):
        out = {}
        for e in self.entries:
            out[e.syllable_class] = out.get(e.syllable_class, 0) + 1
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(MANIFEST_HEADER)
            for e in self.entries:
                w.writerow([e.file, e.syllable_class, e.source, e.word_position, e.vowel])

    @classmethod
    def from_csv(cls, path):
        entries = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or header[0] != "file":
                raise CorpusError(f"{path}: missing manifest header")
            for row in reader:
                if not row:
                    continue
                row = row + [""] * (5 - len(row))
                entries.append(ManifestEntry(*row[:5]))
        return cls(entries)


def _class_filename(cls):
    return cls.replace("~", "h")  # V~T -> VhT in filenames


def write_tokens(tokens, out_dir):
    """Persist tokens as WAVs and return the manifest describing them."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, tok in enumerate(tokens):
        name = f"token_{i:05d}_{_class_filename(tok.syllable_class)}.wav"
        save_wav(tok.audio, out_dir / name)
        entries.append(ManifestEntry(name, tok.syllable_class, tok.source_utterance,
                                     tok.word_position, tok.vowel))
    manifest = DatasetManifest(entries)
    manifest.to_csv(out_dir / "manifest.csv")
    return manifest


def balance_dataset(manifest: DatasetManifest, targets, vowel_filter=None,
                    seed=0) -> DatasetManifest:
    """Resample the manifest to hit ``targets`` (class -> count) exactly.

    ``vowel_filter`` restricts the source pool to tokens with those vowels
    before any sampling.  When a target exceeds its pool the pool is repeated
    whole as many times as it fits and the remainder drawn without
    replacement; the oversampling factor is logged.  Deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    out = []
    for cls in sorted(targets):
        target = targets[cls]
        pool = [e for e in manifest.entries if e.syllable_class == cls
                and (vowel_filter is None or e.vowel in vowel_filter)]
        if target > 0 and not pool:
            raise CorpusError(f"no source tokens for class {cls!r}"
                              + (f" with vowels {sorted(vowel_filter)}" if vowel_filter else ""))
        if not target:
            continue
        if target > len(pool):
            log.info("oversampling class %s by factor %.2f (%d -> %d)",
                     cls, target / len(pool), len(pool), target)
        full, rem = divmod(target, len(pool))
        chosen = pool * full + [pool[i] for i in rng.choice(len(pool), size=rem, replace=False)]
        out.extend(chosen)
    return DatasetManifest(out)


def synthesize_corpus(counts, out_dir, seed=0, sample_rate=8000,
                      token_len=DEFAULT_TOKEN_LEN):
    """Write a jittered synthetic corpus: WAVs, manifest, ground-truth labels
    (``labels.csv``), and phone spans (``spans.csv``) for detector training.

    Deterministic given (counts, seed).  Returns the manifest.
    """
    from .audio import make_synthetic_token

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    with open(out_dir / "labels.csv", "w", newline="") as lab_fh, \
            open(out_dir / "spans.csv", "w", newline="") as span_fh:
        lab = csv.writer(lab_fh)
        lab.writerow(["clip", "nasal_vowel", "nasal_consonant", "class"])
        spn = csv.writer(span_fh)
        spn.writerow(["file", "label", "start", "end"])
        i = 0
        for cls in CLASS_NAMES:
            for _ in range(counts.get(cls, 0)):
                tok_seed = int(rng.integers(0, 2 ** 31))
                clip, spans = make_synthetic_token(cls, tok_seed, sample_rate, token_len)
                name = f"token_{i:05d}_{_class_filename(cls)}.wav"
                save_wav(clip, out_dir / name)
                lab.writerow([name, int(cls.startswith("V~")), int(cls.endswith("N")), cls])
                for s in spans:
                    spn.writerow([name, s.label, s.start, s.end])
                entries.append(ManifestEntry(name, cls, f"synthetic:{tok_seed}",
                                             "monosyllabic", "synthetic"))
                i += 1
    manifest = DatasetManifest(entries)
    manifest.to_csv(out_dir / "manifest.csv")
    return manifest


def load_spans_csv(path):
    """spans.csv -> {file: [PhoneSpan-like (label, start, end)]}."""
    from .audio import PhoneSpan

    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for row in reader:
            if not row:
                continue
            name, label, start, end = row
            out.setdefault(name, []).append(PhoneSpan(label, int(start), int(end)))
    return out


def load_manifest_audio(manifest: DatasetManifest, base_dir):
    """Load every entry's WAV relative to ``base_dir``; returns (clips, classes)."""
    base = Path(base_dir)
    clips = [load_wav(base / e.file) for e in manifest.entries]
    return clips, [e.syllable_class for e in manifest.entries]
