"""Supervised nasality labeler: a 1-D convolutional frame classifier.

Each window's posterior describes the sample at the window's center.  Two
modes: ``four_way`` classifies {oral_vowel, nasal_vowel, nasal_consonant,
other} directly (the French-style detector, trained with nasal-vowel ground
truth); ``dual_binary`` learns a vowel/not-vowel head on all frames and a
nasal/not-nasal head on consonant frames only, then calls a frame a nasal
vowel when the two predictions intersect (the English-style detector, which
has no nasal-vowel labels to train on).

Frame verdicts aggregate into a token-level label: a feature is "present"
when its frames cover at least ``presence_threshold`` of the non-silent
frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import nn
from .audio import AudioClip

DTYPE = np.float32

FOUR_WAY_LABELS = ("oral_vowel", "nasal_vowel", "nasal_consonant", "other")

# ground-truth phone span label -> four-way frame class
SPAN_TO_FRAME = {"V": "oral_vowel", "V~": "nasal_vowel", "N": "nasal_consonant",
                 "T": "other", "sil": "other"}


class DetectorError(Exception):
    pass


@dataclass
class DetectorConfig:
    mode: str = "four_way"  # or "dual_binary"
    window: int = 511  # odd, so a center sample exists
    hop: int = 128
    sample_rate: int = 8000
    model_dim: int = 8
    kernel_width: int = 16
    stride: int = 4
    presence_threshold: float = 0.1  # fraction of non-silent frames
    silence_rms: float = 0.01
    batch_size: int = 64
    alpha: float = 1e-3
    epochs: int = 8
    seed: int = 0

    def to_text(self):
        return "".join(f"{k}={v}\n" for k, v in sorted(asdict(self).items()))

    @classmethod
    def from_text(cls, text):
        kwargs = {}
        types = cls.__annotations__
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, v = line.split("=", 1)
            if types.get(k) in (float, "float"):
                kwargs[k] = float(v)
            elif types.get(k) in (int, "int"):
                kwargs[k] = int(v)
            else:
                kwargs[k] = v
        return cls(**kwargs)


@dataclass
class FramePosterior:
    """Per-head simplex probabilities for the window's center sample."""

    four_way: np.ndarray | None = None  # over FOUR_WAY_LABELS
    vowel: np.ndarray | None = None  # (vowel, not-vowel)
    nasal: np.ndarray | None = None  # (nasal, not-nasal)


@dataclass
class TokenLabel:
    nasal_vowel_present: bool
    nasal_consonant_present: bool
    syllable_class: str
    silent: bool = False

    @staticmethod
    def from_flags(nasal_vowel, nasal_consonant, silent=False):
        cls = ("V~" if nasal_vowel else "V") + ("N" if nasal_consonant else "T")
        return TokenLabel(bool(nasal_vowel), bool(nasal_consonant), cls, silent)


def _build_cnn(config: DetectorConfig, head, rng):
    d = config.model_dim
    length = config.window + 1  # windows are padded by one sample to even length
    widths = [1, d, 2 * d, 4 * d, 8 * d]
    layers = []
    for cin, cout in zip(widths[:-1], widths[1:]):
        layers.append(nn.Conv1d(cin, cout, config.kernel_width, stride=config.stride,
                                padding=config.kernel_width // 2, rng=rng, dtype=DTYPE))
        layers.append(nn.LeakyReLU(0.2))
        length = nn.conv_out_len(length, config.kernel_width, config.stride,
                                 config.kernel_width // 2)
    layers.append(nn.Reshape((widths[-1] * length,)))
    layers.append(nn.Dense(widths[-1] * length, head, rng=rng, dtype=DTYPE))
    return nn.Sequential(layers)


@dataclass
class DetectorModel:
    config: DetectorConfig
    heads: dict  # name -> (Sequential, label tuple)

    def save(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "detector_config.txt").write_text(self.config.to_text())
        for name, (net, _) in self.heads.items():
            nn.save_checkpoint(net, out_dir / f"head_{name}.ckpt")

    @classmethod
    def load(cls, out_dir):
        out_dir = Path(out_dir)
        config = DetectorConfig.from_text((out_dir / "detector_config.txt").read_text())
        heads = {}
        for name, labels in _head_layout(config.mode).items():
            heads[name] = (nn.load_checkpoint(out_dir / f"head_{name}.ckpt"), labels)
        return cls(config, heads)


def _head_layout(mode):
    if mode == "four_way":
        return {"four_way": FOUR_WAY_LABELS}
    if mode == "dual_binary":
        return {"vowel": ("vowel", "not_vowel"), "nasal": ("nasal", "not_nasal")}
    raise DetectorError(f"unknown detector mode {mode!r}")


# ---------------------------------------------------------------------------
# frame datasets
# ---------------------------------------------------------------------------

def frames_from_token(clip: AudioClip, spans, config: DetectorConfig, stride=None):
    """(window, four-way label) pairs from an annotated token.

    Windows are placed every ``stride`` samples (default: the hop); the label
    is the four-way class of the span containing the center sample.
    """
    stride = stride or config.hop
    half = config.window // 2
    n = len(clip.samples)
    out = []
    for center in range(half, n - half, stride):
        window = clip.samples[center - half:center + half + 1]
        label = None
        for s in spans:
            if s.start <= center < s.end:
                label = SPAN_TO_FRAME[s.label]
                break
        if label is None:
            label = "other"
        out.append((window, label))
    return out


def _head_training_set(frames, head_name):
    """Map four-way-labeled frames onto a head's binary task."""
    xs, ys = [], []
    for window, label in frames:
        if head_name == "four_way":
            xs.append(window)
            ys.append(FOUR_WAY_LABELS.index(label))
        elif head_name == "vowel":
            xs.append(window)
            ys.append(0 if label in ("oral_vowel", "nasal_vowel") else 1)
        elif head_name == "nasal":
            # consonants are the gold examples of nasal: nasal-vowel frames are
            # unlabeled in the English setting and sit out of training entirely
            if label == "nasal_vowel":
                continue
            xs.append(window)
            ys.append(0 if label == "nasal_consonant" else 1)
    return np.asarray(xs), np.asarray(ys)


def train_detector(mode, labeled_frames, config: DetectorConfig = None,
                   heldout_frames=None, progress=False):
    """Train the frame classifier(s); returns (model, held-out accuracies).

    ``labeled_frames`` are (window, four-way label) pairs; every window must
    have odd length ``config.window``.  Raises when a class needed by the
    mode is absent from the training data.
    """
    config = config or DetectorConfig()
    config.mode = mode
    present = {label for _, label in labeled_frames}
    required = set(FOUR_WAY_LABELS) if mode == "four_way" else \
        {"oral_vowel", "nasal_consonant", "other"}
    missing = required - present
    if missing:
        raise DetectorError(f"training data missing class(es): {sorted(missing)}")
    for window, _ in labeled_frames[:64]:
        if len(window) != config.window or config.window % 2 == 0:
            raise DetectorError(f"windows must have odd length {config.window}")

    seqs = np.random.SeedSequence(config.seed).spawn(2)
    init_rng, shuffle_rng = np.random.default_rng(seqs[0]), np.random.default_rng(seqs[1])
    heads = {}
    accuracies = {}
    for name, labels in _head_layout(mode).items():
        xs, ys = _head_training_set(labeled_frames, name)
        net = _build_cnn(config, len(labels), init_rng)
        opt = nn.AdamState(net.params(), alpha=config.alpha, beta1=0.9, beta2=0.999)
        n = len(xs)
        xb = np.pad(xs, ((0, 0), (0, 1)))[:, None, :].astype(DTYPE)
        for epoch in range(config.epochs):
            order = shuffle_rng.permutation(n)
            total = 0.0
            for i in range(0, n - config.batch_size + 1, config.batch_size):
                idx = order[i:i + config.batch_size]
                logits = net.forward(xb[idx])
                loss, dlogits = nn.categorical_cross_entropy(logits, ys[idx])
                net.zero_grad()
                net.backward(dlogits.astype(DTYPE))
                nn.adam_step(net.params(), net.grads(), opt)
                total += loss
            if progress:
                print(f"head {name} epoch {epoch + 1}/{config.epochs} "
                      f"loss {total / max(1, n // config.batch_size):.4f}", flush=True)
        heads[name] = (net, labels)
        if heldout_frames is not None:
            hx, hy = _head_training_set(heldout_frames, name)
            pred = _predict_classes(net, hx, config)
            accuracies[name] = float(np.mean(pred == hy))
    model = DetectorModel(config, heads)
    return model, accuracies


def _predict_classes(net, windows, config, batch=256):
    out = []
    xb = np.pad(np.asarray(windows), ((0, 0), (0, 1)))[:, None, :].astype(DTYPE)
    for i in range(0, len(xb), batch):
        out.append(net.forward(xb[i:i + batch]).argmax(axis=1))
    return np.concatenate(out) if out else np.array([], dtype=int)


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

def classify_center(model: DetectorModel, window) -> FramePosterior:
    """Simplex posterior(s) for the center sample of one window."""
    window = np.asarray(window, dtype=np.float64)
    if len(window) != model.config.window:
        raise DetectorError(
            f"window length {len(window)} != receptive field {model.config.window}")
    xb = np.pad(window, (0, 1))[None, None, :].astype(DTYPE)
    post = FramePosterior()
    for name, (net, _) in model.heads.items():
        probs = nn.softmax(net.forward(xb).astype(np.float64))[0]
        setattr(post, name if name != "four_way" else "four_way", probs)
    return post


def _frame_verdicts(model: DetectorModel, clip: AudioClip):
    """Per-frame (nasal_vowel, nasal_consonant, silent) booleans."""
    cfg = model.config
    half = cfg.window // 2
    n = len(clip.samples)
    if n < cfg.window:
        raise DetectorError(f"clip of {n} samples shorter than one window ({cfg.window})")
    centers = np.arange(half, n - half, cfg.hop)
    windows = np.stack([clip.samples[c - half:c + half + 1] for c in centers])
    rms = np.sqrt(np.mean(windows ** 2, axis=1))
    silent = rms < cfg.silence_rms
    if cfg.mode == "four_way":
        cls = _predict_classes(model.heads["four_way"][0], windows, cfg)
        nv = cls == FOUR_WAY_LABELS.index("nasal_vowel")
        nc = cls == FOUR_WAY_LABELS.index("nasal_consonant")
    else:
        vowel = _predict_classes(model.heads["vowel"][0], windows, cfg) == 0
        nasal = _predict_classes(model.heads["nasal"][0], windows, cfg) == 0
        nv = vowel & nasal
        nc = (~vowel) & nasal
    return nv, nc, silent


def label_token(model: DetectorModel, clip: AudioClip) -> TokenLabel:
    """Aggregate frame verdicts into a token-level nasality label.

    A feature counts as present when its frames cover at least the configured
    fraction of non-silent frames; all-silent clips are flagged and labeled
    VT by the class-derivation rule.
    """
    nv, nc, silent = _frame_verdicts(model, clip)
    voiced = ~silent
    n_voiced = int(voiced.sum())
    if n_voiced == 0:
        return TokenLabel.from_flags(False, False, silent=True)
    theta = model.config.presence_threshold
    nv_frac = float((nv & voiced).sum()) / n_voiced
    nc_frac = float((nc & voiced).sum()) / n_voiced
    return TokenLabel.from_flags(nv_frac >= theta, nc_frac >= theta)


def label_tokens(model, clips):
    return [label_token(model, c) for c in clips]


def confusion_matrix(true_classes, labels):
    """4x4 count matrix over VT/VN/V~T/V~N, rows true, columns predicted."""
    classes = ("VT", "VN", "V~T", "V~N")
    mat = np.zeros((4, 4), dtype=int)
    for t, lab in zip(true_classes, labels):
        mat[classes.index(t), classes.index(lab.syllable_class)] += 1
    return classes, mat


def export_labels_csv(clip_names, labels, path):
    """CSV ``clip,nasal_vowel,nasal_consonant,class``."""
    with open(path, "w") as fh:
        fh.write("clip,nasal_vowel,nasal_consonant,class\n")
        for name, lab in zip(clip_names, labels):
            fh.write(f"{name},{int(lab.nasal_vowel_present)},"
                     f"{int(lab.nasal_consonant_present)},{lab.syllable_class}\n")
