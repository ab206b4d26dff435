"""Train the frame-level nasality classifier on synthetic tokens and score
it on held-out tokens, in both supervision settings.

four_way has nasal-vowel ground truth (the contrastive, French-style
setting); dual_binary never sees a nasal-vowel label and instead intersects
a vowel head with a nasal head trained on consonant exemplars (the
allophonic, English-style setting)."""

import numpy as np

from nasalgan import audio, detector

config = detector.DetectorConfig(epochs=4)

train_frames, held_tokens = [], []
for ci, cls in enumerate(audio.CLASS_NAMES):
    for i in range(40):
        clip, spans = audio.make_synthetic_token(cls, seed=1000 * ci + i)
        if i < 32:
            train_frames += detector.frames_from_token(clip, spans, config)
        else:
            held_tokens.append((cls, clip))
print(f"{len(train_frames)} training frames from 128 tokens")

for mode in ("four_way", "dual_binary"):
    model, _ = detector.train_detector(mode, train_frames,
                                       detector.DetectorConfig(epochs=4, seed=0))
    labels = detector.label_tokens(model, [c for _, c in held_tokens])
    acc = np.mean([lab.syllable_class == cls
                   for (cls, _), lab in zip(held_tokens, labels)])
    classes, mat = detector.confusion_matrix([c for c, _ in held_tokens], labels)
    print(f"\n{mode}: token accuracy {acc:.2f}")
    print("      " + " ".join(f"{c:>4s}" for c in classes))
    for c, row in zip(classes, mat):
        print(f"{c:>4s}  " + " ".join(f"{v:4d}" for v in row))
