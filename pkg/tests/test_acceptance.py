"""Acceptance gate: one test per shipping criterion, each emitting a single
pass/fail line.  The expensive criteria (detector quality, GAN smoke
training) run at their stated budgets, so this module dominates suite
runtime."""

import sys
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
import scipy.stats

sys.path.insert(0, str(Path(__file__).parent))

from nasalgan import audio, ciwgan, cli, corpus, detector, nn, probe
from nasalgan.audio import AudioClip
from nasalgan.detector import TokenLabel


def report(n, ok, detail=""):
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}{' (' + detail + ')' if detail else ''}",
          flush=True)
    assert ok, f"criterion {n} failed: {detail}"


# ---------------------------------------------------------------------------
# 1. gradient correctness
# ---------------------------------------------------------------------------

def test_criterion_1_gradient_correctness():
    from test_nn import (CONV_CONFIGS, DENSE_CONFIGS, _safe_case,
                         check_layer_grads, fd_grad, _away_from_kink)
    t0 = time.time()
    rng = np.random.default_rng(0)
    n_configs = 0

    for n_in, n_out, batch in DENSE_CONFIGS:
        layer = nn.Dense(n_in, n_out, dtype=np.float64)
        layer.W[...] = rng.normal(size=layer.W.shape)
        check_layer_grads(layer, rng.normal(size=(batch, n_in)))
        n_configs += 1
    for kind in (nn.Conv1d, nn.Conv1dTranspose):
        for cin, cout, k, s, p, length in CONV_CONFIGS:
            layer = kind(cin, cout, k, s, p, dtype=np.float64)
            if kind is nn.Conv1dTranspose and layer.out_len(length) < 1:
                continue
            layer.W[...] = rng.normal(size=layer.W.shape)
            check_layer_grads(layer, rng.normal(size=(2, cin, length)))
            n_configs += 1
    for shape in [(3, 5), (2, 2, 9), (1, 11), (4, 3, 4), (2, 17)]:
        check_layer_grads(nn.LeakyReLU(0.2), _away_from_kink(rng, shape))
        check_layer_grads(nn.Tanh(), rng.normal(size=shape))
        n_configs += 2
    for shape in [((12,), (3, 4)), ((2, 6), (12,)), ((8,), (2, 4))]:
        check_layer_grads(nn.Reshape(shape[1]), rng.normal(size=(2,) + shape[0]))
        n_configs += 1

    from test_nn import _FixedShiftRng
    for shifts in ([0, 1], [-2, 2], [1, -1]):
        layer = nn.PhaseShuffle(2, rng=_FixedShiftRng(shifts))
        check_layer_grads(layer, rng.normal(size=(2, 3, 9)))
        n_configs += 1

    # second-order (gradient penalty) pass per parametric layer kind
    for trial in range(5):
        layer = nn.Dense(4, 3, dtype=np.float64)
        layer.W[...] = rng.normal(size=layer.W.shape)
        check_layer_grads(layer, rng.normal(size=(3, 4)), use_gp=True)
        n_configs += 1
    for kind, configs in ((nn.Conv1d, CONV_CONFIGS[:6]),
                          (nn.Conv1dTranspose, CONV_CONFIGS[:4])):
        for cin, cout, k, s, p, length in configs:
            layer = kind(cin, cout, k, s, p, dtype=np.float64)
            if kind is nn.Conv1dTranspose and layer.out_len(length) < 1:
                continue
            layer.W[...] = rng.normal(size=layer.W.shape)
            check_layer_grads(layer, rng.normal(size=(2, cin, length)), use_gp=True)
            n_configs += 1

    # a second independent draw over the dense grid
    for n_in, n_out, batch in DENSE_CONFIGS:
        layer = nn.Dense(n_in, n_out, dtype=np.float64)
        layer.W[...] = rng.normal(size=layer.W.shape)
        layer.b[...] = rng.normal(size=layer.b.shape)
        check_layer_grads(layer, rng.normal(size=(batch, n_in)))
        n_configs += 1

    # both losses
    for trial in range(10):
        logits = rng.normal(size=(4, 3))
        targets = rng.integers(0, 3, size=4)
        _, grad = nn.categorical_cross_entropy(logits, targets)
        fd = fd_grad(lambda: nn.categorical_cross_entropy(logits, targets)[0], logits)
        assert np.max(np.abs(fd - grad)) < 1e-4
        n_configs += 1
    for trial in range(5):
        _, net, (real, fake) = _safe_case(300 + trial, 2)

        def scalar():
            net.zero_grad()
            loss, _ = nn.wgan_gp_critic_loss(net, real, fake, 10.0,
                                             np.random.default_rng(55))
            return loss
        eps = np.random.default_rng(55).uniform(size=(3, 1, 1))
        from test_nn import _min_preactivation
        if _min_preactivation(net, eps * real + (1 - eps) * fake) <= 2e-2:
            continue
        scalar()
        analytic = [g.copy() for g in net.grads()]
        for p_, g in zip(net.params(), analytic):
            fd = fd_grad(scalar, p_)
            assert np.max(np.abs(fd - g)) / max(np.max(np.abs(fd)), 1e-6) < 1e-4
        n_configs += 1

    # composed 3-layer network
    for trial in range(10):
        rng2, net, (x,) = _safe_case(400 + trial, 1)
        w1 = rng2.normal(size=(3, 1))

        def scalar():
            return float(np.sum(w1 * net.forward(x)))
        net.zero_grad()
        net.forward(x)
        net.backward(w1.copy())
        for p_, g in zip(net.params(), net.grads()):
            fd = fd_grad(scalar, p_)
            assert np.max(np.abs(fd - g)) / max(np.max(np.abs(fd)), 1e-6) < 1e-4
        n_configs += 1

    elapsed = time.time() - t0
    report(1, n_configs >= 100 and elapsed <= 120,
           f"{n_configs} configs in {elapsed:.1f}s")


def test_criterion_2_conv_adjointness():
    t0 = time.time()
    rng = np.random.default_rng(42)
    trials = 0
    while trials < 1000:
        cin, cout = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        k = int(rng.integers(1, 9))
        stride = int(rng.integers(1, 5))
        pad = int(rng.integers(0, k))
        length = int(rng.integers(k + 1, k + 20))
        out = nn.conv_out_len(length, k, stride, pad)
        if out < 1:
            continue
        w = rng.normal(size=(cout, cin, k))
        x = rng.normal(size=(2, cin, length))
        y = rng.normal(size=(2, cout, out))
        lhs = np.sum(nn.conv1d_core(x, w, stride, pad) * y)
        rhs = np.sum(x * nn.conv1d_input_grad(y, w, stride, pad, length))
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))
        trials += 1
    elapsed = time.time() - t0
    report(2, elapsed <= 60, f"1000 trials in {elapsed:.1f}s")


def test_criterion_3_chi_square_oracle():
    assert probe.chi_square_from_table([[10, 0], [0, 10]]) == 20.0
    assert probe.chi_square_from_table([[3, 6], [5, 10]]) == 0.0
    rng = np.random.default_rng(1)
    from nasalgan.ciwgan import LatentCode
    checked = 0
    while checked < 1000:
        n, n_z = int(rng.integers(4, 24)), int(rng.integers(1, 6))
        z = rng.uniform(-1, 1, size=(n, n_z))
        y = rng.integers(0, 2, size=n).astype(bool)
        if y.all() or not y.any():
            continue
        codes = [LatentCode(np.array([1.0, 0.0]), row) for row in z]
        labels = [TokenLabel.from_flags(v, v) for v in y]
        rep = probe.chi_square_scores(probe.LabeledBatch(codes, labels), "nasal_vowel")
        for j in range(n_z):
            pos = z[:, j] > 0
            table = np.array([[np.sum(pos & y), np.sum(pos & ~y)],
                              [np.sum(~pos & y), np.sum(~pos & ~y)]])
            expect = scipy.stats.chi2_contingency(table, correction=False)[0] \
                if np.all(table.sum(axis=0) > 0) and np.all(table.sum(axis=1) > 0) \
                else probe.chi_square_from_table(table)
            assert abs(rep.scores[j] - expect) < 1e-10 * max(1.0, expect)
        checked += 1
    report(3, True, "1000 batches vs brute force")


def test_criterion_4_extraction_fixtures():
    from test_corpus import DATA, GOLDEN_EN, GOLDEN_FR, _summarize
    en = corpus.extract_corpus_dir(DATA / "mini_en", corpus.load_preset("english"))
    fr = corpus.extract_corpus_dir(DATA / "mini_fr", corpus.load_preset("french"))
    ok = (_summarize(en) == GOLDEN_EN and _summarize(fr) == GOLDEN_FR
          and any(t.syllable_class == "VN" and t.vowel == "ae" for t in en)
          and any(t.syllable_class == "V~N" and t.vowel == "o~" for t in fr)
          and all(not corpus.is_sa_utterance(t.source_utterance) for t in en + fr))
    report(4, ok, "golden manifests incl. nasal-vowel liaison and sa-exclusion")


def test_criterion_5_balancing():
    def pool(counts, vowel="o"):
        return corpus.DatasetManifest(
            [corpus.ManifestEntry(f"{c}_{i}.wav", c, "u", "monosyllabic", vowel)
             for c, n in counts.items() for i in range(n)])

    english = corpus.balance_dataset(pool({"VT": 6000, "VN": 3159}),
                                     {"VT": 5570, "VN": 5570}, seed=0)
    targets_fr = {"VT": 1031, "VN": 1031, "V~T": 1031, "V~N": 1031}
    french = corpus.balance_dataset(
        pool({"VT": 2577, "VN": 1031, "V~T": 1300, "V~N": 47}),
        targets_fr, vowel_filter={"o"}, seed=0)
    ok = (english.counts == {"VT": 5570, "VN": 5570} and french.counts == targets_fr)
    report(5, ok, f"en {english.counts}, fr {french.counts}")


# ---------------------------------------------------------------------------
# 6. detector quality
# ---------------------------------------------------------------------------

def _detector_dataset(per_class_train=400, per_class_held=100, seed_base=50_000):
    cfg = detector.DetectorConfig()
    train, held, held_tokens = [], [], []
    for ci, cls in enumerate(audio.CLASS_NAMES):
        for i in range(per_class_train + per_class_held):
            clip, spans = audio.make_synthetic_token(cls, seed=seed_base + 1000 * ci + i)
            frames = detector.frames_from_token(clip, spans, cfg)
            if i < per_class_train:
                train += frames
            else:
                held += frames
                held_tokens.append((cls, clip))
    return train, held, held_tokens


def test_criterion_6_detector_quality():
    t0 = time.time()
    train, held, held_tokens = _detector_dataset()
    results = {}
    for mode in ("four_way", "dual_binary"):
        cfg = detector.DetectorConfig(mode=mode, seed=0)
        model, accs = detector.train_detector(mode, train, cfg, held)
        frame_acc = min(accs.values())
        labels = detector.label_tokens(model, [c for _, c in held_tokens])
        token_acc = float(np.mean([lab.syllable_class == cls
                                   for (cls, _), lab in zip(held_tokens, labels)]))
        results[mode] = (frame_acc, token_acc)
    elapsed = time.time() - t0
    ok = all(f >= 0.95 and t >= 0.90 for f, t in results.values()) and elapsed <= 900
    report(6, ok, ", ".join(f"{m} frame {f:.3f} token {t:.3f}"
                            for m, (f, t) in results.items()) + f", {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 7. GAN smoke training
# ---------------------------------------------------------------------------

def test_criterion_7_gan_smoke_training(small_detector):
    t0 = time.time()
    clips, classes = [], []
    for ci, cls in enumerate(("VT", "VN")):
        for i in range(500):
            clip, _ = audio.make_synthetic_token(cls, seed=90_000 + 1000 * ci + i)
            clips.append(clip)
            classes.append(cls)
    det_model, _ = small_detector

    passes = 0
    details = []
    for seed in (0, 1, 2):
        cfg = ciwgan.CiwganConfig(n_phi=2, n_z=98, seed=seed)
        model, _ = ciwgan.train(cfg, clips, steps=3000)
        q_acc = ciwgan.q_accuracy(model, 512, seed=1)
        pairs = ciwgan.generate_batch(model.generator, 200, cfg, seed=7)
        labels = detector.label_tokens(det_model, [c for _, c in pairs])
        counts = Counter(l.syllable_class for l in labels)
        trained_frac = (counts["VT"] + counts["VN"]) / len(labels)
        seed_ok = q_acc >= 0.80 and trained_frac >= 0.60
        passes += seed_ok
        details.append(f"seed {seed}: q {q_acc:.2f}, trained-class {trained_frac:.2f}"
                       f" -> {'ok' if seed_ok else 'fail'}")
        print(details[-1], flush=True)
    elapsed = time.time() - t0
    report(7, passes >= 2 and elapsed <= 7200,
           "; ".join(details) + f"; {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 8. planted-oracle probe
# ---------------------------------------------------------------------------

PLANTED_J = 13


def _planted_generate(code):
    """Nasality (vowel and coda together) is sign(z[j]) by construction; the
    remaining latents pick the jitter seed."""
    cls = "V~N" if code.z[PLANTED_J] > 0 else "VT"
    seed = int(abs(hash(tuple(np.round(np.delete(code.z, PLANTED_J), 6)))) % 2 ** 31)
    clip, _ = audio.make_synthetic_token(cls, seed=seed)
    return clip


def test_criterion_8_planted_oracle_probe(small_detector):
    t0 = time.time()
    det_model, _ = small_detector
    label_fn = lambda clip: detector.label_token(det_model, clip)

    rng = np.random.default_rng(0)
    n_z = 20
    pairs = []
    for _ in range(200):
        code = ciwgan.sample_latent(2, n_z, rng)
        pairs.append((code, _planted_generate(code)))
    batch = probe.label_generated_batch(pairs, label_fn)
    ranks_first = all(
        probe.chi_square_scores(batch, feat).ranking[0] == PLANTED_J
        for feat in ("nasal_vowel", "nasal_consonant"))

    sweep = probe.manipulate_single(_planted_generate, label_fn, PLANTED_J,
                                    n_phi=2, n_z=n_z, n_base=20, seed=3)
    neg = [p for lv, p in zip(sweep.levels, sweep.prop_nasal_vowel) if lv < 0]
    pos = [p for lv, p in zip(sweep.levels, sweep.prop_nasal_vowel) if lv > 0]
    sweep_ok = max(neg) <= 0.1 and min(pos) >= 0.9

    grid = probe.manipulate_pair(_planted_generate, label_fn, 2, PLANTED_J,
                                 n_phi=2, n_z=n_z, n_base=3, seed=3)
    half_plane_ok = True
    for yi, vy in enumerate(grid.levels):
        if vy == 0:
            continue
        expect = 1.0 if vy > 0 else 0.0
        if not np.all(grid.prop_nasal_vowel[:, yi] == expect):
            half_plane_ok = False
    elapsed = time.time() - t0
    report(8, ranks_first and sweep_ok and half_plane_ok and elapsed <= 300,
           f"rank {ranks_first}, sweep {sweep_ok}, half-plane {half_plane_ok}, "
           f"{elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 9. probe geometry
# ---------------------------------------------------------------------------

def test_criterion_9_probe_geometry():
    calls = [0]

    def gen(code):
        calls[0] += 1
        s = np.full(16, 1e-3)
        s[0] = 0.9 if code.z[1] > 0 else -0.9
        return AudioClip(s, 8000)

    def lab(clip):
        nasal = clip.samples[0] > 0
        return TokenLabel.from_flags(nasal, nasal)

    sweep = probe.manipulate_single(gen, lab, 0, n_phi=2, n_z=4, seed=0)
    single_calls = calls[0]
    calls[0] = 0
    grid = probe.manipulate_pair(gen, lab, 0, 1, n_phi=2, n_z=4, seed=0)
    pair_calls = calls[0]

    a = probe.manipulate_pair(gen, lab, 2, 3, n_phi=2, n_z=4, n_base=5, seed=2)
    b = probe.manipulate_pair(gen, lab, 3, 2, n_phi=2, n_z=4, n_base=5, seed=2)
    transpose_ok = (np.array_equal(a.prop_nasal_vowel, b.prop_nasal_vowel.T)
                    and np.array_equal(a.prop_nasal_consonant,
                                       b.prop_nasal_consonant.T))

    ok = (sweep.levels == tuple(range(-5, 6)) and single_calls == 11 * 100
          and grid.n_cells == 121 and pair_calls == 12100 and transpose_ok)
    report(9, ok, f"sweep {single_calls} clips, grid {pair_calls} clips, "
                  f"transpose bit-exact {transpose_ok}")


# ---------------------------------------------------------------------------
# 10. determinism
# ---------------------------------------------------------------------------

def test_criterion_10_determinism(tmp_path):
    from test_cli import dir_digest

    def run(*argv):
        assert cli.main([str(a) for a in argv]) == 0

    skip = (".nasalgan.lock", "config.lock")
    digests = {}

    run("synth", "--out", tmp_path / "s1", "--seed", 2, "--count", 12)
    run("synth", "--config", tmp_path / "s1" / "config.lock", "--out", tmp_path / "s2")
    digests["synth"] = (dir_digest(tmp_path / "s1", skip),
                        dir_digest(tmp_path / "s2", skip))

    data = Path(corpus.__file__).parent / "data" / "mini_en"
    for out in ("e1", "e2"):
        run("extract", "--out", tmp_path / out, "--corpus", data, "--preset", "english")
    digests["extract"] = (dir_digest(tmp_path / "e1", skip),
                          dir_digest(tmp_path / "e2", skip))

    for out in ("d1", "d2"):
        run("train-detector", "--out", tmp_path / out, "--corpus", tmp_path / "s1",
            "--epochs", 1, "--seed", 3)
    digests["train-detector"] = (dir_digest(tmp_path / "d1", skip),
                                 dir_digest(tmp_path / "d2", skip))

    # full training run at the reduced step count named by the criterion
    run("train-gan", "--out", tmp_path / "g1", "--data", tmp_path / "s1",
        "--steps", 100, "--seed", 4)
    run("train-gan", "--config", tmp_path / "g1" / "config.lock",
        "--out", tmp_path / "g2")
    digests["train-gan"] = (dir_digest(tmp_path / "g1", skip),
                            dir_digest(tmp_path / "g2", skip))

    for out in ("o1", "o2"):
        run("generate", "--out", tmp_path / out, "--model", tmp_path / "g1",
            "-n", 4, "--seed", 5)
    digests["generate"] = (dir_digest(tmp_path / "o1", skip),
                           dir_digest(tmp_path / "o2", skip))

    for out in ("p1", "p2"):
        run("probe", "--out", tmp_path / out, "--model", tmp_path / "g1",
            "--detector", tmp_path / "d1", "--batch-n", 16, "--n-base", 2,
            "--single", 0, "--pair", "1,2", "--seed", 6)
    digests["probe"] = (dir_digest(tmp_path / "p1", skip),
                        dir_digest(tmp_path / "p2", skip))

    bad = [cmd for cmd, (a, b) in digests.items() if a != b]
    report(10, not bad, "byte-identical: " + ", ".join(digests)
           + (f"; mismatch in {bad}" if bad else ""))
