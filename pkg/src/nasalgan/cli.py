"""Command-line pipeline: synthetic corpus, extraction, training, generation,
and latent probing.

Every command takes ``--out``; the effective parameters are captured in
``<out>/config.lock`` (plain key=value) and a rerun with ``--config
<lock>`` reproduces the artifacts byte for byte.  Exit codes: 0 success,
1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import ciwgan, corpus, detector, nn, probe
from .audio import AudioError, load_wav, save_wav
from .ciwgan import CiwganConfig, CiwganModel
from .corpus import CorpusError, DatasetManifest
from .detector import DetectorConfig, DetectorError, DetectorModel
from .probe import ProbeError

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_counts(text):
    """'VT=100,VN=50' -> dict."""
    out = {}
    for part in text.split(","):
        if not part:
            continue
        cls, _, num = part.partition("=")
        if cls not in corpus.CLASS_NAMES:
            raise UsageError(f"unknown class {cls!r} in counts")
        out[cls] = int(num)
    return out


def write_lock(out_dir, command, args, skip=("config", "func")):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"command={command}"]
    for k in sorted(vars(args)):
        if k in skip or k == "command":
            continue
        v = getattr(args, k)
        if v is not None:
            lines.append(f"{k}={v}")
    (out_dir / "config.lock").write_text("\n".join(lines) + "\n")


class RunLock:
    """One writer per output directory."""

    def __init__(self, out_dir):
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        self.path = Path(out_dir) / ".nasalgan.lock"

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise CorpusError(f"{self.path}: another run holds this directory "
                              "(remove the lock file if that run is dead)")
        os.write(self.fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        os.close(self.fd)
        self.path.unlink(missing_ok=True)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args):
    counts = {cls: args.count for cls in corpus.CLASS_NAMES}
    if args.counts:
        counts = parse_counts(args.counts)
    with RunLock(args.out):
        write_lock(args.out, "synth", args)
        manifest = corpus.synthesize_corpus(counts, args.out, seed=args.seed,
                                            sample_rate=args.sample_rate,
                                            token_len=args.token_len)
    print(f"wrote {len(manifest.entries)} tokens to {args.out}: {manifest.counts}")


def cmd_extract(args):
    classes = corpus.load_preset(args.preset)
    skips = []
    tokens = corpus.extract_corpus_dir(args.corpus, classes,
                                       fixed_len=args.token_len, skip_report=skips)
    with RunLock(args.out):
        write_lock(args.out, "extract", args)
        manifest = corpus.write_tokens(tokens, args.out)
        if skips:
            with open(Path(args.out) / "skips.csv", "w") as fh:
                fh.write("utterance,word_index,class,span_len\n")
                for row in skips:
                    fh.write(",".join(str(x) for x in row) + "\n")
    print(f"extracted {len(tokens)} tokens ({len(skips)} skipped): {manifest.counts}")


def _load_frames(corpus_dir, config, holdout):
    """(train_frames, held_frames, held_tokens) from a synthesized corpus."""
    corpus_dir = Path(corpus_dir)
    spans_file = corpus_dir / "spans.csv"
    if not spans_file.exists():
        raise DetectorError(f"{spans_file}: missing ground-truth spans "
                            "(is this a 'synth' output directory?)")
    spans = corpus.load_spans_csv(spans_file)
    manifest = DatasetManifest.from_csv(corpus_dir / "manifest.csv")
    per_class = {}
    for e in manifest.entries:
        per_class.setdefault(e.syllable_class, []).append(e)
    train_frames, held_frames, held_tokens = [], [], []
    for cls in sorted(per_class):
        entries = per_class[cls]
        n_held = min(holdout, max(0, len(entries) - 1))
        for i, e in enumerate(entries):
            clip = load_wav(corpus_dir / e.file)
            frames = detector.frames_from_token(clip, spans[e.file], config)
            if i < len(entries) - n_held:
                train_frames += frames
            else:
                held_frames += frames
                held_tokens.append((cls, clip))
    return train_frames, held_frames, held_tokens


def cmd_train_detector(args):
    config = DetectorConfig(mode=args.mode, epochs=args.epochs, seed=args.seed,
                            sample_rate=args.sample_rate)
    train_frames, held_frames, held_tokens = _load_frames(args.corpus, config, args.holdout)
    with RunLock(args.out):
        write_lock(args.out, "train-detector", args)
        model, accs = detector.train_detector(args.mode, train_frames, config,
                                              held_frames or None, progress=True)
        model.save(args.out)
        lines = [f"frame_accuracy_{k}={v:.4f}" for k, v in accs.items()]
        if held_tokens:
            labels = detector.label_tokens(model, [c for _, c in held_tokens])
            tok_acc = float(np.mean([l.syllable_class == t
                                     for (t, _), l in zip(held_tokens, labels)]))
            lines.append(f"token_accuracy={tok_acc:.4f}")
            classes, mat = detector.confusion_matrix([t for t, _ in held_tokens], labels)
            lines.append("confusion_rows_true_cols_pred=" + ";".join(
                ",".join(str(x) for x in row) for row in mat))
        (Path(args.out) / "accuracy.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines) if held_tokens else f"trained, accuracies {accs}")


def _load_training_clips(args):
    data_dir = Path(args.data)
    manifest = DatasetManifest.from_csv(data_dir / "manifest.csv")
    if args.balance:
        manifest = corpus.balance_dataset(
            manifest, parse_counts(args.balance),
            vowel_filter=set(args.vowel_filter.split(",")) if args.vowel_filter else None,
            seed=args.seed)
    clips, classes = corpus.load_manifest_audio(manifest, data_dir)
    return clips, classes, manifest


def cmd_train_gan(args):
    clips, _, _ = _load_training_clips(args)
    config = CiwganConfig(n_phi=args.n_phi, n_z=args.n_z, seed=args.seed,
                          batch_size=args.batch_size, epochs=args.epochs or 0)
    with RunLock(args.out):
        write_lock(args.out, "train-gan", args)
        model = None
        if args.resume and (Path(args.out) / "generator.ckpt").exists():
            model = CiwganModel.load(args.out)
            config = model.config
        model, report = ciwgan.train(
            config, clips, epochs=args.epochs, steps=args.steps, out_dir=args.out,
            checkpoint_interval=args.checkpoint_interval, model=model,
            progress=args.progress)
    print(f"trained; checkpoints in {args.out}; "
          f"q accuracy {ciwgan.q_accuracy(model, 256, seed=config.seed):.3f}")


def _load_gan(model_dir):
    model_dir = Path(model_dir)
    if not (model_dir / "generator.ckpt").exists():
        raise CorpusError(f"missing generator checkpoint {model_dir}/generator.ckpt "
                          "(run train-gan first)")
    return CiwganModel.load(model_dir)


def cmd_generate(args):
    model = _load_gan(args.model)
    with RunLock(args.out):
        write_lock(args.out, "generate", args)
        pairs = ciwgan.generate_batch(model.generator, args.n, model.config, args.seed)
        out = Path(args.out)
        with open(out / "codes.csv", "w") as fh:
            fh.write("clip," + ",".join(f"phi{i}" for i in range(model.config.n_phi))
                     + "," + ",".join(f"z{i}" for i in range(model.config.n_z)) + "\n")
            for i, (code, clip) in enumerate(pairs):
                name = f"gen_{i:05d}.wav"
                save_wav(clip, out / name)
                fh.write(name + "," + ",".join(f"{v:.8g}" for v in code.vector()) + "\n")
    print(f"wrote {args.n} clips and codes.csv to {args.out}")


def cmd_probe(args):
    model = _load_gan(args.model)
    det_dir = Path(args.detector)
    if not (det_dir / "detector_config.txt").exists():
        raise DetectorError(f"missing detector checkpoint in {det_dir} "
                            "(run train-detector first)")
    det = DetectorModel.load(det_dir)
    if det.config.sample_rate != model.config.sample_rate:
        raise CorpusError(
            f"sample-rate mismatch: generator {model.config.sample_rate} Hz vs "
            f"detector {det.config.sample_rate} Hz; refusing to probe")

    generate_fn = lambda code: ciwgan.generate(model.generator, code, model.config)
    label_fn = lambda clip: detector.label_token(det, clip)
    cfg = model.config
    with RunLock(args.out):
        write_lock(args.out, "probe", args)
        out = Path(args.out)
        pairs = ciwgan.generate_batch(model.generator, args.batch_n, cfg, args.seed)
        batch = probe.label_generated_batch(pairs, label_fn,
                                            generator_id=str(args.model),
                                            detector_id=str(args.detector))
        top = {}
        for feature in probe.FEATURES:
            try:
                report = probe.chi_square_scores(batch, feature, top_k=args.top_k)
                report.to_csv(out / f"report_{feature}.csv")
                top[feature] = report.top_variables
                print(f"{feature}: top-{args.top_k} variables {report.top_variables}")
            except ProbeError as exc:
                (out / f"report_{feature}.csv").write_text(f"# unscorable: {exc}\n")
                print(f"{feature}: {exc}")
        table, rate = probe.covariance_check(batch)
        (out / "covariance.txt").write_text(
            f"table_nv_by_nc={table.tolist()}\n"
            f"p_nasal_consonant_given_nasal_vowel="
            f"{'undefined' if rate is None else f'{rate:.4f}'}\n")

        for var in args.single or []:
            sweep = probe.manipulate_single(generate_fn, label_fn, var,
                                           cfg.n_phi, cfg.n_z, n_base=args.n_base,
                                           seed=args.seed, phi_class=args.phi_class)
            sweep.to_csv(out / f"sweep_z{var}.csv")
        for pair_spec in args.pair or []:
            x, y = (int(v) for v in pair_spec.split(","))
            grid = probe.manipulate_pair(generate_fn, label_fn, x, y,
                                         cfg.n_phi, cfg.n_z, n_base=args.n_base,
                                         seed=args.seed, phi_class=args.phi_class)
            for feature in probe.FEATURES:
                probe.export_heatmap(grid, feature, out / f"grid_{x}_{y}_{feature}")
    print(f"probe reports in {args.out}")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    parser = Parser(prog="nasalgan", description=__doc__,
                    formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="key=value file of defaults (e.g. a config.lock)")

    p = sub.add_parser("synth", help="write a synthetic four-class corpus")
    common(p)
    p.add_argument("--count", type=int, default=100, help="tokens per class")
    p.add_argument("--counts", help="per-class override, e.g. VT=100,VN=50")
    p.add_argument("--sample-rate", type=int, default=8000)
    p.add_argument("--token-len", type=int, default=4096)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="extract syllable tokens from an aligned corpus")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--preset", choices=["english", "french"], required=True)
    p.add_argument("--token-len", type=int, default=4096)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train-detector", help="train the nasality frame classifier")
    common(p)
    p.add_argument("--corpus", required=True, help="a synth output directory")
    p.add_argument("--mode", choices=["four_way", "dual_binary"], default="four_way")
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--holdout", type=int, default=0, help="held-out tokens per class")
    p.add_argument("--sample-rate", type=int, default=8000)
    p.set_defaults(func=cmd_train_detector)

    p = sub.add_parser("train-gan", help="train the three-network GAN")
    common(p)
    p.add_argument("--data", required=True, help="directory with manifest.csv + wavs")
    p.add_argument("--steps", type=int, help="generator steps")
    p.add_argument("--epochs", type=int, help="full passes over the data")
    p.add_argument("--n-phi", type=int, default=3)
    p.add_argument("--n-z", type=int, default=97)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--balance", help="resample targets, e.g. VT=5570,VN=5570")
    p.add_argument("--vowel-filter", help="comma-separated vowels kept before balancing")
    p.add_argument("--checkpoint-interval", type=int, default=200)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--progress", type=int, default=100, help="print every N steps")
    p.set_defaults(func=cmd_train_gan)

    p = sub.add_parser("generate", help="generate clips with their latent codes")
    common(p)
    p.add_argument("--model", required=True, help="train-gan output directory")
    p.add_argument("-n", type=int, default=3840)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("probe", help="chi-square ranking and latent manipulation")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--detector", required=True)
    p.add_argument("--batch-n", type=int, default=3840)
    p.add_argument("--top-k", type=int, default=7)
    p.add_argument("--n-base", type=int, default=100)
    p.add_argument("--phi-class", type=int, default=0)
    p.add_argument("--single", type=int, action="append", help="sweep one z variable")
    p.add_argument("--pair", action="append", help="grid over 'X,Y' z variables")
    p.set_defaults(func=cmd_probe)
    return parser


def apply_config_file(parser, argv):
    """Use a key=value file as defaults for the named subcommand."""
    if "--config" not in argv:
        return argv
    path = argv[argv.index("--config") + 1]
    values = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        k, _, v = line.partition("=")
        values[k] = v
    command = values.pop("command", None)
    if command and argv[0] != command:
        raise UsageError(f"config file is for command {command!r}, not {argv[0]!r}")
    sub_actions = [a for a in parser._actions if isinstance(a, argparse._SubParsersAction)]
    sub = sub_actions[0].choices[argv[0]]
    defaults = {}
    for action in sub._actions:
        if action.dest in values:
            raw = values[action.dest]
            if raw == "True":
                defaults[action.dest] = True
            elif raw == "False":
                defaults[action.dest] = False
            else:
                defaults[action.dest] = action.type(raw) if action.type else raw
            action.required = False  # the file satisfies it
    sub.set_defaults(**defaults)
    return argv


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        if argv and not argv[0].startswith("-"):
            apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusError, AudioError, DetectorError, ProbeError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (nn.NumericalError, ciwgan.TrainingError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
