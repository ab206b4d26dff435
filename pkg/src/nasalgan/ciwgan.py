"""The three-network categorical waveform GAN: Generator, Wasserstein critic,
and the auxiliary classifier that recovers the categorical code.

The Generator maps a latent code (one-hot ``phi`` plus continuous ``z``,
trained on z ~ uniform(-1, 1)) to a fixed-length waveform through a dense
projection and five stride-4 transposed convolutions.  The critic mirrors it
with stride-4 convolutions and phase shuffling; the Q-network shares the
critic topology (without phase shuffle) and ends in an ``n_phi``-way head.
Its cross-entropy loss updates both the Q-network and the Generator, which
pushes generated audio into categorically distinguishable classes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import nn
from .audio import AudioClip

DTYPE = np.float32


class TrainingError(Exception):
    pass


@dataclass
class LatentCode:
    """One-hot categorical part plus continuous part."""

    phi: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)
        self.z = np.asarray(self.z, dtype=np.float64)
        if not (np.sum(self.phi == 1.0) == 1 and np.sum(self.phi == 0.0) == len(self.phi) - 1):
            raise ValueError("phi must be one-hot")

    @property
    def phi_class(self):
        return int(np.argmax(self.phi))

    def vector(self):
        return np.concatenate([self.phi, self.z])

    def with_z(self, index, value):
        """Copy with one z component replaced (latent manipulation)."""
        z = self.z.copy()
        z[index] = value
        return LatentCode(self.phi.copy(), z)


@dataclass
class CiwganConfig:
    n_phi: int = 3
    n_z: int = 97
    audio_len: int = 4096
    sample_rate: int = 8000
    model_dim: int = 8
    kernel_width: int = 24
    stride: int = 4
    phase_shuffle_radius: int = 2
    batch_size: int = 16
    critic_steps: int = 5
    lambda_gp: float = 10.0
    alpha: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    seed: int = 0
    epochs: int = 0  # recorded training request, for the config sidecar

    @property
    def n_latent(self):
        return self.n_phi + self.n_z

    @property
    def n_upsample(self):
        # audio_len = start_len * stride^k with start_len = 4
        n, k = self.audio_len, 0
        while n > 4:
            if n % self.stride:
                raise ValueError(f"audio_len {self.audio_len} is not 4 * {self.stride}^k")
            n //= self.stride
            k += 1
        return k

    @property
    def conv_padding(self):
        if (self.kernel_width - self.stride) % 2:
            raise ValueError("kernel_width - stride must be even")
        return (self.kernel_width - self.stride) // 2

    def to_text(self):
        return "".join(f"{k}={v}\n" for k, v in sorted(asdict(self).items()))

    @classmethod
    def from_text(cls, text):
        kwargs = {}
        fields = {f: t for f, t in cls.__annotations__.items()}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, v = line.split("=", 1)
            if k not in fields:
                raise ValueError(f"unknown config key {k!r}")
            kwargs[k] = float(v) if fields[k] in (float, "float") else int(v)
        return cls(**kwargs)


def _channels(config):
    """Critic channel widths, narrow to wide: [d, 2d, 4d, ...]."""
    return [config.model_dim * 2 ** i for i in range(config.n_upsample)]


def build_generator(config: CiwganConfig, rng):
    chans = _channels(config)[::-1]  # wide to narrow
    layers = [
        nn.Dense(config.n_latent, chans[0] * 4, rng=rng, dtype=DTYPE),
        nn.Reshape((chans[0], 4)),
        nn.LeakyReLU(0.2),
    ]
    widths = chans + [1]
    for cin, cout in zip(widths[:-1], widths[1:]):
        layers.append(nn.Conv1dTranspose(cin, cout, config.kernel_width,
                                         stride=config.stride, padding=config.conv_padding,
                                         rng=rng, dtype=DTYPE))
        layers.append(nn.LeakyReLU(0.2) if cout != 1 else nn.Tanh())
    return nn.Sequential(layers)


def build_critic(config: CiwganConfig, rng, head=1, shuffle_rng=None):
    """Stride-4 conv stack; ``shuffle_rng`` enables phase shuffling (critic
    only -- the Q-network omits it)."""
    chans = _channels(config)
    widths = [1] + chans
    layers = []
    length = config.audio_len
    last = len(widths) - 2
    for i, (cin, cout) in enumerate(zip(widths[:-1], widths[1:])):
        layers.append(nn.Conv1d(cin, cout, config.kernel_width,
                                stride=config.stride, padding=config.conv_padding,
                                rng=rng, dtype=DTYPE))
        layers.append(nn.LeakyReLU(0.2))
        length //= config.stride
        if shuffle_rng is not None and config.phase_shuffle_radius > 0 and i < last:
            layers.append(nn.PhaseShuffle(config.phase_shuffle_radius, rng=shuffle_rng))
    layers.append(nn.Reshape((widths[-1] * length,)))
    layers.append(nn.Dense(widths[-1] * length, head, rng=rng, dtype=DTYPE))
    return nn.Sequential(layers)


# ---------------------------------------------------------------------------
# latent sampling and generation
# ---------------------------------------------------------------------------

def sample_latent(n_phi, n_z, rng) -> LatentCode:
    """phi uniform over the one-hot codes; z i.i.d. uniform(-1, 1)."""
    if n_phi < 1 or n_z < 1:
        raise ValueError("latent sizes must be positive")
    phi = np.zeros(n_phi)
    phi[rng.integers(n_phi)] = 1.0
    return LatentCode(phi, rng.uniform(-1.0, 1.0, size=n_z))


def generate(generator: nn.Sequential, code: LatentCode, config: CiwganConfig) -> AudioClip:
    """Deterministic audio for one latent code; samples in [-1, 1]."""
    vec = code.vector()
    if len(vec) != config.n_latent:
        raise ValueError(f"latent size {len(vec)} != configured {config.n_latent}")
    out = generator.forward(vec[None, :].astype(DTYPE))
    return AudioClip(out[0, 0].astype(np.float64), config.sample_rate)


def generate_batch(generator, n, config, seed):
    """n (code, clip) pairs from a fresh seeded latent stream."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    codes = [sample_latent(config.n_phi, config.n_z, rng) for _ in range(n)]
    clips = generate_many(generator, codes, config)
    return list(zip(codes, clips))


def generate_many(generator, codes, config, batch=64):
    """Vectorized generation for a list of codes (order-preserving)."""
    clips = []
    for i in range(0, len(codes), batch):
        block = np.stack([c.vector() for c in codes[i:i + batch]]).astype(DTYPE)
        out = generator.forward(block)
        clips.extend(AudioClip(row[0].astype(np.float64), config.sample_rate) for row in out)
    return clips


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainReport:
    rows: list = field(default_factory=list)

    def add(self, step, critic_loss, gen_loss, q_loss, gp, wall):
        for name, v in [("critic", critic_loss), ("gen", gen_loss), ("q", q_loss), ("gp", gp)]:
            if not np.isfinite(v):
                raise TrainingError(f"non-finite {name} loss at step {step}: {v}")
        self.rows.append({"step": step, "critic_loss": critic_loss, "gen_loss": gen_loss,
                          "q_loss": q_loss, "gp": gp, "wall": wall})

    def to_csv(self, path, append=False):
        new = not (append and Path(path).exists())
        with open(path, "a" if append else "w") as fh:
            if new:
                fh.write("step,critic_loss,gen_loss,q_loss,gp\n")
            for r in self.rows:
                fh.write(f"{r['step']},{r['critic_loss']:.6g},{r['gen_loss']:.6g},"
                         f"{r['q_loss']:.6g},{r['gp']:.6g}\n")


@dataclass
class CiwganModel:
    config: CiwganConfig
    generator: nn.Sequential
    critic: nn.Sequential
    q_network: nn.Sequential

    def save(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        nn.save_checkpoint(self.generator, out_dir / "generator.ckpt")
        nn.save_checkpoint(self.critic, out_dir / "critic.ckpt")
        nn.save_checkpoint(self.q_network, out_dir / "q_network.ckpt")
        (out_dir / "config.txt").write_text(self.config.to_text())

    @classmethod
    def load(cls, out_dir):
        out_dir = Path(out_dir)
        config = CiwganConfig.from_text((out_dir / "config.txt").read_text())
        return cls(config,
                   nn.load_checkpoint(out_dir / "generator.ckpt"),
                   nn.load_checkpoint(out_dir / "critic.ckpt"),
                   nn.load_checkpoint(out_dir / "q_network.ckpt"))


def init_model(config: CiwganConfig) -> CiwganModel:
    """Seeded initialization of all three networks."""
    seqs = np.random.SeedSequence(config.seed).spawn(4)
    gen_rng, critic_rng, q_rng, shuffle_rng = [np.random.default_rng(s) for s in seqs]
    return CiwganModel(
        config,
        build_generator(config, gen_rng),
        build_critic(config, critic_rng, head=1, shuffle_rng=shuffle_rng),
        build_critic(config, q_rng, head=config.n_phi, shuffle_rng=None),
    )


def _sample_latent_batch(config, rng):
    phi_idx = rng.integers(config.n_phi, size=config.batch_size)
    phi = np.zeros((config.batch_size, config.n_phi))
    phi[np.arange(config.batch_size), phi_idx] = 1.0
    z = rng.uniform(-1.0, 1.0, size=(config.batch_size, config.n_z))
    return np.concatenate([phi, z], axis=1).astype(DTYPE), phi_idx


def train(config: CiwganConfig, clips, epochs=None, steps=None, out_dir=None,
          checkpoint_interval=200, model=None, progress=None):
    """Adversarial training: ``critic_steps`` critic updates per joint
    generator + Q update.

    ``steps`` counts generator updates; ``epochs`` counts full shuffled
    passes of the real data through the critic.  Deterministic given
    (config, clip order).  Returns (model, report).
    """
    if not clips:
        raise TrainingError("empty training dataset")
    data = np.stack([c.samples for c in clips])[:, None, :].astype(DTYPE)
    if data.shape[2] != config.audio_len:
        raise TrainingError(f"clips of length {data.shape[2]} != audio_len {config.audio_len}")
    n = data.shape[0]
    batches_per_epoch = max(1, n // config.batch_size)
    if steps is None:
        if epochs is None:
            raise TrainingError("need epochs or steps")
        steps = (epochs * batches_per_epoch) // config.critic_steps

    if model is None:
        model = init_model(config)
    train_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(5)[4])
    opt_g = nn.AdamState(model.generator.params(), config.alpha, config.beta1, config.beta2)
    opt_c = nn.AdamState(model.critic.params(), config.alpha, config.beta1, config.beta2)
    opt_q = nn.AdamState(model.q_network.params(), config.alpha, config.beta1, config.beta2)

    report = TrainReport()
    order = train_rng.permutation(n)
    cursor = 0
    t0 = time.time()

    def next_real():
        nonlocal cursor, order
        if cursor + config.batch_size > n:
            order = train_rng.permutation(n)
            cursor = 0
        batch = data[order[cursor:cursor + config.batch_size]]
        cursor += config.batch_size
        return batch

    ones = np.ones((config.batch_size, 1), dtype=DTYPE)
    for step in range(1, steps + 1):
        closs = gp = 0.0
        for _ in range(config.critic_steps):
            real = next_real()
            latents, _ = _sample_latent_batch(config, train_rng)
            fake = model.generator.forward(latents)
            model.critic.zero_grad()
            closs, gp = nn.wgan_gp_critic_loss(model.critic, real, fake,
                                               config.lambda_gp, train_rng)
            nn.adam_step(model.critic.params(), model.critic.grads(), opt_c)

        latents, phi_idx = _sample_latent_batch(config, train_rng)
        fake = model.generator.forward(latents)
        c_out = model.critic.forward(fake)
        gen_loss = -float(c_out.mean())
        dx_adv = model.critic.input_gradient(-ones / config.batch_size)

        logits = model.q_network.forward(fake)
        q_loss, dlogits = nn.categorical_cross_entropy(logits, phi_idx)
        model.q_network.zero_grad()
        dx_q = model.q_network.backward(dlogits.astype(DTYPE))
        nn.adam_step(model.q_network.params(), model.q_network.grads(), opt_q)

        model.generator.zero_grad()
        model.generator.backward(dx_adv + dx_q)
        nn.adam_step(model.generator.params(), model.generator.grads(), opt_g)

        report.add(step, closs, gen_loss, float(q_loss), gp, time.time() - t0)
        if progress and (step % progress == 0 or step == steps):
            print(f"step {step}/{steps} critic {closs:.3f} gen {gen_loss:.3f} "
                  f"q {q_loss:.3f} gp {gp:.3f} [{time.time() - t0:.0f}s]", flush=True)
        if out_dir and (step % checkpoint_interval == 0 or step == steps):
            model.save(out_dir)
            report.to_csv(Path(out_dir) / "train_report.csv")
    if out_dir and steps == 0:
        model.save(out_dir)
        report.to_csv(Path(out_dir) / "train_report.csv")
    return model, report


def q_accuracy(model: CiwganModel, n=256, seed=0):
    """How often the Q-network recovers phi from the generator's own output."""
    rng = np.random.default_rng(seed)
    codes = [sample_latent(model.config.n_phi, model.config.n_z, rng) for _ in range(n)]
    hits = 0
    for i in range(0, n, 64):
        block = np.stack([c.vector() for c in codes[i:i + 64]]).astype(DTYPE)
        fake = model.generator.forward(block)
        pred = model.q_network.forward(fake).argmax(axis=1)
        hits += int(np.sum(pred == [c.phi_class for c in codes[i:i + 64]]))
    return hits / n
