"""A miniature two-class GAN run, end to end: synthesize a tiny VT/VN
corpus, train for a handful of generator steps, and watch the Q-network's
ability to recover the categorical code from generated audio.

This is a smoke run -- expect noise, not speech.  Reaching Q-accuracy near
1.0 takes a few thousand generator steps (about 20 minutes single-threaded);
bump STEPS for that."""

from nasalgan import audio, ciwgan

STEPS = 40

clips = []
for ci, cls in enumerate(("VT", "VN")):
    clips += [audio.make_synthetic_token(cls, seed=1000 * ci + i)[0]
              for i in range(64)]

config = ciwgan.CiwganConfig(n_phi=2, n_z=98, seed=0)
print(f"training {STEPS} generator steps on {len(clips)} clips "
      f"({config.critic_steps} critic updates per step)")
model, report = ciwgan.train(config, clips, steps=STEPS, out_dir="/tmp/demo_gan",
                             progress=10)

print(f"\nQ recovers phi on fresh samples with accuracy "
      f"{ciwgan.q_accuracy(model, 256, seed=1):.2f} "
      f"(chance is {1 / config.n_phi:.2f})")
print("checkpoints and train_report.csv in /tmp/demo_gan")
