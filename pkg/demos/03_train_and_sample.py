"""Train a small conditional denoiser on phantoms, then sample from it.

The defaults are kept short so the script finishes in about a minute on one
core; pass a step count to train longer, e.g. ``python3 demos/03_train_and_sample.py 2000``.
At 2000 steps the noise-prediction loss drops roughly tenfold.

Sampling conditions on two things: a text label, turned into a toy
embedding, and the wavelet planes of a reference image. Changing only the
label, with the same seed and reference, changes the output.
"""

import sys

import numpy as np

from awdiff.conditioning import toy_text_embed
from awdiff.diffusion import SamplerConfig, sample
from awdiff.phantom import phantom_suite
from awdiff.training import Dataset, TrainingConfig, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 200

data = Dataset.from_labelled(phantom_suite(64, seed=0))
cfg = TrainingConfig(steps=steps)
print(f"training {steps} steps on {len(data)} phantoms ({cfg.channels} channels, {cfg.scales} scales)")
state = train(data, cfg)

curve = np.array(state.curve)
window = min(100, len(curve) // 2)
print(f"mean MSE, first {window} steps: {curve[:window, 2].mean():.4f}")
print(f"mean MSE, last  {window} steps: {curve[-window:, 2].mean():.4f}")
print(f"mean alignment loss: {curve[:, 3].mean():.4f}")

reference = data.pyramids[0]
sampler = SamplerConfig(seed=7)
# early on the EMA copy still sits close to the initial weights
params = state.ema if steps >= 1000 else state.params
a = sample(params, cfg.schedule(), toy_text_embed("0 B-lines"), reference, sampler)
b = sample(params, cfg.schedule(), toy_text_embed("4 B-lines"), reference, sampler)
print(f"sample range [{a.min():.2f}, {a.max():.2f}]")
print(f"RMS difference between the two labels: {np.sqrt(np.mean((a - b) ** 2)):.4f}")
