"""Walkthrough: turn synthetic spoken-digit spectrograms into MNIST images.

Needs the autoencoder written by ``02_mnist_autoencoder.py``::

    python3 notebooks/03_audio_to_image.py [MNIST_DIR] [EPOCHS]

A 3900-512-196 audiocoder learns to reproduce the autoencoder's stored hidden
spike maps from audio; stacking it on the frozen decoder yields images.
Defaults to 10 epochs (about five minutes on one core).
"""

import os
import sys

import numpy as np

from spikeae import data_io
from spikeae.experiments import DESK_AUDIO_LR, REPRODUCTION_MAX_RATE, load_split, run_audio_pipeline, synthetic_audio
from spikeae.network import TrainConfig

data_dir = sys.argv[1] if len(sys.argv) > 1 else "/root/data/mnist"
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 10
out = os.path.join(os.path.dirname(__file__), "out")
ae, ae_cfg = data_io.load_checkpoint(os.path.join(out, "ae.saec"))
images = load_split(data_dir, "train")

# %% The synthetic corpus
# Each class lights up its own handful of the 39 channels with smooth bumps in
# time; samples add per-channel gain jitter and noise.  200 train, 50 test.
audio = synthetic_audio(seed=0, train_per_class=20, test_per_class=5, n_channels=39, n_frames=100)
print("train", audio.train.values.shape, "test", audio.test.values.shape)
sheet = data_io.contact_sheet(audio.train.flat()[::20], rows=1, cols=10, shape=(39, 100))
data_io.write_pgm(os.path.join(out, "spectrograms.pgm"), sheet, shape=sheet.shape)

# %% Training the audiocoder
# Pairing mode A: every recording of digit c pairs with one fixed image of c.
# The image's first T_h hidden steps are replayed cyclically over the 60
# audio steps as the target.
cfg = TrainConfig(T=60, T_h=10, lr=DESK_AUDIO_LR, batch_size=50, epochs=epochs, max_rate=REPRODUCTION_MAX_RATE)
result = run_audio_pipeline(ae, ae_cfg.T, images, audio, cfg, mode="A", hidden=512, ae_max_rate=ae_cfg.max_rate)
for e in result.epochs:
    print(f"epoch {e.epoch:>2}  membrane loss {e.vmem_loss:6.3f}  test MSE {e.test_mse:.4f}")
print("nearest-class accuracy", result.nearest_class_accuracy(audio.test.labels))

# %% Synthesized digits
# One column per class; rows are different test recordings.
order = np.argsort(audio.test.labels, kind="stable").reshape(10, -1).T.ravel()
grid = data_io.contact_sheet(result.generated[order], rows=5, cols=10)
data_io.write_pgm(os.path.join(out, "synthesized.pgm"), grid, shape=grid.shape)
print(f"wrote {out}/spectrograms.pgm and {out}/synthesized.pgm")
