"""Walkthrough: train a spiking autoencoder on MNIST and look at what it learned.

Usage::

    python3 notebooks/02_mnist_autoencoder.py [MNIST_DIR] [N_TRAIN]

``MNIST_DIR`` holds the four IDX files (default ``/root/data/mnist``).  With
the default 10,000 training images this takes about a minute on one core.
Images are written to ``notebooks/out/``.
"""

import os
import sys

import numpy as np

from spikeae import data_io
from spikeae.experiments import REPRODUCTION_MAX_RATE, load_split, run_autoencoder
from spikeae.network import TrainConfig, extract_hidden_state, reconstruct
from spikeae.seeding import stream

data_dir = sys.argv[1] if len(sys.argv) > 1 else "/root/data/mnist"
n_train = int(sys.argv[2]) if len(sys.argv) > 2 else 10_000
out = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(out, exist_ok=True)

train = load_split(data_dir, "train", n_train)
test = load_split(data_dir, "test", 2_000)

# %% Training
# 784-196-784, 15 steps per image, leak 0.1.  The weights are updated at every
# time step; the log keeps one row per batch.
cfg = TrainConfig(alpha=0.1, T=15, lr=5e-4, batch_size=100, max_rate=REPRODUCTION_MAX_RATE)


def progress(record):
    if record.batch_index % 20 == 0:
        print(f"batch {record.batch_index:>4}  spike-MSE {record.spike_mse_loss:7.3f}  mask sparsity {record.mask_sparsity:.3f}")


result = run_autoencoder(train, cfg, hidden=196, test=test, on_batch=progress)
print(f"\ntest Spike-MSE {result.test.spike_mse:.3f}, normalized pixel MSE {result.test.pixel_mse:.4f}")
print("per-class MSE", np.round(result.test.per_class_mse, 3))

# %% Reconstructions
# Top row of each pair: the original image.  Bottom row: output spike counts.
sample = test.subset(slice(0, 10))
_, counts = reconstruct(result.net, sample.flat(), cfg.T, stream(0, "eval"), cfg.max_rate)
pairs = np.concatenate([sample.flat(), counts])
sheet = data_io.contact_sheet(pairs, rows=2, cols=10)
data_io.write_pgm(os.path.join(out, "reconstructions.pgm"), sheet, shape=sheet.shape)

# %% The hidden state is a compressed code
# The 196 x T_h bit map of the hidden layer is what the audio pipeline stores.
encoder = result.net.layers[0]
for T_h in (15, 5, 1):
    m = extract_hidden_state(encoder, sample.flat()[0], 15, T_h, stream(0, "hidden"), cfg.max_rate)
    print(f"T_h={T_h:>2}: {m.bits.sum():>4} hidden spikes, compression {m.compression_ratio():.1f}x")

data_io.save_checkpoint(os.path.join(out, "ae.saec"), result.net, cfg)
print(f"\nwrote {out}/reconstructions.pgm and {out}/ae.saec")
