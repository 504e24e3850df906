"""Walkthrough: one LIF layer, Poisson input and the membrane-potential gradient.

Run with ``python3 notebooks/01_neurons_and_gradients.py``.  Takes a few seconds
and needs no data files.
"""

import numpy as np

from spikeae.backprop import masked_loss, output_delta, output_layer_gradient, update_trace
from spikeae.seeding import stream
from spikeae.spike_core import LifLayer, NeuronConfig, encode_poisson, lif_forward_step, surrogate_derivative

# %% Rate coding
# A pixel value in [0, 1] becomes a spike train: at each step the input neuron
# fires with probability value * max_rate.  Counts over T steps are binomial.
values = np.array([0.0, 0.25, 0.5, 1.0])
raster = encode_poisson(values, T=15, rng=stream(0, "encoding"))
print("spike trains (rows = neurons, columns = steps)")
print(raster.bits.astype(int))
print("counts", raster.counts(), "expected", values * 15)

# %% A leaky integrate-and-fire layer
# The membrane keeps (1 - alpha) of its potential each step, adds the weighted
# input and is reset to zero whenever it reaches the threshold.
cfg = NeuronConfig(alpha=0.1, v_th=1.0)
layer = LifLayer.initialize(4, 3, cfg, stream(0, "init"), dtype=np.float64)
layer.weights[:] = [[0.6, 0.0, 0.0, 0.0], [0.0, 0.3, 0.3, 0.0], [0.2, 0.2, 0.2, 0.2]]
layer.reset_state(batch=1)
print("\nstep  input      spikes  potential-before-reset")
for t in range(8):
    x = raster.bits[:, t][None, :].astype(np.float64)
    spikes, v_pre = lif_forward_step(layer, x)
    print(f"{t:>4}  {x[0].astype(int)}  {spikes[0].astype(int)}  {np.round(v_pre[0], 3)}")

# %% The loss only looks at neurons that got the spike wrong
# The target potential is v_th where the target spiked and 0 elsewhere.  The
# XOR mask keeps the error only where output and target disagree.
target = np.array([[1, 0, 1]])
output = np.array([[1, 1, 0]])
v_out = np.array([[1.3, 1.1, 0.4]])
step = masked_loss(target, output, v_out, v_th=1.0)
print("\nmasked error", step.error, "loss", step.loss, "sparsity", step.mask_sparsity)

# %% Eligibility traces turn the error into a weight gradient
# Each synapse keeps a leaky sum of its input spikes since the neuron last
# fired; the gradient of a step is delta times that trace.
trace = np.zeros((1, 3, 2))
for x, fired in [([1, 0], [0, 0, 0]), ([1, 1], [0, 1, 0]), ([0, 1], [0, 0, 0])]:
    trace = update_trace(trace, 0.1, np.array([x], float), np.array([fired]))
print("\ntrace after three steps\n", trace[0])
print("output-layer gradient\n", output_layer_gradient(output_delta(step), trace))

# %% The surrogate derivative used for the hidden layer
v = np.linspace(-2, 4, 7)
print("\nsurrogate slope around v_th = 1:", np.round(surrogate_derivative(v, 1.0), 4))
