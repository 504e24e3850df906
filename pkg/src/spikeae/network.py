"""Spiking networks built from LIF layers and their training loops.

Three networks are assembled from the same pieces:

* the spiking autoencoder (e.g. 784-196-784), trained to reproduce its own
  Poisson input spikes at every time step;
* the audiocoder (e.g. 3900-512-196), trained to emit the autoencoder's
  stored hidden-state spike map for the paired image;
* the synthesizer, which feeds audiocoder output spikes straight into the
  autoencoder's frozen decoder layer.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .backprop import (
    AdamTimeState,
    Hyperparams,
    hidden_delta,
    masked_loss,
    output_delta,
    trace_step_gradient,
    adam_timestep_update,
)
from .errors import ConfigError, NumericalInstabilityError, StructuralError
from .seeding import stream
from .spike_core import (
    DEFAULT_DTYPE,
    LifLayer,
    NeuronConfig,
    SpikeRaster,
    lif_forward_step,
    poisson_spikes,
)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    alpha: float = 0.1
    v_th: float = 1.0
    T: int = 15
    lr: float = 5e-4
    weight_decay: float = 1e-4
    batch_size: int = 100
    epochs: int = 1
    seed: int = 0
    T_h: int = None
    max_rate: float = 1.0
    use_mask: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if self.T_h is not None and not 1 <= self.T_h:
            raise ConfigError(f"T_h must be >= 1, got {self.T_h}")
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in [0, 1), got {self.alpha}")
        if not self.v_th > 0:
            raise ConfigError(f"v_th must be positive, got {self.v_th}")
        if not self.lr > 0 or self.weight_decay < 0:
            raise ConfigError("lr must be positive and weight_decay non-negative")
        if not 0.0 < self.max_rate <= 1.0:
            raise ConfigError(f"max_rate must lie in (0, 1], got {self.max_rate}")

    @property
    def neuron(self):
        return NeuronConfig(alpha=self.alpha, v_th=self.v_th)

    @property
    def hyperparams(self):
        return Hyperparams(lr=self.lr, weight_decay=self.weight_decay)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class HiddenStateMap:
    """First ``T_h`` steps of the encoder layer's spike raster for one image."""

    raster: SpikeRaster

    @property
    def n_hidden(self):
        return self.raster.n_neurons

    @property
    def T_h(self):
        return self.raster.T

    @property
    def bits(self):
        return self.raster.bits

    def compression_ratio(self, n_pixels=784, bits_per_pixel=8):
        """Size of an 8-bit image divided by the size of this bitmap."""
        return (n_pixels * bits_per_pixel) / (self.n_hidden * self.T_h)


@dataclass
class BatchRecord:
    batch_index: int
    spike_mse_loss: float
    vmem_loss: float
    mask_sparsity: float


@dataclass
class TrainLog:
    batches: list = field(default_factory=list)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.batches])


class SpikingNetwork:
    """Feed-forward stack of LIF layers sharing one time axis."""

    def __init__(self, layers):
        if not layers:
            raise StructuralError("a network needs at least one layer")
        for i, (a, b) in enumerate(zip(layers, layers[1:])):
            if b.n_in != a.n_out:
                raise StructuralError(
                    f"layer {i + 1} expects {b.n_in} inputs but layer {i} has {a.n_out} outputs"
                )
        self.layers = list(layers)

    @classmethod
    def build(cls, topology, neuron=None, rng=None, dtype=DEFAULT_DTYPE):
        if len(topology) < 2:
            raise StructuralError(f"topology needs at least two widths, got {topology}")
        neuron = neuron if neuron is not None else NeuronConfig()
        rng = np.random.default_rng() if rng is None else rng
        layers = [
            LifLayer.initialize(n_in, n_out, neuron, rng, dtype)
            for n_in, n_out in zip(topology, topology[1:])
        ]
        return cls(layers)

    @property
    def topology(self):
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    def reset_state(self, batch, with_trace=False):
        for layer in self.layers:
            layer.reset_state(batch, with_trace)

    def forward_timestep(self, input_bits):
        """Propagate one time step through every layer.

        Returns ``(spikes, potentials)``: per-layer lists of output spikes
        and pre-reset membrane potentials.
        """
        x = np.asarray(input_bits)
        if x.ndim != 2 or x.shape[1] != self.layers[0].n_in:
            raise StructuralError(
                f"input of shape {x.shape} does not match network input width {self.layers[0].n_in}"
            )
        spikes, potentials = [], []
        for layer in self.layers:
            x, v = lif_forward_step(layer, x)
            spikes.append(x)
            potentials.append(v)
        return spikes, potentials

    def run(self, inputs):
        """Simulate a ``[T, batch, n_in]`` spike tensor from a zero state.

        Returns one boolean ``[T, batch, n]`` array per layer.
        """
        inputs = np.asarray(inputs)
        T, batch = inputs.shape[:2]
        self.reset_state(batch)
        out = [np.zeros((T, batch, layer.n_out), dtype=bool) for layer in self.layers]
        for t in range(T):
            spikes, _ = self.forward_timestep(inputs[t])
            for rec, s in zip(out, spikes):
                rec[t] = s > 0
        return out

    def memory_report(self, batch):
        """Trace memory in bytes per layer for training at ``batch``."""
        return [layer.trace_nbytes(batch) for layer in self.layers]


def train_batch(net, inputs, targets, hp, adam_states, use_mask=True, batch_index=0):
    """Train a two-layer network on one batch, one weight update per time step.

    ``inputs`` is ``[T, batch, n_in]`` and ``targets`` ``[T, batch, n_out]``
    (both 0/1).  Membrane potentials, traces and Adam moments start from zero.
    Returns a :class:`BatchRecord` and the boolean output spikes ``[T, batch, n_out]``.
    """
    if len(net.layers) != 2:
        raise StructuralError("membrane-potential backprop is defined for two-layer networks")
    l1, l2 = net.layers
    T, batch = inputs.shape[:2]
    if targets.shape != (T, batch, l2.n_out):
        raise StructuralError(f"targets shape {targets.shape} != {(T, batch, l2.n_out)}")
    net.reset_state(batch, with_trace=True)
    for state in adam_states:
        state.reset()
    dtype = l1.dtype
    outputs = np.zeros((T, batch, l2.n_out), dtype=bool)
    vmem_loss = 0.0
    sparsity = 0.0
    for t in range(T):
        x = inputs[t].astype(dtype, copy=False)
        (s1, s2), (v1, v2) = net.forward_timestep(x)
        outputs[t] = s2 > 0
        step = masked_loss(targets[t], s2, v2, l2.cfg.v_th, use_mask=use_mask)
        if not np.isfinite(step.loss):
            raise NumericalInstabilityError("non-finite loss", layer=2, batch=batch_index, step=t)
        vmem_loss += step.loss
        sparsity += step.mask_sparsity
        d2 = output_delta(step)
        d1 = hidden_delta(d2, l2.weights, v1, l1.cfg.v_th)
        g2 = trace_step_gradient(l2.trace, l2.cfg.alpha, s1, d2, s2)
        g1 = trace_step_gradient(l1.trace, l1.cfg.alpha, x, d1, s1)
        for layer_id, (layer, grad, state) in enumerate(((l1, g1, adam_states[0]), (l2, g2, adam_states[1])), 1):
            try:
                adam_timestep_update(layer.weights, grad, state, hp, layer_id=layer_id)
            except NumericalInstabilityError as exc:
                raise NumericalInstabilityError("non-finite gradient", layer=layer_id, batch=batch_index, step=t) from exc
    diff = targets.sum(axis=0, dtype=np.float64) - outputs.sum(axis=0, dtype=np.float64)
    record = BatchRecord(
        batch_index=batch_index,
        spike_mse_loss=float(np.mean(diff**2)),
        vmem_loss=vmem_loss / T,
        mask_sparsity=sparsity / T,
    )
    return record, outputs


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_autoencoder(images, cfg, hidden=196, net=None, on_batch=None):
    """Train a ``n-hidden-n`` spiking autoencoder on [0, 1]-scaled images.

    The target at step ``t`` is the input spike map at the same step.
    Randomness comes from the ``init``, ``order`` and ``encoding`` streams of
    ``cfg.seed``.  Returns ``(net, TrainLog)``.
    """
    images = np.asarray(images)
    if images.ndim != 2:
        raise StructuralError(f"images must be [n, width], got shape {images.shape}")
    n, width = images.shape
    if n == 0:
        raise StructuralError("no training images")
    if net is None:
        net = SpikingNetwork.build([width, hidden, width], cfg.neuron, stream(cfg.seed, "init"))
    elif net.topology[0] != width or net.topology[-1] != width:
        raise StructuralError(f"network topology {net.topology} does not match image width {width}")
    hp = cfg.hyperparams
    adam = [AdamTimeState(layer.weights.shape, layer.dtype) for layer in net.layers]
    order_rng = stream(cfg.seed, "order")
    enc_rng = stream(cfg.seed, "encoding")
    history = TrainLog()
    batch_index = 0
    for epoch in range(cfg.epochs):
        for idx in _batches(n, cfg.batch_size, order_rng):
            spikes = poisson_spikes(images[idx], cfg.T, enc_rng, cfg.max_rate)
            record, _ = train_batch(net, spikes, spikes, hp, adam, cfg.use_mask, batch_index)
            history.batches.append(record)
            if on_batch is not None:
                on_batch(record)
            batch_index += 1
        log.info("epoch %d done, last spike-MSE %.4f", epoch + 1, history.batches[-1].spike_mse_loss)
    return net, history


def reconstruct(net, images, T, rng, max_rate=1.0, batch_size=500):
    """Run images through the network.

    Returns ``(input_counts, output_counts)``, both ``[n, width]`` integer
    arrays of spike counts summed over ``T`` steps.
    """
    images = np.asarray(images)
    n = images.shape[0]
    in_counts = np.zeros((n, net.topology[0]), dtype=np.int64)
    out_counts = np.zeros((n, net.topology[-1]), dtype=np.int64)
    for start in range(0, n, batch_size):
        sl = slice(start, start + batch_size)
        spikes = poisson_spikes(images[sl], T, rng, max_rate)
        outputs = net.run(spikes)
        in_counts[sl] = spikes.sum(axis=0)
        out_counts[sl] = outputs[-1].sum(axis=0)
    return in_counts, out_counts


def _encoder_copy(encoder):
    return LifLayer(encoder.weights, encoder.cfg)


def hidden_states(encoder, images, T, T_h, rng, max_rate=1.0, batch_size=500):
    """Batched hidden-state extraction: ``[n, n_hidden, T_h]`` boolean maps."""
    if T_h > T:
        raise ConfigError(f"T_h={T_h} exceeds simulation length T={T}")
    if T_h < 1:
        raise ConfigError(f"T_h must be >= 1, got {T_h}")
    images = np.asarray(images)
    if images.ndim == 1:
        images = images[None, :]
    if images.shape[1] != encoder.n_in:
        raise StructuralError(f"image width {images.shape[1]} != encoder input width {encoder.n_in}")
    enc = SpikingNetwork([_encoder_copy(encoder)])
    n = images.shape[0]
    maps = np.zeros((n, encoder.n_out, T_h), dtype=bool)
    for start in range(0, n, batch_size):
        sl = slice(start, start + batch_size)
        (hidden,) = enc.run(poisson_spikes(images[sl], T, rng, max_rate))
        maps[sl] = hidden[:T_h].transpose(1, 2, 0)
    return maps


def extract_hidden_state(encoder, image, T, T_h, rng, max_rate=1.0):
    """Hidden-state map of one image: the encoder's first ``T_h`` output columns.

    The encoder is simulated for the full ``T`` steps so the result for a
    smaller ``T_h`` is a prefix of the one for a larger ``T_h`` under the
    same random stream.
    """
    maps = hidden_states(encoder, np.asarray(image)[None, :], T, T_h, rng, max_rate)
    return HiddenStateMap(SpikeRaster(maps[0]))


def cyclic_targets(maps, T):
    """Repeat ``[n, n_hidden, T_h]`` maps cyclically over ``T`` steps -> ``[T, n, n_hidden]``."""
    maps = np.asarray(maps)
    T_h = maps.shape[2]
    cols = np.arange(T) % T_h
    return maps[:, :, cols].transpose(2, 0, 1)


@dataclass
class EpochRecord:
    epoch: int
    vmem_loss: float
    spike_mse_loss: float
    mask_sparsity: float
    test_mse: float = float("nan")


def train_audiocoder(audio, targets, cfg, hidden=512, net=None, on_epoch=None):
    """Train an audiocoder to emit stored hidden-state maps.

    ``audio`` is ``[n, n_in]`` in [0, 1]; ``targets`` is either a sequence of
    :class:`HiddenStateMap` or an ``[n, n_hidden, T_h]`` array.  The target at
    step ``t`` is column ``t mod T_h``.  ``on_epoch(epoch, net)`` may return a
    test MSE which is stored in the epoch log.  Returns ``(net, epochs)``.
    """
    audio = np.asarray(audio)
    if not isinstance(targets, np.ndarray):
        targets = np.stack([m.bits.astype(bool) for m in targets]) if len(targets) else np.zeros((0, 0, 1), bool)
    if audio.ndim != 2 or targets.ndim != 3:
        raise StructuralError("audio must be [n, n_in] and targets [n, n_hidden, T_h]")
    if audio.shape[0] != targets.shape[0]:
        raise StructuralError(f"{audio.shape[0]} audio samples but {targets.shape[0]} target maps")
    n, n_in = audio.shape
    if n == 0:
        raise StructuralError("no training pairs")
    n_target = targets.shape[1]
    if net is None:
        net = SpikingNetwork.build([n_in, hidden, n_target], cfg.neuron, stream(cfg.seed, "init"))
    elif net.topology[0] != n_in or net.topology[-1] != n_target:
        raise StructuralError(f"audiocoder topology {net.topology} does not fit data ({n_in} -> {n_target})")
    hp = cfg.hyperparams
    adam = [AdamTimeState(layer.weights.shape, layer.dtype) for layer in net.layers]
    order_rng = stream(cfg.seed, "order")
    enc_rng = stream(cfg.seed, "encoding")
    epochs = []
    batch_index = 0
    for epoch in range(1, cfg.epochs + 1):
        records = []
        for idx in _batches(n, cfg.batch_size, order_rng):
            spikes = poisson_spikes(audio[idx], cfg.T, enc_rng, cfg.max_rate)
            record, _ = train_batch(net, spikes, cyclic_targets(targets[idx], cfg.T), hp, adam, cfg.use_mask, batch_index)
            records.append(record)
            batch_index += 1
        rec = EpochRecord(
            epoch=epoch,
            vmem_loss=float(np.mean([r.vmem_loss for r in records])),
            spike_mse_loss=float(np.mean([r.spike_mse_loss for r in records])),
            mask_sparsity=float(np.mean([r.mask_sparsity for r in records])),
        )
        if on_epoch is not None:
            test_mse = on_epoch(epoch, net)
            if test_mse is not None:
                rec.test_mse = float(test_mse)
        log.info("audiocoder epoch %d: vmem loss %.4f test MSE %.4f", epoch, rec.vmem_loss, rec.test_mse)
        epochs.append(rec)
    return net, epochs


def synthesis_model(audiocoder, decoder):
    """Stack the audiocoder layers with the (shared, not copied) decoder layer."""
    if audiocoder.topology[-1] != decoder.n_in:
        raise StructuralError(
            f"audiocoder emits {audiocoder.topology[-1]} spikes but decoder expects {decoder.n_in}"
        )
    layers = [LifLayer(layer.weights, layer.cfg) for layer in audiocoder.layers]
    return SpikingNetwork(layers + [LifLayer(decoder.weights, decoder.cfg)])


def synthesize_images(audio, audiocoder, decoder, T_audio, rng, max_rate=1.0, batch_size=200):
    """Summed decoder spike counts ``[n, n_pixels]`` for a batch of audio vectors."""
    model = synthesis_model(audiocoder, decoder)
    audio = np.asarray(audio)
    if audio.ndim != 2 or audio.shape[1] != model.topology[0]:
        raise StructuralError(f"audio shape {audio.shape} does not match audiocoder input {model.topology[0]}")
    n = audio.shape[0]
    out = np.zeros((n, decoder.n_out), dtype=np.int64)
    for start in range(0, n, batch_size):
        sl = slice(start, start + batch_size)
        spikes = model.run(poisson_spikes(audio[sl], T_audio, rng, max_rate))
        out[sl] = spikes[-1].sum(axis=0)
    return out


def synthesize_image(audio_features, audiocoder, decoder, T_audio, rng, max_rate=1.0):
    """Image (spike counts summed over time) synthesized from one audio vector."""
    return synthesize_images(np.asarray(audio_features)[None, :], audiocoder, decoder, T_audio, rng, max_rate)[0]
