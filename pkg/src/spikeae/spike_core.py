"""Rate encoding and leaky integrate-and-fire (LIF) layer dynamics.

Conventions used throughout the package:

* a spike raster for a single sample is ``[n_neurons, T]`` (see
  :class:`SpikeRaster`);
* batched spikes flowing through a network at one time step are
  ``[batch, n_neurons]`` arrays with entries in {0, 1};
* membrane potentials are measured in units of the threshold scale, and
  all state is kept in ``float32`` unless a layer is built with another
  dtype (float64 is used by the gradient checks).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InputDomainError, StructuralError

DEFAULT_DTYPE = np.float32


class SpikeRaster:
    """Binary neuron x time activity map.

    Bits are stored packed along the neuron axis (one packed column per
    time step).  ``bits`` returns the unpacked ``uint8`` matrix of shape
    ``[n_neurons, T]``.
    """

    __slots__ = ("n_neurons", "T", "_packed")

    def __init__(self, bits):
        bits = np.asarray(bits)
        if bits.ndim != 2:
            raise StructuralError(f"raster must be 2-D [n_neurons, T], got shape {bits.shape}")
        if bits.size and not np.isin(bits, (0, 1)).all():
            raise InputDomainError("raster entries must be 0 or 1")
        self.n_neurons, self.T = bits.shape
        self._packed = np.packbits(bits.astype(np.uint8), axis=0)

    @classmethod
    def from_time_major(cls, spikes):
        """Build from a ``[T, n_neurons]`` array (the layout the simulator produces)."""
        return cls(np.asarray(spikes).T)

    @property
    def bits(self):
        return np.unpackbits(self._packed, axis=0, count=self.n_neurons)

    @property
    def nbytes(self):
        return self._packed.nbytes

    def counts(self):
        """Per-neuron spike counts summed over time."""
        return self.bits.sum(axis=1, dtype=np.int64)

    def column(self, t):
        return self.bits[:, t]

    def prefix(self, k):
        """Raster made of the first ``k`` time steps."""
        if not 0 <= k <= self.T:
            raise InputDomainError(f"prefix length {k} outside [0, {self.T}]")
        return SpikeRaster(self.bits[:, :k])

    def __eq__(self, other):
        if not isinstance(other, SpikeRaster):
            return NotImplemented
        return (self.n_neurons, self.T) == (other.n_neurons, other.T) and np.array_equal(
            self._packed, other._packed
        )

    def __repr__(self):
        return f"SpikeRaster(n_neurons={self.n_neurons}, T={self.T}, spikes={int(self.counts().sum())})"


@dataclass(frozen=True)
class NeuronConfig:
    """Leak coefficient ``alpha`` and firing threshold ``v_th`` of a LIF layer."""

    alpha: float = 0.1
    v_th: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise InputDomainError(f"alpha must lie in [0, 1), got {self.alpha}")
        if not self.v_th > 0.0:
            raise InputDomainError(f"v_th must be positive, got {self.v_th}")

    @property
    def decay(self):
        return 1.0 - self.alpha


@dataclass
class LifLayer:
    """One fully connected LIF layer: weights plus per-sample state.

    ``v_mem`` is ``[batch, n_out]``; ``trace`` holds the per-sample
    eligibility trace dV_mem/dW with shape ``[batch, n_out, n_in]`` and is
    only allocated for training.  Trace memory is
    ``batch * n_out * n_in * itemsize`` bytes.
    """

    weights: np.ndarray
    cfg: NeuronConfig = field(default_factory=NeuronConfig)
    v_mem: np.ndarray = None
    trace: np.ndarray = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        if self.weights.ndim != 2:
            raise StructuralError(f"weights must be 2-D [n_out, n_in], got shape {self.weights.shape}")
        if self.weights.dtype.kind != "f":
            self.weights = self.weights.astype(DEFAULT_DTYPE)

    @property
    def n_out(self):
        return self.weights.shape[0]

    @property
    def n_in(self):
        return self.weights.shape[1]

    @property
    def dtype(self):
        return self.weights.dtype

    @classmethod
    def initialize(cls, n_in, n_out, cfg=None, rng=None, dtype=DEFAULT_DTYPE):
        """Uniform fan-in initialisation in ``[-1/sqrt(n_in), 1/sqrt(n_in)]``."""
        rng = np.random.default_rng() if rng is None else rng
        bound = 1.0 / np.sqrt(n_in)
        w = rng.uniform(-bound, bound, size=(n_out, n_in)).astype(dtype)
        return cls(w, cfg if cfg is not None else NeuronConfig())

    def reset_state(self, batch, with_trace=False):
        """Zero the membrane potentials (and traces) for a fresh batch of ``batch`` samples."""
        if self.v_mem is None or self.v_mem.shape != (batch, self.n_out):
            self.v_mem = np.zeros((batch, self.n_out), dtype=self.dtype)
        else:
            self.v_mem.fill(0)
        if with_trace:
            shape = (batch, self.n_out, self.n_in)
            if self.trace is None or self.trace.shape != shape or self.trace.dtype != self.dtype:
                self.trace = np.zeros(shape, dtype=self.dtype)
            else:
                self.trace.fill(0)

    def trace_nbytes(self, batch):
        return batch * self.n_out * self.n_in * self.dtype.itemsize


def scale_pixels(raw):
    """Map raw 8-bit intensities to [0, 1]."""
    raw = np.asarray(raw)
    if raw.size and (raw.min() < 0 or raw.max() > 255):
        raise InputDomainError("pixel values must lie within [0, 255]")
    return raw.astype(np.float64) / 255.0


def _check_unit_interval(values):
    values = np.asarray(values, dtype=np.float64)
    if values.size and (np.isnan(values).any() or values.min() < 0.0 or values.max() > 1.0):
        raise InputDomainError("encoding rates must lie within [0, 1]")
    return values


def poisson_spikes(values, T, rng, max_rate=1.0):
    """Bernoulli-per-step spike trains for an array of rates.

    Returns a boolean array of shape ``(T,) + values.shape``: entry
    ``[t, ...]`` fires with probability ``values * max_rate``.  This is the
    batched form used by the trainers; :func:`encode_poisson` wraps it for a
    single vector.
    """
    values = _check_unit_interval(values)
    if T < 1:
        raise InputDomainError(f"T must be at least 1, got {T}")
    if not 0.0 < max_rate <= 1.0:
        raise InputDomainError(f"max_rate must lie in (0, 1], got {max_rate}")
    p = values * max_rate
    return rng.random((T,) + values.shape) < p


def encode_poisson(values, T, rng, max_rate=1.0):
    """Rate-encode a vector of values in [0, 1] into a :class:`SpikeRaster`."""
    values = np.asarray(values)
    if values.ndim != 1:
        raise StructuralError("encode_poisson expects a 1-D vector")
    return SpikeRaster.from_time_major(poisson_spikes(values, T, rng, max_rate))


def lif_forward_step(layer, input_spikes):
    """Advance ``layer`` by one time step.

    Integrates ``Z = input_spikes @ W.T`` into the leaky membrane, emits a
    spike wherever ``V_mem >= v_th`` and resets those potentials to zero
    after the comparison.

    Returns ``(spikes, v_pre)`` where ``spikes`` is a ``[batch, n_out]``
    array of 0/1 in the layer dtype and ``v_pre`` the potentials before the
    reset (needed by the surrogate gradient).  ``layer.v_mem`` is updated
    in place.
    """
    x = np.asarray(input_spikes)
    if x.ndim != 2 or x.shape[1] != layer.n_in:
        raise StructuralError(
            f"input of shape {x.shape} does not match layer with n_in={layer.n_in}"
        )
    if layer.v_mem is None or layer.v_mem.shape != (x.shape[0], layer.n_out):
        raise StructuralError("layer state not initialised for this batch size; call reset_state")
    z = x.astype(layer.dtype, copy=False) @ layer.weights.T
    v = layer.v_mem
    v *= layer.dtype.type(layer.cfg.decay)
    v += z
    fired = v >= layer.cfg.v_th
    v_pre = v.copy()
    v[fired] = 0
    return fired.astype(layer.dtype), v_pre


def surrogate_derivative(v_mem, v_th):
    """Derivative of a unit sigmoid centred on the threshold.

    Evaluated as ``e / (1 + e)**2`` with ``e = exp(-|v - v_th|)``, which is
    the same function (it is even in ``v - v_th``) but never overflows.
    """
    v = np.asarray(v_mem)
    e = np.exp(-np.abs(v - v_th))
    return e / (1.0 + e) ** 2
